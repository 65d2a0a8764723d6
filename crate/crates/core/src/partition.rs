//! The full pipeline: coarsen, assign the coarsest level, then project and
//! refine back to the input hypergraph.

use std::time::{Duration, Instant};

use thiserror::Error;

use crate::assign::{parallel_assign, AssignOutcome, AssignVariant, SearchBudget};
use crate::coarsen::{build_hierarchy, CoarsenError, CoarseningConfig};
use crate::metrics::{self, MetricsReport};
use crate::model::{Hypergraph, Placement};
use crate::refine::{project_to_finer, refine_level, RefineConfig, RefineStats};
use crate::seed::{derive, stream};
use crate::topology::MfsTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionConfig {
    /// Master seed; coarsening and assignment seeds derive from it.
    pub seed: u64,
    /// The `seed` field here is overwritten from the master seed.
    pub coarsen: CoarseningConfig,
    pub assign: SearchBudget,
    /// Number of parallel assignment searches.
    pub assign_seeds: usize,
    pub variant: AssignVariant,
    pub refine: RefineConfig,
    /// Wall-clock cap for the whole run. When it runs out the remaining
    /// levels are projected without refinement.
    pub time_limit: Option<Duration>,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            seed: 1,
            coarsen: CoarseningConfig::default(),
            assign: SearchBudget::default(),
            assign_seeds: 4,
            variant: AssignVariant::Nodes,
            refine: RefineConfig::default(),
            time_limit: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error(transparent)]
    Coarsen(#[from] CoarsenError),
    #[error("no feasible assignment of the coarsest level exists")]
    Infeasible,
    #[error("assignment budget exhausted before any feasible placement was found")]
    BudgetExhausted,
}

#[derive(Debug, Clone)]
pub struct PartitionResult {
    pub placement: Placement,
    pub report: MetricsReport,
    /// Hypergraph sizes from the input down to the coarsest level.
    pub level_sizes: Vec<usize>,
    pub assign_thd: u64,
    /// Whether the assignment search finished without cutting corners.
    pub assign_complete: bool,
    pub refine: RefineStats,
    pub elapsed: Duration,
}

/// Assignment seeds for a master seed.
pub fn assign_seeds(master: u64, count: usize) -> Vec<u64> {
    let base = derive(master, stream::ASSIGN);
    (0..count as u64).map(|i| derive(base, i)).collect()
}

pub fn partition(
    h: &Hypergraph,
    t: &MfsTopology,
    cfg: &PartitionConfig,
) -> Result<PartitionResult, PartitionError> {
    let start = Instant::now();
    let out_of_time = || cfg.time_limit.is_some_and(|l| start.elapsed() >= l);

    let ccfg = CoarseningConfig { seed: derive(cfg.seed, stream::COARSEN), ..cfg.coarsen.clone() };
    let levels = build_hierarchy(h, t, &ccfg)?;
    let mut level_sizes = vec![h.num_vertices()];
    level_sizes.extend(levels.iter().map(|l| l.hypergraph.num_vertices()));
    let coarsest = levels.last().map_or(h, |l| &l.hypergraph);

    let mut budget = cfg.assign.clone();
    if let Some(limit) = cfg.time_limit {
        let left = limit.saturating_sub(start.elapsed());
        budget.time_limit = Some(budget.time_limit.map_or(left, |b| b.min(left)));
    }
    let seeds = assign_seeds(cfg.seed, cfg.assign_seeds.max(1));
    let (outcome, _) = parallel_assign(coarsest, t, &budget, &seeds, cfg.variant);
    let (mut p, assign_thd, assign_complete) = match outcome {
        AssignOutcome::Found { placement, thd, complete, .. } => (placement, thd, complete),
        AssignOutcome::NoSolution => return Err(PartitionError::Infeasible),
        AssignOutcome::BudgetExhausted => return Err(PartitionError::BudgetExhausted),
    };
    log::info!(
        "levels {:?}, assignment THD {assign_thd} (complete: {assign_complete})",
        level_sizes
    );

    let mut stats = RefineStats { thd_before: assign_thd, ..RefineStats::default() };
    for i in (0..=levels.len()).rev() {
        let graph = if i == 0 { h } else { &levels[i - 1].hypergraph };
        if i < levels.len() {
            p = project_to_finer(&levels[i], &p);
        }
        if out_of_time() {
            continue;
        }
        let (q, s) = refine_level(graph, t, p, &cfg.refine);
        log::debug!(
            "level {i}: THD {} -> {}, {} ops, {} popped, {} blocked",
            s.thd_before,
            s.thd_after,
            s.applied_total(),
            s.popped,
            s.blocked
        );
        stats.merge(&s);
        p = q;
    }
    let report = metrics::report(h, t, &p);
    stats.thd_after = report.total_hop_distance;
    Ok(PartitionResult {
        placement: p,
        report,
        level_sizes,
        assign_thd,
        assign_complete,
        refine: stats,
        elapsed: start.elapsed(),
    })
}
