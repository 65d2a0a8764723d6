//! Multilevel coarsening by resource-aware heavy-edge matching.
//!
//! A pair `(u, v)` is rated `r(u, v) / p(u, v)` where `r` is the heavy-edge
//! score and `p = (sum_i w_i(u) w_i(v) / mean_cap_i^2)^alpha`. The exponent
//! grows with the level index so early levels follow connectivity and later
//! levels favour balanced hypernodes.

use std::cmp::{Ordering, Reverse};
use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{Hyperedge, Hypergraph, ResourceVector, VertexId};
use crate::seed;
use crate::topology::MfsTopology;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CoarsenError {
    #[error("resource type {0} is used by vertices but has zero mean capacity")]
    ZeroMeanCapacity(usize),
    #[error("alpha0 must be positive and dalpha non-negative")]
    BadAlpha,
    #[error("N_final must be at least K")]
    BadFinalSize,
    #[error("hypergraph has {hypergraph} resource types, topology has {topology}")]
    ResourceMismatch { hypergraph: usize, topology: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseningConfig {
    pub alpha0: f64,
    pub dalpha: f64,
    /// Target coarsest size; `None` means `max(128, 16 K)`.
    pub n_final: Option<usize>,
    /// Stop when a level retains more than this fraction of vertices.
    pub min_reduction: f64,
    pub seed: u64,
    /// Nets larger than this are ignored when rating pairs.
    pub max_rating_net: usize,
}

impl Default for CoarseningConfig {
    fn default() -> Self {
        CoarseningConfig {
            alpha0: 0.5,
            dalpha: 3.0,
            n_final: None,
            min_reduction: 0.95,
            seed: 0,
            max_rating_net: 1000,
        }
    }
}

impl CoarseningConfig {
    /// A static schedule: the same exponent at every level.
    pub fn fixed(alpha: f64) -> Self {
        CoarseningConfig { alpha0: alpha, dalpha: 0.0, ..Self::default() }
    }

    pub fn final_size(&self, num_fpgas: usize) -> usize {
        self.n_final.unwrap_or_else(|| (16 * num_fpgas).max(128))
    }
}

/// One coarsening step: the coarse hypergraph and the fine-to-coarse map.
#[derive(Debug, Clone)]
pub struct Level {
    pub hypergraph: Hypergraph,
    /// `map[fine] = coarse` hypernode id.
    pub map: Vec<VertexId>,
    pub index: usize,
}

/// `sum over shared nets of w_e / (|e| - 1)`.
pub fn heavy_edge_score(h: &Hypergraph, u: VertexId, v: VertexId) -> f64 {
    let (a, b) = (h.incident(u), h.incident(v));
    let (mut i, mut j) = (0, 0);
    let mut r = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                let e = h.edge(a[i]);
                r += e.weight as f64 / (e.size() - 1) as f64;
                i += 1;
                j += 1;
            }
        }
    }
    r
}

/// Resource balance penalty base `sum_i w_i(u) w_i(v) / C_i^2` with the
/// per-type inverse squared mean capacities precomputed.
#[derive(Debug, Clone)]
pub struct PenaltyModel {
    inv_sq: Vec<f64>,
}

impl PenaltyModel {
    pub fn new(h: &Hypergraph, t: &MfsTopology) -> Result<Self, CoarsenError> {
        if h.resource_types() != t.resource_types() {
            return Err(CoarsenError::ResourceMismatch {
                hypergraph: h.resource_types(),
                topology: t.resource_types(),
            });
        }
        let mean = t.mean_capacity();
        let total = h.total_weight();
        let mut inv_sq = Vec::with_capacity(mean.len());
        for (i, &c) in mean.iter().enumerate() {
            if c == 0.0 {
                if total.0[i] > 0 {
                    return Err(CoarsenError::ZeroMeanCapacity(i));
                }
                inv_sq.push(0.0);
            } else {
                inv_sq.push(1.0 / (c * c));
            }
        }
        Ok(PenaltyModel { inv_sq })
    }

    pub fn from_mean_capacity(mean: &[f64]) -> Self {
        PenaltyModel {
            inv_sq: mean.iter().map(|&c| if c == 0.0 { 0.0 } else { 1.0 / (c * c) }).collect(),
        }
    }

    #[inline]
    pub fn base(&self, wu: &[u64], wv: &[u64]) -> f64 {
        wu.iter()
            .zip(wv)
            .zip(&self.inv_sq)
            .map(|((&a, &b), &s)| (a * b) as f64 * s)
            .sum()
    }
}

/// `(sum_i w_i(u) w_i(v) / C_i^2)^alpha`.
pub fn heavy_node_penalty(wu: &[u64], wv: &[u64], alpha: f64, mean_capacity: &[f64]) -> f64 {
    PenaltyModel::from_mean_capacity(mean_capacity)
        .base(wu, wv)
        .powf(alpha)
}

/// `alpha0 + dalpha * ln 2 / ln((N_init + 1) / N_final) * level`, clamped to
/// `[alpha0, alpha0 + dalpha]`. `None` when `N_init + 1 <= N_final`, in
/// which case no coarsening happens.
pub fn alpha_at_level(cfg: &CoarseningConfig, n_init: usize, n_final: usize, level: usize) -> Option<f64> {
    if n_init + 1 <= n_final {
        return None;
    }
    let denom = ((n_init as f64 + 1.0) / n_final as f64).ln();
    let a = cfg.alpha0 + cfg.dalpha * std::f64::consts::LN_2 / denom * level as f64;
    Some(a.clamp(cfg.alpha0, cfg.alpha0 + cfg.dalpha))
}

/// `r / p`; `+inf` when the penalty is zero.
pub fn rating(h: &Hypergraph, u: VertexId, v: VertexId, alpha: f64, mean_capacity: &[f64]) -> f64 {
    let r = heavy_edge_score(h, u, v);
    let p = heavy_node_penalty(h.vertex_weight(u), h.vertex_weight(v), alpha, mean_capacity);
    if p == 0.0 {
        f64::INFINITY
    } else {
        r / p
    }
}

/// Comparable merge priority. Zero-penalty pairs outrank every finite
/// rating and are ordered among themselves by `r`; finite ratings compare
/// in log space to stay clear of over/underflow at large exponents.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Priority {
    free: bool,
    value: f64,
}

impl Priority {
    fn new(r: f64, base: f64, alpha: f64) -> Self {
        if base == 0.0 {
            Priority { free: true, value: r }
        } else {
            Priority { free: false, value: r.ln() - alpha * base.ln() }
        }
    }

    fn cmp(&self, other: &Self) -> Ordering {
        self.free
            .cmp(&other.free)
            .then(self.value.total_cmp(&other.value))
    }
}

/// FPGA capacities, used to reject merges that no FPGA could host.
struct Fit<'a> {
    caps: &'a [ResourceVector],
    max: Vec<u64>,
}

impl<'a> Fit<'a> {
    fn new(t: &'a MfsTopology) -> Self {
        let k = t.resource_types();
        let max = (0..k)
            .map(|i| t.capacities().iter().map(|c| c.0[i]).max().unwrap_or(0))
            .collect();
        Fit { caps: t.capacities(), max }
    }

    fn admits(&self, wu: &[u64], wv: &[u64]) -> bool {
        if wu.iter().zip(wv).zip(&self.max).any(|((a, b), m)| a + b > *m) {
            return false;
        }
        self.caps
            .iter()
            .any(|c| wu.iter().zip(wv).zip(&c.0).all(|((a, b), m)| a + b <= *m))
    }
}

/// One level of pairwise matching. Vertices are visited in a seeded random
/// order; each unmatched vertex takes its best-rated unmatched neighbour
/// (ties to the lower id) whose combined weight still fits on some FPGA.
pub fn coarsen_level(
    h: &Hypergraph,
    t: &MfsTopology,
    penalty: &PenaltyModel,
    alpha: f64,
    cfg: &CoarseningConfig,
    index: usize,
) -> Level {
    let n = h.num_vertices();
    let mut order: Vec<VertexId> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, index as u64));
    order.shuffle(&mut rng);

    let fit = Fit::new(t);
    let mut partner: Vec<Option<VertexId>> = vec![None; n];
    let mut matched = vec![false; n];
    let mut score = vec![0.0f64; n];
    let mut touched: Vec<VertexId> = Vec::new();

    for &u in &order {
        if matched[u] {
            continue;
        }
        for &e in h.incident(u) {
            let edge = h.edge(e);
            if edge.size() > cfg.max_rating_net {
                continue;
            }
            let s = edge.weight as f64 / (edge.size() - 1) as f64;
            for v in edge.pins() {
                if v == u || matched[v] {
                    continue;
                }
                if score[v] == 0.0 {
                    touched.push(v);
                }
                score[v] += s;
            }
        }
        let wu = h.vertex_weight(u);
        let mut best: Option<(Priority, VertexId)> = None;
        for &v in &touched {
            let wv = h.vertex_weight(v);
            if !fit.admits(wu, wv) {
                continue;
            }
            let pr = Priority::new(score[v], penalty.base(wu, wv), alpha);
            let better = match &best {
                None => true,
                Some((bp, bv)) => match pr.cmp(bp) {
                    Ordering::Greater => true,
                    Ordering::Equal => Reverse(v) > Reverse(*bv),
                    Ordering::Less => false,
                },
            };
            if better {
                best = Some((pr, v));
            }
        }
        for &v in &touched {
            score[v] = 0.0;
        }
        touched.clear();
        if let Some((_, v)) = best {
            matched[u] = true;
            matched[v] = true;
            partner[u] = Some(v);
            partner[v] = Some(u);
        }
    }
    contract(h, &partner, index)
}

fn contract(h: &Hypergraph, partner: &[Option<VertexId>], index: usize) -> Level {
    let n = h.num_vertices();
    let mut map = vec![usize::MAX; n];
    let mut weights: Vec<ResourceVector> = Vec::new();
    for v in 0..n {
        if map[v] != usize::MAX {
            continue;
        }
        let c = weights.len();
        map[v] = c;
        let mut w = ResourceVector(h.vertex_weight(v).to_vec());
        if let Some(m) = partner[v] {
            map[m] = c;
            w.add_assign(h.vertex_weight(m));
        }
        weights.push(w);
    }
    let mut edges: Vec<Hyperedge> = Vec::new();
    let mut index_of: HashMap<(VertexId, Vec<VertexId>), usize> = HashMap::new();
    for e in h.edges() {
        let source = map[e.source];
        let mut drains: Vec<VertexId> = e
            .drains
            .iter()
            .map(|&d| map[d])
            .filter(|&d| d != source)
            .collect();
        if drains.is_empty() {
            continue;
        }
        drains.sort_unstable();
        drains.dedup();
        match index_of.entry((source, drains)) {
            std::collections::hash_map::Entry::Occupied(o) => edges[*o.get()].weight += e.weight,
            std::collections::hash_map::Entry::Vacant(slot) => {
                let (source, drains) = slot.key().clone();
                slot.insert(edges.len());
                edges.push(Hyperedge { weight: e.weight, source, drains });
            }
        }
    }
    let hypergraph =
        Hypergraph::new(h.resource_types(), weights, edges).expect("contraction preserves validity");
    Level { hypergraph, map, index }
}

/// Coarsens until at most `N_final` vertices remain or a level retains more
/// than `min_reduction` of its input; such a level is discarded.
pub fn build_hierarchy(
    h: &Hypergraph,
    t: &MfsTopology,
    cfg: &CoarseningConfig,
) -> Result<Vec<Level>, CoarsenError> {
    if !(cfg.alpha0 > 0.0) || !(cfg.dalpha >= 0.0) {
        return Err(CoarsenError::BadAlpha);
    }
    let n_final = cfg.final_size(t.num_fpgas());
    if n_final < t.num_fpgas() {
        return Err(CoarsenError::BadFinalSize);
    }
    let penalty = PenaltyModel::new(h, t)?;
    let n_init = h.num_vertices();
    let mut levels: Vec<Level> = Vec::new();
    for l in 0.. {
        let current = levels.last().map_or(h, |lv| &lv.hypergraph);
        if current.num_vertices() <= n_final {
            break;
        }
        let Some(alpha) = alpha_at_level(cfg, n_init, n_final, l) else {
            break;
        };
        let level = coarsen_level(current, t, &penalty, alpha, cfg, l);
        let before = current.num_vertices();
        let after = level.hypergraph.num_vertices();
        log::debug!("coarsen level {l}: alpha {alpha:.3}, {before} -> {after}");
        if after as f64 > cfg.min_reduction * before as f64 {
            break;
        }
        levels.push(level);
    }
    Ok(levels)
}

/// Maps every original vertex to its hypernode in the coarsest level.
pub fn compose_maps(n: usize, levels: &[Level]) -> Vec<VertexId> {
    let mut m: Vec<VertexId> = (0..n).collect();
    for lv in levels {
        for x in &mut m {
            *x = lv.map[*x];
        }
    }
    m
}
