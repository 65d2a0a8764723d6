//! Initial placement of the coarsest hypernodes.
//!
//! A depth-first branch-and-bound visits hypernodes by descending node heat
//! and tries FPGAs by descending FPGA heat. A branch is cut when the partial
//! hop distance of completed nets reaches the incumbent, when a completed
//! net pushes an FPGA over its I/O limit (or a drain beyond `Hop_max`), or
//! when an FPGA runs out of resources. When two consecutive solutions differ
//! by less than the stall threshold, the search abandons the deep part of
//! the stack and resumes near the root.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Bits, EdgeId, FpgaId, Hypergraph, Placement, VertexId};
use crate::topology::MfsTopology;

#[derive(Debug, Clone, PartialEq)]
pub struct HeatScores {
    pub fpga_heat: Vec<f64>,
    pub node_heat: Vec<f64>,
}

/// `sum_i cap_i(f)^2 / hop_sum(f)`; 1.0 for every FPGA when `K = 1`.
pub fn fpga_heat(t: &MfsTopology, f: FpgaId) -> f64 {
    if t.num_fpgas() < 2 {
        return 1.0;
    }
    let num: f64 = t.capacity(f).iter().map(|&c| (c as f64) * (c as f64)).sum();
    num / t.hop_sum(f) as f64
}

/// `(sum over incident nets of w_e) * sum_i w_i(v)^2`.
pub fn node_heat(h: &Hypergraph, v: VertexId) -> f64 {
    let conn: u64 = h.incident(v).iter().map(|&e| h.edge(e).weight).sum();
    let res: f64 = h.vertex_weight(v).iter().map(|&w| (w as f64) * (w as f64)).sum();
    conn as f64 * res
}

impl HeatScores {
    pub fn compute(h: &Hypergraph, t: &MfsTopology) -> Self {
        HeatScores {
            fpga_heat: (0..t.num_fpgas()).map(|f| fpga_heat(t, f)).collect(),
            node_heat: (0..h.num_vertices()).map(|v| node_heat(h, v)).collect(),
        }
    }

    fn node_order(&self) -> Vec<VertexId> {
        descending(&self.node_heat)
    }

    fn fpga_order(&self) -> Vec<FpgaId> {
        descending(&self.fpga_heat)
    }
}

fn descending(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchBudget {
    /// Stop after this many complete solutions.
    pub max_solutions: usize,
    /// Stop after this many placement attempts.
    pub max_nodes: u64,
    /// Wall-clock cap, checked every 1024 attempts. Breaks determinism
    /// when it fires.
    pub time_limit: Option<Duration>,
    /// Stall threshold on the normalized THD change between solutions.
    pub stall_delta: f64,
    /// Fraction of the current depth to resume at after a stall.
    pub rho: f64,
    pub deep_backtrack: bool,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_solutions: usize::MAX,
            max_nodes: 200_000,
            time_limit: None,
            stall_delta: 0.02,
            rho: 0.3,
            deep_backtrack: true,
        }
    }
}

impl SearchBudget {
    /// Exhaustive search: no limits and no deep backtracking.
    pub fn unlimited() -> Self {
        SearchBudget {
            max_nodes: u64::MAX,
            deep_backtrack: false,
            ..Self::default()
        }
    }
}

/// True when consecutive THDs differ by less than `delta` relative to the
/// earlier one.
pub fn should_backtrack(prev: u64, new: u64, delta: f64) -> bool {
    prev > 0 && (prev.abs_diff(new) as f64) / (prev as f64) < delta
}

/// Depth to resume at after a stall.
pub fn resume_depth(depth: usize, rho: f64) -> usize {
    (rho * depth as f64).floor() as usize
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignOutcome {
    /// Best placement found. `complete` means the search space was fully
    /// explored, so the placement is optimal among unreplicated ones.
    Found {
        placement: Placement,
        thd: u64,
        complete: bool,
        solutions: usize,
    },
    /// The search space was exhausted without a feasible placement.
    NoSolution,
    /// Limits ran out before any feasible placement was found.
    BudgetExhausted,
}

impl AssignOutcome {
    pub fn thd(&self) -> Option<u64> {
        match self {
            AssignOutcome::Found { thd, .. } => Some(*thd),
            _ => None,
        }
    }

    pub fn placement(&self) -> Option<&Placement> {
        match self {
            AssignOutcome::Found { placement, .. } => Some(placement),
            _ => None,
        }
    }
}

const UNPLACED: FpgaId = usize::MAX;

struct Search<'a> {
    h: &'a Hypergraph,
    t: &'a MfsTopology,
    k: usize,
    part: Vec<FpgaId>,
    remaining: Vec<u32>,
    usage: Vec<u64>,
    io: Vec<u64>,
    partial: u64,
    completed: Vec<Vec<EdgeId>>,
}

impl<'a> Search<'a> {
    fn new(h: &'a Hypergraph, t: &'a MfsTopology) -> Self {
        let k = h.resource_types();
        Search {
            h,
            t,
            k,
            part: vec![UNPLACED; h.num_vertices()],
            remaining: h.edges().iter().map(|e| e.size() as u32).collect(),
            usage: vec![0; t.num_fpgas() * k],
            io: vec![0; t.num_fpgas()],
            partial: 0,
            completed: vec![Vec::new(); h.num_vertices()],
        }
    }

    /// Places `v` on `f` at `depth` unless a pruning rule fires.
    fn place(&mut self, v: VertexId, f: FpgaId, depth: usize, best: u64) -> bool {
        let k = self.k;
        let w = self.h.vertex_weight(v);
        let cap = self.t.capacity(f);
        let used = &mut self.usage[f * k..(f + 1) * k];
        if used.iter().zip(w).zip(cap).any(|((u, x), c)| u + x > *c) {
            return false;
        }
        for (u, x) in used.iter_mut().zip(w) {
            *u += x;
        }
        self.part[v] = f;
        let mut ok = true;
        let hm = self.t.hops();
        let mut done = std::mem::take(&mut self.completed[depth]);
        done.clear();
        for &e in self.h.incident(v) {
            self.remaining[e] -= 1;
            if self.remaining[e] != 0 {
                continue;
            }
            done.push(e);
            let edge = self.h.edge(e);
            let s = self.part[edge.source];
            let mask = edge.drains.iter().fold(0u64, |m, &d| m | (1u64 << self.part[d]));
            let external = mask & !(1u64 << s);
            if external == 0 {
                continue;
            }
            let row = hm.row(s);
            let mut cost = 0u64;
            let mut worst = 0u32;
            for d in Bits(external) {
                cost += u64::from(row[d]);
                worst = worst.max(row[d]);
            }
            self.partial += edge.weight * cost;
            self.io[s] += edge.weight;
            for d in Bits(external) {
                self.io[d] += edge.weight;
            }
            let io_ok = Bits(external | (1u64 << s))
                .all(|x| self.t.io_limit(x).is_none_or(|lim| self.io[x] <= lim));
            let hop_ok = self.t.hop_max().is_none_or(|m| worst <= m);
            if !io_ok || !hop_ok {
                ok = false;
            }
        }
        if self.partial >= best {
            ok = false;
        }
        self.completed[depth] = done;
        if !ok {
            self.unplace(v, depth);
        }
        ok
    }

    fn unplace(&mut self, v: VertexId, depth: usize) {
        let hm = self.t.hops();
        let done = std::mem::take(&mut self.completed[depth]);
        for &e in &done {
            let edge = self.h.edge(e);
            let s = self.part[edge.source];
            let mask = edge.drains.iter().fold(0u64, |m, &d| m | (1u64 << self.part[d]));
            let external = mask & !(1u64 << s);
            if external == 0 {
                continue;
            }
            let row = hm.row(s);
            let cost: u64 = Bits(external).map(|d| u64::from(row[d])).sum();
            self.partial -= edge.weight * cost;
            self.io[s] -= edge.weight;
            for d in Bits(external) {
                self.io[d] -= edge.weight;
            }
        }
        self.completed[depth] = done;
        self.completed[depth].clear();
        for &e in self.h.incident(v) {
            self.remaining[e] += 1;
        }
        let f = self.part[v];
        let k = self.k;
        for (u, x) in self.usage[f * k..(f + 1) * k].iter_mut().zip(self.h.vertex_weight(v)) {
            *u -= x;
        }
        self.part[v] = UNPLACED;
    }
}

/// Heat-ordered branch-and-bound placement without replication.
pub fn dfs_assign(
    h: &Hypergraph,
    t: &MfsTopology,
    budget: &SearchBudget,
    heats: &HeatScores,
) -> AssignOutcome {
    let n = h.num_vertices();
    if n == 0 {
        return AssignOutcome::Found {
            placement: Placement::unreplicated(Vec::new()),
            thd: 0,
            complete: true,
            solutions: 1,
        };
    }
    let order = heats.node_order();
    let fpgas = heats.fpga_order();
    let nf = fpgas.len();
    let start = Instant::now();

    let mut s = Search::new(h, t);
    let mut choice = vec![0usize; n];
    let mut depth = 0usize;
    let mut best: Option<(u64, Vec<FpgaId>)> = None;
    let mut prev: Option<u64> = None;
    let mut solutions = 0usize;
    let mut nodes = 0u64;
    let mut skipped = false;
    let mut exhausted = false;

    loop {
        if depth == n {
            let thd = s.partial;
            solutions += 1;
            best = Some((thd, s.part.clone()));
            if thd == 0 {
                // nothing can beat zero
                exhausted = true;
                break;
            }
            if solutions >= budget.max_solutions {
                break;
            }
            let mut target = n - 1;
            if let Some(p) = prev {
                if budget.deep_backtrack && should_backtrack(p, thd, budget.stall_delta) {
                    target = resume_depth(n, budget.rho);
                    skipped = true;
                }
            }
            prev = Some(thd);
            while depth > target {
                depth -= 1;
                s.unplace(order[depth], depth);
            }
            continue;
        }
        if nodes >= budget.max_nodes {
            break;
        }
        if nodes % 1024 == 0 {
            if let Some(limit) = budget.time_limit {
                if start.elapsed() >= limit {
                    break;
                }
            }
        }
        let v = order[depth];
        let bound = best.as_ref().map_or(u64::MAX, |b| b.0);
        let mut placed = false;
        while choice[depth] < nf {
            let f = fpgas[choice[depth]];
            choice[depth] += 1;
            nodes += 1;
            if s.place(v, f, depth, bound) {
                placed = true;
                break;
            }
        }
        if placed {
            depth += 1;
            if depth < n {
                choice[depth] = 0;
            }
        } else if depth == 0 {
            exhausted = true;
            break;
        } else {
            depth -= 1;
            s.unplace(order[depth], depth);
        }
    }

    match best {
        Some((thd, part)) => AssignOutcome::Found {
            placement: Placement::unreplicated(part),
            thd,
            complete: exhausted && !skipped,
            solutions,
        },
        None if exhausted => AssignOutcome::NoSolution,
        None => AssignOutcome::BudgetExhausted,
    }
}

/// Which heat scores the per-seed jitter perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AssignVariant {
    /// Jitter node heat (the default).
    #[default]
    Nodes,
    /// Jitter FPGA heat instead.
    Fpgas,
    /// One unperturbed search; extra seeds are ignored.
    Single,
}

/// Multiplies the chosen heat scores by factors uniform in `[0.9, 1.1]`.
pub fn perturb(heats: &HeatScores, seed: u64, variant: AssignVariant) -> HeatScores {
    let mut out = heats.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = match variant {
        AssignVariant::Nodes => &mut out.node_heat,
        AssignVariant::Fpgas => &mut out.fpga_heat,
        AssignVariant::Single => return out,
    };
    for x in target.iter_mut() {
        *x *= rng.gen_range(0.9..=1.1);
    }
    out
}

/// Runs one perturbed search per seed on its own thread and keeps the
/// lowest THD (ties to the lowest seed value). Returns the outcome and the index
/// of the winning seed, if any.
pub fn parallel_assign(
    h: &Hypergraph,
    t: &MfsTopology,
    budget: &SearchBudget,
    seeds: &[u64],
    variant: AssignVariant,
) -> (AssignOutcome, Option<usize>) {
    let base = HeatScores::compute(h, t);
    if variant == AssignVariant::Single || seeds.is_empty() {
        let out = dfs_assign(h, t, budget, &base);
        let idx = out.thd().map(|_| 0);
        return (out, idx);
    }
    let outcomes: Vec<AssignOutcome> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&sd| {
                let heats = perturb(&base, sd, variant);
                scope.spawn(move || dfs_assign(h, t, budget, &heats))
            })
            .collect();
        handles.into_iter().map(|j| j.join().expect("assign thread")).collect()
    });
    let winner = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.thd().map(|thd| (thd, seeds[i], i)))
        .min();
    match winner {
        Some((_, _, i)) => (outcomes[i].clone(), Some(i)),
        None if outcomes.iter().all(|o| *o == AssignOutcome::NoSolution) => {
            (AssignOutcome::NoSolution, None)
        }
        None => (AssignOutcome::BudgetExhausted, None),
    }
}
