//! Brute-force reference implementations.
//!
//! Everything here rebuilds metrics from scratch through [`crate::metrics`]
//! and shares no search or caching code with the solver.

use thiserror::Error;

use crate::metrics;
use crate::model::{FpgaId, Hypergraph, Placement, VertexId};
use crate::refine::Op;
use crate::topology::MfsTopology;

/// Largest `K^|V|` the exhaustive search accepts.
pub const MAX_STATES: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OracleError {
    #[error("search space {fpgas}^{vertices} exceeds {MAX_STATES} states")]
    TooLarge { fpgas: usize, vertices: usize },
}

/// Optimal unreplicated placement by enumeration. Returns `None` when no
/// assignment satisfies every constraint. Ties go to the lexicographically
/// smallest assignment.
pub fn exhaustive_partition(
    h: &Hypergraph,
    t: &MfsTopology,
) -> Result<Option<(Placement, u64)>, OracleError> {
    let n = h.num_vertices();
    let k = t.num_fpgas();
    let states = (0..n).try_fold(1u64, |acc, _| acc.checked_mul(k as u64).filter(|&s| s <= MAX_STATES));
    if states.is_none() {
        return Err(OracleError::TooLarge { fpgas: k, vertices: n });
    }
    let mut p = Placement::unreplicated(vec![0; n]);
    let mut best: Option<(Placement, u64)> = None;
    loop {
        if metrics::validate(h, t, &p).is_empty() {
            let thd = metrics::total_hop_distance(h, &p, t.hops());
            if best.as_ref().is_none_or(|b| thd < b.1) {
                best = Some((p.clone(), thd));
            }
        }
        // odometer with the last vertex as the fastest digit
        let mut i = n;
        loop {
            if i == 0 {
                return Ok(best);
            }
            i -= 1;
            p.original[i] += 1;
            if p.original[i] < k {
                break;
            }
            p.original[i] = 0;
        }
    }
}

/// Copy of `p` with `op` applied, or `None` if `op` is not legal there.
pub fn apply_op(p: &Placement, op: Op, num_fpgas: usize) -> Option<Placement> {
    let n = p.num_vertices();
    let mut q = p.clone();
    match op {
        Op::Move { v, to } => {
            if v >= n || to >= num_fpgas || p.hosts(v).any(|f| f == to) {
                return None;
            }
            q.original[v] = to;
        }
        Op::Exchange { u, v } => {
            if u >= n || v >= n {
                return None;
            }
            let (fu, fv) = (p.original[u], p.original[v]);
            if fu == fv || p.hosts(u).any(|f| f == fv) || p.hosts(v).any(|f| f == fu) {
                return None;
            }
            q.original[u] = fv;
            q.original[v] = fu;
        }
        Op::Replicate { v, to } => {
            if v >= n || to >= num_fpgas || p.hosts(v).any(|f| f == to) {
                return None;
            }
            q.replicas[v].push(to);
            q.replicas[v].sort_unstable();
        }
        Op::Delete { v, from } => {
            let pos = p.replicas.get(v)?.iter().position(|&f| f == from)?;
            q.replicas[v].remove(pos);
        }
    }
    Some(q)
}

/// `THD(p) - THD(p after op)` by two complete evaluations, or `None` if
/// `op` is illegal.
pub fn full_gain_recompute(h: &Hypergraph, t: &MfsTopology, p: &Placement, op: Op) -> Option<i64> {
    let after = apply_op(p, op, t.num_fpgas())?;
    let hm = t.hops();
    Some(metrics::total_hop_distance(h, p, hm) as i64 - metrics::total_hop_distance(h, &after, hm) as i64)
}

/// Best single replication that keeps the placement feasible, by full
/// recomputation of every `(v, f)` pair. Ties go to the lowest `(v, f)`.
pub fn best_single_replication(
    h: &Hypergraph,
    t: &MfsTopology,
    p: &Placement,
) -> Option<(VertexId, FpgaId, i64)> {
    let mut best: Option<(VertexId, FpgaId, i64)> = None;
    for v in 0..h.num_vertices() {
        for f in 0..t.num_fpgas() {
            let op = Op::Replicate { v, to: f };
            let Some(q) = apply_op(p, op, t.num_fpgas()) else { continue };
            if !metrics::validate(h, t, &q).is_empty() {
                continue;
            }
            let g = full_gain_recompute(h, t, p, op).expect("legal");
            if best.is_none_or(|b| g > b.2) {
                best = Some((v, f, g));
            }
        }
    }
    best
}

/// All-pairs hop counts by Floyd-Warshall; `u32::MAX` marks unreachable
/// pairs. Row-major `n * n`.
pub fn floyd_warshall(n: usize, links: &[(FpgaId, FpgaId)]) -> Vec<u32> {
    const INF: u64 = u64::MAX / 4;
    let mut d = vec![INF; n * n];
    for i in 0..n {
        d[i * n + i] = 0;
    }
    for &(a, b) in links {
        d[a * n + b] = 1;
        d[b * n + a] = 1;
    }
    for m in 0..n {
        for i in 0..n {
            let dim = d[i * n + m];
            if dim == INF {
                continue;
            }
            for j in 0..n {
                let cand = dim + d[m * n + j];
                if cand < d[i * n + j] {
                    d[i * n + j] = cand;
                }
            }
        }
    }
    d.into_iter()
        .map(|x| if x >= INF { u32::MAX } else { x as u32 })
        .collect()
}
