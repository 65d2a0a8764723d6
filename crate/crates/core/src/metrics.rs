//! Objective and constraint evaluation from scratch.
//!
//! Every drain FPGA of a net is served by the nearest copy of the net's
//! source (ties to the lowest FPGA id). Without replicas this is exactly
//! `sum_{f in N(e)} hop(part(source), f)`.

use serde::Serialize;

use crate::model::{Bits, EdgeId, FpgaId, Hypergraph, Placement, ResourceVector};
use crate::topology::{HopMatrix, MfsTopology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ViolationKind {
    Resource,
    Io,
    Hop,
    Placement,
}

/// One broken constraint. `observed > limit` always holds.
///
/// `site` is an FPGA id for resource/io, an edge id for hop and a vertex id
/// for placement defects (or the vertex count for a length mismatch).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub site: usize,
    /// Resource type for resource violations.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resource: Option<usize>,
    pub observed: u64,
    pub limit: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MetricsReport {
    pub total_hop_distance: u64,
    pub cut_size: u64,
    pub max_hop: u32,
    pub replica_count: u64,
    pub usage: Vec<Vec<u64>>,
    pub io_usage: Vec<u64>,
    pub violations: Vec<Violation>,
}

impl MetricsReport {
    /// Pretty JSON with a fixed key order and trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Nearest copy in `src_mask` to FPGA `d`, ties to lowest id.
#[inline]
pub fn nearest_source(src_mask: u64, d: FpgaId, hm: &HopMatrix) -> (FpgaId, u32) {
    let mut best = (usize::MAX, u32::MAX);
    for s in Bits(src_mask) {
        let h = hm.get(s, d);
        if h < best.1 {
            best = (s, h);
        }
    }
    best
}

/// Unweighted cost of a net given its source host mask and drain host mask.
#[inline]
pub fn mask_cost(src_mask: u64, drain_mask: u64, hm: &HopMatrix) -> u64 {
    let external = drain_mask & !src_mask;
    if external == 0 {
        return 0;
    }
    if src_mask.count_ones() == 1 {
        let row = hm.row(src_mask.trailing_zeros() as usize);
        return Bits(external).map(|d| u64::from(row[d])).sum();
    }
    Bits(external)
        .map(|d| u64::from(nearest_source(src_mask, d, hm).1))
        .sum()
}

/// Largest per-drain-FPGA hop for a net (0 when all local).
#[inline]
pub fn mask_max_hop(src_mask: u64, drain_mask: u64, hm: &HopMatrix) -> u32 {
    Bits(drain_mask & !src_mask)
        .map(|d| nearest_source(src_mask, d, hm).1)
        .max()
        .unwrap_or(0)
}

/// Export and import FPGA masks of a net: importers are drain FPGAs with no
/// source copy, exporters are the source copies chosen to serve them.
#[inline]
pub fn io_masks(src_mask: u64, drain_mask: u64, hm: &HopMatrix) -> (u64, u64) {
    let import = drain_mask & !src_mask;
    if import == 0 {
        return (0, 0);
    }
    if src_mask.count_ones() == 1 {
        return (src_mask, import);
    }
    let export = Bits(import).fold(0u64, |m, d| m | (1u64 << nearest_source(src_mask, d, hm).0));
    (export, import)
}

fn net_masks(h: &Hypergraph, e: EdgeId, p: &Placement) -> (u64, u64) {
    let edge = h.edge(e);
    let src = p.host_mask(edge.source);
    let drains = edge.drains.iter().fold(0u64, |m, &d| m | p.host_mask(d));
    (src, drains)
}

/// Hop distance of one net (unweighted).
pub fn net_hop_distance(h: &Hypergraph, e: EdgeId, p: &Placement, hm: &HopMatrix) -> u64 {
    let (s, n) = net_masks(h, e, p);
    mask_cost(s, n, hm)
}

/// `sum_e w_e * net_hop_distance(e)`.
pub fn total_hop_distance(h: &Hypergraph, p: &Placement, hm: &HopMatrix) -> u64 {
    (0..h.num_edges())
        .map(|e| h.edge(e).weight * net_hop_distance(h, e, p, hm))
        .sum()
}

/// Nets with no single FPGA hosting a copy of the source and of every drain.
pub fn cut_size(h: &Hypergraph, p: &Placement) -> u64 {
    h.edges()
        .iter()
        .filter(|e| e.pins().fold(u64::MAX, |m, v| m & p.host_mask(v)) == 0)
        .count() as u64
}

/// Signal units entering or leaving every FPGA.
pub fn io_usage_all(h: &Hypergraph, p: &Placement, hm: &HopMatrix) -> Vec<u64> {
    let mut io = vec![0u64; hm.len()];
    for e in 0..h.num_edges() {
        let (s, n) = net_masks(h, e, p);
        let (export, import) = io_masks(s, n, hm);
        let w = h.edge(e).weight;
        for f in Bits(export | import) {
            io[f] += w;
        }
    }
    io
}

pub fn io_usage(h: &Hypergraph, p: &Placement, hm: &HopMatrix, f: FpgaId) -> u64 {
    io_usage_all(h, p, hm)[f]
}

/// Summed resource usage of all hosted copies, per FPGA.
pub fn fpga_usage(h: &Hypergraph, p: &Placement, num_fpgas: usize) -> Vec<ResourceVector> {
    let mut usage = vec![ResourceVector::zeros(h.resource_types()); num_fpgas];
    for v in 0..h.num_vertices() {
        for f in p.hosts(v) {
            usage[f].add_assign(h.vertex_weight(v));
        }
    }
    usage
}

/// Largest per-drain minimum hop over all nets.
pub fn max_hop_used(h: &Hypergraph, p: &Placement, hm: &HopMatrix) -> u32 {
    (0..h.num_edges())
        .map(|e| {
            let (s, n) = net_masks(h, e, p);
            mask_max_hop(s, n, hm)
        })
        .max()
        .unwrap_or(0)
}

fn placement_violations(h: &Hypergraph, t: &MfsTopology, p: &Placement) -> Vec<Violation> {
    let n = h.num_vertices();
    let k = t.num_fpgas();
    let mut out = Vec::new();
    if p.original.len() != n || p.replicas.len() != n {
        let len = p.original.len().max(p.replicas.len());
        let shorter = p.original.len().min(p.replicas.len());
        out.push(Violation {
            kind: ViolationKind::Placement,
            site: n,
            resource: None,
            observed: (len.abs_diff(n)).max(shorter.abs_diff(n)) as u64,
            limit: 0,
        });
        return out;
    }
    for v in 0..n {
        let mut seen = 0u128;
        for f in p.hosts(v) {
            if f >= k {
                out.push(Violation {
                    kind: ViolationKind::Placement,
                    site: v,
                    resource: None,
                    observed: f as u64,
                    limit: k as u64 - 1,
                });
                continue;
            }
            if seen & (1u128 << f) != 0 {
                // two copies of v on one FPGA
                out.push(Violation {
                    kind: ViolationKind::Placement,
                    site: v,
                    resource: None,
                    observed: 2,
                    limit: 1,
                });
            }
            seen |= 1u128 << f;
        }
    }
    out
}

/// All constraint violations of `p`. Empty iff the placement is feasible.
///
/// A malformed placement is reported alone since the other checks are
/// undefined for it.
pub fn validate(h: &Hypergraph, t: &MfsTopology, p: &Placement) -> Vec<Violation> {
    let structural = placement_violations(h, t, p);
    if !structural.is_empty() {
        return structural;
    }
    let hm = t.hops();
    let mut out = Vec::new();
    for (f, used) in fpga_usage(h, p, t.num_fpgas()).iter().enumerate() {
        for (i, (&u, &c)) in used.0.iter().zip(t.capacity(f)).enumerate() {
            if u > c {
                out.push(Violation {
                    kind: ViolationKind::Resource,
                    site: f,
                    resource: Some(i),
                    observed: u,
                    limit: c,
                });
            }
        }
    }
    for (f, &io) in io_usage_all(h, p, hm).iter().enumerate() {
        if let Some(limit) = t.io_limit(f) {
            if io > limit {
                out.push(Violation {
                    kind: ViolationKind::Io,
                    site: f,
                    resource: None,
                    observed: io,
                    limit,
                });
            }
        }
    }
    if let Some(max) = t.hop_max() {
        for e in 0..h.num_edges() {
            let (s, n) = net_masks(h, e, p);
            let worst = mask_max_hop(s, n, hm);
            if worst > max {
                out.push(Violation {
                    kind: ViolationKind::Hop,
                    site: e,
                    resource: None,
                    observed: u64::from(worst),
                    limit: u64::from(max),
                });
            }
        }
    }
    out
}

/// Full metrics and violation listing for a placement.
///
/// Panics if `p` is structurally malformed; call [`validate`] first when
/// the placement comes from outside.
pub fn report(h: &Hypergraph, t: &MfsTopology, p: &Placement) -> MetricsReport {
    let violations = validate(h, t, p);
    assert!(
        violations.iter().all(|v| v.kind != ViolationKind::Placement),
        "malformed placement"
    );
    let hm = t.hops();
    MetricsReport {
        total_hop_distance: total_hop_distance(h, p, hm),
        cut_size: cut_size(h, p),
        max_hop: max_hop_used(h, p, hm),
        replica_count: p.replica_count() as u64,
        usage: fpga_usage(h, p, t.num_fpgas()).into_iter().map(|r| r.0).collect(),
        io_usage: io_usage_all(h, p, hm),
        violations,
    }
}
