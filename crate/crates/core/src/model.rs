//! Hypergraph and placement data types.
//!
//! Vertices, nets and FPGAs are addressed by dense integer ids. A net has a
//! single source and a non-empty, duplicate-free drain set; multi-source nets
//! are split into one net per source when built through [`HypergraphBuilder`].

use std::fmt;

use thiserror::Error;

pub type VertexId = usize;
pub type EdgeId = usize;
pub type FpgaId = usize;

/// Largest supported FPGA count. Host sets are stored as `u64` bitmasks.
pub const MAX_FPGAS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("vertex {vertex} out of range (|V| = {count})")]
    VertexOutOfRange { vertex: VertexId, count: usize },
    #[error("edge {edge} out of range (|E| = {count})")]
    EdgeOutOfRange { edge: EdgeId, count: usize },
    #[error("net weight must be at least 1")]
    ZeroWeight,
    #[error("source repeated in drains (vertex {0})")]
    SourceInDrains(VertexId),
    #[error("net has no drains")]
    NoDrains,
    #[error("net has no source")]
    NoSource,
    #[error("vertex weight has {got} resource entries, expected {expected}")]
    ResourceArity { expected: usize, got: usize },
}

/// Per-type resource amounts (usage of a vertex, or capacity of an FPGA).
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ResourceVector(pub Vec<u64>);

impl ResourceVector {
    pub fn zeros(k: usize) -> Self {
        ResourceVector(vec![0; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn add_assign(&mut self, other: &[u64]) {
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += *b;
        }
    }

    /// True when every entry is `<=` the matching entry of `limit`.
    pub fn fits_within(&self, limit: &[u64]) -> bool {
        self.0.iter().zip(limit).all(|(a, b)| a <= b)
    }
}

impl From<Vec<u64>> for ResourceVector {
    fn from(v: Vec<u64>) -> Self {
        ResourceVector(v)
    }
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, x) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{x}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hyperedge {
    pub weight: u64,
    pub source: VertexId,
    /// Sorted, duplicate-free, never contains `source`.
    pub drains: Vec<VertexId>,
}

impl Hyperedge {
    /// Pin count `|e| = 1 + |drains|`.
    pub fn size(&self) -> usize {
        1 + self.drains.len()
    }

    pub fn pins(&self) -> impl Iterator<Item = VertexId> + '_ {
        std::iter::once(self.source).chain(self.drains.iter().copied())
    }
}

/// A netlist hypergraph with `k` resource types per vertex.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hypergraph {
    resource_types: usize,
    // flat |V| x k
    weights: Vec<u64>,
    edges: Vec<Hyperedge>,
    incidence: Vec<Vec<EdgeId>>,
}

impl Hypergraph {
    /// Builds a hypergraph from vertex weights and already-normalized nets.
    ///
    /// Drains are sorted and deduplicated; a source listed among its own
    /// drains is rejected.
    pub fn new(
        resource_types: usize,
        vertex_weights: Vec<ResourceVector>,
        edges: Vec<Hyperedge>,
    ) -> Result<Self, ModelError> {
        let n = vertex_weights.len();
        let mut weights = Vec::with_capacity(n * resource_types);
        for w in &vertex_weights {
            if w.len() != resource_types {
                return Err(ModelError::ResourceArity {
                    expected: resource_types,
                    got: w.len(),
                });
            }
            weights.extend_from_slice(w.as_slice());
        }
        let mut normalized = Vec::with_capacity(edges.len());
        for mut e in edges {
            if e.weight == 0 {
                return Err(ModelError::ZeroWeight);
            }
            if e.source >= n {
                return Err(ModelError::VertexOutOfRange { vertex: e.source, count: n });
            }
            e.drains.sort_unstable();
            e.drains.dedup();
            if let Some(&d) = e.drains.iter().find(|&&d| d >= n) {
                return Err(ModelError::VertexOutOfRange { vertex: d, count: n });
            }
            if e.drains.binary_search(&e.source).is_ok() {
                return Err(ModelError::SourceInDrains(e.source));
            }
            if e.drains.is_empty() {
                return Err(ModelError::NoDrains);
            }
            normalized.push(e);
        }
        let mut incidence = vec![Vec::new(); n];
        for (id, e) in normalized.iter().enumerate() {
            for v in e.pins() {
                incidence[v].push(id);
            }
        }
        Ok(Hypergraph {
            resource_types,
            weights,
            edges: normalized,
            incidence,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.incidence.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn resource_types(&self) -> usize {
        self.resource_types
    }

    pub fn vertex_weight(&self, v: VertexId) -> &[u64] {
        let k = self.resource_types;
        &self.weights[v * k..(v + 1) * k]
    }

    pub fn edge(&self, e: EdgeId) -> &Hyperedge {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Hyperedge] {
        &self.edges
    }

    /// `I(v)`: ids of nets where `v` is the source or a drain, ascending.
    pub fn incident_edges(&self, v: VertexId) -> Result<&[EdgeId], ModelError> {
        self.incidence
            .get(v)
            .map(Vec::as_slice)
            .ok_or(ModelError::VertexOutOfRange {
                vertex: v,
                count: self.num_vertices(),
            })
    }

    /// Unchecked variant of [`Hypergraph::incident_edges`] for hot loops.
    pub fn incident(&self, v: VertexId) -> &[EdgeId] {
        &self.incidence[v]
    }

    pub fn total_weight(&self) -> ResourceVector {
        let mut total = ResourceVector::zeros(self.resource_types);
        for v in 0..self.num_vertices() {
            total.add_assign(self.vertex_weight(v));
        }
        total
    }
}

/// Collects vertices and nets, splitting multi-source nets.
#[derive(Debug, Clone)]
pub struct HypergraphBuilder {
    resource_types: usize,
    weights: Vec<ResourceVector>,
    edges: Vec<Hyperedge>,
}

impl HypergraphBuilder {
    pub fn new(resource_types: usize) -> Self {
        HypergraphBuilder {
            resource_types,
            weights: Vec::new(),
            edges: Vec::new(),
        }
    }

    pub fn add_vertex(&mut self, weight: impl Into<ResourceVector>) -> VertexId {
        self.weights.push(weight.into());
        self.weights.len() - 1
    }

    /// Adds a net with one or more sources. Each source becomes its own
    /// hyperedge sharing the drain set and weight.
    pub fn add_net(
        &mut self,
        weight: u64,
        sources: &[VertexId],
        drains: &[VertexId],
    ) -> Result<(), ModelError> {
        if sources.is_empty() {
            return Err(ModelError::NoSource);
        }
        for &s in sources {
            self.edges.push(Hyperedge {
                weight,
                source: s,
                drains: drains.to_vec(),
            });
        }
        Ok(())
    }

    pub fn build(self) -> Result<Hypergraph, ModelError> {
        Hypergraph::new(self.resource_types, self.weights, self.edges)
    }
}

/// Host FPGAs for every vertex: one original plus optional replicas.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Placement {
    pub original: Vec<FpgaId>,
    /// Sorted replica FPGA ids per vertex.
    pub replicas: Vec<Vec<FpgaId>>,
}

impl Placement {
    /// Every vertex on its given FPGA, no replicas.
    pub fn unreplicated(original: Vec<FpgaId>) -> Self {
        let n = original.len();
        Placement {
            original,
            replicas: vec![Vec::new(); n],
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.original.len()
    }

    pub fn hosts(&self, v: VertexId) -> impl Iterator<Item = FpgaId> + '_ {
        std::iter::once(self.original[v]).chain(self.replicas[v].iter().copied())
    }

    /// Host set as a bitmask. Requires every id `< MAX_FPGAS`.
    pub fn host_mask(&self, v: VertexId) -> u64 {
        self.hosts(v).fold(0u64, |m, f| m | (1u64 << f))
    }

    pub fn is_host(&self, v: VertexId, f: FpgaId) -> bool {
        self.original[v] == f || self.replicas[v].binary_search(&f).is_ok()
    }

    pub fn replica_count(&self) -> usize {
        self.replicas.iter().map(Vec::len).sum()
    }

    /// Adds a replica; returns false if `f` already hosts `v`.
    pub fn add_replica(&mut self, v: VertexId, f: FpgaId) -> bool {
        if self.original[v] == f {
            return false;
        }
        match self.replicas[v].binary_search(&f) {
            Ok(_) => false,
            Err(pos) => {
                self.replicas[v].insert(pos, f);
                true
            }
        }
    }

    /// Removes a replica. The original is never removed by this call.
    pub fn remove_replica(&mut self, v: VertexId, f: FpgaId) -> bool {
        match self.replicas[v].binary_search(&f) {
            Ok(pos) => {
                self.replicas[v].remove(pos);
                true
            }
            Err(_) => false,
        }
    }

    /// Structural check: lengths agree, ids in range, replicas sorted,
    /// unique and distinct from the original.
    pub fn is_well_formed(&self, num_vertices: usize, num_fpgas: usize) -> bool {
        self.original.len() == num_vertices
            && self.replicas.len() == num_vertices
            && self.original.iter().zip(&self.replicas).all(|(&o, reps)| {
                o < num_fpgas
                    && reps.windows(2).all(|w| w[0] < w[1])
                    && reps.iter().all(|&r| r < num_fpgas && r != o)
            })
    }
}

/// `N(e)`: FPGAs hosting any copy of any drain of `e`, as a bitmask.
pub fn drain_fpga_mask(h: &Hypergraph, e: EdgeId, p: &Placement) -> u64 {
    h.edge(e)
        .drains
        .iter()
        .fold(0u64, |m, &d| m | p.host_mask(d))
}

/// `N(e)` as a sorted list of FPGA ids.
pub fn drain_fpgas(h: &Hypergraph, e: EdgeId, p: &Placement) -> Result<Vec<FpgaId>, ModelError> {
    if e >= h.num_edges() {
        return Err(ModelError::EdgeOutOfRange { edge: e, count: h.num_edges() });
    }
    Ok(mask_to_ids(drain_fpga_mask(h, e, p)))
}

pub fn mask_to_ids(mut mask: u64) -> Vec<FpgaId> {
    let mut out = Vec::with_capacity(mask.count_ones() as usize);
    while mask != 0 {
        out.push(mask.trailing_zeros() as usize);
        mask &= mask - 1;
    }
    out
}

/// Iterates the set bits of a host mask in ascending order.
pub(crate) struct Bits(pub u64);

impl Iterator for Bits {
    type Item = FpgaId;

    #[inline]
    fn next(&mut self) -> Option<FpgaId> {
        if self.0 == 0 {
            None
        } else {
            let b = self.0.trailing_zeros() as usize;
            self.0 &= self.0 - 1;
            Some(b)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(k: usize) -> ResourceVector {
        ResourceVector(vec![1; k])
    }

    #[test]
    fn incident_edges_of_single_net() {
        let h = Hypergraph::new(
            1,
            vec![unit(1); 3],
            vec![Hyperedge { weight: 1, source: 0, drains: vec![1, 2] }],
        )
        .unwrap();
        assert_eq!(h.incident_edges(0).unwrap(), &[0]);
        assert_eq!(h.incident_edges(2).unwrap(), &[0]);
        assert!(matches!(
            h.incident_edges(3),
            Err(ModelError::VertexOutOfRange { vertex: 3, count: 3 })
        ));
    }

    #[test]
    fn star_has_four_incident_edges() {
        let mut b = HypergraphBuilder::new(1);
        for _ in 0..5 {
            b.add_vertex(unit(1));
        }
        for d in 1..5 {
            b.add_net(1, &[0], &[d]).unwrap();
        }
        let h = b.build().unwrap();
        assert_eq!(h.incident_edges(0).unwrap().len(), 4);
    }

    #[test]
    fn rejects_source_in_drains_and_dedups() {
        let err = Hypergraph::new(
            1,
            vec![unit(1); 2],
            vec![Hyperedge { weight: 1, source: 0, drains: vec![0] }],
        );
        assert_eq!(err, Err(ModelError::SourceInDrains(0)));

        let h = Hypergraph::new(
            1,
            vec![unit(1); 3],
            vec![Hyperedge { weight: 2, source: 0, drains: vec![2, 1, 2] }],
        )
        .unwrap();
        assert_eq!(h.edge(0).drains, vec![1, 2]);
        assert_eq!(h.edge(0).size(), 3);
    }

    #[test]
    fn multi_source_nets_are_split() {
        let mut b = HypergraphBuilder::new(1);
        for _ in 0..4 {
            b.add_vertex(unit(1));
        }
        b.add_net(3, &[0, 1], &[2, 3]).unwrap();
        let h = b.build().unwrap();
        assert_eq!(h.num_edges(), 2);
        assert_eq!(h.edge(1).source, 1);
        assert_eq!(h.edge(1).weight, 3);
        assert_eq!(h.edge(1).drains, vec![2, 3]);
    }

    #[test]
    fn drain_fpgas_union_includes_replicas() {
        let h = Hypergraph::new(
            1,
            vec![unit(1); 3],
            vec![Hyperedge { weight: 1, source: 0, drains: vec![1, 2] }],
        )
        .unwrap();
        let p = Placement::unreplicated(vec![0, 2, 2]);
        assert_eq!(drain_fpgas(&h, 0, &p).unwrap(), vec![2]);

        let mut p = Placement::unreplicated(vec![0, 1, 1]);
        p.add_replica(1, 3);
        assert_eq!(drain_fpgas(&h, 0, &p).unwrap(), vec![1, 3]);
        assert!(drain_fpgas(&h, 1, &p).is_err());
    }

    #[test]
    fn replica_bookkeeping() {
        let mut p = Placement::unreplicated(vec![1]);
        assert!(!p.add_replica(0, 1));
        assert!(p.add_replica(0, 3));
        assert!(p.add_replica(0, 0));
        assert_eq!(p.replicas[0], vec![0, 3]);
        assert!(!p.remove_replica(0, 1));
        assert_eq!(p.original[0], 1);
        assert!(p.remove_replica(0, 0));
        assert_eq!(p.host_mask(0), 0b1010);
        assert!(p.is_well_formed(1, 4));
        assert!(!p.is_well_formed(1, 3));
    }
}
