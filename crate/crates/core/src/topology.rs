//! Multi-FPGA system model: per-FPGA capacities and I/O limits, the
//! undirected link graph, and its all-pairs hop matrix.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::model::{FpgaId, ResourceVector, MAX_FPGAS};

/// Penalty multiplier applied to `Hop_max` for FPGAs beyond the hop limit
/// when computing [`MfsTopology::hop_sum`].
pub const HOP_PENALTY: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology needs at least one FPGA")]
    Empty,
    #[error("at most {MAX_FPGAS} FPGAs are supported, got {0}")]
    TooManyFpgas(usize),
    #[error("self-link on FPGA {0}")]
    SelfLink(FpgaId),
    #[error("duplicate link ({0},{1})")]
    DuplicateLink(FpgaId, FpgaId),
    #[error("link ({0},{1}) references an FPGA outside 0..{2}")]
    LinkOutOfRange(FpgaId, FpgaId, usize),
    #[error("unreachable pair ({0},{1})")]
    Unreachable(FpgaId, FpgaId),
    #[error("FPGA {fpga} has {got} resource entries, expected {expected}")]
    ResourceArity { fpga: FpgaId, expected: usize, got: usize },
    #[error("io limit list has {got} entries for {expected} FPGAs")]
    IoArity { expected: usize, got: usize },
    #[error("hop limit must be positive")]
    ZeroHopMax,
}

/// Symmetric matrix of shortest-path link counts between FPGAs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopMatrix {
    n: usize,
    dist: Vec<u32>,
}

impl HopMatrix {
    /// Wraps a dense row-major matrix. Intended for oracles and tests.
    pub fn from_rows(n: usize, dist: Vec<u32>) -> Self {
        assert_eq!(dist.len(), n * n);
        HopMatrix { n, dist }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, a: FpgaId, b: FpgaId) -> u32 {
        self.dist[a * self.n + b]
    }

    pub fn row(&self, a: FpgaId) -> &[u32] {
        &self.dist[a * self.n..(a + 1) * self.n]
    }

    pub fn max_entry(&self) -> u32 {
        self.dist.iter().copied().max().unwrap_or(0)
    }
}

/// BFS from every FPGA over unit-cost undirected links.
pub fn compute_hop_matrix(n: usize, links: &[(FpgaId, FpgaId)]) -> Result<HopMatrix, TopologyError> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in links {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![u32::MAX; n * n];
    let mut queue = VecDeque::with_capacity(n);
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            let du = row[u];
            for &v in &adj[u] {
                if row[v] == u32::MAX {
                    row[v] = du + 1;
                    queue.push_back(v);
                }
            }
        }
        if let Some(t) = row.iter().position(|&d| d == u32::MAX) {
            let (a, b) = if s < t { (s, t) } else { (t, s) };
            return Err(TopologyError::Unreachable(a, b));
        }
    }
    Ok(HopMatrix { n, dist })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MfsTopology {
    capacities: Vec<ResourceVector>,
    io_limits: Vec<Option<u64>>,
    links: Vec<(FpgaId, FpgaId)>,
    hop_max: Option<u32>,
    hops: HopMatrix,
}

impl MfsTopology {
    /// Validates the link set and computes the hop matrix. Links are stored
    /// normalized as `(min, max)` in input order.
    pub fn new(
        capacities: Vec<ResourceVector>,
        io_limits: Vec<Option<u64>>,
        links: Vec<(FpgaId, FpgaId)>,
        hop_max: Option<u32>,
    ) -> Result<Self, TopologyError> {
        let n = capacities.len();
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        if n > MAX_FPGAS {
            return Err(TopologyError::TooManyFpgas(n));
        }
        let k = capacities[0].len();
        for (f, c) in capacities.iter().enumerate() {
            if c.len() != k {
                return Err(TopologyError::ResourceArity { fpga: f, expected: k, got: c.len() });
            }
        }
        if io_limits.len() != n {
            return Err(TopologyError::IoArity { expected: n, got: io_limits.len() });
        }
        if hop_max == Some(0) {
            return Err(TopologyError::ZeroHopMax);
        }
        let mut seen = BTreeSet::new();
        let mut normalized = Vec::with_capacity(links.len());
        for (a, b) in links {
            if a >= n || b >= n {
                return Err(TopologyError::LinkOutOfRange(a, b, n));
            }
            if a == b {
                return Err(TopologyError::SelfLink(a));
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                return Err(TopologyError::DuplicateLink(key.0, key.1));
            }
            normalized.push(key);
        }
        let hops = compute_hop_matrix(n, &normalized)?;
        Ok(MfsTopology {
            capacities,
            io_limits,
            links: normalized,
            hop_max,
            hops,
        })
    }

    pub fn num_fpgas(&self) -> usize {
        self.capacities.len()
    }

    pub fn resource_types(&self) -> usize {
        self.capacities[0].len()
    }

    pub fn capacity(&self, f: FpgaId) -> &[u64] {
        self.capacities[f].as_slice()
    }

    pub fn capacities(&self) -> &[ResourceVector] {
        &self.capacities
    }

    pub fn io_limit(&self, f: FpgaId) -> Option<u64> {
        self.io_limits[f]
    }

    pub fn io_limits(&self) -> &[Option<u64>] {
        &self.io_limits
    }

    pub fn links(&self) -> &[(FpgaId, FpgaId)] {
        &self.links
    }

    pub fn hop_max(&self) -> Option<u32> {
        self.hop_max
    }

    pub fn hops(&self) -> &HopMatrix {
        &self.hops
    }

    /// Per-type arithmetic mean of FPGA capacities.
    pub fn mean_capacity(&self) -> Vec<f64> {
        let n = self.num_fpgas() as f64;
        (0..self.resource_types())
            .map(|i| self.capacities.iter().map(|c| c.0[i] as f64).sum::<f64>() / n)
            .collect()
    }

    /// Topological centrality sum: hop distances to all other FPGAs, with
    /// any FPGA beyond `hop_max` charged `HOP_PENALTY * hop_max` instead.
    pub fn hop_sum(&self, f: FpgaId) -> u64 {
        self.hops
            .row(f)
            .iter()
            .enumerate()
            .filter(|&(u, _)| u != f)
            .map(|(_, &h)| match self.hop_max {
                Some(max) if h > max => HOP_PENALTY * u64::from(max),
                _ => u64::from(h),
            })
            .sum()
    }

    /// Copy with every capacity replaced by `cap`. Used for imbalance-factor
    /// regimes where only a uniform per-FPGA limit is defined.
    pub fn with_uniform_capacity(&self, cap: ResourceVector) -> Result<Self, TopologyError> {
        MfsTopology::new(
            vec![cap; self.num_fpgas()],
            self.io_limits.clone(),
            self.links.clone(),
            self.hop_max,
        )
    }

    /// Copy with replaced capacities / io limits / hop limit.
    pub fn rebuild(
        &self,
        capacities: Vec<ResourceVector>,
        io_limits: Vec<Option<u64>>,
        hop_max: Option<u32>,
    ) -> Result<Self, TopologyError> {
        MfsTopology::new(capacities, io_limits, self.links.clone(), hop_max)
    }
}

/// Per-FPGA limit `floor((1 + eps) * total_i / K)` for each resource type.
pub fn imbalance_capacity(total: &ResourceVector, num_fpgas: usize, eps: f64) -> ResourceVector {
    ResourceVector(
        total
            .0
            .iter()
            .map(|&t| ((1.0 + eps) * t as f64 / num_fpgas as f64).floor() as u64)
            .collect(),
    )
}
