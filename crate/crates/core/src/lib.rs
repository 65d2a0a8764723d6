//! Topology-aware multilevel hypergraph partitioning for multi-FPGA systems.
//!
//! The pipeline coarsens the netlist with resource-aware heavy-edge
//! matching ([`coarsen`]), places the coarsest hypernodes with a heat-ordered
//! branch-and-bound search ([`assign`]), then projects back level by level,
//! refining with move, exchange, replicate and delete operations driven by a
//! bank of gain heaps ([`refine`]). The objective is total hop distance
//! ([`metrics`]).

pub mod assign;
pub mod coarsen;
pub mod io;
pub mod metrics;
pub mod model;
pub mod oracle;
pub mod partition;
pub mod refine;
pub mod seed;
pub mod topology;

pub use model::{FpgaId, Hyperedge, Hypergraph, HypergraphBuilder, Placement, ResourceVector, VertexId};
pub use topology::{HopMatrix, MfsTopology};
