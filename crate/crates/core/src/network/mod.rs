//! Network structure: communication graph, static interconnection, gain
//! allocation and the network-level dissipation certificate.

mod gains;
mod interconnect;
mod lmi;
pub mod random;
mod topology;

pub use gains::{
    allocate_gains, gain_structure, single_route_gain, ActiveBound, AgentGain, AgentStructure,
    GainAllocation, IndexSets,
};
pub use interconnect::{
    build_from_topology, AgentDims, InterconnectionFile, InterconnectionSpec, Violation,
    ORTHOGONALITY_TOL,
};
pub use lmi::{
    assemble_lmi, certify, check_negative_semidefinite, max_eigenvalue, LmiReport, SchurChain,
    LMI_TOL,
};
pub use topology::Topology;
