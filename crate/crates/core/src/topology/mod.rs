//! Participant graphs and the hypergeometric exposure model that links
//! topology density, attacker share and per-node risk.

mod graph;
mod risk;

pub use graph::{build_topology, Mutation, TopologyGraph, TopologyKind};
pub use risk::{
    binomial, connection_threshold, expected_malicious, malicious_connection_pmf, malicious_count,
    node_risk, ConnectionThreshold, Pmf, RiskProfile,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("topology needs at least 3 nodes, got {0}")]
    InvalidSize(usize),
    #[error("random edge probability must be in (0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("no connected random graph after {0} attempts")]
    GenerationFailure(usize),
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error("degree {degree} exceeds the {peers} available peers")]
    InvalidDegree { degree: usize, peers: usize },
    #[error("alpha {alpha} gives {malicious} attackers among {n} nodes")]
    InvalidAlpha {
        alpha: f64,
        n: usize,
        malicious: usize,
    },
    #[error("invalid edges-per-node value {0}")]
    InvalidEdgesPerNode(f64),
    #[error("node has no neighbors")]
    IsolatedNode,
}
