//! Deterministic decentralized federated learning simulator with a reactive,
//! topology-based moving target defense.
//!
//! Nodes train a small MLP on IID shards of a synthetic task, exchange models
//! with their graph neighbors and aggregate them with a configurable rule.
//! The `voyager` module reacts to anomalous neighbor models by growing the
//! node's neighborhood through trusted two-hop peers before running Krum.

pub mod aggregation;
pub mod attacks;
pub mod config;
pub mod learning;
pub mod model;
pub mod seed;
pub mod sim;
pub mod topology;
pub mod voyager;
