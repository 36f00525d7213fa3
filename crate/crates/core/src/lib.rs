//! Desk-scale federated-learning challenge engine.
//!
//! Simulates multi-center clients with label and feature skew, trains toy
//! models under pluggable aggregation strategies, and evaluates them with
//! macro-F1, linear Expected Cost, rank aggregation, bootstrap rank
//! stability and the Wilcoxon signed-rank test.

pub mod aggregation;
pub mod cli;
pub mod datagen;
pub mod fedsim;
pub mod metrics;
pub mod models;
pub mod ranking;
