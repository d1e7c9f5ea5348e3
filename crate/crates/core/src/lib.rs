//! Metric-learning lab for equivalent-mutant detection.
//!
//! The crate pairs a cross-entropy pair classifier with Cluster Purge Loss,
//! a hinge objective that pulls each equivalent mutant inside the moving
//! average distance of its class's non-equivalent mutants (the negative
//! verge) and pushes each non-equivalent mutant beyond the moving average
//! distance of the equivalents (the positive verge). Around that sit a
//! small hashed-feature encoder with hand-written backpropagation, corpus
//! preprocessing, a deterministic trainer with checkpointing, and an
//! evaluation harness with hyperparameter sweeps.

pub mod data;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod losses;
pub mod math;
pub mod optim;
pub mod trainer;
pub mod verge;

pub use error::{Error, Result};
