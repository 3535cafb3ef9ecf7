//! Simulator for two-layer ReLU networks trained by full-batch gradient
//! descent on noisy XOR cluster data, with instrumentation for the
//! conditions and trajectory bounds that govern overfitting and delayed
//! generalization in that setting.

pub mod config;
pub mod datagen;
pub mod error;
pub mod instrument;
pub mod io;
pub mod linalg;
pub mod network;
pub mod par;
pub mod propcheck;
pub mod rng;
pub mod trainer;

pub use config::{check_assumptions, load_config, AssumptionReport, RunConfig};
pub use datagen::{ClusterId, ConditionReport, Dataset};
pub use error::{Error, Result};
pub use network::Network;
pub use par::Parallelism;
