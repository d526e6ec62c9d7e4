//! 1-bit compressed sensing recovery: classical FPC-l1/FPC-l2 fixed-point
//! solvers and their deep-unfolded counterparts (DeepFPC-l1, DeepFPC-l2),
//! with training, batched inference, noise-robustness experiments, and NMSE
//! evaluation.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod experiments;
pub mod fpc_solvers;
pub mod model_core;
pub mod operators;
pub mod training;
pub mod unfolded_net;

pub use error::{DfpcError, Result};
