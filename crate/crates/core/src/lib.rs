//! Globally gated deep linear networks: finite-width kernel renormalization
//! theory, GP-limit predictors, gating families, datasets and samplers.

pub mod datasets;
pub mod error;
pub mod experiments;
pub mod gatings;
pub mod gp;
pub mod multitask;
pub mod network;
pub mod numerics;
pub mod predictor;
pub mod renorm;
pub mod rng;
pub mod samplers;
pub mod serde_matrix;

pub use error::{Error, Result};
pub use numerics::SymMatrix;
