//! Ensembles of one-dimensional Bohmian trajectories driven by a guiding
//! wave plus white noise, and diagnostics for their relaxation toward |Ψ|².

pub mod dynamics;
pub mod eigensolver;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod metrics;
pub mod quadrature;
pub mod quantum;
pub mod rng;
pub mod spline;

pub use error::{Error, NodeSingularity, Result};
