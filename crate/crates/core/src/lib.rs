//! Adaptive model predictive control for constrained linear time-varying
//! systems.

pub mod baseline;
pub mod error;
pub mod model;
pub mod plant;
pub mod robustmpc;
pub mod smident;
pub mod solvers;

pub use error::{Error, Result};
