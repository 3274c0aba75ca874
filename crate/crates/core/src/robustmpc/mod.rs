//! Robust receding-horizon control on top of the set-membership identifier.

pub mod config;
pub mod controller;
pub mod dual;
pub mod fhocp;
pub mod predict;

pub use config::{InfeasibilityPolicy, MpcConfig, SolveStrategy};
pub use controller::{step_controller, AdaptiveController, ControlDecision};
pub use dual::{build_dual_constraints, DualBlock, PhiAffine};
pub use fhocp::{build_fhocp, FhocpProblem, FhocpSolution};
pub use predict::{predict_fps_sequence, PredictedFpsSequence, PredictedSet};
