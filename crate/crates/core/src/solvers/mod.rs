//! Self-contained dense LP and convex QP solvers.

mod lp;
pub mod polytope;
mod qp;
mod simplex;
mod vertices;

use nalgebra::{DVector, Dim, Matrix, RawStorage, U1};
use serde::{Deserialize, Serialize};

pub use lp::{solve_lp, LinearProgram, Sense};
pub use qp::{solve_qp, solve_qp_warm, QuadraticProgram};
pub use vertices::enumerate_vertices;

/// Default feasibility and optimality tolerance.
pub const DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub solution: DVector<f64>,
    pub objective: f64,
    /// Inequality multipliers (nonnegative). For an infeasible LP this holds the
    /// Farkas certificate instead.
    pub dual_ineq: DVector<f64>,
    pub dual_eq: DVector<f64>,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub(crate) fn is_zero_row<C: Dim, S: RawStorage<f64, U1, C>>(row: &Matrix<f64, U1, C, S>) -> bool {
    row.iter().all(|v| v.abs() < 1e-14)
}
