use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::model::ModelStructure;
use crate::solvers::polytope::{check_nonempty_bounded, feasible_point};

/// What the controller does when the feasible parameter set turns out empty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibilityPolicy {
    #[default]
    FailFast,
    /// Reinitialize the identifier with the prior set and retry once.
    RestartIdentifier,
}

/// How the robust output constraints are handled by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStrategy {
    /// QP over the inputs only; worst-case models are added as cuts until no
    /// robust constraint is violated, and the multipliers are recovered from
    /// the support LPs afterwards.
    #[default]
    CuttingPlane,
    /// One QP over inputs and all dual multipliers. Only sensible for small
    /// problems.
    Monolithic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q_weight: DMatrix<f64>,
    pub s_weight: DMatrix<f64>,
    pub r_weight: DMatrix<f64>,
    pub cu_matrix: DMatrix<f64>,
    pub gu_vector: DVector<f64>,
    pub cdu_matrix: DMatrix<f64>,
    pub gdu_vector: DVector<f64>,
    pub cy_matrix: DMatrix<f64>,
    pub gy_vector: DVector<f64>,
    /// Overall task length; informational.
    pub task_horizon: usize,
    pub policy: InfeasibilityPolicy,
    pub strategy: SolveStrategy,
}

fn check_psd(name: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    check_len(name, n, m.nrows())?;
    check_len(name, n, m.ncols())?;
    check_finite(name, m.iter())?;
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::InvalidArgument(format!("{name} is not symmetric (asymmetry {asym:e})")));
    }
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min_eig < -1e-9 {
        return Err(Error::InvalidArgument(format!(
            "{name} is not positive semidefinite (eigenvalue {min_eig:e})"
        )));
    }
    Ok(())
}

impl MpcConfig {
    /// Input count, output count and constraint shapes against `s`, PSD
    /// weights, a bounded input set, an input-rate set containing the origin,
    /// and a horizon long enough for the terminal steady-state constraint.
    pub fn validate(&self, s: &ModelStructure) -> Result<()> {
        let (n_u, n_y) = (s.n_u(), s.n_y());
        check_psd("Q", &self.q_weight, n_y)?;
        check_psd("S", &self.s_weight, n_u)?;
        check_psd("R", &self.r_weight, n_u)?;

        check_len("C_u columns", n_u, self.cu_matrix.ncols())?;
        check_len("g_u", self.cu_matrix.nrows(), self.gu_vector.len())?;
        check_len("C_du columns", n_u, self.cdu_matrix.ncols())?;
        check_len("g_du", self.cdu_matrix.nrows(), self.gdu_vector.len())?;
        check_len("C_y columns", n_y, self.cy_matrix.ncols())?;
        check_len("g_y", self.cy_matrix.nrows(), self.gy_vector.len())?;
        for (name, m, v) in [
            ("input constraints", &self.cu_matrix, &self.gu_vector),
            ("input-rate constraints", &self.cdu_matrix, &self.gdu_vector),
            ("output constraints", &self.cy_matrix, &self.gy_vector),
        ] {
            check_finite(name, m.iter().chain(v.iter()))?;
        }

        check_nonempty_bounded(&self.cu_matrix, &self.gu_vector, "input constraint set")?;
        if self.gdu_vector.iter().any(|&g| g < 0.0) {
            return Err(Error::InvalidArgument("input-rate constraint set must contain the origin".into()));
        }
        if feasible_point(&self.cdu_matrix, &self.gdu_vector)?.is_none() {
            return Err(Error::EmptyPolytope("input-rate constraint set".into()));
        }

        let needed = s.nilpotency_index().unwrap_or(s.m());
        if self.horizon < needed.max(1) {
            return Err(Error::InvalidArgument(format!(
                "horizon {} is shorter than the {needed} steps needed to reach a steady regressor",
                self.horizon
            )));
        }
        Ok(())
    }

    pub fn n_o(&self) -> usize {
        self.cy_matrix.nrows()
    }

    /// `d̄_l = Σ_j |c_lj| ε_dj`.
    pub fn dbar(&self, eps_d: &DVector<f64>) -> DVector<f64> {
        self.cy_matrix.abs() * eps_d
    }
}
