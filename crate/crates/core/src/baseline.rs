//! Certainty-equivalence comparison controller: recursive least squares with
//! forgetting for the parameters, and the same tracking cost with softened
//! output constraints and no robustification.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::error::{check_finite, check_len, Error, Result};
use crate::model::{advance_regressor, ModelStructure};
use crate::robustmpc::controller::ControlDecision;
use crate::robustmpc::dual::PhiAffine;
use crate::robustmpc::fhocp::{assemble_cost, input_constraints};
use crate::robustmpc::MpcConfig;
use crate::solvers::{solve_qp_warm, QuadraticProgram, SolveStatus};

const QP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RlsState {
    pub h_est: DMatrix<f64>,
    pub p_cov: DMatrix<f64>,
    pub forgetting: f64,
}

impl RlsState {
    pub fn new(h_est: DMatrix<f64>, p0: f64, forgetting: f64) -> Result<Self> {
        if !(forgetting > 0.0 && forgetting <= 1.0) {
            return Err(Error::InvalidArgument(format!("forgetting factor {forgetting} outside (0, 1]")));
        }
        if !(p0 > 0.0 && p0.is_finite()) {
            return Err(Error::InvalidArgument("initial covariance scale must be positive".into()));
        }
        check_finite("initial estimate", h_est.iter())?;
        let m = h_est.ncols();
        Ok(Self {
            h_est,
            p_cov: DMatrix::identity(m, m) * p0,
            forgetting,
        })
    }
}

/// Exponentially weighted RLS; all outputs share the regressor and hence the
/// covariance.
pub fn rls_update(state: &RlsState, phi: &DVector<f64>, y_meas: &DVector<f64>) -> Result<RlsState> {
    check_len("regressor", state.h_est.ncols(), phi.len())?;
    check_len("measurement", state.h_est.nrows(), y_meas.len())?;
    check_finite("RLS data", phi.iter().chain(y_meas.iter()))?;
    let lambda = state.forgetting;
    let p_phi = &state.p_cov * phi;
    let gain = &p_phi / (lambda + phi.dot(&p_phi));
    let innovation = y_meas - &state.h_est * phi;
    let h_est = &state.h_est + &innovation * gain.transpose();
    let p = (&state.p_cov - &gain * p_phi.transpose()) / lambda;
    let p_cov = (&p + p.transpose()) * 0.5;
    Ok(RlsState {
        h_est,
        p_cov,
        forgetting: lambda,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineController {
    structure: ModelStructure,
    cfg: MpcConfig,
    rls: RlsState,
    rho: f64,
    phi: DVector<f64>,
    u_prev: DVector<f64>,
    fallbacks: usize,
}

/// Default slack weight: `10³·max(Q)`.
pub fn default_slack_weight(cfg: &MpcConfig) -> f64 {
    1e3 * cfg.q_weight.max().max(1.0)
}

impl BaselineController {
    pub fn new(
        structure: ModelStructure,
        cfg: MpcConfig,
        rls: RlsState,
        rho: f64,
        phi0: DVector<f64>,
        u_prev: DVector<f64>,
    ) -> Result<Self> {
        cfg.validate(&structure)?;
        check_len("estimate rows", structure.n_y(), rls.h_est.nrows())?;
        check_len("estimate columns", structure.m(), rls.h_est.ncols())?;
        check_len("initial regressor", structure.m(), phi0.len())?;
        check_len("initial input", structure.n_u(), u_prev.len())?;
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument("slack weight must be positive".into()));
        }
        Ok(Self {
            structure,
            cfg,
            rls,
            rho,
            phi: phi0,
            u_prev,
            fallbacks: 0,
        })
    }

    pub fn rls(&self) -> &RlsState {
        &self.rls
    }

    pub fn regressor(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Soft-constrained QP over `[U; s]` with the current estimate.
    pub fn build_qp(&self, y_meas: &DVector<f64>, y_des: &[DVector<f64>]) -> Result<QuadraticProgram> {
        let n = self.cfg.horizon;
        let n_u = self.structure.n_u();
        let nv = n * n_u;
        let n_o = self.cfg.n_o();
        let ns = n * n_o;
        let h = &self.rls.h_est;
        let d_hat = y_meas - h * &self.phi;
        let map = PhiAffine::build(&self.structure, &self.phi, n)?;
        let cost = assemble_cost(&self.cfg, h, &d_hat, y_des, &self.u_prev, &map)?;
        let (gi, hi) = input_constraints(&self.cfg, n, &self.u_prev);

        let mut hess = DMatrix::zeros(nv + ns, nv + ns);
        hess.view_mut((0, 0), (nv, nv)).copy_from(&cost.hessian);
        let mut lin = DVector::from_element(nv + ns, self.rho);
        lin.rows_mut(0, nv).copy_from(&cost.linear);

        let p = gi.nrows();
        let mut g = DMatrix::zeros(p + 2 * ns, nv + ns);
        let mut rhs = DVector::zeros(p + 2 * ns);
        g.view_mut((0, 0), (p, nv)).copy_from(&gi);
        rhs.rows_mut(0, p).copy_from(&hi);
        for i in 0..n {
            let row = p + i * n_o;
            let cy = &self.cfg.cy_matrix;
            g.view_mut((row, 0), (n_o, nv)).copy_from(&(cy * h * &map.lin[i]));
            g.view_mut((row, nv + i * n_o), (n_o, n_o)).fill_with_identity();
            g.view_mut((row, nv + i * n_o), (n_o, n_o)).neg_mut();
            rhs.rows_mut(row, n_o)
                .copy_from(&(&self.cfg.gy_vector - cy * (h * &map.offset[i] + &d_hat)));
        }
        for k in 0..ns {
            g[(p + ns + k, nv + k)] = -1.0;
        }
        Ok(QuadraticProgram::new(hess, lin).with_inequalities(g, rhs))
    }

    pub fn step(&mut self, t: u64, y_meas: &DVector<f64>, y_des: &[DVector<f64>]) -> Result<ControlDecision> {
        self.rls = rls_update(&self.rls, &self.phi, y_meas)?;
        let n_u = self.structure.n_u();
        let nv = self.cfg.horizon * n_u;
        let qp = self.build_qp(y_meas, y_des)?;
        // Holding the previous input with each slack at its row's excess is
        // feasible and saves the solver a phase-one pass.
        let mut start = DVector::zeros(qp.num_vars());
        for i in 0..self.cfg.horizon {
            start.rows_mut(i * n_u, n_u).copy_from(&self.u_prev);
        }
        let rows = qp.ineq_matrix.nrows();
        let ns = qp.num_vars() - nv;
        let p = rows - 2 * ns;
        for k in 0..ns {
            let r = p + k;
            let excess = qp.ineq_matrix.row(r).columns(0, nv).dot(&start.rows(0, nv).transpose()) - qp.ineq_rhs[r];
            start[nv + k] = excess.max(0.0);
        }
        let rep = solve_qp_warm(&qp, QP_TOL, Some(&start))?;
        let h = &self.rls.h_est;
        let d_hat = y_meas - h * &self.phi;
        let map = PhiAffine::build(&self.structure, &self.phi, self.cfg.horizon)?;
        let (u_seq, fallback, slack) = if rep.status == SolveStatus::Optimal {
            let s = rep.solution.rows(nv, rep.solution.len() - nv).max().max(0.0);
            (rep.solution.rows(0, nv).into_owned(), false, s)
        } else {
            warn!("step {t}: baseline QP ended {}, applying zero input", rep.status.as_str());
            self.fallbacks += 1;
            (DVector::zeros(nv), true, f64::NAN)
        };
        let u_apply = u_seq.rows(0, n_u).into_owned();
        let predicted_outputs = (0..self.cfg.horizon).map(|i| h * map.eval(i, &u_seq) + &d_hat).collect();
        let objective = if fallback { f64::NAN } else { rep.objective };
        let decision = ControlDecision {
            step: t,
            u_apply: u_apply.clone(),
            u_sequence: u_seq,
            predicted_outputs,
            status: rep.status,
            objective,
            candidate_violation: None,
            candidate_objective: None,
            cuts: 0,
            dual_residual: 0.0,
            restarted: false,
            nominal: h.clone(),
            max_slack: slack,
            fallback,
        };
        self.phi = advance_regressor(&self.structure, &self.phi, &u_apply)?;
        self.u_prev = u_apply;
        Ok(decision)
    }
}

pub fn step_baseline(
    ctrl: &mut BaselineController,
    t: u64,
    y_meas: &DVector<f64>,
    y_des: &[DVector<f64>],
) -> Result<ControlDecision> {
    ctrl.step(t, y_meas, y_des)
}
