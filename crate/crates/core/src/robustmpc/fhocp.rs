//! The finite-horizon optimal control problem solved at every step.
//!
//! Decision variables are `U = [u(t|t); …; u(t+N−1|t)]` and, in the
//! monolithic form, the dual multipliers `Λ` of the robust output
//! constraints. The cost is kept as `½UᵀPU + qᵀU + c₀` so that it equals the
//! tracking cost exactly.

use nalgebra::{DMatrix, DVector};

use super::config::{MpcConfig, SolveStrategy};
use super::dual::{build_dual_constraints, DualBlock, PhiAffine};
use super::predict::PredictedFpsSequence;
use crate::error::{check_finite, check_len, Error, Result};
use crate::model::{advance_regressor, ModelStructure};
use crate::solvers::{solve_qp_warm, QuadraticProgram, SolveStatus};

const QP_TOL: f64 = 1e-9;
const CUT_TOL: f64 = 1e-9;
const MAX_CUT_ROUNDS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct CostTerms {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl CostTerms {
    pub fn value(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.hessian * u)) + self.linear.dot(u) + self.constant
    }
}

fn selector(n_u: usize, horizon: usize, i: usize) -> DMatrix<f64> {
    let mut s = DMatrix::zeros(n_u, n_u * horizon);
    s.view_mut((0, i * n_u), (n_u, n_u)).fill_with_identity();
    s
}

/// Tracking cost with `ŷ(t+1+i|t) = H_c φ(t+1+i|t) + d̂`, substituted through
/// `map`. `y_des[i]` is the target for `t+1+i`.
pub fn assemble_cost(
    cfg: &MpcConfig,
    h_c: &DMatrix<f64>,
    d_hat: &DVector<f64>,
    y_des: &[DVector<f64>],
    u_prev: &DVector<f64>,
    map: &PhiAffine,
) -> Result<CostTerms> {
    let n = map.horizon();
    check_len("desired outputs", n, y_des.len())?;
    let n_u = u_prev.len();
    let nv = map.n_vars();
    check_len("decision variables", n * n_u, nv)?;
    let (q, s, r) = (&cfg.q_weight, &cfg.s_weight, &cfg.r_weight);
    let mut hess = DMatrix::zeros(nv, nv);
    let mut lin = DVector::zeros(nv);
    let mut constant = u_prev.dot(&(r * u_prev));
    for i in 0..n {
        check_len("desired output", d_hat.len(), y_des[i].len())?;
        let l = h_c * &map.lin[i];
        let a = h_c * &map.offset[i] + d_hat - &y_des[i];
        let lq = l.transpose() * q;
        hess += &lq * &l;
        lin += &lq * &a;
        constant += a.dot(&(q * &a));

        let sel = selector(n_u, n, i);
        hess += sel.transpose() * s * &sel;
        let du = if i == 0 { sel } else { sel - selector(n_u, n, i - 1) };
        hess += du.transpose() * r * &du;
        if i == 0 {
            lin -= du.transpose() * (r * u_prev);
        }
    }
    Ok(CostTerms {
        hessian: hess * 2.0,
        linear: lin * 2.0,
        constant,
    })
}

/// The same cost computed by running the regressor recursion forward.
#[allow(clippy::too_many_arguments)]
pub fn direct_cost(
    cfg: &MpcConfig,
    s: &ModelStructure,
    h_c: &DMatrix<f64>,
    d_hat: &DVector<f64>,
    y_des: &[DVector<f64>],
    u_prev: &DVector<f64>,
    phi0: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<f64> {
    let n_u = s.n_u();
    let mut phi = phi0.clone();
    let mut prev = u_prev.clone();
    let mut j = 0.0;
    for (i, yd) in y_des.iter().enumerate() {
        let ui = u.rows(i * n_u, n_u).into_owned();
        phi = advance_regressor(s, &phi, &ui)?;
        let w = h_c * &phi + d_hat - yd;
        let du = &ui - &prev;
        j += w.dot(&(&cfg.q_weight * &w)) + ui.dot(&(&cfg.s_weight * &ui)) + du.dot(&(&cfg.r_weight * &du));
        prev = ui;
    }
    Ok(j)
}

/// Input and input-rate limits over the horizon, `Δu(t|t) = u(t|t) − u(t−1)`.
pub fn input_constraints(cfg: &MpcConfig, horizon: usize, u_prev: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let n_u = u_prev.len();
    let (pu, pdu) = (cfg.cu_matrix.nrows(), cfg.cdu_matrix.nrows());
    let rows = horizon * (pu + pdu);
    let mut g = DMatrix::zeros(rows, horizon * n_u);
    let mut h = DVector::zeros(rows);
    let mut row = 0;
    for i in 0..horizon {
        g.view_mut((row, i * n_u), (pu, n_u)).copy_from(&cfg.cu_matrix);
        h.rows_mut(row, pu).copy_from(&cfg.gu_vector);
        row += pu;
        g.view_mut((row, i * n_u), (pdu, n_u)).copy_from(&cfg.cdu_matrix);
        if i == 0 {
            h.rows_mut(row, pdu).copy_from(&(&cfg.gdu_vector + &cfg.cdu_matrix * u_prev));
        } else {
            g.view_mut((row, (i - 1) * n_u), (pdu, n_u)).copy_from(&(-&cfg.cdu_matrix));
            h.rows_mut(row, pdu).copy_from(&cfg.gdu_vector);
        }
        row += pdu;
    }
    (g, h)
}

/// `(I − F)φ(t+N|t) − G u(t+N−1|t) = 0`: the last predicted regressor is the
/// steady state of the last input.
pub fn terminal_constraint(s: &ModelStructure, map: &PhiAffine) -> (DMatrix<f64>, DVector<f64>) {
    let n = map.horizon();
    let m = s.m();
    let i_f = DMatrix::identity(m, m) - s.f_matrix();
    let mut e = &i_f * &map.lin[n - 1];
    let mut block = e.view_mut((0, (n - 1) * s.n_u()), (m, s.n_u()));
    block -= s.g_matrix();
    let f = -(&i_f * &map.offset[n - 1]);
    (e, f)
}

/// One robust constraint that `U` breaks, with the maximizing parameters.
#[derive(Debug, Clone)]
pub struct RobustViolation {
    pub block: usize,
    pub excess: f64,
    pub worst: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FhocpProblem {
    pub structure: ModelStructure,
    pub phi0: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub h_c: DMatrix<f64>,
    pub d_hat: DVector<f64>,
    pub y_des: Vec<DVector<f64>>,
    pub phi_map: PhiAffine,
    pub cost: CostTerms,
    pub input_matrix: DMatrix<f64>,
    pub input_rhs: DVector<f64>,
    pub terminal_matrix: DMatrix<f64>,
    pub terminal_rhs: DVector<f64>,
    pub blocks: Vec<DualBlock>,
    pub dbar: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FhocpSolution {
    pub status: SolveStatus,
    pub u: DVector<f64>,
    pub lambda: DVector<f64>,
    /// Cost at `u`, constant included.
    pub objective: f64,
    pub cuts: usize,
    /// Largest residual of the dual system at `(u, lambda)`.
    pub dual_residual: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn build_fhocp(
    cfg: &MpcConfig,
    s: &ModelStructure,
    h_c: &DMatrix<f64>,
    seq: &PredictedFpsSequence,
    eps_d: &DVector<f64>,
    y_meas: &DVector<f64>,
    phi: &DVector<f64>,
    u_prev: &DVector<f64>,
    y_des: &[DVector<f64>],
) -> Result<FhocpProblem> {
    let n = cfg.horizon;
    check_len("predicted sets", n, seq.horizon())?;
    check_len("measurement", s.n_y(), y_meas.len())?;
    check_len("previous input", s.n_u(), u_prev.len())?;
    check_len("nominal rows", s.n_y(), h_c.nrows())?;
    check_len("nominal columns", s.m(), h_c.ncols())?;
    check_len("disturbance bounds", s.n_y(), eps_d.len())?;
    check_finite("controller inputs", y_meas.iter().chain(phi.iter()).chain(u_prev.iter()))?;
    if n == 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let d_hat = y_meas - h_c * phi;
    let phi_map = PhiAffine::build(s, phi, n)?;
    let cost = assemble_cost(cfg, h_c, &d_hat, y_des, u_prev, &phi_map)?;
    let (input_matrix, input_rhs) = input_constraints(cfg, n, u_prev);
    let (terminal_matrix, terminal_rhs) = terminal_constraint(s, &phi_map);
    let dbar = cfg.dbar(eps_d);
    let blocks = build_dual_constraints(seq, &cfg.cy_matrix, &cfg.gy_vector, &dbar, &phi_map)?;
    Ok(FhocpProblem {
        structure: s.clone(),
        phi0: phi.clone(),
        u_prev: u_prev.clone(),
        h_c: h_c.clone(),
        d_hat,
        y_des: y_des.to_vec(),
        phi_map,
        cost,
        input_matrix,
        input_rhs,
        terminal_matrix,
        terminal_rhs,
        blocks,
        dbar,
    })
}

impl FhocpProblem {
    pub fn horizon(&self) -> usize {
        self.phi_map.horizon()
    }

    pub fn n_vars(&self) -> usize {
        self.phi_map.n_vars()
    }

    pub fn n_duals(&self) -> usize {
        self.blocks.iter().map(DualBlock::n_duals).sum()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        self.cost.value(u)
    }

    /// `ŷ(t+1+i|t)` for `i = 0 … N−1`.
    pub fn predicted_outputs(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon())
            .map(|i| &self.h_c * self.phi_map.eval(i, u) + &self.d_hat)
            .collect()
    }

    /// `U` that repeats `u(t−1)` over the horizon.
    pub fn hold_input(&self) -> DVector<f64> {
        let n_u = self.u_prev.len();
        DVector::from_fn(self.n_vars(), |i, _| self.u_prev[i % n_u])
    }

    fn relaxed_qp(&self, cut_rows: &[DVector<f64>], cut_rhs: &[f64]) -> QuadraticProgram {
        let nv = self.n_vars();
        let p = self.input_matrix.nrows();
        let mut g = DMatrix::zeros(p + cut_rows.len(), nv);
        let mut h = DVector::zeros(p + cut_rows.len());
        g.rows_mut(0, p).copy_from(&self.input_matrix);
        h.rows_mut(0, p).copy_from(&self.input_rhs);
        for (i, (row, rhs)) in cut_rows.iter().zip(cut_rhs).enumerate() {
            g.row_mut(p + i).copy_from(&row.transpose());
            h[p + i] = *rhs;
        }
        QuadraticProgram::new(self.cost.hessian.clone(), self.cost.linear.clone())
            .with_inequalities(g, h)
            .with_equalities(self.terminal_matrix.clone(), self.terminal_rhs.clone())
    }

    /// Worst-case value of every robust constraint at `u`, minus its bound.
    pub fn robust_violations(&self, u: &DVector<f64>) -> Result<Vec<RobustViolation>> {
        let mut out = Vec::with_capacity(self.blocks.len());
        for (idx, b) in self.blocks.iter().enumerate() {
            let phi = self.phi_map.eval(b.k_index, u);
            let (val, worst) = b.set.worst_case(&b.c, &phi)?;
            out.push(RobustViolation {
                block: idx,
                excess: val - b.bound,
                worst,
            });
        }
        Ok(out)
    }

    /// Largest violation of any constraint at `u`: input rows, terminal
    /// equality and the exact worst case of every robust constraint.
    pub fn max_violation(&self, u: &DVector<f64>) -> Result<f64> {
        check_len("input sequence", self.n_vars(), u.len())?;
        let mut w = (&self.input_matrix * u - &self.input_rhs).max().max(0.0);
        if self.terminal_matrix.nrows() > 0 {
            w = w.max((&self.terminal_matrix * u - &self.terminal_rhs).amax());
        }
        for v in self.robust_violations(u)? {
            w = w.max(v.excess);
        }
        Ok(w)
    }

    /// `Λ` read off the support-LP multipliers at `u`.
    pub fn recover_duals(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut lambda = DVector::zeros(self.n_duals());
        let mut row = 0;
        for b in &self.blocks {
            let phi = self.phi_map.eval(b.k_index, u);
            let (_, l) = b.min_dual_objective(&phi)?;
            lambda.rows_mut(row, l.len()).copy_from(&l);
            row += l.len();
        }
        Ok(lambda)
    }

    pub fn dual_residual(&self, u: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let mut row = 0;
        let mut w = 0.0f64;
        for b in &self.blocks {
            let n = b.n_duals();
            let phi = self.phi_map.eval(b.k_index, u);
            w = w.max(b.residual(&phi, &lambda.rows(row, n).into_owned()));
            row += n;
        }
        w
    }

    /// The full QP over `x = [U; Λ]`.
    pub fn to_qp(&self) -> QuadraticProgram {
        let nv = self.n_vars();
        let nl = self.n_duals();
        let nx = nv + nl;
        let mut hess = DMatrix::zeros(nx, nx);
        hess.view_mut((0, 0), (nv, nv)).copy_from(&self.cost.hessian);
        let mut lin = DVector::zeros(nx);
        lin.rows_mut(0, nv).copy_from(&self.cost.linear);

        let p = self.input_matrix.nrows();
        let n_blocks = self.blocks.len();
        let mut g = DMatrix::zeros(p + n_blocks + nl, nx);
        let mut h = DVector::zeros(p + n_blocks + nl);
        g.view_mut((0, 0), (p, nv)).copy_from(&self.input_matrix);
        h.rows_mut(0, p).copy_from(&self.input_rhs);

        let eq_dual: usize = self.blocks.iter().map(|b| b.c.len() * self.structure.m()).sum();
        let q = self.terminal_matrix.nrows();
        let mut e = DMatrix::zeros(q + eq_dual, nx);
        let mut f = DVector::zeros(q + eq_dual);
        e.view_mut((0, 0), (q, nv)).copy_from(&self.terminal_matrix);
        f.rows_mut(0, q).copy_from(&self.terminal_rhs);

        let m = self.structure.m();
        let (mut col, mut erow) = (nv, q);
        for (bi, b) in self.blocks.iter().enumerate() {
            let nd = b.n_duals();
            g.view_mut((p + bi, col), (1, nd)).copy_from(&b.b_stacked().transpose());
            h[p + bi] = b.bound;
            let at = b.a_transpose();
            let rows = at.nrows();
            e.view_mut((erow, col), (rows, nd)).copy_from(&at);
            for (j, &c) in b.c.iter().enumerate() {
                e.view_mut((erow + j * m, 0), (m, nv))
                    .copy_from(&(&self.phi_map.lin[b.k_index] * (-c)));
                f.rows_mut(erow + j * m, m)
                    .copy_from(&(&self.phi_map.offset[b.k_index] * c));
            }
            col += nd;
            erow += rows;
        }
        let base = p + n_blocks;
        for i in 0..nl {
            g[(base + i, nv + i)] = -1.0;
        }
        QuadraticProgram::new(hess, lin)
            .with_inequalities(g, h)
            .with_equalities(e, f)
    }

    /// Solve with the chosen strategy. `warm` is an input sequence known to be
    /// feasible for the full problem (or `None`).
    pub fn solve(&self, strategy: SolveStrategy, warm: Option<&DVector<f64>>) -> Result<FhocpSolution> {
        match strategy {
            SolveStrategy::CuttingPlane => self.solve_cutting_plane(warm),
            SolveStrategy::Monolithic => self.solve_monolithic(warm),
        }
    }

    fn failed(&self, status: SolveStatus, cuts: usize) -> FhocpSolution {
        FhocpSolution {
            status,
            u: DVector::zeros(self.n_vars()),
            lambda: DVector::zeros(self.n_duals()),
            objective: f64::NAN,
            cuts,
            dual_residual: f64::NAN,
        }
    }

    fn solve_cutting_plane(&self, warm: Option<&DVector<f64>>) -> Result<FhocpSolution> {
        let mut rows: Vec<DVector<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        for _ in 0..MAX_CUT_ROUNDS {
            let qp = self.relaxed_qp(&rows, &rhs);
            let rep = solve_qp_warm(&qp, QP_TOL, warm)?;
            if rep.status != SolveStatus::Optimal {
                return Ok(self.failed(rep.status, rows.len()));
            }
            let u = rep.solution;
            let mut added = 0;
            for v in self.robust_violations(&u)? {
                let b = &self.blocks[v.block];
                if v.excess <= CUT_TOL * (1.0 + b.bound.abs()) {
                    continue;
                }
                // Σ_j c_j H*_jᵀ φ(k) ≤ bound is valid for every U
                let c = DVector::from_column_slice(&b.c);
                let w = v.worst.transpose() * c;
                let row = self.phi_map.lin[b.k_index].transpose() * &w;
                let r = b.bound - w.dot(&self.phi_map.offset[b.k_index]);
                if rows.iter().zip(&rhs).any(|(x, y)| (x - &row).amax() < 1e-12 && (y - r).abs() < 1e-12) {
                    return Err(Error::Solver(format!(
                        "cutting plane stalled on constraint {} at step offset {} (excess {:e})",
                        b.l + 1,
                        b.k_index + 1,
                        v.excess
                    )));
                }
                rows.push(row);
                rhs.push(r);
                added += 1;
            }
            if added == 0 {
                let lambda = self.recover_duals(&u)?;
                let dual_residual = self.dual_residual(&u, &lambda);
                return Ok(FhocpSolution {
                    status: SolveStatus::Optimal,
                    objective: self.objective(&u),
                    u,
                    lambda,
                    cuts: rows.len(),
                    dual_residual,
                });
            }
        }
        Ok(self.failed(SolveStatus::IterationLimit, rows.len()))
    }

    fn solve_monolithic(&self, warm: Option<&DVector<f64>>) -> Result<FhocpSolution> {
        let qp = self.to_qp();
        let start = match warm {
            Some(u) => {
                let mut x = DVector::zeros(qp.num_vars());
                x.rows_mut(0, u.len()).copy_from(u);
                x.rows_mut(u.len(), self.n_duals()).copy_from(&self.recover_duals(u)?);
                Some(x)
            }
            None => None,
        };
        let rep = solve_qp_warm(&qp, QP_TOL, start.as_ref())?;
        if rep.status != SolveStatus::Optimal {
            return Ok(self.failed(rep.status, 0));
        }
        let nv = self.n_vars();
        let u = rep.solution.rows(0, nv).into_owned();
        let lambda = rep.solution.rows(nv, self.n_duals()).into_owned();
        Ok(FhocpSolution {
            status: SolveStatus::Optimal,
            objective: self.objective(&u),
            dual_residual: self.dual_residual(&u, &lambda),
            u,
            lambda,
            cuts: 0,
        })
    }
}
