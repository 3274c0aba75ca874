//! Dense linear programs over free variables.
//!
//! The primal `min cᵀx s.t. Gx ≤ h, Ex = f` is solved through its dual in
//! standard form,
//!
//! ```text
//! min hᵀy + fᵀ(w⁺ − w⁻)  s.t.  Gᵀy + Eᵀ(w⁺ − w⁻) = −c,  y, w⁺, w⁻ ≥ 0,
//! ```
//!
//! whose basis has one row per primal variable. The primal point is read off
//! the simplex multipliers, and the dual vector `y` is exactly the set of
//! inequality multipliers. Every reported status is certified before return:
//! optimal solutions by primal feasibility and a zero duality gap, infeasible
//! ones by a Farkas ray.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::simplex::{solve_standard, Outcome};
use super::{is_zero_row, SolveReport, SolveStatus};
use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram {
    pub cost: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: Option<DMatrix<f64>>,
    pub eq_rhs: Option<DVector<f64>>,
    pub sense: Sense,
}

impl LinearProgram {
    pub fn new(sense: Sense, cost: DVector<f64>, ineq_matrix: DMatrix<f64>, ineq_rhs: DVector<f64>) -> Self {
        Self {
            cost,
            ineq_matrix,
            ineq_rhs,
            eq_matrix: None,
            eq_rhs: None,
            sense,
        }
    }

    pub fn minimize(cost: DVector<f64>, ineq_matrix: DMatrix<f64>, ineq_rhs: DVector<f64>) -> Self {
        Self::new(Sense::Minimize, cost, ineq_matrix, ineq_rhs)
    }

    pub fn maximize(cost: DVector<f64>, ineq_matrix: DMatrix<f64>, ineq_rhs: DVector<f64>) -> Self {
        Self::new(Sense::Maximize, cost, ineq_matrix, ineq_rhs)
    }

    pub fn with_equalities(mut self, eq_matrix: DMatrix<f64>, eq_rhs: DVector<f64>) -> Self {
        self.eq_matrix = Some(eq_matrix);
        self.eq_rhs = Some(eq_rhs);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_len("LP inequality columns", n, self.ineq_matrix.ncols())?;
        check_len("LP inequality rhs", self.ineq_matrix.nrows(), self.ineq_rhs.len())?;
        match (&self.eq_matrix, &self.eq_rhs) {
            (Some(e), Some(f)) => {
                check_len("LP equality columns", n, e.ncols())?;
                check_len("LP equality rhs", e.nrows(), f.len())?;
                check_finite("LP equality data", e.iter().chain(f.iter()))?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "equality matrix and rhs must be given together".into(),
                ))
            }
        }
        check_finite("LP cost", self.cost.iter())?;
        check_finite(
            "LP inequality data",
            self.ineq_matrix.iter().chain(self.ineq_rhs.iter()),
        )
    }

    /// Largest violation of the constraints at `x` (zero when feasible).
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        let gx = &self.ineq_matrix * x;
        for (v, h) in gx.iter().zip(self.ineq_rhs.iter()) {
            worst = worst.max(v - h);
        }
        if let (Some(e), Some(f)) = (&self.eq_matrix, &self.eq_rhs) {
            let ex = e * x;
            for (v, r) in ex.iter().zip(f.iter()) {
                worst = worst.max((v - r).abs());
            }
        }
        worst
    }
}

/// Solve a linear program to tolerance `tol`.
pub fn solve_lp(lp: &LinearProgram, tol: f64) -> Result<SolveReport> {
    lp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = lp.num_vars();
    let p_all = lp.ineq_matrix.nrows();
    let (e_all, f_all) = match (&lp.eq_matrix, &lp.eq_rhs) {
        (Some(e), Some(f)) => (e.clone(), f.clone()),
        _ => (DMatrix::zeros(0, n), DVector::zeros(0)),
    };
    let q_all = e_all.nrows();

    // Degenerate rows.
    let mut ineq_keep = Vec::with_capacity(p_all);
    for i in 0..p_all {
        if is_zero_row(&lp.ineq_matrix.row(i)) {
            if lp.ineq_rhs[i] < -tol {
                return Ok(trivially_infeasible(n, p_all, q_all, Some(i), None));
            }
            log::trace!("dropping all-zero inequality row {i} (rhs {})", lp.ineq_rhs[i]);
        } else {
            ineq_keep.push(i);
        }
    }
    let mut eq_keep = Vec::with_capacity(q_all);
    for i in 0..q_all {
        if is_zero_row(&e_all.row(i)) {
            if f_all[i].abs() > tol {
                return Ok(trivially_infeasible(n, p_all, q_all, None, Some((i, f_all[i]))));
            }
            log::trace!("dropping all-zero equality row {i}");
        } else {
            eq_keep.push(i);
        }
    }
    let g = lp.ineq_matrix.select_rows(&ineq_keep);
    let h = lp.ineq_rhs.select_rows(&ineq_keep);
    let e = e_all.select_rows(&eq_keep);
    let f = f_all.select_rows(&eq_keep);

    let sign = match lp.sense {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let c_min = &lp.cost * sign;

    let reduced = Reduced { g: &g, h: &h, e: &e, f: &f };
    let mut report = reduced.solve(&c_min, tol)?;

    // Map back to the caller's row indexing and sense.
    let mut dual_ineq = DVector::zeros(p_all);
    for (k, &i) in ineq_keep.iter().enumerate() {
        dual_ineq[i] = report.dual_ineq[k];
    }
    let mut dual_eq = DVector::zeros(q_all);
    for (k, &i) in eq_keep.iter().enumerate() {
        dual_eq[i] = report.dual_eq[k];
    }
    report.dual_ineq = dual_ineq;
    report.dual_eq = dual_eq;
    report.objective *= sign;
    Ok(report)
}

fn trivially_infeasible(
    n: usize,
    p: usize,
    q: usize,
    ineq_row: Option<usize>,
    eq_row: Option<(usize, f64)>,
) -> SolveReport {
    // A zero row with an unsatisfiable rhs is its own Farkas certificate.
    let mut dual_ineq = DVector::zeros(p);
    let mut dual_eq = DVector::zeros(q);
    if let Some(i) = ineq_row {
        dual_ineq[i] = 1.0;
    }
    if let Some((i, f)) = eq_row {
        dual_eq[i] = -f.signum();
    }
    SolveReport {
        status: SolveStatus::Infeasible,
        solution: DVector::zeros(n),
        objective: f64::NAN,
        dual_ineq,
        dual_eq,
    }
}

struct Reduced<'a> {
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    e: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
}

impl Reduced<'_> {
    fn n(&self) -> usize {
        self.g.ncols()
    }

    /// Standard-form dual data: `[Gᵀ | Eᵀ | −Eᵀ]`, cost `[h; f; −f]`.
    fn dual_form(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n();
        let p = self.g.nrows();
        let q = self.e.nrows();
        let mut a = DMatrix::zeros(n, p + 2 * q);
        a.view_mut((0, 0), (n, p)).copy_from(&self.g.transpose());
        a.view_mut((0, p), (n, q)).copy_from(&self.e.transpose());
        a.view_mut((0, p + q), (n, q)).copy_from(&(-self.e.transpose()));
        let mut cost = DVector::zeros(p + 2 * q);
        cost.rows_mut(0, p).copy_from(self.h);
        cost.rows_mut(p, q).copy_from(self.f);
        cost.rows_mut(p + q, q).copy_from(&(-self.f));
        (a, cost)
    }

    fn split_dual(&self, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.g.nrows();
        let q = self.e.nrows();
        let y = xi.rows(0, p).into_owned();
        let w = xi.rows(p, q) - xi.rows(p + q, q);
        (y, w)
    }

    fn primal_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for (v, h) in (self.g * x).iter().zip(self.h.iter()) {
            worst = worst.max(v - h);
        }
        for (v, f) in (self.e * x).iter().zip(self.f.iter()) {
            worst = worst.max((v - f).abs());
        }
        worst
    }

    fn rhs_scale(&self) -> f64 {
        1.0 + self.h.amax().max(self.f.amax())
    }

    fn solve(&self, c: &DVector<f64>, tol: f64) -> Result<SolveReport> {
        let n = self.n();
        let p = self.g.nrows();
        let q = self.e.nrows();
        let (a, cost) = self.dual_form();
        let rhs = -c;
        match solve_standard(&a, &rhs, &cost, tol) {
            Outcome::Optimal { x: xi, pi } => {
                let x = pi;
                let (y, w) = self.split_dual(&xi);
                let objective = c.dot(&x);
                let dual_obj = -(self.h.dot(&y) + self.f.dot(&w));
                let scale = 1.0 + objective.abs().max(dual_obj.abs());
                let viol = self.primal_violation(&x);
                let gap = (objective - dual_obj).abs();
                let station = (c + self.g.tr_mul(&y) + self.e.tr_mul(&w)).amax();
                if viol > tol * self.rhs_scale() || gap > tol * scale || station > tol * (1.0 + c.amax()) {
                    log::warn!(
                        "LP certificate check failed: violation {viol:e}, gap {gap:e}, stationarity {station:e}"
                    );
                    return Ok(self.limit_report());
                }
                Ok(SolveReport {
                    status: SolveStatus::Optimal,
                    solution: x,
                    objective,
                    dual_ineq: y,
                    dual_eq: w,
                })
            }
            Outcome::Unbounded { ray } => {
                // Dual unbounded: the ray is a Farkas certificate of primal infeasibility.
                let (y, w) = self.split_dual(&ray);
                let combo = (self.g.tr_mul(&y) + self.e.tr_mul(&w)).amax();
                let value = self.h.dot(&y) + self.f.dot(&w);
                let size = y.amax().max(w.amax()).max(1.0);
                if combo > 1e-9 * size * (1.0 + self.g.amax().max(self.e.amax())) || value >= -1e-12 * size {
                    log::warn!("Farkas certificate rejected: |Gᵀy+Eᵀw| = {combo:e}, hᵀy+fᵀw = {value:e}");
                    return Ok(self.limit_report());
                }
                Ok(SolveReport {
                    status: SolveStatus::Infeasible,
                    solution: DVector::zeros(n),
                    objective: f64::NAN,
                    dual_ineq: y,
                    dual_eq: w,
                })
            }
            Outcome::Infeasible { pi: dir } => {
                // Dual infeasible: `dir` is an improving recession direction, so
                // the primal is unbounded if it is feasible at all.
                let c0 = DVector::zeros(n);
                let feas = self.solve(&c0, tol)?;
                match feas.status {
                    SolveStatus::Optimal => {
                        let size = dir.amax().max(1e-300);
                        let recession = (self.g * &dir).max().max((self.e * &dir).amax());
                        if recession > 1e-9 * size * (1.0 + self.g.amax()) || c.dot(&dir) >= 0.0 {
                            log::warn!("unboundedness certificate rejected");
                            return Ok(self.limit_report());
                        }
                        let mut report = feas;
                        report.status = SolveStatus::Unbounded;
                        report.objective = f64::NEG_INFINITY;
                        Ok(report)
                    }
                    _ => Ok(feas),
                }
            }
            Outcome::IterationLimit => Ok(SolveReport {
                status: SolveStatus::IterationLimit,
                solution: DVector::zeros(n),
                objective: f64::NAN,
                dual_ineq: DVector::zeros(p),
                dual_eq: DVector::zeros(q),
            }),
        }
    }

    fn limit_report(&self) -> SolveReport {
        SolveReport {
            status: SolveStatus::IterationLimit,
            solution: DVector::zeros(self.n()),
            objective: f64::NAN,
            dual_ineq: DVector::zeros(self.g.nrows()),
            dual_eq: DVector::zeros(self.e.nrows()),
        }
    }
}
