//! Convex quadratic programs by a primal active-set method.
//!
//! ```text
//! minimize ½ xᵀPx + qᵀx  subject to  Gx ≤ h,  Ex = f
//! ```
//!
//! Steps are computed in the null space of the working-set constraints; a
//! singular reduced Hessian is handled by moving along zero-curvature descent
//! directions until a constraint blocks. A feasible start comes from the
//! caller (warm start) or from an LP feasibility problem.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::lp::{solve_lp, LinearProgram};
use super::{is_zero_row, SolveReport, SolveStatus};
use crate::error::{check_finite, check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
    pub eq_matrix: Option<DMatrix<f64>>,
    pub eq_rhs: Option<DVector<f64>>,
}

impl QuadraticProgram {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self {
            hessian,
            linear,
            ineq_matrix: DMatrix::zeros(0, n),
            ineq_rhs: DVector::zeros(0),
            eq_matrix: None,
            eq_rhs: None,
        }
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.ineq_matrix = g;
        self.ineq_rhs = h;
        self
    }

    pub fn with_equalities(mut self, e: DMatrix<f64>, f: DVector<f64>) -> Self {
        self.eq_matrix = Some(e);
        self.eq_rhs = Some(f);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    fn equalities(&self) -> (DMatrix<f64>, DVector<f64>) {
        match (&self.eq_matrix, &self.eq_rhs) {
            (Some(e), Some(f)) => (e.clone(), f.clone()),
            _ => (DMatrix::zeros(0, self.num_vars()), DVector::zeros(0)),
        }
    }

    /// Largest constraint violation at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        for (v, h) in (&self.ineq_matrix * x).iter().zip(self.ineq_rhs.iter()) {
            worst = worst.max(v - h);
        }
        let (e, f) = self.equalities();
        for (v, r) in (&e * x).iter().zip(f.iter()) {
            worst = worst.max((v - r).abs());
        }
        worst
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        check_len("QP hessian rows", n, self.hessian.nrows())?;
        check_len("QP hessian columns", n, self.hessian.ncols())?;
        check_len("QP inequality columns", n, self.ineq_matrix.ncols())?;
        check_len("QP inequality rhs", self.ineq_matrix.nrows(), self.ineq_rhs.len())?;
        match (&self.eq_matrix, &self.eq_rhs) {
            (Some(e), Some(f)) => {
                check_len("QP equality columns", n, e.ncols())?;
                check_len("QP equality rhs", e.nrows(), f.len())?;
                check_finite("QP equality data", e.iter().chain(f.iter()))?;
            }
            (None, None) => {}
            _ => {
                return Err(Error::InvalidArgument(
                    "equality matrix and rhs must be given together".into(),
                ))
            }
        }
        check_finite("QP hessian", self.hessian.iter())?;
        check_finite("QP linear term", self.linear.iter())?;
        check_finite("QP inequality data", self.ineq_matrix.iter().chain(self.ineq_rhs.iter()))?;

        let scale = self.hessian.amax().max(1.0);
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::NotSymmetric(asym));
        }
        if n > 0 {
            let sym = (&self.hessian + self.hessian.transpose()) * 0.5;
            let min_eig = SymmetricEigen::new(sym).eigenvalues.min();
            if min_eig < -1e-9 {
                return Err(Error::NotPositiveSemidefinite { min_eigenvalue: min_eig });
            }
        }
        Ok(())
    }
}

pub fn solve_qp(qp: &QuadraticProgram, tol: f64) -> Result<SolveReport> {
    solve_qp_warm(qp, tol, None)
}

/// Solve `qp`, starting from `start` when it is feasible within `tol`.
pub fn solve_qp_warm(qp: &QuadraticProgram, tol: f64, start: Option<&DVector<f64>>) -> Result<SolveReport> {
    qp.validate()?;
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let n = qp.num_vars();
    let (e_all, f_all) = qp.equalities();
    let p_all = qp.ineq_matrix.nrows();
    let q_all = e_all.nrows();
    let infeasible = || SolveReport {
        status: SolveStatus::Infeasible,
        solution: DVector::zeros(n),
        objective: f64::NAN,
        dual_ineq: DVector::zeros(p_all),
        dual_eq: DVector::zeros(q_all),
    };

    let mut ineq_keep = Vec::with_capacity(p_all);
    for i in 0..p_all {
        if is_zero_row(&qp.ineq_matrix.row(i)) {
            if qp.ineq_rhs[i] < -tol {
                return Ok(infeasible());
            }
            log::trace!("dropping all-zero inequality row {i} (rhs {})", qp.ineq_rhs[i]);
        } else {
            ineq_keep.push(i);
        }
    }
    let mut eq_keep = Vec::with_capacity(q_all);
    for i in 0..q_all {
        if is_zero_row(&e_all.row(i)) {
            if f_all[i].abs() > tol {
                return Ok(infeasible());
            }
            log::trace!("dropping all-zero equality row {i}");
        } else {
            eq_keep.push(i);
        }
    }
    let g = qp.ineq_matrix.select_rows(&ineq_keep);
    let h = qp.ineq_rhs.select_rows(&ineq_keep);
    let e = e_all.select_rows(&eq_keep);
    let f = f_all.select_rows(&eq_keep);
    let hess = (&qp.hessian + qp.hessian.transpose()) * 0.5;

    let feas_tol = tol * (1.0 + h.amax().max(f.amax()));
    let viol = |x: &DVector<f64>| {
        let mut w = 0.0f64;
        for (v, r) in (&g * x).iter().zip(h.iter()) {
            w = w.max(v - r);
        }
        for (v, r) in (&e * x).iter().zip(f.iter()) {
            w = w.max((v - r).abs());
        }
        w
    };

    let x0 = match start.filter(|s| s.len() == n && viol(s) <= feas_tol) {
        Some(s) => s.clone(),
        None => {
            let lp = LinearProgram::minimize(DVector::zeros(n), g.clone(), h.clone())
                .with_equalities(e.clone(), f.clone());
            let r = solve_lp(&lp, tol)?;
            match r.status {
                SolveStatus::Optimal => r.solution,
                SolveStatus::Infeasible => return Ok(infeasible()),
                _ => {
                    return Ok(SolveReport {
                        status: SolveStatus::IterationLimit,
                        ..infeasible()
                    })
                }
            }
        }
    };

    let mut solver = ActiveSet {
        hess: &hess,
        lin: &qp.linear,
        g: &g,
        h: &h,
        e: &e,
        tol,
        feas_tol,
    };
    let out = solver.run(x0)?;

    let mut dual_ineq = DVector::zeros(p_all);
    for (k, &i) in ineq_keep.iter().enumerate() {
        dual_ineq[i] = out.mu[k];
    }
    let mut dual_eq = DVector::zeros(q_all);
    for (k, &i) in eq_keep.iter().enumerate() {
        dual_eq[i] = out.nu[k];
    }
    let objective = qp.objective(&out.x);
    Ok(SolveReport {
        status: out.status,
        solution: out.x,
        objective,
        dual_ineq,
        dual_eq,
    })
}

struct ActiveSet<'a> {
    hess: &'a DMatrix<f64>,
    lin: &'a DVector<f64>,
    g: &'a DMatrix<f64>,
    h: &'a DVector<f64>,
    e: &'a DMatrix<f64>,
    tol: f64,
    feas_tol: f64,
}

struct ActiveSetOutput {
    status: SolveStatus,
    x: DVector<f64>,
    mu: DVector<f64>,
    nu: DVector<f64>,
}

/// Working constraint: an equality row or an inequality row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Eq(usize),
    Ineq(usize),
}

impl ActiveSet<'_> {
    fn n(&self) -> usize {
        self.lin.len()
    }

    fn row(&self, w: Work) -> DVector<f64> {
        match w {
            Work::Eq(i) => self.e.row(i).transpose(),
            Work::Ineq(i) => self.g.row(i).transpose(),
        }
    }

    fn working_matrix(&self, work: &[Work]) -> DMatrix<f64> {
        let n = self.n();
        let mut a = DMatrix::zeros(work.len(), n);
        for (k, &w) in work.iter().enumerate() {
            a.set_row(k, &self.row(w).transpose());
        }
        a
    }

    /// Orthonormal basis of the null space of the working rows.
    fn null_space(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        if a.nrows() == 0 {
            return DMatrix::identity(n, n);
        }
        // Pad to square so the SVD returns a full right basis.
        let mut sq = DMatrix::zeros(n.max(a.nrows()), n);
        sq.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        let svd = sq.svd(false, true);
        let v_t = svd.v_t.expect("requested");
        let top = svd.singular_values.amax().max(1e-300);
        let cols: Vec<usize> = (0..n).filter(|&i| svd.singular_values[i] <= 1e-9 * top).collect();
        let mut z = DMatrix::zeros(n, cols.len());
        for (k, &i) in cols.iter().enumerate() {
            z.set_column(k, &v_t.row(i).transpose());
        }
        z
    }

    fn independent_of(&self, a: &DMatrix<f64>, row: &DVector<f64>) -> bool {
        if a.nrows() == 0 {
            return row.norm() > 0.0;
        }
        let z = self.null_space(a);
        (z.tr_mul(row)).norm() > 1e-9 * row.norm()
    }

    /// Least-squares multipliers with `g + A_Wᵀ λ = 0`.
    fn multipliers(&self, a: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
        if a.nrows() == 0 {
            return DVector::zeros(0);
        }
        let gram = a * a.transpose();
        let rhs = -(a * grad);
        match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.pseudo_inverse(1e-14).map(|p| p * rhs).unwrap_or_else(|_| DVector::zeros(a.nrows())),
        }
    }

    fn run(&mut self, mut x: DVector<f64>) -> Result<ActiveSetOutput> {
        let n = self.n();
        let p = self.g.nrows();
        let q = self.e.nrows();
        let mut work: Vec<Work> = Vec::new();

        // Equalities first, keeping an independent subset.
        for i in 0..q {
            let a = self.working_matrix(&work);
            let r = self.row(Work::Eq(i));
            if self.independent_of(&a, &r) {
                work.push(Work::Eq(i));
            }
        }
        // Then inequalities active at the start.
        for i in 0..p {
            let slack = self.h[i] - self.g.row(i).dot(&x.transpose());
            if slack <= self.feas_tol {
                let a = self.working_matrix(&work);
                if self.independent_of(&a, &self.row(Work::Ineq(i))) {
                    work.push(Work::Ineq(i));
                }
            }
        }

        let scale = 1.0 + self.hess.amax().max(self.lin.amax());
        let limit = 50 * (n + p + q) + 500;
        let mut stalls = 0usize;
        for _ in 0..limit {
            let a = self.working_matrix(&work);
            let grad = self.hess * &x + self.lin;
            let z = self.null_space(&a);
            let mut step = DVector::zeros(n);
            let mut ray = false;
            if z.ncols() > 0 {
                let hr = z.tr_mul(&(self.hess * &z));
                let gr = z.tr_mul(&grad);
                let eig = SymmetricEigen::new(hr);
                let top = eig.eigenvalues.amax().max(1e-300);
                let gv = eig.eigenvectors.tr_mul(&gr);
                let mut pz = DVector::zeros(z.ncols());
                let mut flat = DVector::zeros(z.ncols());
                for i in 0..z.ncols() {
                    let col = eig.eigenvectors.column(i);
                    if eig.eigenvalues[i] > 1e-11 * top.max(1.0) {
                        pz -= col * (gv[i] / eig.eigenvalues[i]);
                    } else if gv[i].abs() > self.tol * 1e-3 * scale {
                        flat -= col * gv[i];
                    }
                }
                if flat.norm() > 0.0 {
                    step = &z * flat;
                    ray = true;
                } else {
                    step = &z * pz;
                }
            }

            let step_norm = step.amax();
            if !ray && step_norm <= 1e-13 * (1.0 + x.amax()) {
                let lam = self.multipliers(&a, &grad);
                // most negative inequality multiplier
                let mut drop: Option<(usize, f64)> = None;
                for (k, &w) in work.iter().enumerate() {
                    if let Work::Ineq(i) = w {
                        let v = lam[k];
                        if v < -self.tol * 1e-2 * scale {
                            let better = match drop {
                                None => true,
                                Some((kk, best)) => {
                                    if stalls > 2 * (n + p) {
                                        // Bland-style fallback: smallest index
                                        matches!(work[kk], Work::Ineq(j) if i < j)
                                    } else {
                                        v < best
                                    }
                                }
                            };
                            if better {
                                drop = Some((k, v));
                            }
                        }
                    }
                }
                match drop {
                    Some((k, _)) => {
                        work.remove(k);
                        stalls += 1;
                        continue;
                    }
                    None => {
                        let mut mu = DVector::zeros(p);
                        let mut nu = DVector::zeros(q);
                        for (k, &w) in work.iter().enumerate() {
                            match w {
                                Work::Ineq(i) => mu[i] = lam[k].max(0.0),
                                Work::Eq(i) => nu[i] = lam[k],
                            }
                        }
                        let status = self.certify(&x, &mu, &nu);
                        return Ok(ActiveSetOutput { status, x, mu, nu });
                    }
                }
            }

            // Ratio test.
            let mut alpha = if ray { f64::INFINITY } else { 1.0 };
            let mut blocking: Option<usize> = None;
            for i in 0..p {
                if work.contains(&Work::Ineq(i)) {
                    continue;
                }
                let gi = self.g.row(i);
                let ap = gi.dot(&step.transpose());
                if ap <= 1e-14 * gi.amax() * step_norm {
                    continue;
                }
                let slack = self.h[i] - gi.dot(&x.transpose());
                let t = (slack / ap).max(0.0);
                if t < alpha || (t == alpha && blocking.is_some_and(|b| i < b)) {
                    alpha = t;
                    blocking = Some(i);
                }
            }
            if alpha.is_infinite() {
                return Ok(ActiveSetOutput {
                    status: SolveStatus::Unbounded,
                    x,
                    mu: DVector::zeros(p),
                    nu: DVector::zeros(q),
                });
            }
            if alpha > 0.0 {
                stalls = 0;
            } else {
                stalls += 1;
            }
            x += step * alpha;
            if let Some(i) = blocking {
                work.push(Work::Ineq(i));
            }
        }
        Ok(ActiveSetOutput {
            status: SolveStatus::IterationLimit,
            x,
            mu: DVector::zeros(p),
            nu: DVector::zeros(q),
        })
    }

    /// KKT residual check: stationarity, primal and dual feasibility, complementarity.
    fn certify(&self, x: &DVector<f64>, mu: &DVector<f64>, nu: &DVector<f64>) -> SolveStatus {
        let grad = self.hess * x + self.lin;
        let station = (&grad + self.g.tr_mul(mu) + self.e.tr_mul(nu)).amax();
        let scale = 1.0 + grad.amax().max(self.lin.amax());
        let mut primal = 0.0f64;
        let mut comp = 0.0f64;
        for i in 0..self.g.nrows() {
            let slack = self.h[i] - self.g.row(i).dot(&x.transpose());
            primal = primal.max(-slack);
            comp = comp.max((mu[i] * slack).abs());
        }
        if station > self.tol * scale || primal > self.feas_tol || comp > self.tol * scale {
            log::warn!("QP KKT check failed: stationarity {station:e}, primal {primal:e}, complementarity {comp:e}");
            SolveStatus::IterationLimit
        } else {
            SolveStatus::Optimal
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn clipped_unconstrained_optimum() {
        // (x-1)² = x² - 2x + 1
        let qp = QuadraticProgram::new(DMatrix::from_element(1, 1, 2.0), dv(&[-2.0]))
            .with_inequalities(DMatrix::from_element(1, 1, 1.0), dv(&[0.5]));
        let r = solve_qp(&qp, 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 0.5).abs() < 1e-12);
        assert!((r.dual_ineq[0] - 1.0).abs() < 1e-10);
    }

    #[test]
    fn symmetric_equality() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2) * 2.0, dv(&[0.0, 0.0]))
            .with_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), dv(&[2.0]));
        let r = solve_qp(&qp, 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.solution[0] - 1.0).abs() < 1e-12 && (r.solution[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn non_psd_rejected() {
        let qp = QuadraticProgram::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]), dv(&[0.0, 0.0]));
        assert!(matches!(solve_qp(&qp, 1e-8), Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn infeasible_constraints() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let qp = QuadraticProgram::new(DMatrix::identity(1, 1), dv(&[0.0])).with_inequalities(g, dv(&[1.0, -2.0]));
        assert_eq!(solve_qp(&qp, 1e-8).unwrap().status, SolveStatus::Infeasible);
    }

    #[test]
    fn linear_objective_on_box_is_a_vertex() {
        // zero hessian: behaves like an LP
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]);
        let qp = QuadraticProgram::new(DMatrix::zeros(2, 2), dv(&[-3.0, 1.0])).with_inequalities(g, dv(&[1.0; 4]));
        let r = solve_qp(&qp, 1e-8).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        assert!((r.objective + 4.0).abs() < 1e-10);
    }

    #[test]
    fn unbounded_linear_direction() {
        let qp = QuadraticProgram::new(DMatrix::zeros(1, 1), dv(&[-1.0]))
            .with_inequalities(DMatrix::from_element(1, 1, -1.0), dv(&[0.0]));
        assert_eq!(solve_qp(&qp, 1e-8).unwrap().status, SolveStatus::Unbounded);
    }

    #[test]
    fn warm_start_is_used_when_feasible() {
        let qp = QuadraticProgram::new(DMatrix::identity(2, 2), dv(&[-1.0, -1.0]))
            .with_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), dv(&[1.0]));
        let cold = solve_qp(&qp, 1e-8).unwrap();
        let warm = solve_qp_warm(&qp, 1e-8, Some(&dv(&[0.0, 0.0]))).unwrap();
        assert!((cold.solution - &warm.solution).amax() < 1e-12);
        assert!((warm.solution[0] - 0.5).abs() < 1e-12);
    }
}
