//! Dense revised simplex for standard-form programs
//!
//! ```text
//! minimize cᵀx  subject to  A x = b,  x ≥ 0
//! ```
//!
//! Two phases with artificial columns, explicit basis inverse updated by
//! Gauss-Jordan pivots and refactored periodically, and Bland's smallest-index
//! rule for both the entering and the leaving variable.

use nalgebra::{DMatrix, DVector};

const REFACTOR_EVERY: usize = 50;

#[derive(Debug, Clone)]
pub(crate) enum Outcome {
    /// Optimal basic solution `x` together with the simplex multipliers `pi`
    /// (`Aᵀpi ≤ c` up to tolerance).
    Optimal { x: DVector<f64>, pi: DVector<f64> },
    /// `pi` with `Aᵀpi ≤ 0` and `bᵀpi > 0`.
    Infeasible { pi: DVector<f64> },
    /// `ray ≥ 0` with `A ray = 0` and `cᵀray < 0`.
    Unbounded { ray: DVector<f64> },
    IterationLimit,
}

struct Tableau {
    /// Constraint matrix with the identity block of artificials appended.
    a: DMatrix<f64>,
    b: DVector<f64>,
    n_orig: usize,
    basis: Vec<usize>,
    binv: DMatrix<f64>,
    piv_tol: f64,
}

enum Step {
    Optimal,
    Unbounded(usize, DVector<f64>),
    Limit,
}

impl Tableau {
    fn rows(&self) -> usize {
        self.b.len()
    }

    fn refactor(&mut self) -> bool {
        let m = self.rows();
        let mut bmat = DMatrix::zeros(m, m);
        for (i, &j) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.a.column(j));
        }
        match bmat.try_inverse() {
            Some(inv) => {
                self.binv = inv;
                true
            }
            None => false,
        }
    }

    fn basic_values(&self) -> DVector<f64> {
        &self.binv * &self.b
    }

    fn multipliers(&self, costs: &DVector<f64>) -> DVector<f64> {
        let cb = DVector::from_iterator(self.rows(), self.basis.iter().map(|&j| costs[j]));
        self.binv.tr_mul(&cb)
    }

    fn pivot(&mut self, row: usize, col: usize, alpha: &DVector<f64>) {
        let m = self.rows();
        let p = alpha[row];
        for c in 0..m {
            self.binv[(row, c)] /= p;
        }
        for i in 0..m {
            if i == row || alpha[i] == 0.0 {
                continue;
            }
            let f = alpha[i];
            for c in 0..m {
                let v = self.binv[(row, c)];
                self.binv[(i, c)] -= f * v;
            }
        }
        self.basis[row] = col;
    }

    fn run(&mut self, costs: &DVector<f64>, allow_artificial: bool, opt_tol: f64, limit: usize) -> Step {
        let n_cols = if allow_artificial {
            self.a.ncols()
        } else {
            self.n_orig
        };
        let mut is_basic = vec![false; self.a.ncols()];
        for &j in &self.basis {
            is_basic[j] = true;
        }
        for iter in 0..limit {
            if iter > 0 && iter % REFACTOR_EVERY == 0 && !self.refactor() {
                return Step::Limit;
            }
            let xb = self.basic_values();
            let pi = self.multipliers(costs);
            // Bland: first improving column.
            let entering = (0..n_cols).find(|&j| {
                !is_basic[j] && costs[j] - pi.dot(&self.a.column(j)) < -opt_tol
            });
            let Some(col) = entering else {
                return Step::Optimal;
            };
            let alpha = &self.binv * self.a.column(col);
            let amax = alpha.amax().max(1.0);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows() {
                if alpha[i] <= self.piv_tol * amax {
                    continue;
                }
                let ratio = xb[i].max(0.0) / alpha[i];
                leave = match leave {
                    None => Some((i, ratio)),
                    Some((r, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * best.abs().max(1.0);
                        if ratio < best && !tie || tie && self.basis[i] < self.basis[r] {
                            Some((i, ratio))
                        } else {
                            Some((r, best))
                        }
                    }
                };
            }
            let Some((row, _)) = leave else {
                return Step::Unbounded(col, alpha);
            };
            is_basic[self.basis[row]] = false;
            is_basic[col] = true;
            self.pivot(row, col, &alpha);
        }
        Step::Limit
    }

    /// Pivot basic artificials out of the basis wherever an original column can
    /// replace them. Rows where none can are redundant and keep their artificial
    /// at level zero.
    fn drive_out_artificials(&mut self) {
        for row in 0..self.rows() {
            if self.basis[row] < self.n_orig {
                continue;
            }
            let mut best: Option<(usize, f64)> = None;
            for j in 0..self.n_orig {
                if self.basis.contains(&j) {
                    continue;
                }
                let v = self.binv.row(row).transpose().dot(&self.a.column(j));
                if v.abs() > 1e-7 && best.is_none_or(|(_, b)| v.abs() > b) {
                    best = Some((j, v.abs()));
                }
            }
            if let Some((j, _)) = best {
                let alpha = &self.binv * self.a.column(j);
                self.pivot(row, j, &alpha);
            }
        }
    }
}

/// Solve `min cᵀx s.t. A x = b, x ≥ 0`.
pub(crate) fn solve_standard(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>, tol: f64) -> Outcome {
    let m = a.nrows();
    let n = a.ncols();
    let limit = 50 * (m + n) + 1000;

    // Row signs so that b ≥ 0.
    let signs: Vec<f64> = b.iter().map(|&v| if v < 0.0 { -1.0 } else { 1.0 }).collect();
    let mut full = DMatrix::zeros(m, n + m);
    for i in 0..m {
        for j in 0..n {
            full[(i, j)] = signs[i] * a[(i, j)];
        }
        full[(i, n + i)] = 1.0;
    }
    let bb = DVector::from_iterator(m, (0..m).map(|i| signs[i] * b[i]));
    let scale_b = bb.amax().max(1.0);
    let scale_c = c.amax().max(1.0);

    let mut phase1_cost = DVector::zeros(n + m);
    for i in 0..m {
        phase1_cost[n + i] = 1.0;
    }
    let mut phase2_cost = DVector::zeros(n + m);
    phase2_cost.rows_mut(0, n).copy_from(c);

    let mut t = Tableau {
        a: full,
        b: bb,
        n_orig: n,
        basis: (n..n + m).collect(),
        binv: DMatrix::identity(m, m),
        piv_tol: 1e-9,
    };

    match t.run(&phase1_cost, true, 1e-11, limit) {
        Step::Optimal => {}
        // Phase I is bounded below by zero.
        Step::Unbounded(..) | Step::Limit => return Outcome::IterationLimit,
    }
    if !t.refactor() {
        return Outcome::IterationLimit;
    }
    let xb = t.basic_values();
    let infeas: f64 = t
        .basis
        .iter()
        .zip(xb.iter())
        .filter(|(&j, _)| j >= n)
        .map(|(_, &v)| v.max(0.0))
        .sum();
    if infeas > tol * scale_b {
        let pi = t.multipliers(&phase1_cost);
        let pi = DVector::from_iterator(m, (0..m).map(|i| signs[i] * pi[i]));
        return Outcome::Infeasible { pi };
    }

    t.drive_out_artificials();
    if !t.refactor() {
        return Outcome::IterationLimit;
    }
    let cost = phase2_cost;
    match t.run(&cost, false, 1e-11 * scale_c, limit) {
        Step::Optimal => {}
        Step::Limit => return Outcome::IterationLimit,
        Step::Unbounded(col, alpha) => {
            let mut ray = DVector::zeros(n);
            ray[col] = 1.0;
            for (i, &j) in t.basis.iter().enumerate() {
                if j < n {
                    ray[j] = -alpha[i];
                }
            }
            return Outcome::Unbounded { ray };
        }
    }
    if !t.refactor() {
        return Outcome::IterationLimit;
    }
    let xb = t.basic_values();
    let mut x = DVector::zeros(n);
    for (i, &j) in t.basis.iter().enumerate() {
        if j < n {
            x[j] = xb[i].max(0.0);
        }
    }
    let pi = t.multipliers(&cost);
    let pi = DVector::from_iterator(m, (0..m).map(|i| signs[i] * pi[i]));
    Outcome::Optimal { x, pi }
}
