//! Dual form of the robust output constraints.
//!
//! For output constraint `l` and predicted step `k`,
//!
//! ```text
//!   max_{H ∈ F(k|t)} Σ_j c_lj H_jᵀφ(k|t) + d̄_l ≤ g_l
//! ```
//!
//! holds iff some `λ ≥ 0` satisfies `A(k|t)ᵀλ = [c_l1 φ; …; c_lny φ]` and
//! `b(k|t)ᵀλ ≤ g_l − d̄_l`, with `A(k|t)` block-diagonal over outputs. The
//! blocks separate, so `λ` is stored per output.

use nalgebra::{DMatrix, DVector};

use super::predict::{PredictedFpsSequence, PredictedSet};
use crate::error::{check_len, Error, Result};
use crate::model::ModelStructure;
use crate::solvers::{solve_lp, LinearProgram, SolveStatus, DEFAULT_TOL};

/// `φ(t+1+i | t) = lin[i]·U + offset[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiAffine {
    pub lin: Vec<DMatrix<f64>>,
    pub offset: Vec<DVector<f64>>,
}

impl PhiAffine {
    /// Exact affine maps from the regressor recursion with
    /// `U = [u(t|t); …; u(t+N−1|t)]`.
    pub fn build(s: &ModelStructure, phi0: &DVector<f64>, horizon: usize) -> Result<Self> {
        check_len("regressor", s.m(), phi0.len())?;
        let (m, n_u) = (s.m(), s.n_u());
        let nv = horizon * n_u;
        let (f, g) = (s.f_matrix(), s.g_matrix());
        let mut lin = Vec::with_capacity(horizon);
        let mut offset = Vec::with_capacity(horizon);
        let mut cur_lin = DMatrix::zeros(m, nv);
        let mut cur_off = phi0.clone();
        for i in 0..horizon {
            cur_lin = f * &cur_lin;
            let mut block = cur_lin.view_mut((0, i * n_u), (m, n_u));
            block += g;
            cur_off = f * &cur_off;
            lin.push(cur_lin.clone());
            offset.push(cur_off.clone());
        }
        Ok(Self { lin, offset })
    }

    /// Regressors that do not depend on the decision variables.
    pub fn fixed(phis: Vec<DVector<f64>>, n_vars: usize) -> Self {
        Self {
            lin: phis.iter().map(|p| DMatrix::zeros(p.len(), n_vars)).collect(),
            offset: phis,
        }
    }

    pub fn horizon(&self) -> usize {
        self.lin.len()
    }

    pub fn n_vars(&self) -> usize {
        self.lin.first().map_or(0, |l| l.ncols())
    }

    pub fn eval(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        &self.lin[i] * u + &self.offset[i]
    }
}

/// Constraint block for one `(l, k)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DualBlock {
    pub l: usize,
    /// `k = t + 1 + k_index`.
    pub k_index: usize,
    pub set: PredictedSet,
    /// Row `l` of `C_y`.
    pub c: Vec<f64>,
    /// `g_l − d̄_l`.
    pub bound: f64,
}

impl DualBlock {
    pub fn n_duals(&self) -> usize {
        self.set.total_rows()
    }

    /// Right-hand side `[c_l1 φ; …; c_lny φ]` of the dual equality.
    pub fn stacked_rhs(&self, phi: &DVector<f64>) -> DVector<f64> {
        let m = phi.len();
        let mut out = DVector::zeros(m * self.c.len());
        for (j, &c) in self.c.iter().enumerate() {
            out.rows_mut(j * m, m).copy_from(&(phi * c));
        }
        out
    }

    /// `A(k|t)ᵀ`, block-diagonal over outputs.
    pub fn a_transpose(&self) -> DMatrix<f64> {
        let m = self.set.a[0].ncols();
        let mut out = DMatrix::zeros(m * self.c.len(), self.n_duals());
        let mut col = 0;
        for (j, a) in self.set.a.iter().enumerate() {
            out.view_mut((j * m, col), (m, a.nrows())).copy_from(&a.transpose());
            col += a.nrows();
        }
        out
    }

    pub fn b_stacked(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_duals());
        let mut row = 0;
        for b in &self.set.b {
            out.rows_mut(row, b.len()).copy_from(b);
            row += b.len();
        }
        out
    }

    /// Least `bᵀλ` over the dual system's equality and sign constraints,
    /// with its minimizer. This equals the worst case over the set, so the
    /// block is satisfiable iff the value is at most `bound`.
    pub fn min_dual_objective(&self, phi: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let mut lambda = DVector::zeros(self.n_duals());
        let mut total = 0.0;
        let mut row = 0;
        for (j, (a, b)) in self.set.a.iter().zip(&self.set.b).enumerate() {
            let r = a.nrows();
            if self.c[j] != 0.0 && phi.iter().any(|&v| v != 0.0) {
                let dir = phi * self.c[j];
                let rep = solve_lp(&LinearProgram::maximize(dir, a.clone(), b.clone()), DEFAULT_TOL)?;
                match rep.status {
                    SolveStatus::Optimal => {
                        total += b.dot(&rep.dual_ineq);
                        lambda.rows_mut(row, r).copy_from(&rep.dual_ineq);
                    }
                    SolveStatus::Infeasible => return Err(Error::EmptyFeasibleSet { output: j }),
                    other => return Err(Error::Solver(format!("support LP ended {}", other.as_str()))),
                }
            }
            row += r;
        }
        Ok((total, lambda))
    }

    /// Feasibility of `{λ ≥ 0 : A(k|t)ᵀλ = c⊗φ, b(k|t)ᵀλ ≤ bound}` decided
    /// directly by a phase-one LP over `λ`.
    pub fn dual_system_feasible(&self, phi: &DVector<f64>) -> Result<bool> {
        let n = self.n_duals();
        let mut g = DMatrix::zeros(n + 1, n);
        let mut h = DVector::zeros(n + 1);
        g.view_mut((0, 0), (n, n)).copy_from(&(-DMatrix::identity(n, n)));
        g.row_mut(n).copy_from(&self.b_stacked().transpose());
        h[n] = self.bound;
        let lp = LinearProgram::minimize(DVector::zeros(n), g, h).with_equalities(self.a_transpose(), self.stacked_rhs(phi));
        match solve_lp(&lp, DEFAULT_TOL)?.status {
            SolveStatus::Optimal => Ok(true),
            SolveStatus::Infeasible => Ok(false),
            other => Err(Error::Solver(format!("dual feasibility LP ended {}", other.as_str()))),
        }
    }

    /// Largest residual of the dual system at `(φ, λ)`: equality error,
    /// bound excess and negativity of `λ`.
    pub fn residual(&self, phi: &DVector<f64>, lambda: &DVector<f64>) -> f64 {
        let eq = (self.a_transpose() * lambda - self.stacked_rhs(phi)).amax();
        let ineq = (self.b_stacked().dot(lambda) - self.bound).max(0.0);
        let neg = lambda.iter().fold(0.0f64, |w, &x| w.max(-x));
        eq.max(ineq).max(neg)
    }
}

/// One block per `(l, k)`, ordered by `l` first and then by `k`, which is
/// the layout of `Λ = [Λ_1; …; Λ_no]`, `Λ_l = [λ_l(t+1|t); …; λ_l(t+N|t)]`.
pub fn build_dual_constraints(
    seq: &PredictedFpsSequence,
    cy: &DMatrix<f64>,
    gy: &DVector<f64>,
    dbar: &DVector<f64>,
    phi_map: &PhiAffine,
) -> Result<Vec<DualBlock>> {
    check_len("g_y", cy.nrows(), gy.len())?;
    check_len("d-bar", cy.nrows(), dbar.len())?;
    check_len("predicted sets", phi_map.horizon(), seq.horizon())?;
    if let Some(set) = seq.sets.first() {
        check_len("C_y columns", set.n_y(), cy.ncols())?;
    }
    if dbar.iter().any(|&d| d < 0.0) {
        return Err(Error::InvalidArgument("d-bar entries must be nonnegative".into()));
    }
    let mut out = Vec::with_capacity(cy.nrows() * seq.horizon());
    for l in 0..cy.nrows() {
        let c: Vec<f64> = cy.row(l).iter().copied().collect();
        for (k_index, set) in seq.sets.iter().enumerate() {
            out.push(DualBlock {
                l,
                k_index,
                set: set.clone(),
                c: c.clone(),
                bound: gy[l] - dbar[l],
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{advance_regressor, build_fir_structure};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn interval_block(gy: f64, dbar: f64, c: f64) -> DualBlock {
        DualBlock {
            l: 0,
            k_index: 0,
            set: PredictedSet {
                a: vec![DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])],
                b: vec![v(&[-0.4, 0.6])],
            },
            c: vec![c],
            bound: gy - dbar,
        }
    }

    #[test]
    fn interval_thresholds() {
        let phi = v(&[2.0]);
        // max 2H + 0.2 over [0.4, 0.6] is 1.4
        let ok = interval_block(1.5, 0.2, 1.0);
        assert!(ok.dual_system_feasible(&phi).unwrap());
        let (val, lam) = ok.min_dual_objective(&phi).unwrap();
        assert!((val - 1.2).abs() < 1e-12);
        assert!(ok.residual(&phi, &lam) < 1e-12);

        let bad = interval_block(1.3, 0.2, 1.0);
        assert!(!bad.dual_system_feasible(&phi).unwrap());
    }

    #[test]
    fn zero_output_row() {
        let phi = v(&[2.0]);
        assert!(interval_block(0.3, 0.2, 0.0).dual_system_feasible(&phi).unwrap());
        assert!(!interval_block(0.1, 0.2, 0.0).dual_system_feasible(&phi).unwrap());
        let (val, lam) = interval_block(0.3, 0.2, 0.0).min_dual_objective(&phi).unwrap();
        assert_eq!(val, 0.0);
        assert_eq!(lam, DVector::zeros(2));
    }

    #[test]
    fn phi_affine_matches_recursion() {
        let s = build_fir_structure(2, 1, 3).unwrap();
        let phi0 = v(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let map = PhiAffine::build(&s, &phi0, 4).unwrap();
        let u = DVector::from_fn(8, |i, _| (i as f64) * 0.5 - 1.0);
        let mut phi = phi0.clone();
        for i in 0..4 {
            phi = advance_regressor(&s, &phi, &u.rows(2 * i, 2).into_owned()).unwrap();
            assert!((map.eval(i, &u) - &phi).amax() < 1e-14);
        }
    }

    #[test]
    fn blocks_are_l_major() {
        let set = PredictedSet {
            a: vec![DMatrix::from_column_slice(2, 1, &[-1.0, 1.0])],
            b: vec![v(&[0.0, 1.0])],
        };
        let seq = PredictedFpsSequence {
            sets: vec![set.clone(), set],
        };
        let cy = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let map = PhiAffine::fixed(vec![v(&[1.0]), v(&[1.0])], 2);
        let blocks = build_dual_constraints(&seq, &cy, &v(&[1.0, 1.0]), &v(&[0.1, 0.1]), &map).unwrap();
        let order: Vec<_> = blocks.iter().map(|b| (b.l, b.k_index)).collect();
        assert_eq!(order, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        assert!(build_dual_constraints(&seq, &cy, &v(&[1.0]), &v(&[0.1, 0.1]), &map).is_err());
    }
}
