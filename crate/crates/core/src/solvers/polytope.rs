//! LP-backed queries on H-polytopes `{x : Ax ≤ b}`.

use nalgebra::{DMatrix, DVector};

use super::lp::{solve_lp, LinearProgram};
use super::{SolveStatus, DEFAULT_TOL};
use crate::error::{check_len, Error, Result};

/// Some point of the polytope, or `None` if it is empty.
pub fn feasible_point(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    check_len("polytope rhs", a.nrows(), b.len())?;
    let lp = LinearProgram::minimize(DVector::zeros(a.ncols()), a.clone(), b.clone());
    let r = solve_lp(&lp, DEFAULT_TOL)?;
    match r.status {
        SolveStatus::Optimal => Ok(Some(r.solution)),
        SolveStatus::Infeasible => Ok(None),
        other => Err(Error::Solver(format!("feasibility LP ended {}", other.as_str()))),
    }
}

/// `max cᵀx` over the polytope. `Ok(None)` when the polytope is empty.
pub fn support(a: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> Result<Option<(f64, DVector<f64>)>> {
    let r = solve_lp(&LinearProgram::maximize(c.clone(), a.clone(), b.clone()), DEFAULT_TOL)?;
    match r.status {
        SolveStatus::Optimal => Ok(Some((r.objective, r.solution))),
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::Unbounded => Err(Error::UnboundedPolytope("support function is infinite".into())),
        SolveStatus::IterationLimit => Err(Error::Solver("support LP hit the iteration limit".into())),
    }
}

/// Errors unless the polytope is nonempty and bounded along every coordinate
/// direction.
pub fn check_nonempty_bounded(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<()> {
    if feasible_point(a, b)?.is_none() {
        return Err(Error::EmptyPolytope(what.to_string()));
    }
    for i in 0..a.ncols() {
        for s in [1.0, -1.0] {
            let mut c = DVector::zeros(a.ncols());
            c[i] = s;
            if let Err(Error::UnboundedPolytope(_)) = support(a, b, &c) {
                return Err(Error::UnboundedPolytope(format!("{what}: direction {}e{}", if s > 0.0 { "+" } else { "-" }, i + 1)));
            }
        }
    }
    Ok(())
}

/// Largest amount by which a point of `{A_in x ≤ b_in}` violates a row of
/// `{A_out x ≤ b_out}`; `≤ 0` means containment. An empty inner set gives
/// `-∞`.
pub fn containment_violation(
    inner_a: &DMatrix<f64>,
    inner_b: &DVector<f64>,
    outer_a: &DMatrix<f64>,
    outer_b: &DVector<f64>,
) -> Result<f64> {
    check_len("containment dimension", inner_a.ncols(), outer_a.ncols())?;
    check_len("outer rhs", outer_a.nrows(), outer_b.len())?;
    let mut worst = f64::NEG_INFINITY;
    for i in 0..outer_a.nrows() {
        let c = outer_a.row(i).transpose();
        match support(inner_a, inner_b, &c)? {
            Some((v, _)) => worst = worst.max(v - outer_b[i]),
            None => return Ok(f64::NEG_INFINITY),
        }
    }
    Ok(worst)
}

/// Center and radius of the largest Euclidean ball inside the polytope.
pub fn chebyshev_center(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, f64)> {
    check_len("polytope rhs", a.nrows(), b.len())?;
    let (p, n) = a.shape();
    // variables [x, r]; rows aᵢᵀx + ‖aᵢ‖r ≤ bᵢ, −r ≤ 0
    let mut g = DMatrix::zeros(p + 1, n + 1);
    g.view_mut((0, 0), (p, n)).copy_from(a);
    for i in 0..p {
        g[(i, n)] = a.row(i).norm();
    }
    g[(p, n)] = -1.0;
    let mut h = DVector::zeros(p + 1);
    h.rows_mut(0, p).copy_from(b);
    let mut c = DVector::zeros(n + 1);
    c[n] = 1.0;
    let r = solve_lp(&LinearProgram::maximize(c, g, h), DEFAULT_TOL)?;
    match r.status {
        SolveStatus::Optimal => Ok((r.solution.rows(0, n).into_owned(), r.solution[n])),
        SolveStatus::Infeasible => Err(Error::EmptyPolytope("Chebyshev center of an empty set".into())),
        SolveStatus::Unbounded => Err(Error::UnboundedPolytope("Chebyshev ball is unbounded".into())),
        SolveStatus::IterationLimit => Err(Error::Solver("Chebyshev LP hit the iteration limit".into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn interval(lo: f64, hi: f64) -> (DMatrix<f64>, DVector<f64>) {
        (
            DMatrix::from_column_slice(2, 1, &[-1.0, 1.0]),
            DVector::from_column_slice(&[-lo, hi]),
        )
    }

    #[test]
    fn interval_queries() {
        let (a, b) = interval(0.4, 0.6);
        assert!(feasible_point(&a, &b).unwrap().is_some());
        let (v, _) = support(&a, &b, &DVector::from_element(1, 2.0)).unwrap().unwrap();
        assert!((v - 1.2).abs() < 1e-12);
        let (c, r) = chebyshev_center(&a, &b).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-12 && (r - 0.1).abs() < 1e-12);
        check_nonempty_bounded(&a, &b, "interval").unwrap();
    }

    #[test]
    fn containment() {
        let (ai, bi) = interval(0.4, 0.6);
        let (ao, bo) = interval(0.0, 1.0);
        assert!((containment_violation(&ai, &bi, &ao, &bo).unwrap() + 0.4).abs() < 1e-12);
        assert!((containment_violation(&ao, &bo, &ai, &bi).unwrap() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn empty_and_unbounded() {
        let (a, b) = interval(0.9, 0.1);
        assert!(feasible_point(&a, &b).unwrap().is_none());
        assert!(matches!(check_nonempty_bounded(&a, &b, "x"), Err(Error::EmptyPolytope(_))));
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DVector::from_element(1, 1.0);
        assert!(matches!(check_nonempty_bounded(&a, &b, "x"), Err(Error::UnboundedPolytope(_))));
    }
}
