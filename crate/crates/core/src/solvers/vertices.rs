use itertools::Itertools;
use nalgebra::{DMatrix, DVector};

use super::lp::{solve_lp, LinearProgram};
use super::{SolveStatus, DEFAULT_TOL};
use crate::error::{check_finite, check_len, Error, Result};

const MAX_DIM: usize = 6;
const DEDUP_TOL: f64 = 1e-9;

/// All vertices of the bounded polytope `{x : Gx ≤ h}` by brute force over
/// every `n`-subset of constraints. Intended as a test oracle for small `n`.
pub fn enumerate_vertices(ineq_matrix: &DMatrix<f64>, ineq_rhs: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
    let n = ineq_matrix.ncols();
    check_len("vertex enumeration rhs", ineq_matrix.nrows(), ineq_rhs.len())?;
    check_finite("vertex enumeration data", ineq_matrix.iter().chain(ineq_rhs.iter()))?;
    if n == 0 || n > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "vertex enumeration supports 1..={MAX_DIM} dimensions, got {n}"
        )));
    }

    // Boundedness along every coordinate direction.
    for i in 0..n {
        for s in [1.0, -1.0] {
            let mut c = DVector::zeros(n);
            c[i] = s;
            let r = solve_lp(&LinearProgram::maximize(c, ineq_matrix.clone(), ineq_rhs.clone()), DEFAULT_TOL)?;
            match r.status {
                SolveStatus::Optimal => {}
                SolveStatus::Infeasible => return Ok(Vec::new()),
                SolveStatus::Unbounded => {
                    return Err(Error::UnboundedPolytope(format!(
                        "unbounded along {}e{}",
                        if s > 0.0 { "+" } else { "-" },
                        i + 1
                    )))
                }
                SolveStatus::IterationLimit => {
                    return Err(Error::Solver("boundedness LP did not converge".into()))
                }
            }
        }
    }

    let scale = 1.0 + ineq_rhs.amax();
    let mut out: Vec<DVector<f64>> = Vec::new();
    for rows in (0..ineq_matrix.nrows()).combinations(n) {
        let a = ineq_matrix.select_rows(&rows);
        let b = ineq_rhs.select_rows(&rows);
        let lu = a.clone().lu();
        let det = lu.determinant();
        let norm: f64 = rows.iter().map(|&r| ineq_matrix.row(r).norm()).product();
        if det.abs() <= 1e-12 * norm.max(1e-300) {
            continue;
        }
        let Some(x) = lu.solve(&b) else { continue };
        let feasible = (ineq_matrix * &x - ineq_rhs).iter().all(|&v| v <= 1e-9 * scale);
        if feasible && !out.iter().any(|v| (v - &x).amax() <= DEDUP_TOL) {
            out.push(x);
        }
    }
    Ok(out)
}
