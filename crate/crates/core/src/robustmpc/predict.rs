//! Predicted feasible parameter sets `F(k|t)`, `k = t+1 … t+N`.
//!
//! `F(k|t)` is what the identifier would hold at step `k` if every future
//! measurement were uninformative: the prior rows, plus each stored slab that
//! would still be inside the `M/2`-slab window at `k`, inflated by the drift
//! bounds of the extra `k − t` steps. The last entry is replaced by Ω.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::smident::{FeasibleParameterSet, PriorSet};
use crate::solvers::polytope::{feasible_point, support};

/// Per-output polytopes `A_j H_j ≤ b_j` for one predicted step.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSet {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl PredictedSet {
    pub fn n_y(&self) -> usize {
        self.a.len()
    }

    /// `r(k|t) = Σ_j r_j(k|t)`.
    pub fn total_rows(&self) -> usize {
        self.a.iter().map(|a| a.nrows()).sum()
    }

    pub fn from_prior(prior: &PriorSet) -> Self {
        Self {
            a: (0..prior.n_y()).map(|j| prior.a0_matrix(j).clone()).collect(),
            b: (0..prior.n_y()).map(|j| prior.b0_vector(j).clone()).collect(),
        }
    }

    /// `max Σ_j c_j H_jᵀφ` over the set, together with the maximizing rows.
    /// Outputs with `c_j = 0` contribute nothing and get a zero row; with a
    /// zero regressor any member of the set is a maximizer.
    pub fn worst_case(&self, c: &[f64], phi: &DVector<f64>) -> Result<(f64, DMatrix<f64>)> {
        let m = phi.len();
        let mut h = DMatrix::zeros(self.n_y(), m);
        let mut total = 0.0;
        for j in 0..self.n_y() {
            if c[j] == 0.0 {
                continue;
            }
            if phi.iter().all(|&v| v == 0.0) {
                let x = feasible_point(&self.a[j], &self.b[j])?.ok_or(Error::EmptyFeasibleSet { output: j })?;
                h.row_mut(j).copy_from(&x.transpose());
                continue;
            }
            let dir = phi * c[j];
            match support(&self.a[j], &self.b[j], &dir)? {
                Some((v, x)) => {
                    total += v;
                    h.row_mut(j).copy_from(&x.transpose());
                }
                None => return Err(Error::EmptyFeasibleSet { output: j }),
            }
        }
        Ok((total, h))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedFpsSequence {
    /// `sets[i]` is `F(t+1+i | t)`.
    pub sets: Vec<PredictedSet>,
}

impl PredictedFpsSequence {
    pub fn horizon(&self) -> usize {
        self.sets.len()
    }
}

pub fn predict_fps_sequence(
    fps: &FeasibleParameterSet,
    prior: &PriorSet,
    horizon: usize,
) -> Result<PredictedFpsSequence> {
    let n_y = fps.n_y();
    let m = fps.m();
    let half = (fps.m_cap() / 2) as u64;
    let entries: Vec<_> = fps.window().collect();
    let t = fps.last_step();
    let mut sets = Vec::with_capacity(horizon);
    for i in 1..horizon {
        // Entry `s` is still in the window at `k = t + i` iff `s + M/2 > k`.
        let keep: Vec<_> = match t {
            Some(t) => entries.iter().filter(|e| e.record.step + half > t + i as u64).collect(),
            None => Vec::new(),
        };
        let steps = i as f64;
        let mut a = Vec::with_capacity(n_y);
        let mut b = Vec::with_capacity(n_y);
        for j in 0..n_y {
            let (a0, b0) = (prior.a0_matrix(j), prior.b0_vector(j));
            let r0 = a0.nrows();
            let r = r0 + 2 * keep.len();
            let mut aj = DMatrix::zeros(r, m);
            let mut bj = DVector::zeros(r);
            aj.rows_mut(0, r0).copy_from(a0);
            bj.rows_mut(0, r0).copy_from(b0);
            for (w, e) in keep.iter().enumerate() {
                let phi = e.record.phi.transpose();
                aj.row_mut(r0 + 2 * w).copy_from(&(-&phi));
                aj.row_mut(r0 + 2 * w + 1).copy_from(&phi);
                bj[r0 + 2 * w] = e.lower_rhs[j] - steps * e.record.theta_lo[j];
                bj[r0 + 2 * w + 1] = e.upper_rhs[j] + steps * e.record.theta_hi[j];
            }
            a.push(aj);
            b.push(bj);
        }
        sets.push(PredictedSet { a, b });
    }
    if horizon > 0 {
        sets.push(PredictedSet::from_prior(prior));
    }
    Ok(PredictedFpsSequence { sets })
}
