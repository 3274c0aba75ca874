//! Recursive set-membership identification.
//!
//! The feasible parameter set keeps, per output `j`, the prior rows
//! `A_j0 H_j ≤ b_j0` followed by one slab per stored measurement
//!
//! ```text
//!   −φ(s)ᵀH_j ≤ −ỹ_j(s) + ε_j − (t−s)·ϑ̲_j(s)
//!    φ(s)ᵀH_j ≤  ỹ_j(s) + ε_j + (t−s)·ϑ̄_j(s)
//! ```
//!
//! with `ε_j = ε_dj + ε_vj`. The inflation is accumulated one step at a time
//! on ingest, so a slab stored `k` steps ago carries exactly `k` copies of its
//! own drift bounds. At most `M/2` slabs are kept; the oldest goes first.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::model::ParameterMatrix;
use crate::solvers::polytope::{chebyshev_center, check_nonempty_bounded, feasible_point};
use crate::solvers::{solve_lp, LinearProgram, SolveStatus, DEFAULT_TOL};

/// Per-output polytopes `{x : A_j x ≤ b_j}` sharing a common dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Polytopes {
    a: Vec<DMatrix<f64>>,
    b: Vec<DVector<f64>>,
}

impl Polytopes {
    fn new(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, what: &'static str) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidArgument(format!("{what}: no outputs")));
        }
        check_len(what, a.len(), b.len())?;
        let m = a[0].ncols();
        for (j, (aj, bj)) in a.iter().zip(&b).enumerate() {
            check_len(what, m, aj.ncols())?;
            check_len(what, aj.nrows(), bj.len())?;
            check_finite(what, aj.iter().chain(bj.iter()))?;
            check_nonempty_bounded(aj, bj, &format!("{what}, output {}", j + 1))?;
        }
        Ok(Self { a, b })
    }

    /// `lo ≤ x ≤ hi` for every output.
    fn boxed(n_y: usize, lo: &DVector<f64>, hi: &DVector<f64>, what: &'static str) -> Result<Self> {
        check_len(what, lo.len(), hi.len())?;
        let m = lo.len();
        let mut a = DMatrix::zeros(2 * m, m);
        let mut b = DVector::zeros(2 * m);
        for i in 0..m {
            a[(2 * i, i)] = 1.0;
            a[(2 * i + 1, i)] = -1.0;
            b[2 * i] = hi[i];
            b[2 * i + 1] = -lo[i];
        }
        Self::new(vec![a; n_y], vec![b; n_y], what)
    }
}

/// Bounds `K_j ΔH_j ≤ l_j` on the per-step parameter change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBoundSet(Polytopes);

impl RateBoundSet {
    pub fn new(k: Vec<DMatrix<f64>>, l: Vec<DVector<f64>>) -> Result<Self> {
        Polytopes::new(k, l, "rate bound set").map(Self)
    }

    /// `|ΔH_ji| ≤ delta_i` for every output.
    pub fn symmetric_box(n_y: usize, delta: &DVector<f64>) -> Result<Self> {
        Polytopes::boxed(n_y, &(-delta), delta, "rate bound set").map(Self)
    }

    pub fn n_y(&self) -> usize {
        self.0.a.len()
    }

    pub fn m(&self) -> usize {
        self.0.a[0].ncols()
    }

    pub fn k_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.0.a[j]
    }

    pub fn l_vector(&self, j: usize) -> &DVector<f64> {
        &self.0.b[j]
    }

    /// Largest row violation of `K_j x ≤ l_j` over all outputs.
    pub fn max_violation(&self, delta_h: &DMatrix<f64>) -> f64 {
        max_row_violation(&self.0, delta_h)
    }
}

/// The a-priori parameter set Ω: `A_j0 H_j ≤ b_j0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSet(Polytopes);

impl PriorSet {
    pub fn new(a0: Vec<DMatrix<f64>>, b0: Vec<DVector<f64>>) -> Result<Self> {
        Polytopes::new(a0, b0, "prior set").map(Self)
    }

    pub fn boxed(n_y: usize, lo: &DVector<f64>, hi: &DVector<f64>) -> Result<Self> {
        Polytopes::boxed(n_y, lo, hi, "prior set").map(Self)
    }

    pub fn n_y(&self) -> usize {
        self.0.a.len()
    }

    pub fn m(&self) -> usize {
        self.0.a[0].ncols()
    }

    pub fn a0_matrix(&self, j: usize) -> &DMatrix<f64> {
        &self.0.a[j]
    }

    pub fn b0_vector(&self, j: usize) -> &DVector<f64> {
        &self.0.b[j]
    }

    pub fn r0(&self, j: usize) -> usize {
        self.0.a[j].nrows()
    }

    pub fn max_violation(&self, h: &DMatrix<f64>) -> f64 {
        max_row_violation(&self.0, h)
    }
}

fn max_row_violation(p: &Polytopes, h: &DMatrix<f64>) -> f64 {
    p.a.iter()
        .zip(&p.b)
        .enumerate()
        .map(|(j, (a, b))| (a * h.row(j).transpose() - b).max())
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseBounds {
    pub eps_d: DVector<f64>,
    pub eps_v: DVector<f64>,
}

impl NoiseBounds {
    pub fn new(eps_d: DVector<f64>, eps_v: DVector<f64>) -> Result<Self> {
        check_len("noise bounds", eps_d.len(), eps_v.len())?;
        if eps_d.iter().chain(eps_v.iter()).any(|&e| !(e > 0.0 && e.is_finite())) {
            return Err(Error::InvalidArgument("noise bounds must be positive and finite".into()));
        }
        Ok(Self { eps_d, eps_v })
    }

    pub fn n_y(&self) -> usize {
        self.eps_d.len()
    }

    /// Slab half-width `ε_dj + ε_vj`.
    pub fn total(&self, j: usize) -> f64 {
        self.eps_d[j] + self.eps_v[j]
    }
}

/// `(min, max)` of `φᵀx` over each rate polytope.
pub fn drift_bounds(phi: &DVector<f64>, rates: &RateBoundSet) -> Result<(DVector<f64>, DVector<f64>)> {
    check_len("regressor", rates.m(), phi.len())?;
    let n_y = rates.n_y();
    let mut lo = DVector::zeros(n_y);
    let mut hi = DVector::zeros(n_y);
    if phi.iter().all(|&v| v == 0.0) {
        return Ok((lo, hi));
    }
    for j in 0..n_y {
        let (k, l) = (rates.k_matrix(j), rates.l_vector(j));
        for (maximize, out) in [(false, &mut lo), (true, &mut hi)] {
            let lp = if maximize {
                LinearProgram::maximize(phi.clone(), k.clone(), l.clone())
            } else {
                LinearProgram::minimize(phi.clone(), k.clone(), l.clone())
            };
            let r = solve_lp(&lp, DEFAULT_TOL)?;
            match r.status {
                SolveStatus::Optimal => out[j] = r.objective,
                SolveStatus::Unbounded => {
                    return Err(Error::UnboundedPolytope(format!(
                        "rate set of output {} is unbounded along the regressor",
                        j + 1
                    )))
                }
                other => {
                    return Err(Error::Solver(format!("drift bound LP ended {}", other.as_str())))
                }
            }
        }
    }
    Ok((lo, hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub phi: DVector<f64>,
    pub y_meas: DVector<f64>,
    pub theta_lo: DVector<f64>,
    pub theta_hi: DVector<f64>,
    pub step: u64,
}

impl MeasurementRecord {
    /// Record with drift bounds computed from `rates`.
    pub fn new(phi: DVector<f64>, y_meas: DVector<f64>, step: u64, rates: &RateBoundSet) -> Result<Self> {
        check_len("measurement", rates.n_y(), y_meas.len())?;
        check_finite("measurement", phi.iter().chain(y_meas.iter()))?;
        let (theta_lo, theta_hi) = drift_bounds(&phi, rates)?;
        Ok(Self {
            phi,
            y_meas,
            theta_lo,
            theta_hi,
            step,
        })
    }
}

/// One stored slab with its current, already inflated, right-hand sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowEntry {
    pub record: MeasurementRecord,
    /// rhs of `−φᵀH_j ≤ ·` per output.
    pub lower_rhs: DVector<f64>,
    /// rhs of `φᵀH_j ≤ ·` per output.
    pub upper_rhs: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleParameterSet {
    prior: PriorSet,
    noise: NoiseBounds,
    m_cap: usize,
    window: VecDeque<WindowEntry>,
    last_step: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Emptiness {
    Nonempty(ParameterMatrix),
    Empty { output: usize },
}

impl FeasibleParameterSet {
    /// `m_cap` is `M`, the number of measurement rows kept per output; it
    /// must be even and positive.
    pub fn new(prior: PriorSet, noise: NoiseBounds, m_cap: usize) -> Result<Self> {
        if m_cap == 0 || !m_cap.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!("M must be even and positive, got {m_cap}")));
        }
        check_len("noise bounds", prior.n_y(), noise.n_y())?;
        Ok(Self {
            prior,
            noise,
            m_cap,
            window: VecDeque::with_capacity(m_cap / 2 + 1),
            last_step: None,
        })
    }

    pub fn prior(&self) -> &PriorSet {
        &self.prior
    }

    pub fn noise(&self) -> &NoiseBounds {
        &self.noise
    }

    pub fn m_cap(&self) -> usize {
        self.m_cap
    }

    pub fn n_y(&self) -> usize {
        self.prior.n_y()
    }

    pub fn m(&self) -> usize {
        self.prior.m()
    }

    pub fn last_step(&self) -> Option<u64> {
        self.last_step
    }

    /// Stored slabs, oldest first.
    pub fn window(&self) -> impl ExactSizeIterator<Item = &WindowEntry> + DoubleEndedIterator {
        self.window.iter()
    }

    pub fn r0(&self, j: usize) -> usize {
        self.prior.r0(j)
    }

    pub fn r(&self, j: usize) -> usize {
        self.prior.r0(j) + 2 * self.window.len()
    }

    pub fn a_matrix(&self, j: usize) -> DMatrix<f64> {
        let a0 = self.prior.a0_matrix(j);
        let r0 = a0.nrows();
        let mut a = DMatrix::zeros(self.r(j), self.m());
        a.rows_mut(0, r0).copy_from(a0);
        for (w, e) in self.window.iter().enumerate() {
            let phi = e.record.phi.transpose();
            a.row_mut(r0 + 2 * w).copy_from(&(-&phi));
            a.row_mut(r0 + 2 * w + 1).copy_from(&phi);
        }
        a
    }

    pub fn b_vector(&self, j: usize) -> DVector<f64> {
        let b0 = self.prior.b0_vector(j);
        let r0 = b0.len();
        let mut b = DVector::zeros(self.r(j));
        b.rows_mut(0, r0).copy_from(b0);
        for (w, e) in self.window.iter().enumerate() {
            b[r0 + 2 * w] = e.lower_rhs[j];
            b[r0 + 2 * w + 1] = e.upper_rhs[j];
        }
        b
    }

    /// Largest violation of any row by `h` (`≤ 0` means `h ∈ F`).
    pub fn max_violation(&self, h: &DMatrix<f64>) -> f64 {
        (0..self.n_y())
            .map(|j| (self.a_matrix(j) * h.row(j).transpose() - self.b_vector(j)).max())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn ingest_measurement(&mut self, rec: MeasurementRecord) -> Result<()> {
        check_len("measurement regressor", self.m(), rec.phi.len())?;
        check_len("measurement outputs", self.n_y(), rec.y_meas.len())?;
        check_len("drift bounds", self.n_y(), rec.theta_lo.len())?;
        check_len("drift bounds", self.n_y(), rec.theta_hi.len())?;
        if let Some(last) = self.last_step {
            if rec.step != last + 1 {
                return Err(Error::OutOfOrderMeasurement { last, found: rec.step });
            }
        }

        for e in self.window.iter_mut() {
            e.lower_rhs -= &e.record.theta_lo;
            e.upper_rhs += &e.record.theta_hi;
        }

        let eps = DVector::from_fn(self.n_y(), |j, _| self.noise.total(j));
        self.last_step = Some(rec.step);
        self.window.push_back(WindowEntry {
            lower_rhs: &eps - &rec.y_meas,
            upper_rhs: &eps + &rec.y_meas,
            record: rec,
        });
        while 2 * self.window.len() > self.m_cap {
            self.window.pop_front();
        }
        Ok(())
    }

    pub fn emptiness_check(&self) -> Result<Emptiness> {
        let mut h = DMatrix::zeros(self.n_y(), self.m());
        for j in 0..self.n_y() {
            match feasible_point(&self.a_matrix(j), &self.b_vector(j))? {
                Some(x) => h.row_mut(j).copy_from(&x.transpose()),
                None => return Ok(Emptiness::Empty { output: j }),
            }
        }
        Ok(Emptiness::Nonempty(ParameterMatrix { h }))
    }

    /// Drops every measurement, keeping only Ω. The step counter is cleared
    /// too, so the measurement that exposed the empty set can be ingested
    /// again.
    pub fn reset_to_prior(&mut self) {
        self.window.clear();
        self.last_step = None;
    }

    pub fn snapshot(&self) -> FpsSnapshot {
        let outputs = (0..self.n_y())
            .map(|j| {
                let a = self.a_matrix(j);
                OutputSnapshot {
                    r0: self.r0(j),
                    a_matrix: a.row_iter().map(|r| r.iter().copied().collect()).collect(),
                    b_vector: self.b_vector(j).iter().copied().collect(),
                }
            })
            .collect();
        FpsSnapshot {
            step: self.last_step,
            m_cap: self.m_cap,
            window_steps: self.window.iter().map(|e| e.record.step).collect(),
            outputs,
        }
    }
}

/// JSON view of a feasible parameter set. Matrices are row-major nested
/// arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpsSnapshot {
    pub step: Option<u64>,
    pub m_cap: usize,
    pub window_steps: Vec<u64>,
    pub outputs: Vec<OutputSnapshot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSnapshot {
    pub r0: usize,
    pub a_matrix: Vec<Vec<f64>>,
    pub b_vector: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalModel {
    pub h_c: ParameterMatrix,
}

/// L1-closest point of `F(t)` to the previous nominal model:
///
/// ```text
/// min Σ sᵢ  s.t.  x − s ≤ p,  −x − s ≤ −p,  A_j x ≤ b_j
/// ```
///
/// solved independently per output.
pub fn nominal_model(fps: &FeasibleParameterSet, previous: &NominalModel) -> Result<NominalModel> {
    let prev = &previous.h_c.h;
    check_len("nominal rows", fps.n_y(), prev.nrows())?;
    check_len("nominal columns", fps.m(), prev.ncols())?;
    let m = fps.m();
    let mut h = DMatrix::zeros(fps.n_y(), m);
    for j in 0..fps.n_y() {
        let a = fps.a_matrix(j);
        let b = fps.b_vector(j);
        let p = prev.row(j).transpose();
        let rows = a.nrows() + 2 * m;
        let mut g = DMatrix::zeros(rows, 2 * m);
        let mut rhs = DVector::zeros(rows);
        for i in 0..m {
            g[(i, i)] = 1.0;
            g[(i, m + i)] = -1.0;
            rhs[i] = p[i];
            g[(m + i, i)] = -1.0;
            g[(m + i, m + i)] = -1.0;
            rhs[m + i] = -p[i];
        }
        g.view_mut((2 * m, 0), (a.nrows(), m)).copy_from(&a);
        rhs.rows_mut(2 * m, a.nrows()).copy_from(&b);
        let mut c = DVector::zeros(2 * m);
        c.rows_mut(m, m).fill(1.0);
        let r = solve_lp(&LinearProgram::minimize(c, g, rhs), DEFAULT_TOL)?;
        match r.status {
            SolveStatus::Optimal => h.row_mut(j).copy_from(&r.solution.rows(0, m).transpose()),
            SolveStatus::Infeasible => return Err(Error::EmptyFeasibleSet { output: j }),
            other => return Err(Error::Solver(format!("nominal model LP ended {}", other.as_str()))),
        }
    }
    Ok(NominalModel {
        h_c: ParameterMatrix { h },
    })
}

/// Chebyshev center of each prior polytope. A center at the origin is moved
/// half a radius away from the constraint with the largest slack, so the
/// result is a nonzero interior point.
pub fn init_nominal(prior: &PriorSet) -> Result<NominalModel> {
    let mut h = DMatrix::zeros(prior.n_y(), prior.m());
    for j in 0..prior.n_y() {
        let (a, b) = (prior.a0_matrix(j), prior.b0_vector(j));
        let (mut c, radius) = chebyshev_center(a, b)?;
        if c.iter().all(|&v| v == 0.0) {
            if radius <= 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "prior set of output {} is the single point 0; no nonzero initial model exists",
                    j + 1
                )));
            }
            let slack = b - a * &c;
            let i = slack.imax();
            let dir = a.row(i).transpose();
            c -= dir.normalize() * (0.5 * radius);
        }
        h.row_mut(j).copy_from(&c.transpose());
    }
    Ok(NominalModel {
        h_c: ParameterMatrix { h },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn unit_interval_prior() -> PriorSet {
        PriorSet::boxed(1, &v(&[0.0]), &v(&[1.0])).unwrap()
    }

    fn noise(total: f64) -> NoiseBounds {
        NoiseBounds::new(v(&[total / 2.0]), v(&[total / 2.0])).unwrap()
    }

    fn record(phi: f64, y: f64, theta: f64, step: u64) -> MeasurementRecord {
        MeasurementRecord {
            phi: v(&[phi]),
            y_meas: v(&[y]),
            theta_lo: v(&[-theta]),
            theta_hi: v(&[theta]),
            step,
        }
    }

    /// `[lo, hi]` of a 1-D set.
    fn interval(fps: &FeasibleParameterSet) -> (f64, f64) {
        use crate::solvers::polytope::support;
        let (a, b) = (fps.a_matrix(0), fps.b_vector(0));
        let hi = support(&a, &b, &v(&[1.0])).unwrap().unwrap().0;
        let lo = -support(&a, &b, &v(&[-1.0])).unwrap().unwrap().0;
        (lo, hi)
    }

    #[test]
    fn drift_bounds_examples() {
        let rates = RateBoundSet::symmetric_box(2, &v(&[0.01, 0.01])).unwrap();
        let (lo, hi) = drift_bounds(&v(&[0.0, 0.0]), &rates).unwrap();
        assert_eq!((lo, hi), (DVector::zeros(2), DVector::zeros(2)));
        let (lo, hi) = drift_bounds(&v(&[1.0, -2.0]), &rates).unwrap();
        for j in 0..2 {
            assert!((lo[j] + 0.03).abs() < 1e-12 && (hi[j] - 0.03).abs() < 1e-12);
        }
        let singleton = RateBoundSet::symmetric_box(1, &v(&[0.0, 0.0])).unwrap();
        let (lo, hi) = drift_bounds(&v(&[1.0, -2.0]), &singleton).unwrap();
        assert!(lo[0].abs() < 1e-12 && hi[0].abs() < 1e-12);
    }

    #[test]
    fn rate_and_prior_validation() {
        let a = vec![DMatrix::from_element(1, 1, 1.0)];
        let b = vec![v(&[1.0])];
        assert!(matches!(RateBoundSet::new(a.clone(), b.clone()), Err(Error::UnboundedPolytope(_))));
        assert!(matches!(
            PriorSet::boxed(1, &v(&[1.0]), &v(&[0.0])),
            Err(Error::EmptyPolytope(_))
        ));
        assert!(NoiseBounds::new(v(&[0.0]), v(&[0.1])).is_err());
    }

    #[test]
    fn first_slab() {
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 10).unwrap();
        fps.ingest_measurement(record(2.0, 1.0, 0.0, 0)).unwrap();
        let (lo, hi) = interval(&fps);
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 0.6).abs() < 1e-12);
        assert_eq!(fps.r(0), 4);
    }

    #[test]
    fn slab_widens_by_its_own_drift_bounds() {
        // The stored bound applies to φᵀH, so with φ = 2 a ±0.03 drift moves
        // each face of the H-interval by 0.015.
        for (theta, want) in [(0.03, (0.385, 0.615)), (0.06, (0.37, 0.63))] {
            let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 10).unwrap();
            fps.ingest_measurement(record(2.0, 1.0, theta, 0)).unwrap();
            // uninformative: φ = 0 and ỹ = 0 gives 0 ≤ ε
            fps.ingest_measurement(record(0.0, 0.0, 0.0, 1)).unwrap();
            let (lo, hi) = interval(&fps);
            assert!((lo - want.0).abs() < 1e-12 && (hi - want.1).abs() < 1e-12, "{lo} {hi}");
            // prior rows untouched
            assert_eq!(fps.b_vector(0).rows(0, 2), v(&[1.0, 0.0]));
        }
    }

    #[test]
    fn cap_evicts_oldest_pair() {
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 2).unwrap();
        for s in 0..3 {
            fps.ingest_measurement(record(1.0 + s as f64, 0.5, 0.0, s)).unwrap();
            assert!(fps.r(0) <= fps.r0(0) + 2);
        }
        assert_eq!(fps.r(0), fps.r0(0) + 2);
        assert_eq!(fps.window().next().unwrap().record.step, 2);
        assert_eq!(fps.a_matrix(0)[(3, 0)], 3.0);
    }

    #[test]
    fn out_of_order_rejected() {
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 4).unwrap();
        fps.ingest_measurement(record(1.0, 0.5, 0.0, 5)).unwrap();
        let err = fps.ingest_measurement(record(1.0, 0.5, 0.0, 7)).unwrap_err();
        assert_eq!(err, Error::OutOfOrderMeasurement { last: 5, found: 7 });
        assert!(FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 3).is_err());
    }

    #[test]
    fn emptiness() {
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 4).unwrap();
        assert!(matches!(fps.emptiness_check().unwrap(), Emptiness::Nonempty(_)));
        fps.ingest_measurement(record(2.0, 1.0, 0.0, 0)).unwrap();
        match fps.emptiness_check().unwrap() {
            Emptiness::Nonempty(w) => assert!((0.4 - 1e-9..=0.6 + 1e-9).contains(&w.h[(0, 0)])),
            Emptiness::Empty { .. } => panic!("expected nonempty"),
        }
        // H ≤ 0.1 and H ≥ 0.9
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.1), 4).unwrap();
        fps.ingest_measurement(record(1.0, 0.0, 0.0, 0)).unwrap();
        fps.ingest_measurement(record(1.0, 1.0, 0.0, 1)).unwrap();
        assert_eq!(fps.emptiness_check().unwrap(), Emptiness::Empty { output: 0 });
        assert!(matches!(
            nominal_model(&fps, &NominalModel { h_c: ParameterMatrix { h: DMatrix::zeros(1, 1) } }),
            Err(Error::EmptyFeasibleSet { output: 0 })
        ));
        fps.reset_to_prior();
        assert_eq!(fps.r(0), fps.r0(0));
        fps.reset_to_prior();
        assert_eq!(fps.r(0), fps.r0(0));
        assert!(matches!(fps.emptiness_check().unwrap(), Emptiness::Nonempty(_)));
        // the offending measurement can be replayed
        fps.ingest_measurement(record(1.0, 1.0, 0.0, 1)).unwrap();
        fps.ingest_measurement(record(1.0, 0.9, 0.0, 2)).unwrap();
    }

    fn nominal_1d(x: f64) -> NominalModel {
        NominalModel {
            h_c: ParameterMatrix {
                h: DMatrix::from_element(1, 1, x),
            },
        }
    }

    #[test]
    fn nominal_projection() {
        let mut fps = FeasibleParameterSet::new(unit_interval_prior(), noise(0.2), 4).unwrap();
        fps.ingest_measurement(record(2.0, 1.0, 0.0, 0)).unwrap();
        for (prev, want) in [(0.9, 0.6), (0.5, 0.5), (0.45, 0.45), (0.1, 0.4)] {
            let got = nominal_model(&fps, &nominal_1d(prev)).unwrap().h_c.h[(0, 0)];
            assert!((got - want).abs() < 1e-12, "{prev}: {got}");
        }
    }

    #[test]
    fn init_nominal_examples() {
        let p = PriorSet::boxed(2, &DVector::zeros(3), &DVector::from_element(3, 1.0)).unwrap();
        let h = init_nominal(&p).unwrap().h_c.h;
        assert!((h - DMatrix::from_element(2, 3, 0.5)).amax() < 1e-12);

        let p = PriorSet::boxed(1, &v(&[2.0]), &v(&[4.0])).unwrap();
        assert!((init_nominal(&p).unwrap().h_c.h[(0, 0)] - 3.0).abs() < 1e-12);

        let p = PriorSet::boxed(1, &v(&[1.5, -0.5]), &v(&[1.5, -0.5])).unwrap();
        let h = init_nominal(&p).unwrap().h_c.h;
        assert!((h[(0, 0)] - 1.5).abs() < 1e-12 && (h[(0, 1)] + 0.5).abs() < 1e-12);

        // symmetric box: centre is 0, so it gets pushed to a nonzero interior point
        let p = PriorSet::boxed(1, &v(&[-1.0, -1.0]), &v(&[1.0, 1.0])).unwrap();
        let h = init_nominal(&p).unwrap().h_c.h;
        assert!(h.amax() > 0.0);
        assert!(p.max_violation(&h) < 0.0);

        let p = PriorSet::boxed(1, &v(&[0.0]), &v(&[0.0])).unwrap();
        assert!(init_nominal(&p).is_err());
    }

    #[test]
    fn snapshot_is_row_major_json() {
        let mut fps = FeasibleParameterSet::new(
            PriorSet::boxed(1, &v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap(),
            noise(0.2),
            4,
        )
        .unwrap();
        fps.ingest_measurement(MeasurementRecord {
            phi: v(&[1.0, 2.0]),
            y_meas: v(&[0.7]),
            theta_lo: v(&[0.0]),
            theta_hi: v(&[0.0]),
            step: 3,
        })
        .unwrap();
        let json = serde_json::to_value(fps.snapshot()).unwrap();
        assert_eq!(json["step"], 3);
        assert_eq!(json["outputs"][0]["r0"], 4);
        assert_eq!(json["outputs"][0]["a_matrix"][5], serde_json::json!([1.0, 2.0]));
        assert_eq!(json["outputs"][0]["a_matrix"][4], serde_json::json!([-1.0, -2.0]));
        let b5 = json["outputs"][0]["b_vector"][5].as_f64().unwrap();
        assert!((b5 - 0.9).abs() < 1e-12);
    }
}
