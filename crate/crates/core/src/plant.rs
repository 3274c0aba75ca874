//! Three-tank benchmark: nonlinear level dynamics, their linearization about
//! an operating point, and a sampled truth simulator with time-varying
//! valves and bounded disturbance and noise.
//!
//! ```text
//!   S dh1/dt = q1 − γ1 Sc sgn(h1−h2) √(2g|h1−h2|)
//!   S dh2/dt = γ1 Sc sgn(h1−h2) √(2g|h1−h2|) − γ2 Sc sgn(h2−h3) √(2g|h2−h3|)
//!   S dh3/dt = q2 + γ2 Sc sgn(h2−h3) √(2g|h2−h3|) − γ3 Sc √(2g h3)
//! ```
//!
//! Levels are in cm, flows in cm³/s, time in s.

use log::warn;
use nalgebra::{DMatrix, DVector, Matrix3, Matrix3x2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, check_len, Error, Result};
use crate::model::{build_fir_structure, ModelStructure, ParameterMatrix};
use crate::smident::NoiseBounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankParams {
    pub s_area: f64,
    pub sc_area: f64,
    pub gamma2: f64,
    pub gravity: f64,
    pub dt: f64,
}

impl Default for TankParams {
    fn default() -> Self {
        Self {
            s_area: 375.0,
            sc_area: 3.42,
            gamma2: 0.5,
            gravity: 981.0,
            dt: 0.16,
        }
    }
}

impl TankParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.s_area, self.sc_area, self.gamma2, self.gravity, self.dt];
        if all.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("tank parameters must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Valve openings at one point in time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub time: f64,
    pub gamma1: f64,
    pub gamma3: f64,
}

/// Piecewise-linear `γ1(t)`, `γ3(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Breakpoint>", into = "Vec<Breakpoint>")]
pub struct ValveSchedule {
    points: Vec<Breakpoint>,
}

impl TryFrom<Vec<Breakpoint>> for ValveSchedule {
    type Error = Error;

    fn try_from(points: Vec<Breakpoint>) -> Result<Self> {
        Self::new(points)
    }
}

impl From<ValveSchedule> for Vec<Breakpoint> {
    fn from(s: ValveSchedule) -> Self {
        s.points
    }
}

impl ValveSchedule {
    pub fn new(points: Vec<Breakpoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidArgument("valve schedule has no breakpoints".into()));
        }
        for p in &points {
            if !p.time.is_finite() {
                return Err(Error::NonFinite("valve schedule time"));
            }
            for g in [p.gamma1, p.gamma3] {
                if !(g > 0.0 && g <= 1.0) {
                    return Err(Error::InvalidArgument(format!("valve opening {g} outside (0, 1]")));
                }
            }
        }
        if points.windows(2).any(|w| w[1].time <= w[0].time) {
            return Err(Error::InvalidArgument("valve schedule times must increase".into()));
        }
        Ok(Self { points })
    }

    /// Linear ramp from `from` at time 0 to `to` at `duration`.
    pub fn ramp(duration: f64, from: (f64, f64), to: (f64, f64)) -> Result<Self> {
        Self::new(vec![
            Breakpoint {
                time: 0.0,
                gamma1: from.0,
                gamma3: from.1,
            },
            Breakpoint {
                time: duration,
                gamma1: to.0,
                gamma3: to.1,
            },
        ])
    }

    pub fn end_time(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.time)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.points
    }

    /// `(γ1, γ3)` at `time`; held before the first breakpoint.
    pub fn at(&self, time: f64) -> Result<(f64, f64)> {
        let end = self.end_time();
        if time > end * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::ScheduleExhausted(time));
        }
        let i = self.points.partition_point(|p| p.time <= time);
        if i == 0 {
            let p = self.points[0];
            return Ok((p.gamma1, p.gamma3));
        }
        if i == self.points.len() {
            let p = self.points[i - 1];
            return Ok((p.gamma1, p.gamma3));
        }
        let (a, b) = (self.points[i - 1], self.points[i]);
        let w = (time - a.time) / (b.time - a.time);
        Ok((a.gamma1 + w * (b.gamma1 - a.gamma1), a.gamma3 + w * (b.gamma3 - a.gamma3)))
    }
}

fn check_levels(h: &Vector3<f64>) -> Result<()> {
    match h.iter().position(|&x| x < 0.0) {
        Some(i) => Err(Error::NegativeLevel {
            tank: i + 1,
            level: h[i],
        }),
        None => Ok(()),
    }
}

fn signed_flow(coef: f64, dh: f64, g: f64) -> f64 {
    coef * dh.signum() * (2.0 * g * dh.abs()).sqrt()
}

/// Level derivatives in cm/s. `gammas = [γ1, γ2, γ3]`.
pub fn tank_derivative(h: &Vector3<f64>, q1: f64, q2: f64, gammas: [f64; 3], p: &TankParams) -> Result<Vector3<f64>> {
    check_finite("tank state", h.iter().chain([q1, q2].iter()))?;
    check_levels(h)?;
    let g = p.gravity;
    let f12 = signed_flow(gammas[0] * p.sc_area, h[0] - h[1], g);
    let f23 = signed_flow(gammas[1] * p.sc_area, h[1] - h[2], g);
    let f3 = gammas[2] * p.sc_area * (2.0 * g * h[2]).sqrt();
    Ok(Vector3::new(q1 - f12, f12 - f23, q2 + f23 - f3) / p.s_area)
}

/// Inflows that hold tanks 1 and 3 still at `h`. Tank 2 has no pump, so it
/// is stationary only when the two connecting flows match (`γ1 = γ2` at the
/// default levels); its remaining rate is returned as the third value.
pub fn steady_inflows(h: &Vector3<f64>, gammas: [f64; 3], p: &TankParams) -> Result<(f64, f64, f64)> {
    let zero = tank_derivative(h, 0.0, 0.0, gammas, p)?;
    let q1 = -zero[0] * p.s_area;
    let q2 = -zero[2] * p.s_area;
    Ok((q1, q2, zero[1]))
}

/// Jacobians `(∂ḣ/∂h, ∂ḣ/∂q)` at `h`; independent of `q`.
pub fn linearize(h: &Vector3<f64>, gammas: [f64; 3], p: &TankParams) -> Result<(Matrix3<f64>, Matrix3x2<f64>)> {
    check_finite("tank state", h.iter())?;
    check_levels(h)?;
    let g = p.gravity;
    // d/dx of c·sgn(x)√(2g|x|) is c·g/√(2g|x|)
    let slope = |coef: f64, dh: f64| -> Result<f64> {
        if coef == 0.0 {
            return Ok(0.0);
        }
        if dh == 0.0 {
            return Err(Error::Singular("flow Jacobian at equal levels"));
        }
        Ok(coef * g / (2.0 * g * dh.abs()).sqrt())
    };
    let a12 = slope(gammas[0] * p.sc_area, h[0] - h[1])?;
    let a23 = slope(gammas[1] * p.sc_area, h[1] - h[2])?;
    let a3 = slope(gammas[2] * p.sc_area, h[2])?;
    #[rustfmt::skip]
    let a = Matrix3::new(
        -a12, a12, 0.0,
        a12, -a12 - a23, a23,
        0.0, a23, -a23 - a3,
    ) / p.s_area;
    #[rustfmt::skip]
    let b = Matrix3x2::new(
        1.0, 0.0,
        0.0, 0.0,
        0.0, 1.0,
    ) / p.s_area;
    Ok((a, b))
}

/// Zero-order-hold discretization through the exponential of the augmented
/// matrix `[[A, B], [0, 0]]·dt`.
pub fn discretize(a_c: &DMatrix<f64>, b_c: &DMatrix<f64>, dt: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = a_c.nrows();
    let k = b_c.ncols();
    check_len("state matrix columns", n, a_c.ncols())?;
    check_len("input matrix rows", n, b_c.nrows())?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("sampling time {dt} must be positive")));
    }
    check_finite("state matrices", a_c.iter().chain(b_c.iter()))?;
    let mut aug = DMatrix::zeros(n + k, n + k);
    aug.view_mut((0, 0), (n, n)).copy_from(&(a_c * dt));
    aug.view_mut((0, n), (n, k)).copy_from(&(b_c * dt));
    let e = aug.exp();
    Ok((e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, k)).into_owned()))
}

/// Markov parameters `A^(k−1) B`, `k = 1 … n_taps`, laid out for the FIR
/// regressor of `build_fir_structure(n_u, n_y, n_taps)`.
pub fn true_impulse_response(a_d: &DMatrix<f64>, b_d: &DMatrix<f64>, n_taps: usize) -> Result<ParameterMatrix> {
    let (n_y, n_u) = (b_d.nrows(), b_d.ncols());
    let s = build_fir_structure(n_u, n_y, n_taps)?;
    let mut h = DMatrix::zeros(n_y, n_u * n_taps);
    let mut markov = b_d.clone();
    for k in 0..n_taps {
        for i in 0..n_u {
            h.view_mut((0, i * n_taps + k), (n_y, 1)).copy_from(&markov.column(i));
        }
        markov = a_d * markov;
    }
    ParameterMatrix::new(&s, h)
}

/// Classical Runge–Kutta over `dt` in `substeps` steps, with constant inflows.
/// A level pushed below zero is clamped and logged.
pub fn rk4_step(
    h: &Vector3<f64>,
    q: (f64, f64),
    gammas: [f64; 3],
    p: &TankParams,
    dt: f64,
    substeps: usize,
) -> Result<Vector3<f64>> {
    let f = |x: &Vector3<f64>| tank_derivative(&x.map(|v| v.max(0.0)), q.0, q.1, gammas, p);
    let hs = dt / substeps.max(1) as f64;
    let mut x = *h;
    for _ in 0..substeps.max(1) {
        let k1 = f(&x)?;
        let k2 = f(&(x + k1 * (hs / 2.0)))?;
        let k3 = f(&(x + k2 * (hs / 2.0)))?;
        let k4 = f(&(x + k3 * hs))?;
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hs / 6.0);
        if x.iter().any(|&v| v < 0.0) {
            warn!("clamping negative tank level {:?}", x.as_slice());
            x = x.map(|v| v.max(0.0));
        }
    }
    Ok(x)
}

/// How the sampled truth is generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthMode {
    /// `y(t) = H(t)φ(t)` with `H(t)` the truncated impulse response of the
    /// current linearization.
    #[default]
    Fir,
    /// `x(t+1) = A_d(t)x(t) + B_d(t)u(t)`, `y = x`.
    StateSpace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    /// Level deviations without disturbance or noise.
    pub y_model: DVector<f64>,
    /// `y_model + d`, the output the constraints apply to.
    pub y_true: DVector<f64>,
    /// `y_true + v`.
    pub y_meas: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    #[serde(default)]
    pub params: TankParams,
    pub schedule: ValveSchedule,
    #[serde(default = "default_levels")]
    pub h_star: [f64; 3],
    pub n_taps: usize,
    /// Input unit in cm³/s.
    #[serde(default = "one")]
    pub flow_scale: f64,
    #[serde(default)]
    pub truth: TruthMode,
    pub eps_d: [f64; 3],
    pub eps_v: [f64; 3],
    pub seed: u64,
}

fn default_levels() -> [f64; 3] {
    [8.0, 7.0, 6.0]
}

fn one() -> f64 {
    1.0
}

/// Sampled three-tank simulator in deviation coordinates.
#[derive(Debug, Clone)]
pub struct TankPlant {
    cfg: PlantConfig,
    structure: ModelStructure,
    noise: NoiseBounds,
    step: u64,
    phi: DVector<f64>,
    x: DVector<f64>,
}

impl TankPlant {
    pub fn new(cfg: PlantConfig) -> Result<Self> {
        cfg.params.validate()?;
        if !(cfg.flow_scale > 0.0 && cfg.flow_scale.is_finite()) {
            return Err(Error::InvalidArgument("flow scale must be positive".into()));
        }
        if cfg.h_star.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument("operating levels must be positive".into()));
        }
        let structure = build_fir_structure(2, 3, cfg.n_taps)?;
        let noise = NoiseBounds::new(
            DVector::from_column_slice(&cfg.eps_d),
            DVector::from_column_slice(&cfg.eps_v),
        )?;
        Ok(Self {
            phi: DVector::zeros(structure.m()),
            x: DVector::zeros(3),
            cfg,
            structure,
            noise,
            step: 0,
        })
    }

    pub fn config(&self) -> &PlantConfig {
        &self.cfg
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    pub fn noise(&self) -> &NoiseBounds {
        &self.noise
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Regressor `φ(t)` of past inputs.
    pub fn regressor(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn gammas_at(&self, step: u64) -> Result<[f64; 3]> {
        let (g1, g3) = self.cfg.schedule.at(step as f64 * self.cfg.params.dt)?;
        Ok([g1, self.cfg.params.gamma2, g3])
    }

    /// `(A_d, B_d)` of the linearization at `step`, inputs in `flow_scale` units.
    pub fn discrete_at(&self, step: u64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let h = Vector3::from(self.cfg.h_star);
        let (a, b) = linearize(&h, self.gammas_at(step)?, &self.cfg.params)?;
        let a = DMatrix::from_iterator(3, 3, a.iter().copied());
        let b = DMatrix::from_iterator(3, 2, b.iter().copied()) * self.cfg.flow_scale;
        discretize(&a, &b, self.cfg.params.dt)
    }

    /// `H(t)` for `step`.
    pub fn truth_at(&self, step: u64) -> Result<ParameterMatrix> {
        let (a, b) = self.discrete_at(step)?;
        true_impulse_response(&a, &b, self.cfg.n_taps)
    }

    /// `(d, v)` for `step`, drawn from a stream keyed by the seed and step so
    /// any step can be regenerated on its own.
    pub fn noise_at(&self, step: u64) -> (DVector<f64>, DVector<f64>) {
        let mut rng = ChaCha20Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(step);
        let mut draw = |e: &DVector<f64>| DVector::from_fn(e.len(), |j, _| rng.random_range(-e[j]..=e[j]));
        let d = draw(&self.noise.eps_d);
        let v = draw(&self.noise.eps_v);
        (d, v)
    }

    /// Output at the current step.
    pub fn measure(&self) -> Result<Measurement> {
        let y_model = match self.cfg.truth {
            TruthMode::Fir => &self.truth_at(self.step)?.h * &self.phi,
            TruthMode::StateSpace => self.x.clone(),
        };
        let (d, v) = self.noise_at(self.step);
        let y_true = &y_model + d;
        let y_meas = &y_true + v;
        Ok(Measurement { y_model, y_true, y_meas })
    }

    /// Apply `u(t)` (deviation, `flow_scale` units) and move to `t+1`.
    pub fn apply(&mut self, u: &DVector<f64>) -> Result<()> {
        check_len("plant input", 2, u.len())?;
        check_finite("plant input", u.iter())?;
        if self.cfg.truth == TruthMode::StateSpace {
            let (a, b) = self.discrete_at(self.step)?;
            self.x = a * &self.x + b * u;
        }
        self.phi = crate::model::advance_regressor(&self.structure, &self.phi, u)?;
        self.step += 1;
        Ok(())
    }

    /// Apply `u(t)` and return the measurement at `t+1`.
    pub fn simulate_step(&mut self, u: &DVector<f64>) -> Result<Measurement> {
        self.apply(u)?;
        self.measure()
    }

    /// Absolute levels for a deviation vector.
    pub fn levels(&self, y: &DVector<f64>) -> Vector3<f64> {
        Vector3::from(self.cfg.h_star) + Vector3::from_iterator(y.iter().copied())
    }
}

/// Flows at the operating point for the valve openings of `step`, plus the
/// deviation input converted to cm³/s.
pub fn absolute_inflows(plant: &TankPlant, step: u64, u: &DVector<f64>) -> Result<Vector2<f64>> {
    let (q1, q2, _) = steady_inflows(&Vector3::from(plant.cfg.h_star), plant.gammas_at(step)?, &plant.cfg.params)?;
    Ok(Vector2::new(q1, q2) + Vector2::new(u[0], u[1]) * plant.cfg.flow_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G: [f64; 3] = [0.4, 0.5, 0.3];

    fn p() -> TankParams {
        TankParams::default()
    }

    #[test]
    fn derivative_examples() {
        let z = tank_derivative(&Vector3::zeros(), 0.0, 0.0, G, &p()).unwrap();
        assert_eq!(z, Vector3::zeros());

        let d = tank_derivative(&Vector3::new(8.0, 7.0, 6.0), 0.0, 0.0, G, &p()).unwrap();
        let want = -0.4 * 3.42 * (2.0f64 * 981.0).sqrt() / 375.0;
        assert!((d[0] - want).abs() < 1e-12);
        assert!((d[0] + 0.16157).abs() < 1e-4);

        let e = tank_derivative(&Vector3::new(5.0, 5.0, 5.0), 0.0, 0.0, G, &p()).unwrap();
        assert_eq!((e[0], e[1]), (0.0, 0.0));
        assert!((e[2] + 0.3 * 3.42 * (2.0f64 * 981.0 * 5.0).sqrt() / 375.0).abs() < 1e-12);

        assert!(matches!(
            tank_derivative(&Vector3::new(1.0, -0.1, 1.0), 0.0, 0.0, G, &p()),
            Err(Error::NegativeLevel { tank: 2, .. })
        ));
    }

    #[test]
    fn steady_inflows_plug_back() {
        let h = Vector3::new(8.0, 7.0, 6.0);
        let (q1, q2, r2) = steady_inflows(&h, G, &p()).unwrap();
        let d = tank_derivative(&h, q1, q2, G, &p()).unwrap();
        assert!(d[0].abs() < 1e-10 && d[2].abs() < 1e-10);
        assert!((d[1] - r2).abs() < 1e-15);

        let balanced = [0.5, 0.5, 0.3];
        let (q1, q2, r2) = steady_inflows(&h, balanced, &p()).unwrap();
        assert!(r2.abs() < 1e-12);
        assert!(tank_derivative(&h, q1, q2, balanced, &p()).unwrap().amax() < 1e-10);

        let (q1, _, _) = steady_inflows(&Vector3::new(7.0, 7.5, 6.0), [0.0, 0.5, 0.3], &p()).unwrap();
        assert_eq!(q1, 0.0);
    }

    fn fd_jacobian(h: &Vector3<f64>, g: [f64; 3]) -> Matrix3<f64> {
        let step = 1e-6;
        let mut j = Matrix3::zeros();
        for c in 0..3 {
            let mut hp = *h;
            let mut hm = *h;
            hp[c] += step;
            hm[c] -= step;
            let dp = tank_derivative(&hp, 0.0, 0.0, g, &p()).unwrap();
            let dm = tank_derivative(&hm, 0.0, 0.0, g, &p()).unwrap();
            j.set_column(c, &((dp - dm) / (2.0 * step)));
        }
        j
    }

    #[test]
    fn linearization_structure() {
        let (_, b) = linearize(&Vector3::new(8.0, 7.0, 6.0), G, &p()).unwrap();
        assert_eq!(b, Matrix3x2::new(1.0, 0.0, 0.0, 0.0, 0.0, 1.0) / 375.0);
        let (a, _) = linearize(&Vector3::new(8.0, 7.0, 6.0), [0.0, 0.5, 0.3], &p()).unwrap();
        assert_eq!(a.row(0).amax(), 0.0);
        assert!(linearize(&Vector3::new(7.0, 7.0, 6.0), G, &p()).is_err());
    }

    #[test]
    fn discretize_limits() {
        let b = DMatrix::from_element(2, 1, 1.0);
        let (ad, bd) = discretize(&DMatrix::zeros(2, 2), &b, 0.5).unwrap();
        assert!((ad - DMatrix::<f64>::identity(2, 2)).amax() < 1e-15);
        assert!((bd - &b * 0.5).amax() < 1e-15);
    }

    #[test]
    fn discretize_matches_fine_euler() {
        let (a, b) = linearize(&Vector3::new(8.0, 7.0, 6.0), G, &p()).unwrap();
        let a = DMatrix::from_iterator(3, 3, a.iter().copied());
        let b = DMatrix::from_iterator(3, 2, b.iter().copied());
        let dt = 0.16;
        let (ad, bd) = discretize(&a, &b, dt).unwrap();
        // integrate ẋ = Ax + Bu over dt for x0 = e_i, u = 0 and x0 = 0, u = e_i
        let euler = |n: usize| {
            let h = dt / n as f64;
            let step = DMatrix::<f64>::identity(3, 3) + &a * h;
            let mut phi = DMatrix::<f64>::identity(3, 3);
            let mut gam = DMatrix::<f64>::zeros(3, 2);
            for _ in 0..n {
                gam = &step * gam + &b * h;
                phi = &step * phi;
            }
            (phi, gam)
        };
        // Euler is first order; one Richardson step removes the O(h) term
        let (p1, g1) = euler(2000);
        let (p2, g2) = euler(4000);
        let phi = &p2 * 2.0 - p1;
        let gam = &g2 * 2.0 - g1;
        assert!((ad - phi).amax() < 1e-8);
        assert!((bd - gam).amax() < 1e-8);
    }

    fn plant(truth: TruthMode) -> TankPlant {
        TankPlant::new(PlantConfig {
            params: p(),
            schedule: ValveSchedule::ramp(100.0, (0.4, 0.3), (0.25, 0.45)).unwrap(),
            h_star: [8.0, 7.0, 6.0],
            n_taps: 12,
            flow_scale: 1.0,
            truth,
            eps_d: [0.1; 3],
            eps_v: [0.1; 3],
            seed: 7,
        })
        .unwrap()
    }

    #[test]
    fn fir_truth_matches_state_space_for_frozen_valves() {
        let mut cfg = plant(TruthMode::Fir).config().clone();
        cfg.schedule = ValveSchedule::ramp(100.0, (0.4, 0.3), (0.4, 0.3)).unwrap();
        let mut fir = TankPlant::new(cfg.clone()).unwrap();
        cfg.truth = TruthMode::StateSpace;
        let mut ss = TankPlant::new(cfg).unwrap();
        // a 12-step input history is fully captured by 12 taps
        for t in 0..12 {
            let u = DVector::from_column_slice(&[(t as f64).sin(), (0.3 * t as f64).cos()]);
            let a = fir.simulate_step(&u).unwrap();
            let b = ss.simulate_step(&u).unwrap();
            assert!((a.y_model - b.y_model).amax() < 1e-12, "step {t}");
            assert_eq!(a.y_meas, b.y_meas);
        }
    }

    #[test]
    fn noise_within_bounds_and_reproducible() {
        let pl = plant(TruthMode::Fir);
        for t in 0..20_000u64 {
            let (d, v) = pl.noise_at(t);
            assert!(d.amax() <= 0.1 && v.amax() <= 0.1);
        }
        assert_eq!(pl.noise_at(5), pl.noise_at(5));
        assert_ne!(pl.noise_at(5), pl.noise_at(6));
        let m = pl.measure().unwrap();
        assert_eq!(m.y_model, DVector::zeros(3));
    }

    #[test]
    fn schedule_interpolates_and_ends() {
        let s = ValveSchedule::ramp(10.0, (0.4, 0.3), (0.2, 0.5)).unwrap();
        let (g1, g3) = s.at(5.0).unwrap();
        assert!((g1 - 0.3).abs() < 1e-15 && (g3 - 0.4).abs() < 1e-15);
        assert_eq!(s.at(10.0).unwrap(), (0.2, 0.5));
        assert!(matches!(s.at(10.5), Err(Error::ScheduleExhausted(_))));
        assert!(ValveSchedule::new(vec![]).is_err());
        assert!(ValveSchedule::ramp(10.0, (0.0, 0.3), (0.2, 0.5)).is_err());
    }

    #[test]
    fn impulse_response_layout() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let h = true_impulse_response(&a, &b, 3).unwrap();
        assert_eq!(h.h.as_slice(), &[1.0, 0.5, 0.25, 2.0, 1.0, 0.5]);
        let z = true_impulse_response(&a, &DMatrix::zeros(1, 2), 3).unwrap();
        assert_eq!(z.h, DMatrix::zeros(1, 6));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn jacobian_matches_finite_differences(
            d1 in -0.5f64..0.5, d2 in -0.5f64..0.5, d3 in -0.5f64..0.5,
            g1 in 0.1f64..1.0, g3 in 0.1f64..1.0,
        ) {
            let h = Vector3::new(8.0 + d1, 7.0 + d2, 6.0 + d3);
            let g = [g1, 0.5, g3];
            let (a, _) = linearize(&h, g, &p()).unwrap();
            let fd = fd_jacobian(&h, g);
            prop_assert!((a - fd).amax() <= 1e-5 * a.amax());
        }

        #[test]
        fn total_volume_never_grows_without_inflow(
            h1 in 0.0f64..20.0, h2 in 0.0f64..20.0, h3 in 0.0f64..20.0, g3 in 0.05f64..1.0,
        ) {
            let mut h = Vector3::new(h1, h2, h3);
            for _ in 0..50 {
                let next = rk4_step(&h, (0.0, 0.0), [0.4, 0.5, g3], &p(), 0.16, 4).unwrap();
                prop_assert!(next.sum() <= h.sum() + 1e-9);
                h = next;
            }
        }
    }
}
