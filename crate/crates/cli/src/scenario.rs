//! Scenario files: plant, controller tuning, uncertainty description and
//! reference, all in one JSON document.

use std::path::Path;

use adaptive_mpc::model::ParameterMatrix;
use adaptive_mpc::plant::{PlantConfig, TankPlant};
use adaptive_mpc::robustmpc::{InfeasibilityPolicy, MpcConfig, SolveStrategy};
use adaptive_mpc::smident::{PriorSet, RateBoundSet};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSpec {
    pub horizon: usize,
    /// Measurement-pair cap `M`; the identifier keeps `M/2` slabs.
    pub m_cap: usize,
    pub q_diag: Vec<f64>,
    pub s_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub cu: Vec<Vec<f64>>,
    pub gu: Vec<f64>,
    pub cdu: Vec<Vec<f64>>,
    pub gdu: Vec<f64>,
    pub cy: Vec<Vec<f64>>,
    pub gy: Vec<f64>,
    #[serde(default)]
    pub policy: InfeasibilityPolicy,
    #[serde(default)]
    pub strategy: SolveStrategy,
}

/// How Ω and the rate bounds are drawn around the truth trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UncertaintySpec {
    /// Relative widening of each coefficient's range over the schedule.
    pub prior_margin: f64,
    /// Absolute widening, relative to the largest coefficient.
    pub prior_floor: f64,
    /// Multiplies the final box about the origin; 1 for the derived set.
    #[serde(default = "one")]
    pub prior_scale: f64,
    /// Relative widening of the largest per-step change.
    pub rate_margin: f64,
    /// Absolute floor on every rate bound, relative to the largest coefficient.
    pub rate_floor: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    /// 1-based output index that follows `levels`; the others stay at zero.
    pub output: usize,
    /// Piecewise-constant deviations over equal parts of the run.
    pub levels: Vec<f64>,
    /// Use future reference samples over the horizon instead of holding the
    /// current one.
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSpec {
    pub forgetting: f64,
    pub p0: f64,
    /// Slack weight; defaults to `10³·max(Q)`.
    #[serde(default)]
    pub rho: Option<f64>,
}

impl Default for BaselineSpec {
    fn default() -> Self {
        Self {
            forgetting: 0.9,
            p0: 1e3,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub steps: usize,
    pub plant: PlantConfig,
    pub controller: ControllerSpec,
    pub uncertainty: UncertaintySpec,
    pub reference: ReferenceSpec,
    #[serde(default)]
    pub baseline: BaselineSpec,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::Config(format!("{name}: rows must be nonempty and of equal length")));
    }
    Ok(DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]))
}

fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(v))
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let s: Scenario = serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(CliError::Config("steps must be at least 1".into()));
        }
        if self.reference.levels.is_empty() || !(1..=3).contains(&self.reference.output) {
            return Err(CliError::Config("reference needs levels and an output in 1..=3".into()));
        }
        let u = &self.uncertainty;
        for (name, v) in [
            ("prior_margin", u.prior_margin),
            ("prior_floor", u.prior_floor),
            ("rate_margin", u.rate_margin),
            ("rate_floor", u.rate_floor),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!("{name} must be nonnegative")));
            }
        }
        if !(u.prior_scale > 0.0) || !(u.rate_floor > 0.0) {
            return Err(CliError::Config("prior_scale and rate_floor must be positive".into()));
        }
        Ok(())
    }

    pub fn plant(&self, seed: Option<u64>) -> Result<TankPlant> {
        let mut cfg = self.plant.clone();
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(TankPlant::new(cfg)?)
    }

    pub fn mpc_config(&self) -> Result<MpcConfig> {
        let c = &self.controller;
        Ok(MpcConfig {
            horizon: c.horizon,
            q_weight: diag(&c.q_diag),
            s_weight: diag(&c.s_diag),
            r_weight: diag(&c.r_diag),
            cu_matrix: matrix("cu", &c.cu)?,
            gu_vector: DVector::from_column_slice(&c.gu),
            cdu_matrix: matrix("cdu", &c.cdu)?,
            gdu_vector: DVector::from_column_slice(&c.gdu),
            cy_matrix: matrix("cy", &c.cy)?,
            gy_vector: DVector::from_column_slice(&c.gy),
            task_horizon: self.steps,
            policy: c.policy,
            strategy: c.strategy,
        })
    }

    /// Number of sampling steps the valve schedule covers.
    pub fn schedule_steps(&self) -> usize {
        (self.plant.schedule.end_time() / self.plant.params.dt + 1e-9).floor() as usize
    }

    /// `H(t)` for every step the schedule covers.
    pub fn truth_trajectory(&self, plant: &TankPlant) -> Result<Vec<ParameterMatrix>> {
        (0..=self.schedule_steps() as u64)
            .map(|t| plant.truth_at(t).map_err(CliError::from))
            .collect()
    }

    /// Ω and the rate bounds implied by the uncertainty description.
    pub fn uncertainty_sets(&self, truths: &[ParameterMatrix]) -> Result<(PriorSet, RateBoundSet)> {
        let first = &truths
            .first()
            .ok_or_else(|| CliError::Config("valve schedule covers no steps".into()))?
            .h;
        let (n_y, m) = first.shape();
        let u = &self.uncertainty;
        let mut lo = first.clone();
        let mut hi = first.clone();
        let mut rate = DMatrix::<f64>::zeros(n_y, m);
        for w in truths.windows(2) {
            rate = rate.zip_map(&(&w[1].h - &w[0].h), |a, b| a.max(b.abs()));
        }
        for h in truths {
            lo = lo.zip_map(&h.h, f64::min);
            hi = hi.zip_map(&h.h, f64::max);
        }
        let scale = truths.iter().map(|h| h.h.amax()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let widen = |l: f64, h: f64| {
            let pad = u.prior_margin * l.abs().max(h.abs()) + u.prior_floor * scale;
            ((l - pad) * u.prior_scale, (h + pad) * u.prior_scale)
        };
        let mut a0 = Vec::with_capacity(n_y);
        let mut b0 = Vec::with_capacity(n_y);
        let mut k = Vec::with_capacity(n_y);
        let mut l = Vec::with_capacity(n_y);
        for j in 0..n_y {
            let mut a = DMatrix::zeros(2 * m, m);
            let mut b = DVector::zeros(2 * m);
            let mut lvec = DVector::zeros(2 * m);
            for i in 0..m {
                let (x, y) = widen(lo[(j, i)], hi[(j, i)]);
                a[(2 * i, i)] = 1.0;
                a[(2 * i + 1, i)] = -1.0;
                b[2 * i] = y;
                b[2 * i + 1] = -x;
                let d = rate[(j, i)] * (1.0 + u.rate_margin) + u.rate_floor * scale;
                lvec[2 * i] = d;
                lvec[2 * i + 1] = d;
            }
            k.push(a.clone());
            a0.push(a);
            b0.push(b);
            l.push(lvec);
        }
        Ok((PriorSet::new(a0, b0)?, RateBoundSet::new(k, l)?))
    }

    /// Reference deviation vector at `step` of a `total`-step run.
    pub fn reference_at(&self, step: usize, total: usize) -> DVector<f64> {
        let levels = &self.reference.levels;
        let idx = (step * levels.len() / total.max(1)).min(levels.len() - 1);
        let mut r = DVector::zeros(3);
        r[self.reference.output - 1] = levels[idx];
        r
    }

    /// `y_des(t+1+i|t)`, `i = 0 … N−1`.
    pub fn reference_window(&self, step: usize, total: usize) -> Vec<DVector<f64>> {
        let n = self.controller.horizon;
        if self.reference.preview {
            (0..n).map(|i| self.reference_at(step + 1 + i, total)).collect()
        } else {
            vec![self.reference_at(step, total); n]
        }
    }
}
