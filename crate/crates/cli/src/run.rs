//! Closed-loop runs: plant plus controller, one CSV row per step, and an
//! audit of the invariants the adaptive controller must keep.

use std::path::{Path, PathBuf};
use std::time::Instant;

use adaptive_mpc::baseline::{default_slack_weight, BaselineController, RlsState};
use adaptive_mpc::plant::TankPlant;
use adaptive_mpc::robustmpc::controller::ControlDecision;
use adaptive_mpc::robustmpc::fhocp::direct_cost;
use adaptive_mpc::robustmpc::{AdaptiveController, PredictedFpsSequence};
use adaptive_mpc::smident::{init_nominal, FeasibleParameterSet};
use adaptive_mpc::solvers::polytope::{containment_violation, support};
use log::{info, warn};
use nalgebra::DVector;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::scenario::Scenario;

/// Tolerances for the audit.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
pub const NESTED_TOL: f64 = 1e-9;
pub const CANDIDATE_TOL: f64 = 1e-7;
pub const ENVELOPE_TOL: f64 = 1e-6;
pub const COST_TOL: f64 = 1e-8;
const OUTPUT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ControllerChoice {
    Adaptive,
    Baseline,
    Both,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub controller: ControllerChoice,
    pub steps: Option<usize>,
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub audit: bool,
    /// Nestedness and cost checks run every this many steps.
    pub audit_stride: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AdaptiveAudit {
    pub membership_checks: usize,
    pub membership_violations: usize,
    pub max_membership_violation: f64,
    pub nestedness_checks: usize,
    pub nestedness_violations: usize,
    pub max_nestedness_violation: f64,
    pub candidate_checks: usize,
    pub candidate_violations: usize,
    pub max_candidate_violation: f64,
    pub m_cap: usize,
    pub max_rows_over_prior: usize,
    pub complexity_violations: usize,
    pub envelope_violations: usize,
    pub max_envelope_excess: f64,
    pub cost_checks: usize,
    pub max_cost_mismatch: f64,
    pub max_dual_residual: f64,
    pub feasibility_breaches: usize,
    pub restarts: usize,
    pub total_cuts: usize,
}

impl AdaptiveAudit {
    pub fn clean(&self) -> bool {
        self.membership_violations == 0
            && self.nestedness_violations == 0
            && self.candidate_violations == 0
            && self.complexity_violations == 0
            && self.envelope_violations == 0
            && self.feasibility_breaches == 0
            && self.max_cost_mismatch <= COST_TOL
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BaselineAudit {
    pub fallbacks: usize,
    pub max_slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct WallStats {
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub controller: ControllerChoice,
    pub seed: u64,
    pub steps_requested: usize,
    pub steps_completed: usize,
    /// Steps at which `C_y y(t) > g_y` for some row.
    pub output_violation_steps: usize,
    pub max_output_violation: f64,
    pub error: Option<String>,
    pub wall: WallStats,
    pub adaptive: Option<AdaptiveAudit>,
    pub baseline: Option<BaselineAudit>,
    pub csv: String,
}

impl RunReport {
    /// Whether the run broke an invariant the adaptive controller guarantees.
    pub fn breached(&self) -> bool {
        match &self.adaptive {
            Some(a) => !a.clean() || self.error.is_some() || self.output_violation_steps > 0,
            None => self.error.is_some(),
        }
    }
}

fn fmt(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        String::new()
    }
}

const HEADER: [&str; 30] = [
    "step", "time_s", "seed", "h1", "h2", "h3", "h1_meas", "h2_meas", "h3_meas", "u1", "u2", "ref1", "ref2", "ref3",
    "status", "objective", "r1", "r2", "r3", "env1_lo", "env1_hi", "env2_lo", "env2_hi", "env3_lo", "env3_hi",
    "violated_rows", "cuts", "slack", "restarted", "fallback",
];

struct Row<'a> {
    step: u64,
    plant: &'a TankPlant,
    y_true: &'a DVector<f64>,
    y_meas: &'a DVector<f64>,
    reference: &'a DVector<f64>,
    decision: &'a ControlDecision,
    rows: Option<[usize; 3]>,
    envelope: Option<[(f64, f64); 3]>,
    violated: usize,
}

impl Row<'_> {
    fn record(&self) -> Vec<String> {
        let cfg = self.plant.config();
        let h = self.plant.levels(self.y_true);
        let hm = self.plant.levels(self.y_meas);
        let r = self.plant.levels(self.reference);
        let d = self.decision;
        let mut out = vec![
            self.step.to_string(),
            fmt(self.step as f64 * cfg.params.dt),
            cfg.seed.to_string(),
        ];
        out.extend(h.iter().chain(hm.iter()).map(|&x| fmt(x)));
        out.extend(d.u_apply.iter().map(|&x| fmt(x)));
        out.extend(r.iter().map(|&x| fmt(x)));
        out.push(d.status.as_str().to_string());
        out.push(fmt(d.objective));
        match self.rows {
            Some(rs) => out.extend(rs.iter().map(|r| r.to_string())),
            None => out.extend(std::iter::repeat_n(String::new(), 3)),
        }
        match self.envelope {
            Some(env) => {
                for (j, (lo, hi)) in env.iter().enumerate() {
                    out.push(fmt(cfg.h_star[j] + lo));
                    out.push(fmt(cfg.h_star[j] + hi));
                }
            }
            None => out.extend(std::iter::repeat_n(String::new(), 6)),
        }
        out.push(self.violated.to_string());
        out.push(d.cuts.to_string());
        out.push(fmt(d.max_slack));
        out.push(u8::from(d.restarted).to_string());
        out.push(u8::from(d.fallback).to_string());
        out
    }
}

/// `[min, max]` of `H_jᵀφ` over the feasible set, widened by `ε_dj`.
fn envelope(fps: &FeasibleParameterSet, phi: &DVector<f64>) -> Result<[(f64, f64); 3]> {
    let mut out = [(0.0, 0.0); 3];
    for (j, slot) in out.iter_mut().enumerate() {
        let eps = fps.noise().eps_d[j];
        if phi.iter().all(|&v| v == 0.0) {
            *slot = (-eps, eps);
            continue;
        }
        let (a, b) = (fps.a_matrix(j), fps.b_vector(j));
        let empty = || CliError::Core(adaptive_mpc::Error::EmptyFeasibleSet { output: j });
        let hi = support(&a, &b, phi)?.ok_or_else(empty)?.0;
        let lo = -support(&a, &b, &(-phi))?.ok_or_else(empty)?.0;
        *slot = (lo - eps, hi + eps);
    }
    Ok(out)
}

/// `F(k|t) ⊆ F(k|t−1)` for a few `k`; returns the worst violation and the
/// number of `(k, output)` checks.
fn nestedness(prev: &PredictedFpsSequence, cur: &PredictedFpsSequence) -> Result<(f64, usize)> {
    let n = cur.horizon();
    if n < 2 {
        return Ok((f64::NEG_INFINITY, 0));
    }
    let mut ks = vec![0, (n - 2) / 2, n - 2];
    ks.dedup();
    let mut worst = f64::NEG_INFINITY;
    let mut checks = 0;
    for i in ks {
        let (inner, outer) = (&cur.sets[i], &prev.sets[i + 1]);
        for j in 0..inner.n_y() {
            let v = containment_violation(&inner.a[j], &inner.b[j], &outer.a[j], &outer.b[j])?;
            worst = worst.max(v);
            checks += 1;
        }
    }
    Ok((worst, checks))
}

fn output_violation(scenario: &Scenario, y: &DVector<f64>) -> Result<(usize, f64)> {
    let cfg = scenario.mpc_config()?;
    let excess = &cfg.cy_matrix * y - &cfg.gy_vector;
    let rows = excess.iter().filter(|&&e| e > OUTPUT_TOL).count();
    Ok((rows, excess.max()))
}

enum Controller {
    Adaptive(Box<AdaptiveController>),
    Baseline(Box<BaselineController>),
}

/// One closed-loop simulation; the CSV goes to `csv_path`.
pub fn simulate(
    scenario: &Scenario,
    choice: ControllerChoice,
    steps: usize,
    seed: Option<u64>,
    audit_stride: usize,
    csv_path: &Path,
) -> Result<RunReport> {
    let mut plant = scenario.plant(seed)?;
    let cfg = scenario.mpc_config()?;
    let truths = scenario.truth_trajectory(&plant)?;
    let (prior, rates) = scenario.uncertainty_sets(&truths)?;
    let structure = plant.structure().clone();
    let m = structure.m();
    let mut ctrl = match choice {
        ControllerChoice::Adaptive => Controller::Adaptive(Box::new(AdaptiveController::new(
            structure,
            cfg,
            prior,
            rates,
            plant.noise().clone(),
            scenario.controller.m_cap,
            DVector::zeros(m),
            DVector::zeros(2),
        )?)),
        ControllerChoice::Baseline => {
            let b = &scenario.baseline;
            let rls = RlsState::new(init_nominal(&prior)?.h_c.h, b.p0, b.forgetting)?;
            let rho = b.rho.unwrap_or_else(|| default_slack_weight(&cfg));
            Controller::Baseline(Box::new(BaselineController::new(
                structure,
                cfg,
                rls,
                rho,
                DVector::zeros(m),
                DVector::zeros(2),
            )?))
        }
        ControllerChoice::Both => return Err(CliError::Config("simulate runs one controller at a time".into())),
    };

    if let Some(dir) = csv_path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    let mut writer = csv::Writer::from_path(csv_path)?;
    writer.write_record(HEADER)?;

    let mut audit = AdaptiveAudit {
        m_cap: scenario.controller.m_cap,
        max_membership_violation: f64::NEG_INFINITY,
        max_nestedness_violation: f64::NEG_INFINITY,
        max_candidate_violation: f64::NEG_INFINITY,
        max_envelope_excess: f64::NEG_INFINITY,
        ..Default::default()
    };
    let mut base_audit = BaselineAudit::default();
    let mut prev_seq: Option<PredictedFpsSequence> = None;
    let mut violation_steps = 0;
    let mut max_violation = f64::NEG_INFINITY;
    let mut error = None;
    let mut completed = 0;
    let mut wall = Vec::with_capacity(steps);
    let stride = audit_stride.max(1);

    for t in 0..steps {
        let step = t as u64;
        let meas = plant.measure()?;
        let y_des = scenario.reference_window(t, steps);
        let start = Instant::now();
        let result = match &mut ctrl {
            Controller::Adaptive(c) => c.step(step, &meas.y_meas, &y_des),
            Controller::Baseline(c) => c.step(step, &meas.y_meas, &y_des),
        };
        wall.push(start.elapsed().as_secs_f64());
        let decision = match result {
            Ok(d) => d,
            Err(e) => {
                if matches!(e, adaptive_mpc::Error::RecursiveFeasibilityBreach { .. }) {
                    audit.feasibility_breaches += 1;
                }
                warn!("{}: step {t}: {e}", scenario.name);
                error = Some(format!("step {t}: {e}"));
                break;
            }
        };

        let (violated, excess) = output_violation(scenario, &meas.y_true)?;
        max_violation = max_violation.max(excess);
        if violated > 0 {
            violation_steps += 1;
        }

        let mut rows = None;
        let mut env = None;
        match &ctrl {
            Controller::Adaptive(c) => {
                let fps = c.fps();
                let truth = plant.truth_at(step)?;
                let v = fps.max_violation(&truth.h);
                audit.membership_checks += 1;
                audit.max_membership_violation = audit.max_membership_violation.max(v);
                if v > MEMBERSHIP_TOL {
                    audit.membership_violations += 1;
                }
                let mut r = [0; 3];
                for (j, slot) in r.iter_mut().enumerate() {
                    *slot = fps.r(j);
                    let over = fps.r(j) - fps.r0(j);
                    audit.max_rows_over_prior = audit.max_rows_over_prior.max(over);
                    if over > fps.m_cap() {
                        audit.complexity_violations += 1;
                    }
                }
                rows = Some(r);

                // the controller has already advanced its regressor
                let e = envelope(fps, plant.regressor())?;
                for (j, (lo, hi)) in e.iter().enumerate() {
                    let y = meas.y_true[j];
                    let ex = (lo - y).max(y - hi);
                    audit.max_envelope_excess = audit.max_envelope_excess.max(ex);
                    if ex > ENVELOPE_TOL {
                        audit.envelope_violations += 1;
                    }
                }
                env = Some(e);

                if let Some(cv) = decision.candidate_violation {
                    audit.candidate_checks += 1;
                    audit.max_candidate_violation = audit.max_candidate_violation.max(cv);
                    if cv > CANDIDATE_TOL {
                        audit.candidate_violations += 1;
                    }
                }
                audit.max_dual_residual = audit.max_dual_residual.max(decision.dual_residual);
                audit.total_cuts += decision.cuts;
                audit.restarts = c.restarts();

                let seq = c.last_sequence().cloned();
                if t % stride == 0 {
                    if let (Some(prev), Some(cur)) = (&prev_seq, &seq) {
                        let (w, n) = nestedness(prev, cur)?;
                        audit.nestedness_checks += n;
                        audit.max_nestedness_violation = audit.max_nestedness_violation.max(w);
                        if w > NESTED_TOL {
                            audit.nestedness_violations += 1;
                        }
                    }
                    if let Some(p) = c.last_problem() {
                        let direct = direct_cost(
                            c.config(),
                            c.structure(),
                            &p.h_c,
                            &p.d_hat,
                            &p.y_des,
                            &p.u_prev,
                            &p.phi0,
                            &decision.u_sequence,
                        )?;
                        let mismatch = (direct - decision.objective).abs() / (1.0 + direct.abs());
                        audit.cost_checks += 1;
                        audit.max_cost_mismatch = audit.max_cost_mismatch.max(mismatch);
                    }
                }
                prev_seq = seq;
            }
            Controller::Baseline(c) => {
                base_audit.fallbacks = c.fallbacks();
                if decision.max_slack.is_finite() {
                    base_audit.max_slack = base_audit.max_slack.max(decision.max_slack);
                }
            }
        }

        let reference = scenario.reference_at(t, steps);
        let row = Row {
            step,
            plant: &plant,
            y_true: &meas.y_true,
            y_meas: &meas.y_meas,
            reference: &reference,
            decision: &decision,
            rows,
            envelope: env,
            violated,
        };
        writer.write_record(row.record())?;
        plant.apply(&decision.u_apply)?;
        completed += 1;
    }
    writer.flush().map_err(|e| CliError::Io {
        path: csv_path.display().to_string(),
        source: e,
    })?;

    let total: f64 = wall.iter().sum();
    let report = RunReport {
        scenario: scenario.name.clone(),
        controller: choice,
        seed: plant.config().seed,
        steps_requested: steps,
        steps_completed: completed,
        output_violation_steps: violation_steps,
        max_output_violation: max_violation,
        error,
        wall: WallStats {
            mean_step_ms: 1e3 * total / wall.len().max(1) as f64,
            max_step_ms: 1e3 * wall.iter().copied().fold(0.0, f64::max),
            total_s: total,
        },
        adaptive: matches!(choice, ControllerChoice::Adaptive).then_some(audit),
        baseline: matches!(choice, ControllerChoice::Baseline).then_some(base_audit),
        csv: csv_path.display().to_string(),
    };
    info!(
        "{} {:?}: {} steps, {} violation steps, {:.1} ms/step",
        report.scenario, choice, completed, violation_steps, report.wall.mean_step_ms
    );
    Ok(report)
}

/// Runs the requested controllers and writes one CSV and one audit JSON per
/// run. Returns the reports and the process exit code.
pub fn run(config: &RunConfig) -> Result<(Vec<RunReport>, i32)> {
    let scenario = Scenario::load(&config.scenario)?;
    let steps = config.steps.unwrap_or(scenario.steps);
    if steps == 0 {
        return Err(CliError::Config("steps must be at least 1".into()));
    }
    if steps > scenario.schedule_steps() {
        return Err(CliError::Config(format!(
            "valve schedule covers {} steps, {steps} requested",
            scenario.schedule_steps()
        )));
    }
    let choices = match config.controller {
        ControllerChoice::Both => vec![ControllerChoice::Adaptive, ControllerChoice::Baseline],
        c => vec![c],
    };
    let mut reports = Vec::new();
    let mut code = 0;
    for choice in choices {
        let tag = match choice {
            ControllerChoice::Adaptive => "adaptive",
            _ => "baseline",
        };
        let csv_path = config.out_dir.join(format!("{}_{tag}.csv", scenario.name));
        let report = simulate(&scenario, choice, steps, config.seed, config.audit_stride, &csv_path)?;
        let audit_path = config.out_dir.join(format!("{}_{tag}_audit.json", scenario.name));
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        std::fs::write(&audit_path, json).map_err(|e| CliError::Io {
            path: audit_path.display().to_string(),
            source: e,
        })?;
        if config.audit && report.breached() {
            code = 2;
        }
        reports.push(report);
    }
    Ok((reports, code))
}
