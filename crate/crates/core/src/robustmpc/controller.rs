use log::{debug, warn};
use nalgebra::{DMatrix, DVector};

use super::config::{InfeasibilityPolicy, MpcConfig};
use super::fhocp::{build_fhocp, FhocpProblem};
use super::predict::{predict_fps_sequence, PredictedFpsSequence};
use crate::error::{check_len, Error, Result};
use crate::model::{advance_regressor, ModelStructure};
use crate::smident::{
    init_nominal, nominal_model, FeasibleParameterSet, MeasurementRecord, NoiseBounds, NominalModel, PriorSet,
    RateBoundSet,
};
use crate::solvers::SolveStatus;

/// A shifted plan is accepted as a warm start when it violates nothing by
/// more than this.
pub const CANDIDATE_TOL: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlDecision {
    pub step: u64,
    pub u_apply: DVector<f64>,
    pub u_sequence: DVector<f64>,
    /// `ŷ(t+1+i|t)` under the optimal sequence.
    pub predicted_outputs: Vec<DVector<f64>>,
    pub status: SolveStatus,
    pub objective: f64,
    /// Worst constraint violation of the previous plan shifted by one step;
    /// absent on the first step.
    pub candidate_violation: Option<f64>,
    pub candidate_objective: Option<f64>,
    pub cuts: usize,
    pub dual_residual: f64,
    pub restarted: bool,
    pub nominal: DMatrix<f64>,
    /// Largest output-constraint slack; only the soft-constrained baseline
    /// uses it.
    pub max_slack: f64,
    /// The solver failed and a fallback input was applied.
    pub fallback: bool,
}

/// Identifier, nominal model and the last plan, advanced once per sampling
/// step. The controller tracks the regressor itself, assuming every computed
/// input is applied.
#[derive(Debug, Clone)]
pub struct AdaptiveController {
    structure: ModelStructure,
    cfg: MpcConfig,
    rates: RateBoundSet,
    fps: FeasibleParameterSet,
    nominal: NominalModel,
    phi: DVector<f64>,
    u_prev: DVector<f64>,
    last_plan: Option<DVector<f64>>,
    last_sequence: Option<PredictedFpsSequence>,
    last_problem: Option<FhocpProblem>,
    restarts: usize,
}

impl AdaptiveController {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        structure: ModelStructure,
        cfg: MpcConfig,
        prior: PriorSet,
        rates: RateBoundSet,
        noise: NoiseBounds,
        m_cap: usize,
        phi0: DVector<f64>,
        u_prev: DVector<f64>,
    ) -> Result<Self> {
        cfg.validate(&structure)?;
        check_len("prior outputs", structure.n_y(), prior.n_y())?;
        check_len("prior dimension", structure.m(), prior.m())?;
        check_len("rate bound outputs", structure.n_y(), rates.n_y())?;
        check_len("rate bound dimension", structure.m(), rates.m())?;
        check_len("noise bounds", structure.n_y(), noise.n_y())?;
        check_len("initial regressor", structure.m(), phi0.len())?;
        check_len("initial input", structure.n_u(), u_prev.len())?;
        let nominal = init_nominal(&prior)?;
        let fps = FeasibleParameterSet::new(prior, noise, m_cap)?;
        Ok(Self {
            structure,
            cfg,
            rates,
            fps,
            nominal,
            phi: phi0,
            u_prev,
            last_plan: None,
            last_sequence: None,
            last_problem: None,
            restarts: 0,
        })
    }

    pub fn structure(&self) -> &ModelStructure {
        &self.structure
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn fps(&self) -> &FeasibleParameterSet {
        &self.fps
    }

    pub fn nominal(&self) -> &NominalModel {
        &self.nominal
    }

    /// `φ(t)` for the next call to [`step`](Self::step).
    pub fn regressor(&self) -> &DVector<f64> {
        &self.phi
    }

    pub fn previous_input(&self) -> &DVector<f64> {
        &self.u_prev
    }

    pub fn last_sequence(&self) -> Option<&PredictedFpsSequence> {
        self.last_sequence.as_ref()
    }

    pub fn last_problem(&self) -> Option<&FhocpProblem> {
        self.last_problem.as_ref()
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    /// The previous plan shifted by one step, its last input repeated.
    fn shifted_plan(&self) -> Option<DVector<f64>> {
        let plan = self.last_plan.as_ref()?;
        let n_u = self.structure.n_u();
        let n = plan.len();
        Some(DVector::from_fn(n, |i, _| if i + n_u < n { plan[i + n_u] } else { plan[i] }))
    }

    /// One sampling step: take `ỹ(t)`, update the identifier and nominal
    /// model, and solve for the input to apply. `y_des[i]` is the target for
    /// `t+1+i`.
    pub fn step(&mut self, t: u64, y_meas: &DVector<f64>, y_des: &[DVector<f64>]) -> Result<ControlDecision> {
        let rec = MeasurementRecord::new(self.phi.clone(), y_meas.clone(), t, &self.rates)?;
        self.fps.ingest_measurement(rec.clone())?;
        let mut restarted = false;
        let nominal = match nominal_model(&self.fps, &self.nominal) {
            Ok(n) => n,
            Err(Error::EmptyFeasibleSet { output }) => match self.cfg.policy {
                InfeasibilityPolicy::FailFast => return Err(Error::EmptyFeasibleSet { output }),
                InfeasibilityPolicy::RestartIdentifier => {
                    warn!("step {t}: feasible parameter set empty for output {}, restarting", output + 1);
                    self.fps.reset_to_prior();
                    self.fps.ingest_measurement(rec)?;
                    self.restarts += 1;
                    restarted = true;
                    nominal_model(&self.fps, &self.nominal)?
                }
            },
            Err(e) => return Err(e),
        };

        let seq = predict_fps_sequence(&self.fps, self.fps.prior(), self.cfg.horizon)?;
        let problem = build_fhocp(
            &self.cfg,
            &self.structure,
            &nominal.h_c.h,
            &seq,
            &self.fps.noise().eps_d,
            y_meas,
            &self.phi,
            &self.u_prev,
            y_des,
        )?;

        let shifted = self.shifted_plan();
        let candidate_violation = match &shifted {
            Some(c) => Some(problem.max_violation(c)?),
            None => None,
        };
        let candidate_objective = shifted.as_ref().map(|c| problem.objective(c));
        let warm = match (&shifted, candidate_violation) {
            (Some(c), Some(v)) if v <= CANDIDATE_TOL => Some(c.clone()),
            (Some(_), Some(v)) => {
                warn!("step {t}: shifted plan violates constraints by {v:e}");
                None
            }
            _ => {
                let hold = problem.hold_input();
                (problem.max_violation(&hold)? <= CANDIDATE_TOL).then_some(hold)
            }
        };

        let sol = problem.solve(self.cfg.strategy, warm.as_ref())?;
        match sol.status {
            SolveStatus::Optimal => {}
            SolveStatus::Infeasible => return Err(Error::RecursiveFeasibilityBreach { step: t }),
            other => return Err(Error::Solver(format!("step {t}: control problem ended {}", other.as_str()))),
        }
        debug!("step {t}: cost {:.6e}, {} cuts", sol.objective, sol.cuts);

        let n_u = self.structure.n_u();
        let u_apply = sol.u.rows(0, n_u).into_owned();
        let decision = ControlDecision {
            step: t,
            u_apply: u_apply.clone(),
            predicted_outputs: problem.predicted_outputs(&sol.u),
            u_sequence: sol.u.clone(),
            status: sol.status,
            objective: sol.objective,
            candidate_violation,
            candidate_objective,
            cuts: sol.cuts,
            dual_residual: sol.dual_residual,
            restarted,
            nominal: nominal.h_c.h.clone(),
            max_slack: 0.0,
            fallback: false,
        };
        self.phi = advance_regressor(&self.structure, &self.phi, &u_apply)?;
        self.u_prev = u_apply;
        self.last_plan = Some(sol.u);
        self.nominal = nominal;
        self.last_sequence = Some(seq);
        self.last_problem = Some(problem);
        Ok(decision)
    }
}

pub fn step_controller(
    ctrl: &mut AdaptiveController,
    t: u64,
    y_meas: &DVector<f64>,
    y_des: &[DVector<f64>],
) -> Result<ControlDecision> {
    ctrl.step(t, y_meas, y_des)
}
