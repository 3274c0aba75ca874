//! Scenario checks: the truth parameters stay inside Ω and move no faster
//! than the rate bounds allow, at every step the schedule covers.

use serde::Serialize;

use crate::error::Result;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Serialize)]
pub struct StepMargin {
    pub step: usize,
    /// `min(b − A·H(t))` over Ω; negative means `H(t) ∉ Ω`.
    pub prior_margin: f64,
    /// Same for `H(t+1) − H(t)` against the rate bounds; absent on the last step.
    pub rate_margin: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub scenario: String,
    pub steps: usize,
    pub passed: bool,
    pub min_prior_margin: f64,
    pub min_rate_margin: f64,
    /// First step that breaks either condition, with the condition's name.
    pub first_failure: Option<(usize, String)>,
    pub margins: Vec<StepMargin>,
}

/// Checks `scenario`; the run length must also fit inside the schedule.
pub fn validate_scenario(scenario: &Scenario) -> Result<ValidationReport> {
    let plant = scenario.plant(None)?;
    let truths = scenario.truth_trajectory(&plant)?;
    let (prior, rates) = scenario.uncertainty_sets(&truths)?;
    let mut margins = Vec::with_capacity(truths.len());
    let mut first_failure = None;
    if scenario.steps > scenario.schedule_steps() {
        first_failure = Some((
            scenario.schedule_steps() + 1,
            format!(
                "valve schedule covers {} steps, run needs {}",
                scenario.schedule_steps(),
                scenario.steps
            ),
        ));
    }
    for (t, h) in truths.iter().enumerate() {
        let prior_margin = -prior.max_violation(&h.h);
        let rate_margin = truths.get(t + 1).map(|next| -rates.max_violation(&(&next.h - &h.h)));
        if first_failure.is_none() {
            if prior_margin < 0.0 {
                first_failure = Some((t, "truth outside the prior set".to_string()));
            } else if rate_margin.is_some_and(|r| r < 0.0) {
                first_failure = Some((t, "parameter change exceeds the rate bounds".to_string()));
            }
        }
        margins.push(StepMargin {
            step: t,
            prior_margin,
            rate_margin,
        });
    }
    let min_prior_margin = margins.iter().map(|m| m.prior_margin).fold(f64::INFINITY, f64::min);
    let min_rate_margin = margins
        .iter()
        .filter_map(|m| m.rate_margin)
        .fold(f64::INFINITY, f64::min);
    Ok(ValidationReport {
        scenario: scenario.name.clone(),
        steps: truths.len(),
        passed: first_failure.is_none(),
        min_prior_margin,
        min_rate_margin,
        first_failure,
        margins,
    })
}
