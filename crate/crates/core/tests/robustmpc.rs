use adaptive_mpc::model::build_fir_structure;
use adaptive_mpc::robustmpc::{AdaptiveController, InfeasibilityPolicy, MpcConfig, PredictedFpsSequence, SolveStrategy};
use adaptive_mpc::smident::{NoiseBounds, PriorSet, RateBoundSet};
use adaptive_mpc::solvers::polytope::containment_violation;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn pm(n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        m[(2 * i, i)] = 1.0;
        m[(2 * i + 1, i)] = -1.0;
    }
    m
}

fn config(horizon: usize, ymax: f64, strategy: SolveStrategy) -> MpcConfig {
    MpcConfig {
        horizon,
        q_weight: DMatrix::identity(1, 1),
        s_weight: DMatrix::identity(1, 1) * 0.1,
        r_weight: DMatrix::identity(1, 1) * 0.1,
        cu_matrix: pm(1),
        gu_vector: v(&[2.0, 2.0]),
        cdu_matrix: pm(1),
        gdu_vector: v(&[0.5, 0.5]),
        cy_matrix: pm(1),
        gy_vector: v(&[ymax, ymax]),
        task_horizon: 1000,
        policy: InfeasibilityPolicy::FailFast,
        strategy,
    }
}

fn nested(prev: &PredictedFpsSequence, cur: &PredictedFpsSequence) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..cur.horizon() - 1 {
        let (inner, outer) = (&cur.sets[i], &prev.sets[i + 1]);
        for j in 0..inner.n_y() {
            let w = containment_violation(&inner.a[j], &inner.b[j], &outer.a[j], &outer.b[j]).unwrap();
            worst = worst.max(w);
        }
    }
    worst
}

/// Drifting two-tap plant driven by the adaptive controller; checks the
/// closed-loop invariants at every step.
fn closed_loop(seed: u64, steps: u64, strategy: SolveStrategy) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = build_fir_structure(1, 1, 2).unwrap();
    let (eps_d, eps_v, rate) = (0.02, 0.02, 0.01);
    let prior = PriorSet::boxed(1, &v(&[0.0, 0.0]), &v(&[1.0, 1.0])).unwrap();
    let rates = RateBoundSet::symmetric_box(1, &v(&[rate, rate])).unwrap();
    let noise = NoiseBounds::new(v(&[eps_d]), v(&[eps_v])).unwrap();
    let ymax = rng.random_range(0.6..1.5);
    let mut ctrl = AdaptiveController::new(
        s,
        config(4, ymax, strategy),
        prior.clone(),
        rates.clone(),
        noise,
        12,
        DVector::zeros(2),
        v(&[0.0]),
    )
    .unwrap();
    let mut h = DMatrix::from_row_slice(1, 2, &[rng.random_range(0.2..0.8), rng.random_range(0.1..0.6)]);
    let mut prev: Option<PredictedFpsSequence> = None;
    let mut target = 0.0;
    for t in 0..steps {
        if t % 8 == 0 {
            target = rng.random_range(-2.0..2.0);
        }
        let y_true = &h * ctrl.regressor() + v(&[rng.random_range(-eps_d..eps_d)]);
        let y_meas = &y_true + v(&[rng.random_range(-eps_v..eps_v)]);
        assert!(y_true[0].abs() <= ymax + 1e-9, "step {t}: output {} beyond {ymax}", y_true[0]);
        let d = ctrl.step(t, &y_meas, &vec![v(&[target]); 4]).unwrap();
        assert!(ctrl.fps().max_violation(&h) <= 1e-9, "step {t}: truth left the set");
        if let Some(cv) = d.candidate_violation {
            assert!(cv <= 1e-7, "step {t}: candidate violation {cv}");
        }
        let seq = ctrl.last_sequence().cloned().unwrap();
        if let Some(p) = &prev {
            assert!(nested(p, &seq) <= 1e-9, "step {t}: predicted sets not nested");
        }
        prev = Some(seq);
        // next truth: bounded drift, clipped to the prior box
        h = h.map(|x| (x + rng.random_range(-rate..rate)).clamp(0.0, 1.0));
        assert!(prior.max_violation(&h) <= 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn drifting_plant_invariants(seed in any::<u64>()) {
        closed_loop(seed, 30, SolveStrategy::CuttingPlane);
    }
}

#[test]
fn monolithic_strategy_keeps_the_invariants() {
    closed_loop(17, 20, SolveStrategy::Monolithic);
}
