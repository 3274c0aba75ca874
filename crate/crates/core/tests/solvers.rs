use adaptive_mpc::solvers::{
    enumerate_vertices, solve_lp, solve_qp, LinearProgram, QuadraticProgram, SolveStatus, DEFAULT_TOL,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random bounded polytope: a box plus random cuts that keep the origin inside.
fn random_polytope(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let extra = rng.random_range(1..=4);
    let rows = 2 * n + extra;
    let mut g = DMatrix::zeros(rows, n);
    let mut h = DVector::zeros(rows);
    for i in 0..n {
        g[(2 * i, i)] = 1.0;
        g[(2 * i + 1, i)] = -1.0;
        h[2 * i] = rng.random_range(0.5..2.0);
        h[2 * i + 1] = rng.random_range(0.5..2.0);
    }
    for r in 2 * n..rows {
        for c in 0..n {
            g[(r, c)] = rng.random_range(-1.0..1.0);
        }
        h[r] = rng.random_range(0.1..1.0);
    }
    (g, h)
}

fn vertex_extreme(vs: &[DVector<f64>], c: &DVector<f64>, maximize: bool) -> f64 {
    let vals = vs.iter().map(|v| c.dot(v));
    if maximize {
        vals.fold(f64::NEG_INFINITY, f64::max)
    } else {
        vals.fold(f64::INFINITY, f64::min)
    }
}

#[test]
fn lp_matches_vertex_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..100 {
        let n = 1 + trial % 4;
        let (g, h) = random_polytope(&mut rng, n);
        let c = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let vs = enumerate_vertices(&g, &h).unwrap();
        assert!(!vs.is_empty());
        for maximize in [true, false] {
            let lp = if maximize {
                LinearProgram::maximize(c.clone(), g.clone(), h.clone())
            } else {
                LinearProgram::minimize(c.clone(), g.clone(), h.clone())
            };
            let r = solve_lp(&lp, DEFAULT_TOL).unwrap();
            assert_eq!(r.status, SolveStatus::Optimal);
            let oracle = vertex_extreme(&vs, &c, maximize);
            assert!((r.objective - oracle).abs() <= 1e-8, "trial {trial}: {} vs {}", r.objective, oracle);
            // strong duality: for max, hᵀy = optimum; for min, -hᵀy = optimum
            let dual = if maximize { h.dot(&r.dual_ineq) } else { -h.dot(&r.dual_ineq) };
            assert!((dual - r.objective).abs() <= 2.0 * DEFAULT_TOL);
        }
    }
}

#[test]
fn lp_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (g, h) = random_polytope(&mut rng, 4);
    let c = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
    let lp = LinearProgram::maximize(c, g, h);
    let a = solve_lp(&lp, DEFAULT_TOL).unwrap();
    let b = solve_lp(&lp, DEFAULT_TOL).unwrap();
    assert_eq!(a.solution.as_slice(), b.solution.as_slice());
    assert_eq!(a.dual_ineq.as_slice(), b.dual_ineq.as_slice());
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn unconstrained_linear_objective_is_unbounded() {
    let lp = LinearProgram::minimize(DVector::from_element(2, 1.0), DMatrix::zeros(0, 2), DVector::zeros(0));
    assert_eq!(solve_lp(&lp, DEFAULT_TOL).unwrap().status, SolveStatus::Unbounded);
}

/// Projected gradient descent on a box, iterated until it stops moving.
fn projected_gradient(p: &DMatrix<f64>, q: &DVector<f64>, lo: f64, hi: f64) -> DVector<f64> {
    let lmax = p.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lmax;
    let mut x = DVector::zeros(q.len());
    for _ in 0..200_000 {
        let grad = p * &x + q;
        let next = (&x - grad * step).map(|v| v.clamp(lo, hi));
        let moved = (&next - &x).amax();
        x = next;
        if moved < 1e-15 {
            break;
        }
    }
    x
}

fn box_rows(n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let mut g = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        g[(2 * i, i)] = 1.0;
        g[(2 * i + 1, i)] = -1.0;
    }
    (g, DVector::from_element(2 * n, 1.0))
}

#[test]
fn qp_matches_projected_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 5;
    for trial in 0..100 {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = a.transpose() * &a + DMatrix::identity(n, n) * 0.2;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let (g, h) = box_rows(n);
        let r = solve_qp(&QuadraticProgram::new(p.clone(), q.clone()).with_inequalities(g, h), DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let oracle = projected_gradient(&p, &q, -1.0, 1.0);
        assert!((r.solution.clone() - &oracle).amax() <= 1e-8, "trial {trial}: {} vs {}", r.solution, oracle);
    }
}

#[test]
fn qp_kkt_residuals() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let n = 4;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = a.transpose() * &a;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let (mut g, mut h) = box_rows(n);
        g = g.insert_row(0, 0.0);
        g.row_mut(0).copy_from(&DMatrix::from_element(1, n, 1.0));
        h = h.insert_row(0, 0.5);
        let e = DMatrix::from_fn(1, n, |_, j| if j == 0 { 1.0 } else { -1.0 });
        let f = DVector::from_element(1, 0.1);
        let qp = QuadraticProgram::new(p.clone(), q.clone())
            .with_inequalities(g.clone(), h.clone())
            .with_equalities(e.clone(), f.clone());
        let r = solve_qp(&qp, DEFAULT_TOL).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        let x = &r.solution;
        let station = &p * x + &q + g.tr_mul(&r.dual_ineq) + e.tr_mul(&r.dual_eq);
        assert!(station.amax() <= DEFAULT_TOL * 10.0);
        assert!(qp.max_violation(x) <= DEFAULT_TOL);
        assert!(r.dual_ineq.iter().all(|&m| m >= -DEFAULT_TOL));
        let slack = &h - &g * x;
        assert!(slack.component_mul(&r.dual_ineq).amax() <= DEFAULT_TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lp_strong_duality(seed in any::<u64>(), n in 1usize..=5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, h) = random_polytope(&mut rng, n);
        let c = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let r = solve_lp(&LinearProgram::minimize(c.clone(), g.clone(), h.clone()), DEFAULT_TOL).unwrap();
        prop_assert_eq!(r.status, SolveStatus::Optimal);
        prop_assert!((r.objective + h.dot(&r.dual_ineq)).abs() <= 2.0 * DEFAULT_TOL);
        prop_assert!((c + g.tr_mul(&r.dual_ineq)).amax() <= DEFAULT_TOL);
        prop_assert!(r.dual_ineq.iter().all(|&v| v >= 0.0));
    }
}
