use std::sync::Arc;

use cligme::gme::design_b_theta;
use cligme::linop::{self, Operator};
use cligme::prox::{BoxSet, L1Norm};
use cligme::solver::{self, SolverParams, SolverState};
use cligme::{CLigmeProblem, ProductConstraint, Vector};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random 7x5 enhanced problem with a box constraint on `x`.
fn small_problem(seed: u64, theta: f64) -> (CLigmeProblem, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
    // first differences: full row rank 4 x 5
    let l = DMatrix::from_fn(4, 5, |i, j| {
        if j == i + 1 {
            1.0
        } else if j == i {
            -1.0
        } else {
            0.0
        }
    });
    let mu = 0.2;
    let b = design_b_theta(&a, &l, mu, theta).unwrap();
    let y = Vector::from_fn(7, |_, _| rng.random_range(-2.0..2.0));
    let pc = ProductConstraint::new()
        .with(linop::identity(5), Arc::new(BoxSet::new(5, -0.5, 1.0).unwrap()))
        .unwrap();
    let problem = CLigmeProblem::new(
        linop::dense(a.clone()),
        y,
        mu,
        Arc::new(L1Norm { dim: 4 }),
        linop::dense(l.clone()),
        linop::dense(b.clone()),
        pc,
    )
    .unwrap();
    (problem, a, l, b)
}

fn random_state(problem: &CLigmeProblem, rng: &mut ChaCha8Rng, scale: f64) -> SolverState {
    let mut v = |n: usize| Vector::from_fn(n, |_, _| scale * rng.random_range(-1.0..1.0));
    SolverState {
        x: v(problem.x_dim()),
        v: v(problem.z_dim()),
        w: v(problem.zc_dim()),
    }
}

fn soft(z: &Vector, g: f64) -> Vector {
    z.map(|t| t.signum() * (t.abs() - g).max(0.0))
}

#[test]
fn one_step_matches_dense_reimplementation() {
    let (problem, a, l, b) = small_problem(1, 0.8);
    let params = SolverParams::from_kappa(1.3, &problem).unwrap();
    let (mu, sigma, tau) = (problem.mu(), params.sigma, params.tau);
    let g = b.transpose() * &b;
    let lc = {
        let mut m = DMatrix::zeros(9, 5);
        m.view_mut((0, 0), (4, 5)).copy_from(&l);
        m.view_mut((4, 0), (5, 5)).fill_with_identity();
        m
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10 {
        let s = random_state(&problem, &mut rng, 2.0);
        let y = problem.y();
        let xi = &s.x
            - (a.transpose() * (&a * &s.x - y)
                + &l.transpose() * (&g * (&s.v - &l * &s.x)) * mu
                + lc.transpose() * &s.w * mu)
                / sigma;
        let zeta = soft(
            &(&s.v + (&g * (&l * &xi * 2.0 - &l * &s.x - &s.v)) * (mu / tau)),
            mu / tau,
        );
        let u = &lc * &xi * 2.0 - &lc * &s.x + &s.w;
        let mut eta = u.clone();
        let head = soft(&u.rows(0, 4).into_owned(), 1.0);
        let tail = u.rows(4, 5).map(|t| t.clamp(-0.5, 1.0));
        eta.rows_mut(0, 4).copy_from(&(u.rows(0, 4) - head));
        eta.rows_mut(4, 5).copy_from(&(u.rows(4, 5) - tail));

        let t = solver::t_cligme_step(&s, &problem, &params).unwrap();
        assert!((t.x - xi).amax() < 1e-12);
        assert!((t.v - zeta).amax() < 1e-12);
        assert!((t.w - eta).amax() < 1e-12);
    }
}

#[test]
fn p_norm_agrees_with_dense_p() {
    let (problem, ..) = small_problem(3, 1.0);
    let params = SolverParams::from_kappa(1.001, &problem).unwrap();
    let p = solver::p_matrix(&problem, &params).unwrap();
    assert!((&p - p.transpose()).amax() < 1e-14);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..50 {
        let d = random_state(&problem, &mut rng, 1.0);
        let flat = Vector::from_iterator(
            p.nrows(),
            d.x.iter().chain(d.v.iter()).chain(d.w.iter()).copied(),
        );
        let q = flat.dot(&(&p * &flat));
        let n = solver::p_norm(&d, &problem, &params).unwrap();
        assert!(q > 0.0);
        assert!((n * n - q).abs() <= 1e-10 * q.abs().max(1.0));
    }
}

#[test]
fn operator_is_nonexpansive_in_p_metric() {
    for seed in 0..5 {
        let (problem, ..) = small_problem(10 + seed, [0.0, 0.5, 0.9, 1.0, 0.99][seed as usize]);
        let params = SolverParams::from_kappa(1.001, &problem).unwrap();
        assert!(solver::verify_step_condition(&params, &problem));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..40 {
            let s1 = random_state(&problem, &mut rng, 3.0);
            let s2 = random_state(&problem, &mut rng, 3.0);
            let t1 = solver::t_cligme_step(&s1, &problem, &params).unwrap();
            let t2 = solver::t_cligme_step(&s2, &problem, &params).unwrap();
            let before = solver::p_norm(&(&s1 - &s2), &problem, &params).unwrap();
            let after = solver::p_norm(&(&t1 - &t2), &problem, &params).unwrap();
            assert!(after <= before * (1.0 + 1e-10), "{after} > {before}");
        }
    }
}

#[test]
fn residuals_do_not_increase() {
    let (problem, ..) = small_problem(20, 0.9);
    let params = SolverParams::from_kappa(1.001, &problem)
        .unwrap()
        .with_max_iters(3000)
        .with_stop_tol(1e-300);
    let report = solver::solve(&problem, &params, SolverState::zeros(&problem)).unwrap();
    assert!(report.residuals[0] > 1e-2);
    // once the iteration has converged the residuals sit at rounding level
    let floor = 1e-12;
    for (k, pair) in report.residuals.windows(2).enumerate() {
        assert!(pair[1] <= pair[0] * (1.0 + 1e-10) + floor, "k = {k}: {pair:?}");
    }
}

/// Convexity of the certified objective: no feasible perturbation improves
/// a converged solution.
#[test]
fn converged_point_is_feasible_and_locally_optimal() {
    for seed in [30, 31, 32] {
        let (problem, ..) = small_problem(seed, 0.9);
        let params = SolverParams::from_kappa(1.2, &problem)
            .unwrap()
            .with_max_iters(200_000)
            .with_stop_tol(1e-13);
        let report = solver::solve(&problem, &params, SolverState::zeros(&problem)).unwrap();
        assert!(report.converged);
        let x = report.x;
        assert!(problem.constraints().is_satisfied(&x, 1e-6));
        let x = Vector::from_iterator(5, x.iter().map(|t| t.clamp(-0.5, 1.0)));
        let f0 = solver::objective(&problem, &x, 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..200 {
            let d = Vector::from_fn(5, |_, _| rng.random_range(-1e-3..1e-3));
            let xp = (&x + d).map(|t| t.clamp(-0.5, 1.0));
            let f = solver::objective(&problem, &xp, 1e-14);
            assert!(f >= f0 - 1e-8, "seed {seed}: {f} < {f0}");
        }
    }
}

#[test]
fn solution_does_not_depend_on_kappa() {
    let (problem, ..) = small_problem(40, 0.7);
    let sols: Vec<Vector> = [1.001, 1.5, 2.0]
        .iter()
        .map(|&k| {
            let params = SolverParams::from_kappa(k, &problem)
                .unwrap()
                .with_max_iters(300_000)
                .with_stop_tol(1e-14);
            solver::solve(&problem, &params, SolverState::zeros(&problem)).unwrap().x
        })
        .collect();
    for s in &sols[1..] {
        assert!((s - &sols[0]).amax() < 1e-6);
    }
}

#[test]
fn unconstrained_problem_has_no_restraint_block() {
    let a: Operator = linop::identity(3);
    let p = CLigmeProblem::new(
        a,
        Vector::from_vec(vec![1.0, -2.0, 0.1]),
        0.5,
        Arc::new(L1Norm { dim: 3 }),
        linop::identity(3),
        linop::zero(3, 3),
        ProductConstraint::new(),
    )
    .unwrap();
    assert_eq!(p.zc_dim(), p.z_dim());
    let params = SolverParams::from_kappa(1.5, &p).unwrap().with_max_iters(100_000).with_stop_tol(1e-14);
    let x = solver::solve(&p, &params, SolverState::zeros(&p)).unwrap().x;
    // soft thresholding of y at mu
    let expected = [0.5, -1.5, 0.0];
    for (got, want) in x.iter().zip(expected) {
        assert!((got - want).abs() < 1e-8);
    }
}
