mod common;

use common::*;
use concsel::concentration::{
    bounds_at_time, bounds_steady_state, domination_program, rho_star_for_distribution,
    rho_star_joint, AwParameters,
};
use concsel::conic::{solve_checked, SolverSettings};
use concsel::kalman::steady_state;
use concsel::matrix::PsdMatrix;
use concsel::optimizer::{
    grid_search, riccati_block, solve_fallback, solve_steady_state_relaxation_with,
    solve_time_dependent_with, GridMode,
};
use concsel::sampling::RngStream;
use concsel::system::{expected_information, CandidateSensor, Distribution, LtiSystem, SensorPool};
use concsel::Error;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

fn time_objective(sigma_inv: &DMatrix<f64>, pool: &SensorPool, p: &[f64], weight: f64) -> f64 {
    let e = expected_information(pool, &Distribution::new(p.to_vec()).unwrap()).unwrap();
    min_eig(&(sigma_inv + e.as_matrix() * weight))
}

/// Points of the simplex with coordinates on a `1/steps` lattice.
fn simplex_grid(n_c: usize, steps: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n_c];
    fn rec(i: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<Vec<f64>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.iter().map(|&k| k as f64 / steps as f64).collect());
            return;
        }
        for k in 0..=left {
            cur[i] = k;
            rec(i + 1, left - k, cur, steps, out);
        }
    }
    rec(0, steps, &mut cur, steps, &mut out);
    out
}

#[test]
fn fixed_distribution_program_matches_closed_form() {
    let mut rng = RngStream::new(11);
    for _ in 0..20 {
        let m = 1 + rng.next_below(4);
        let n_c = 1 + rng.next_below(10);
        let pool = random_pool(&mut rng, m, n_c);
        let w: Vec<f64> = (0..n_c).map(|_| uniform(&mut rng, 0.05, 1.0)).collect();
        let p = Distribution::from_weights(&w).unwrap();
        let sol = solve_checked(
            &domination_program(&pool, Some(&p)).unwrap(),
            &SolverSettings::default(),
        )
        .unwrap();
        let closed = rho_star_for_distribution(&pool, &p).unwrap();
        assert!(
            (sol.vars[0] - closed).abs() <= 1e-6 * closed.max(1.0),
            "solver {} closed form {}",
            sol.vars[0],
            closed
        );
    }
}

#[test]
fn time_dependent_program_matches_simplex_grid() {
    let mut rng = RngStream::new(5);
    for case in 0..8 {
        let m = 2 + case % 2;
        let n_c = 2 + case % 2;
        let pool = random_pool(&mut rng, m, n_c);
        let sys = random_system(&mut rng, m, 0.9);
        let joint = rho_star_joint(&pool).unwrap();
        let (eps, n_s) = (0.5, 50);
        let rho = joint.rho_star * 1.5;
        let sigma = PsdMatrix::identity(m);
        let sol = solve_time_dependent_with(&joint, &sigma, eps, rho, n_s, &pool, &sys).unwrap();
        let weight = (1.0 - eps) * n_s as f64;
        let mut best = (f64::NEG_INFINITY, vec![]);
        for p in simplex_grid(n_c, 100) {
            let feasible = matches!(rho_star_for_distribution(&pool, &Distribution::new(p.clone()).unwrap()), Ok(r) if r <= rho);
            if feasible {
                let v = time_objective(&DMatrix::identity(m, m), &pool, &p, weight);
                if v > best.0 {
                    best = (v, p);
                }
            }
        }
        assert!(
            sol.lambda >= best.0 - 1e-6 * best.0.max(1.0),
            "case {case}: solver {} below grid {}",
            sol.lambda,
            best.0
        );
        let close_p = sol
            .p
            .as_slice()
            .iter()
            .zip(&best.1)
            .all(|(a, b)| (a - b).abs() <= 0.02);
        let close_obj = (sol.lambda - best.0).abs() <= 1e-4 * best.0.max(1.0);
        assert!(
            close_p || close_obj,
            "case {case}: p* {:?} grid {:?}",
            sol.p.as_slice(),
            best.1
        );
    }
}

#[test]
fn solver_dominates_random_feasible_points() {
    let mut rng = RngStream::new(23);
    let pool = random_pool(&mut rng, 3, 6);
    let sys = random_system(&mut rng, 3, 0.8);
    let joint = rho_star_joint(&pool).unwrap();
    let rho = joint.rho_star * 2.0;
    let (eps, n_s) = (0.4, 80);
    let sigma = PsdMatrix::from_diagonal(&[1.0, 2.0, 0.5]).unwrap();
    let sol = solve_time_dependent_with(&joint, &sigma, eps, rho, n_s, &pool, &sys).unwrap();
    let sigma_inv = sigma.inverse().unwrap();
    let mut checked = 0;
    while checked < 20 {
        let w: Vec<f64> = (0..6).map(|_| uniform(&mut rng, 0.0, 1.0)).collect();
        let p = Distribution::from_weights(&w).unwrap();
        if rho_star_for_distribution(&pool, &p)
            .map(|r| r <= rho)
            .unwrap_or(false)
        {
            let v = time_objective(
                sigma_inv.as_matrix(),
                &pool,
                p.as_slice(),
                (1.0 - eps) * n_s as f64,
            );
            assert!(sol.lambda >= v - 1e-6, "{} < {}", sol.lambda, v);
            checked += 1;
        }
    }
}

#[test]
fn time_dependent_value_is_inverse_of_upper_bound() {
    let mut rng = RngStream::new(31);
    for _ in 0..10 {
        let pool = random_pool(&mut rng, 3, 5);
        let sys = random_system(&mut rng, 3, 1.1);
        let joint = rho_star_joint(&pool).unwrap();
        let n_s = 200;
        let c0 = concsel::concentration::compute_c0(n_s, 3, 0.05).unwrap();
        let rho = joint.rho_star * 1.2;
        let eps = (rho * c0).sqrt();
        let sigma = PsdMatrix::from_diagonal(&[0.7, 1.3, 1.0]).unwrap();
        let sol = solve_time_dependent_with(&joint, &sigma, eps, rho, n_s, &pool, &sys).unwrap();
        let params = AwParameters::new(&pool, n_s, 0.05, eps, sol.p.clone()).unwrap();
        let u = bounds_at_time(&sigma, &params, &pool).unwrap().worst_case();
        assert!((1.0 / sol.lambda - u).abs() <= 1e-6 * u.max(1.0));
    }
}

#[test]
fn scaling_noise_rescales_value() {
    let mut rng = RngStream::new(41);
    let pool = random_pool(&mut rng, 2, 3);
    let sys = random_system(&mut rng, 2, 0.9);
    let k = 3.7;
    let scaled_pool = SensorPool::new(
        pool.sensors()
            .iter()
            .map(|s| CandidateSensor::new(s.c.clone(), s.sigma2 * k).unwrap())
            .collect(),
    )
    .unwrap();
    let scaled_sys = LtiSystem::new(
        sys.a().clone(),
        PsdMatrix::from_matrix(sys.q().as_matrix() * k).unwrap(),
    )
    .unwrap();
    let sigma = PsdMatrix::from_diagonal(&[1.0, 0.6]).unwrap();
    let scaled_sigma = PsdMatrix::from_matrix(sigma.as_matrix() * k).unwrap();
    let j1 = rho_star_joint(&pool).unwrap();
    let j2 = rho_star_joint(&scaled_pool).unwrap();
    assert!((j1.rho_star - j2.rho_star).abs() < 1e-7 * j1.rho_star);
    let rho = j1.rho_star * 1.3;
    let a = solve_time_dependent_with(&j1, &sigma, 0.5, rho, 60, &pool, &sys).unwrap();
    let b = solve_time_dependent_with(&j2, &scaled_sigma, 0.5, rho, 60, &scaled_pool, &scaled_sys)
        .unwrap();
    assert!((a.lambda - b.lambda * k).abs() <= 1e-6 * a.lambda);
}

#[test]
fn fallback_agrees_with_interior_point() {
    let mut rng = RngStream::new(53);
    for mode_steady in [false, true] {
        let pool = random_pool(&mut rng, 2, 4);
        let sys = random_system(&mut rng, 2, 0.9);
        let joint = rho_star_joint(&pool).unwrap();
        let rho = joint.rho_star * 1.4;
        let (eps, n_s) = (0.5, 40);
        let (ipm, mode) = if mode_steady {
            (
                solve_steady_state_relaxation_with(&joint, eps, rho, n_s, &pool, &sys).unwrap(),
                GridMode::SteadyState,
            )
        } else {
            let s = PsdMatrix::identity(2);
            (
                solve_time_dependent_with(&joint, &s, eps, rho, n_s, &pool, &sys).unwrap(),
                GridMode::TimeDependent(s),
            )
        };
        let fb = solve_fallback(&mode, &joint, eps, rho, n_s, &pool, &sys).unwrap();
        // the fallback returns a feasible point, so it bounds the optimum from below
        assert!(
            fb.lambda <= ipm.lambda * (1.0 + 1e-6),
            "steady={mode_steady}: {} above {}",
            fb.lambda,
            ipm.lambda
        );
        assert!(
            fb.lambda >= ipm.lambda * (1.0 - 2.5e-2),
            "steady={mode_steady}: {} vs {}",
            fb.lambda,
            ipm.lambda
        );
        assert!(rho_star_for_distribution(&pool, &fb.p).unwrap() <= rho * (1.0 + 1e-6));
    }
}

#[test]
fn relaxation_is_tight_and_fixed_point_is_feasible() {
    let mut rng = RngStream::new(61);
    for _ in 0..10 {
        let pool = random_pool(&mut rng, 3, 5);
        let sys = random_system(&mut rng, 3, 1.2);
        let joint = rho_star_joint(&pool).unwrap();
        let rho = joint.rho_star * 1.5;
        let (eps, n_s) = (0.6, 100);
        let sol = solve_steady_state_relaxation_with(&joint, eps, rho, n_s, &pool, &sys).unwrap();
        let theta = expected_information(&pool, &sol.p)
            .unwrap()
            .scaled((1.0 - eps) * n_s as f64)
            .unwrap();
        let u = steady_state(&theta, &sys, &PsdMatrix::identity(3))
            .unwrap()
            .p;
        assert!(
            (1.0 / sol.lambda - u.max_eigenvalue()).abs() <= 1e-6 * u.max_eigenvalue().max(1.0)
        );
        let x = u.inverse().unwrap();
        let block = riccati_block(&sys, x.as_matrix(), theta.as_matrix()).unwrap();
        assert!(min_eig(&block) >= -1e-8 * (1.0 + block.amax()));
    }
}

#[test]
fn single_candidate_pool() {
    let pool = SensorPool::new(vec![CandidateSensor::new(
        DVector::from_column_slice(&[1.0, 0.5]),
        0.5,
    )
    .unwrap()])
    .unwrap();
    let sys = LtiSystem::new(
        DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.5]),
        PsdMatrix::identity(2),
    )
    .unwrap();
    let res = grid_search(200, 3, 0.05, &pool, &sys, &GridMode::SteadyState).unwrap();
    assert_eq!(res.distribution().as_slice(), &[1.0]);
    let oracle = bounds_steady_state(&res.params, &pool, &sys).unwrap();
    assert_eq!(oracle.upper, res.bounds.upper);
}

#[test]
fn larger_sample_size_tightens_bound() {
    let mut rng = RngStream::new(71);
    let pool = random_pool(&mut rng, 3, 6);
    let sys = random_system(&mut rng, 3, 1.1);
    let mut prev = f64::INFINITY;
    for n_s in [150, 300, 600] {
        let u = grid_search(n_s, 3, 0.05, &pool, &sys, &GridMode::SteadyState)
            .unwrap()
            .bounds
            .worst_case();
        assert!(u < prev, "n_s = {n_s}: {u} !< {prev}");
        prev = u;
    }
}

#[test]
fn infeasibility_diagnostics() {
    let mut rng = RngStream::new(83);
    let pool = random_pool(&mut rng, 3, 5);
    let sys = random_system(&mut rng, 3, 0.9);
    match grid_search(5, 3, 0.05, &pool, &sys, &GridMode::SteadyState) {
        Err(Error::SampleSizeInfeasible { min_n_s, .. }) => assert!(min_n_s > 5),
        other => panic!("expected sample-size error, got {other:?}"),
    }
    let joint = rho_star_joint(&pool).unwrap();
    match solve_time_dependent_with(
        &joint,
        &PsdMatrix::identity(3),
        0.5,
        joint.rho_star * 0.5,
        50,
        &pool,
        &sys,
    ) {
        Err(Error::RhoInfeasible {
            binding_candidate, ..
        }) => assert!((1..=5).contains(&binding_candidate)),
        other => panic!("expected rho error, got {other:?}"),
    }
}
