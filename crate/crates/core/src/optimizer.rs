//! Optimizing the sampling distribution for the worst-case covariance bound.
//!
//! For a fixed `(ε̂, ρ̂)` the upper bound is minimized by maximizing the
//! smallest eigenvalue of its inverse over `p ∈ Δ`, subject to the
//! domination constraints `Z_j ⪯ ρ̂ E[Z(p)]`:
//!
//! * time-dependent: `X(p) = Σ_t⁻¹ + (1 − ε̂) n_s E[Z(p)]` is affine in `p`;
//! * steady state: `X` is a matrix variable with the Riccati inequality
//!   `X ⪯ (A X⁻¹ Aᵀ + Q)⁻¹ + (1 − ε̂) n_s E[Z(p)]` written as a `2m × 2m` LMI.
//!
//! Both are solved by the embedded conic solver; an independent bisection
//! path ([`solve_fallback`]) needs only eigenvalue computations.
//! [`grid_search`] sweeps `ε̂` over `[√(ϱ* c₀), 1)` and keeps the best point.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::concentration::{
    bounds_at_time, bounds_heterogeneous, bounds_steady_state, compute_c0, min_sample_size,
    range_basis, rho_star_for_distribution, rho_star_joint, AwParameters, CovarianceBounds,
    JointRho,
};
use crate::conic::{solve_checked, Coef, ConicProblem, LmiBlock, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::kalman::{fixed_point, DARE_MAX_ITER, DARE_TOL};
use crate::matrix::{spd_inverse, PsdMatrix};
use crate::system::{
    expected_information, information_detectable, Distribution, LtiSystem, Partitioning, SensorPool,
};

/// Lower limit standing in for the open constraint `λ > 0`.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Relative slack when comparing `ρ̂` with `ϱ*`.
const RHO_SLACK: f64 = 1e-9;

/// Which inverse-covariance objective a program optimizes.
#[derive(Clone, Debug)]
pub enum GridMode {
    /// Bounds one step after the given predicted covariance `Σ_t`.
    TimeDependent(PsdMatrix),
    SteadyState,
}

impl GridMode {
    pub fn name(&self) -> &'static str {
        match self {
            GridMode::TimeDependent(_) => "time_dependent",
            GridMode::SteadyState => "steady_state",
        }
    }
}

/// Optimal distribution and objective of one program instance.
#[derive(Clone, Debug)]
pub struct ProgramSolution {
    pub p: Distribution,
    /// `λ*`, the optimal smallest eigenvalue of `X`.
    pub lambda: f64,
    /// The matrix `X` at the optimum.
    pub x: PsdMatrix,
    pub status: SolveStatus,
    pub iterations: usize,
    pub solve_time_ms: f64,
    pub warnings: Vec<String>,
}

/// Data shared by every program for one `(ε̂, ρ̂, n_s)`.
struct Setup<'a> {
    pool: &'a SensorPool,
    system: &'a LtiSystem,
    weight: f64,
    rho: f64,
    basis: DMatrix<f64>,
}

impl<'a> Setup<'a> {
    fn new(
        pool: &'a SensorPool,
        system: &'a LtiSystem,
        epsilon: f64,
        rho: f64,
        n_s: usize,
    ) -> Result<Self> {
        if pool.state_dim() != system.state_dim() {
            return Err(Error::Dimension {
                context: "pool state dimension",
                expected: system.state_dim(),
                found: pool.state_dim(),
            });
        }
        if !(epsilon > 0.0 && epsilon < 1.0) || !(rho >= 1.0 - 1e-12) || n_s == 0 {
            return Err(Error::Domain(format!(
                "need epsilon in (0, 1), rho >= 1, n_s >= 1 (got {epsilon}, {rho}, {n_s})"
            )));
        }
        let weights = vec![1.0 / pool.len() as f64; pool.len()];
        let basis = range_basis(&crate::system::weighted_information(pool, &weights));
        Ok(Self {
            pool,
            system,
            weight: (1.0 - epsilon) * n_s as f64,
            rho,
            basis,
        })
    }

    fn n_c(&self) -> usize {
        self.pool.len()
    }

    fn m(&self) -> usize {
        self.system.state_dim()
    }

    /// `ρ̂ Σ p_i Z_i − Z_j ⪰ 0` for every `j`, in row-space coordinates.
    fn add_domination_blocks(&self, prob: &mut ConicProblem, p_offset: usize) {
        let r = self.basis.ncols();
        let reduced: Vec<DVector<f64>> = self
            .pool
            .sensors()
            .iter()
            .map(|s| self.basis.transpose() * &s.c / s.sigma2.sqrt())
            .collect();
        for (j, cj) in reduced.iter().enumerate() {
            let mut block = LmiBlock::new(format!("domination[{}]", j + 1), -(cj * cj.transpose()));
            for (i, ci) in reduced.iter().enumerate() {
                block.push(p_offset + i, Coef::rank_one(self.rho, ci.clone()));
            }
            debug_assert_eq!(block.order(), r);
            prob.add_block(block);
        }
    }

    fn add_lambda_floor(&self, prob: &mut ConicProblem) {
        prob.add_block(
            LmiBlock::new("lambda>=floor", DMatrix::from_element(1, 1, -LAMBDA_FLOOR))
                .with(0, Coef::rank_one(1.0, DVector::from_element(1, 1.0))),
        );
    }

    /// `Π(p) = (1 − ε̂) n_s E[Z(p)]`.
    fn pi(&self, p: &[f64]) -> DMatrix<f64> {
        crate::system::weighted_information(self.pool, p) * self.weight
    }

    /// Smallest eigenvalue of the domination blocks at `p` (scaled to the data).
    fn domination_margin(&self, p: &[f64]) -> (f64, usize, DVector<f64>) {
        let e = self.basis.transpose()
            * crate::system::weighted_information(self.pool, p)
            * &self.basis
            * self.rho;
        let mut worst = (f64::INFINITY, 0, DVector::zeros(self.basis.ncols()));
        for (j, s) in self.pool.sensors().iter().enumerate() {
            let c = self.basis.transpose() * &s.c;
            let block = &e - &c * c.transpose() / s.sigma2;
            let eig = SymmetricEigen::new(block);
            let (k, val) = eig.eigenvalues.argmin();
            let scale = 1.0 + c.norm_squared() / s.sigma2;
            if val / scale < worst.0 {
                worst = (val / scale, j, eig.eigenvectors.column(k).into_owned());
            }
        }
        worst
    }

    fn pre_check(&self, joint: &JointRho) -> Result<()> {
        if self.rho < joint.rho_star * (1.0 - RHO_SLACK) {
            return Err(Error::RhoInfeasible {
                rho: self.rho,
                rho_star: joint.rho_star,
                binding_candidate: crate::concentration::binding_candidate(self.pool, &joint.p)?,
            });
        }
        Ok(())
    }

    fn finish(
        &self,
        weights: &[f64],
        x: DMatrix<f64>,
        lambda: f64,
        status: SolveStatus,
        iterations: usize,
        start: Instant,
    ) -> Result<ProgramSolution> {
        let p = Distribution::from_weights(weights)?;
        let mut warnings = Vec::new();
        if !information_detectable(self.system.a(), &expected_information(self.pool, &p)?) {
            warnings.push(
                "(A, E[Z(p*)]^1/2) is not detectable; the steady-state bound does not exist"
                    .to_string(),
            );
        }
        Ok(ProgramSolution {
            p,
            lambda,
            x: PsdMatrix::from_trusted(x),
            status,
            iterations,
            solve_time_ms: start.elapsed().as_secs_f64() * 1e3,
            warnings,
        })
    }
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.min()
}

/// Program for the time-dependent objective; variables `[λ, p]`.
pub fn time_dependent_program(
    sigma_t: &PsdMatrix,
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ConicProblem> {
    let setup = Setup::new(pool, system, epsilon, rho, n_s)?;
    time_dependent_program_for(&setup, sigma_t)
}

fn time_dependent_program_for(setup: &Setup<'_>, sigma_t: &PsdMatrix) -> Result<ConicProblem> {
    let m = setup.m();
    if sigma_t.order() != m {
        return Err(Error::Dimension {
            context: "predicted covariance order",
            expected: m,
            found: sigma_t.order(),
        });
    }
    let sigma_inv =
        spd_inverse(sigma_t.as_matrix()).map_err(|_| Error::Singular("predicted covariance"))?;
    let n_c = setup.n_c();
    let mut prob = ConicProblem::new(1 + n_c);
    prob.objective[0] = 1.0;
    prob.simplex = Some(1..1 + n_c);
    let mut block = LmiBlock::new("X>=lambda*I", sigma_inv);
    block.push(0, Coef::scaled_identity(m, -1.0));
    for (i, s) in pool_sensors(setup).enumerate() {
        block.push(1 + i, Coef::rank_one(setup.weight / s.sigma2, s.c.clone()));
    }
    prob.add_block(block);
    setup.add_lambda_floor(&mut prob);
    setup.add_domination_blocks(&mut prob, 1);
    Ok(prob)
}

fn pool_sensors<'b>(
    setup: &'b Setup<'_>,
) -> impl Iterator<Item = &'b crate::system::CandidateSensor> {
    setup.pool.sensors().iter()
}

/// Index of matrix-variable entry `(k, l)`, `k ≤ l`, in upper-triangular row order.
fn sym_index(m: usize, k: usize, l: usize) -> usize {
    k * m - k * (k + 1) / 2 + l
}

/// Riccati-inequality block value `[[−X + Q⁻¹ + Π, Q⁻¹A], [(Q⁻¹A)ᵀ, X + AᵀQ⁻¹A]]`.
pub fn riccati_block(
    system: &LtiSystem,
    x: &DMatrix<f64>,
    pi: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = system.state_dim();
    let q_inv = spd_inverse(system.q().as_matrix())?;
    let a = system.a();
    let qa = &q_inv * a;
    let mut out = DMatrix::zeros(2 * m, 2 * m);
    out.view_mut((0, 0), (m, m)).copy_from(&(-x + &q_inv + pi));
    out.view_mut((0, m), (m, m)).copy_from(&qa);
    out.view_mut((m, 0), (m, m)).copy_from(&qa.transpose());
    out.view_mut((m, m), (m, m))
        .copy_from(&(x + a.transpose() * &qa));
    Ok(crate::matrix::symmetrize(&out))
}

/// Program for the steady-state relaxation; variables `[λ, p, vech(X)]`.
pub fn steady_state_program(
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ConicProblem> {
    let setup = Setup::new(pool, system, epsilon, rho, n_s)?;
    steady_state_program_for(&setup)
}

fn steady_state_program_for(setup: &Setup<'_>) -> Result<ConicProblem> {
    let m = setup.m();
    let n_c = setup.n_c();
    let nx = m * (m + 1) / 2;
    let x0 = 1 + n_c;
    let mut prob = ConicProblem::new(1 + n_c + nx);
    prob.objective[0] = 1.0;
    prob.simplex = Some(1..1 + n_c);

    let mut lam = LmiBlock::new("X>=lambda*I", DMatrix::zeros(m, m));
    lam.push(0, Coef::scaled_identity(m, -1.0));
    for k in 0..m {
        for l in k..m {
            lam.push(x0 + sym_index(m, k, l), Coef::sym_unit(m, 0, k, l, 1.0));
        }
    }
    prob.add_block(lam);

    let constant = riccati_block(setup.system, &DMatrix::zeros(m, m), &DMatrix::zeros(m, m))?;
    let mut ric = LmiBlock::new("riccati", constant);
    for (i, s) in pool_sensors(setup).enumerate() {
        let mut u = DVector::zeros(2 * m);
        u.rows_mut(0, m).copy_from(&s.c);
        ric.push(1 + i, Coef::rank_one(setup.weight / s.sigma2, u));
    }
    for k in 0..m {
        for l in k..m {
            let v = x0 + sym_index(m, k, l);
            ric.push(v, Coef::sym_unit(2 * m, 0, k, l, -1.0));
            ric.push(v, Coef::sym_unit(2 * m, m, k, l, 1.0));
        }
    }
    prob.add_block(ric);
    setup.add_lambda_floor(&mut prob);
    setup.add_domination_blocks(&mut prob, 1);
    Ok(prob)
}

fn unpack_x(vars: &[f64], offset: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, m, |r, c| {
        let (k, l) = if r <= c { (r, c) } else { (c, r) };
        vars[offset + sym_index(m, k, l)]
    })
}

/// Maximizes `λ̲(Σ_t⁻¹ + (1 − ε̂) n_s E[Z(p)])` subject to the domination constraints.
pub fn solve_time_dependent(
    sigma_t: &PsdMatrix,
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ProgramSolution> {
    let joint = rho_star_joint(pool)?;
    solve_time_dependent_with(&joint, sigma_t, epsilon, rho, n_s, pool, system)
}

pub fn solve_time_dependent_with(
    joint: &JointRho,
    sigma_t: &PsdMatrix,
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ProgramSolution> {
    let start = Instant::now();
    let setup = Setup::new(pool, system, epsilon, rho, n_s)?;
    setup.pre_check(joint)?;
    let sigma_inv =
        spd_inverse(sigma_t.as_matrix()).map_err(|_| Error::Singular("predicted covariance"))?;
    let x_of = |p: &[f64]| &sigma_inv + setup.pi(p);
    if setup.n_c() == 1 {
        let x = x_of(&[1.0]);
        let lambda = min_eig(&x);
        return setup.finish(&[1.0], x, lambda, SolveStatus::Optimal, 0, start);
    }
    let prob = time_dependent_program_for(&setup, sigma_t)?;
    let sol = match solve_checked(&prob, &SolverSettings::default()) {
        Ok(s) => s,
        Err(e) => return boundary_or(e, &setup, joint, &x_of, start),
    };
    let weights = sol.vars[1..].to_vec();
    let x = x_of(&normalized(&weights));
    let lambda = min_eig(&x);
    setup.finish(&weights, x, lambda, sol.status, sol.iterations, start)
}

fn normalized(w: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    clipped.into_iter().map(|x| x / total).collect()
}

/// When `ρ̂` sits at `ϱ*` the feasible set can collapse to the joint
/// certificate, which has no interior; that point is then the answer.
fn boundary_or(
    err: Error,
    setup: &Setup<'_>,
    joint: &JointRho,
    x_of: &dyn Fn(&[f64]) -> DMatrix<f64>,
    start: Instant,
) -> Result<ProgramSolution> {
    if setup.rho <= joint.rho_star * (1.0 + 1e-6) {
        let w = joint.p.as_slice();
        let x = x_of(w);
        let lambda = min_eig(&x);
        let mut sol = setup.finish(w, x, lambda, SolveStatus::AlmostOptimal, 0, start)?;
        sol.warnings
            .push("rho at the domination minimum; returned the joint certificate".into());
        return Ok(sol);
    }
    Err(err)
}

/// Steady-state relaxation: maximizes `λ̲(X)` over `X` satisfying the Riccati inequality.
pub fn solve_steady_state_relaxation(
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ProgramSolution> {
    let joint = rho_star_joint(pool)?;
    solve_steady_state_relaxation_with(&joint, epsilon, rho, n_s, pool, system)
}

pub fn solve_steady_state_relaxation_with(
    joint: &JointRho,
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<ProgramSolution> {
    let start = Instant::now();
    let setup = Setup::new(pool, system, epsilon, rho, n_s)?;
    setup.pre_check(joint)?;
    let m = setup.m();
    let steady_x = |p: &[f64]| -> DMatrix<f64> {
        match steady_inverse(&setup, p, None) {
            Ok((x, _)) => x,
            Err(_) => DMatrix::zeros(m, m),
        }
    };
    if setup.n_c() == 1 {
        let x = steady_x(&[1.0]);
        let lambda = min_eig(&x);
        return setup.finish(&[1.0], x, lambda, SolveStatus::Optimal, 0, start);
    }
    let prob = steady_state_program_for(&setup)?;
    let sol = match solve_checked(&prob, &SolverSettings::default()) {
        Ok(s) => s,
        Err(e) => return boundary_or(e, &setup, joint, &steady_x, start),
    };
    let weights = sol.vars[1..1 + setup.n_c()].to_vec();
    let x = crate::matrix::symmetrize(&unpack_x(&sol.vars, 1 + setup.n_c(), m));
    setup.finish(&weights, x, sol.vars[0], sol.status, sol.iterations, start)
}

/// `U(p)⁻¹` for the steady-state upper recursion, with the fixed point itself.
fn steady_inverse(
    setup: &Setup<'_>,
    p: &[f64],
    warm: Option<&DMatrix<f64>>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let m = setup.m();
    let pi = setup.pi(p);
    let p0 = warm.cloned().unwrap_or_else(|| DMatrix::identity(m, m));
    let (u, _, _) = fixed_point(
        &pi,
        setup.system.a(),
        setup.system.q().as_matrix(),
        p0,
        DARE_TOL,
        DARE_MAX_ITER,
    )?;
    Ok((spd_inverse(&u)?, u))
}

/// Feasibility-search iterations per bisection step.
const FALLBACK_ITERS: usize = 600;

/// Result of the bisection fallback.
#[derive(Clone, Debug)]
pub struct FallbackSolution {
    pub p: Distribution,
    pub lambda: f64,
    pub bisection_steps: usize,
}

/// Bisection on `λ` with a first-order feasibility search over the simplex.
///
/// Each test asks whether some `p` with `ρ̂ E[Z(p)] ⪰ Z_j ∀j` reaches
/// `λ̲(X(p)) ≥ λ`; `X(p)` is explicit in time-dependent mode and `U(p)⁻¹`
/// from the fixed-point iteration in steady-state mode. The search
/// maximizes the concave margin `min(λ̲(X(p)) − λ, domination margin)` by
/// exponentiated supergradient steps and stops as soon as it is nonnegative.
pub fn solve_fallback(
    mode: &GridMode,
    joint: &JointRho,
    epsilon: f64,
    rho: f64,
    n_s: usize,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<FallbackSolution> {
    let setup = Setup::new(pool, system, epsilon, rho, n_s)?;
    setup.pre_check(joint)?;
    let n_c = setup.n_c();
    let m = setup.m();
    let sigma_inv = match mode {
        GridMode::TimeDependent(s) => {
            Some(spd_inverse(s.as_matrix()).map_err(|_| Error::Singular("predicted covariance"))?)
        }
        GridMode::SteadyState => None,
    };

    // value λ̲(X(p)) and its supergradient in p
    let objective = |p: &[f64], warm: &mut Option<DMatrix<f64>>| -> Result<(f64, Vec<f64>)> {
        let x = match &sigma_inv {
            Some(si) => si + setup.pi(p),
            None => {
                let (x, u) = steady_inverse(&setup, p, warm.as_ref())?;
                *warm = Some(u);
                x
            }
        };
        let eig = SymmetricEigen::new(x.clone());
        let (k, val) = eig.eigenvalues.argmin();
        let v = eig.eigenvectors.column(k).into_owned();
        let g = match &sigma_inv {
            Some(_) => v.clone() * v.transpose(),
            None => stein_weight(&setup, &x, &v)?,
        };
        let grad = pool
            .sensors()
            .iter()
            .map(|s| setup.weight * s.c.dot(&(&g * &s.c)) / s.sigma2)
            .collect();
        Ok((val, grad))
    };
    let domination = |p: &[f64]| -> (f64, Vec<f64>) {
        let (val, _, v) = setup.domination_margin(p);
        let grad = pool
            .sensors()
            .iter()
            .map(|s| {
                let c = setup.basis.transpose() * &s.c;
                setup.rho * c.dot(&v).powi(2) / s.sigma2
            })
            .collect();
        (val, grad)
    };

    let mut warm = None;
    let mut best_p = joint.p.as_slice().to_vec();
    let (mut lo, _) = objective(&best_p, &mut warm)?;
    if n_c == 1 {
        return Ok(FallbackSolution {
            p: Distribution::uniform(1),
            lambda: lo,
            bisection_steps: 0,
        });
    }
    // λ̲(X) ≤ tr(X)/m, and X ⪯ Q⁻¹ + Π in steady state
    let base = match &sigma_inv {
        Some(si) => si.trace(),
        None => spd_inverse(system.q().as_matrix())?.trace(),
    };
    let mut hi = (0..n_c)
        .map(|i| {
            (base + setup.weight * pool.sensor(i).c.norm_squared() / pool.sensor(i).sigma2)
                / m as f64
        })
        .fold(lo, f64::max);
    let feas_tol = 1e-9;
    let mut steps = 0;
    while hi - lo > 1e-7 * hi.max(1.0) && steps < 60 {
        steps += 1;
        let level = 0.5 * (lo + hi);
        let mut found = None;
        // second start is blended with uniform so multiplicative steps can revive vanished coordinates
        let starts = [
            best_p.clone(),
            best_p
                .iter()
                .map(|x| 0.95 * x + 0.05 / n_c as f64)
                .collect::<Vec<f64>>(),
        ];
        for mut p in starts {
            if found.is_some() {
                break;
            }
            // step-weighted average of the iterates; it converges where the last iterate oscillates
            let mut avg = vec![0.0; n_c];
            let mut avg_weight = 0.0;
            let (mut kappa, mut best_margin, mut stall) = (1.0, f64::NEG_INFINITY, 0);
            for it in 0..FALLBACK_ITERS {
                let (val, g_obj) = objective(&p, &mut warm)?;
                let (dom, g_dom) = domination(&p);
                let obj_margin = (val - level) / level.max(1e-12);
                if obj_margin >= 0.0 && dom >= -feas_tol {
                    found = Some((p.clone(), val));
                    break;
                }
                if it % 20 == 19 {
                    let q: Vec<f64> = avg.iter().map(|x| x / avg_weight).collect();
                    let (val_avg, _) = objective(&q, &mut warm)?;
                    if val_avg >= level && setup.domination_margin(&q).0 >= -feas_tol {
                        found = Some((q, val_avg));
                        break;
                    }
                }
                let g: Vec<f64> = if obj_margin <= dom {
                    g_obj.iter().map(|x| x / level.max(1e-12)).collect()
                } else {
                    g_dom
                };
                let gmax = g.iter().map(|x| x.abs()).fold(0.0, f64::max);
                if gmax == 0.0 {
                    break;
                }
                // Polyak-type step toward the known target margin 0, in the entropy geometry
                let margin = obj_margin.min(dom);
                if margin > best_margin {
                    best_margin = margin;
                    stall = 0;
                } else {
                    stall += 1;
                    if stall >= 20 {
                        kappa *= 0.5;
                        stall = 0;
                    }
                }
                let mean = g.iter().zip(&p).map(|(gi, pi)| gi * pi).sum::<f64>();
                let var = g
                    .iter()
                    .zip(&p)
                    .map(|(gi, pi)| pi * (gi - mean).powi(2))
                    .sum::<f64>();
                let spread = g.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                    - g.iter().fold(f64::INFINITY, |a, &b| a.min(b));
                let eta = if var > 0.0 {
                    (kappa * -margin / var).min(kappa * 4.0 / spread.max(1e-300))
                } else {
                    kappa / spread.max(1e-300)
                };
                let _ = (it, gmax);
                for (a, x) in avg.iter_mut().zip(&p) {
                    *a += eta * x;
                }
                avg_weight += eta;
                let mut total = 0.0;
                for (pi, gi) in p.iter_mut().zip(&g) {
                    *pi *= (eta * (gi - mean)).exp();
                    *pi = pi.max(1e-15);
                    total += *pi;
                }
                p.iter_mut().for_each(|x| *x /= total);
            }
        }
        match found {
            Some((p, val)) => {
                lo = val.max(level);
                best_p = p;
            }
            None => hi = level,
        }
    }
    Ok(FallbackSolution {
        p: Distribution::from_weights(&best_p)?,
        lambda: lo,
        bisection_steps: steps,
    })
}

/// `G = Σ_k (Kᵀ)^k v vᵀ K^k` with `K = (A X⁻¹ Aᵀ + Q)⁻¹ A X⁻¹`: the
/// sensitivity of `vᵀ U(p)⁻¹ v` to the information term.
fn stein_weight(setup: &Setup<'_>, x: &DMatrix<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let a = setup.system.a();
    let x_inv = spd_inverse(x)?;
    let w = spd_inverse(&(a * &x_inv * a.transpose() + setup.system.q().as_matrix()))?;
    let k = w * a * x_inv;
    let mut g = v * v.transpose();
    let mut term = g.clone();
    for _ in 0..10_000 {
        term = k.transpose() * &term * &k;
        g += &term;
        if term.amax() <= 1e-14 * g.amax() {
            break;
        }
    }
    Ok(g)
}

/// Half-open uniform grid `lo + i (1 − lo) / n_p`, `i = 0 … n_p − 1`.
pub fn grid_points(lo: f64, n_p: usize) -> Vec<f64> {
    (0..n_p)
        .map(|i| lo + i as f64 * (1.0 - lo) / n_p as f64)
        .collect()
}

/// Outcome at one grid point.
#[derive(Clone, Debug)]
pub struct GridPoint {
    pub epsilon: f64,
    pub rho: f64,
    pub p: Option<Distribution>,
    /// `λ*` of the program, `NaN` on failure.
    pub lambda_star: f64,
    /// `λ̄(U)` of the certified bound at `p*`, `NaN` on failure.
    pub lambda_bar_u: f64,
    /// `ε` actually used for the certified bound (`≥ epsilon`).
    pub epsilon_certified: f64,
    pub solve_time_ms: f64,
    pub status: String,
}

impl GridPoint {
    pub fn ok(&self) -> bool {
        self.p.is_some() && self.lambda_bar_u.is_finite()
    }
}

#[derive(Clone, Debug)]
pub struct GridSearchResult {
    pub points: Vec<GridPoint>,
    pub chosen: usize,
    pub joint: JointRho,
    pub n_s: usize,
    pub delta: f64,
    pub c0: f64,
    pub mode: &'static str,
    /// Certified bounds at the chosen point.
    pub bounds: CovarianceBounds,
    pub params: AwParameters,
}

impl GridSearchResult {
    pub fn chosen_point(&self) -> &GridPoint {
        &self.points[self.chosen]
    }

    pub fn distribution(&self) -> &Distribution {
        self.params.distribution()
    }

    /// Rows `epsilon, rho, lambda_star, lambda_bar_U, solve_time_ms, status`.
    pub fn write_points_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record([
            "epsilon",
            "rho",
            "lambda_star",
            "lambda_bar_U",
            "solve_time_ms",
            "status",
        ])?;
        for pt in &self.points {
            wr.write_record([
                format!("{:?}", pt.epsilon),
                format!("{:?}", pt.rho),
                format!("{:?}", pt.lambda_star),
                format!("{:?}", pt.lambda_bar_u),
                format!("{:.3}", pt.solve_time_ms),
                pt.status.clone(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Rows `index, probability` (1-based) of the chosen distribution.
    pub fn write_distribution_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        write_distribution_csv(self.distribution(), w)
    }
}

pub fn write_distribution_csv<W: std::io::Write>(p: &Distribution, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["index", "probability"])?;
    for (i, x) in p.as_slice().iter().enumerate() {
        wr.write_record([(i + 1).to_string(), format!("{x:?}")])?;
    }
    wr.flush()?;
    Ok(())
}

/// Parameters and certified bounds at a solved grid point.
///
/// `ε` is raised to `√(ϱ(p*) c₀)` if the solver's `p*` needs a slightly
/// larger domination ratio than the grid value.
fn certify(
    mode: &GridMode,
    pool: &SensorPool,
    system: &LtiSystem,
    n_s: usize,
    delta: f64,
    epsilon: f64,
    p: &Distribution,
) -> Result<(AwParameters, CovarianceBounds)> {
    let c0 = compute_c0(n_s, pool.state_dim(), delta)?;
    let rho_p = rho_star_for_distribution(pool, p)?;
    let eps = epsilon.max((rho_p * c0).sqrt() * (1.0 + 1e-12));
    let params = AwParameters::new(pool, n_s, delta, eps, p.clone())?;
    let bounds = match mode {
        GridMode::TimeDependent(sigma) => bounds_at_time(sigma, &params, pool)?,
        GridMode::SteadyState => bounds_steady_state(&params, pool, system)?,
    };
    Ok((params, bounds))
}

/// Sweeps `ε̂` over `n_p` points of `[√(ϱ* c₀), 1)` and keeps the best.
pub fn grid_search(
    n_s: usize,
    n_p: usize,
    delta: f64,
    pool: &SensorPool,
    system: &LtiSystem,
    mode: &GridMode,
) -> Result<GridSearchResult> {
    let joint = rho_star_joint(pool)?;
    grid_search_with(&joint, n_s, n_p, delta, pool, system, mode)
}

pub fn grid_search_with(
    joint: &JointRho,
    n_s: usize,
    n_p: usize,
    delta: f64,
    pool: &SensorPool,
    system: &LtiSystem,
    mode: &GridMode,
) -> Result<GridSearchResult> {
    if n_p == 0 {
        return Err(Error::InvalidInput("n_p must be positive".into()));
    }
    let m = pool.state_dim();
    let c0 = compute_c0(n_s, m, delta)?;
    if joint.rho_star * c0 >= 1.0 {
        return Err(Error::SampleSizeInfeasible {
            n_s,
            rho_star: joint.rho_star,
            min_n_s: min_sample_size(joint.rho_star, m, delta)?,
        });
    }
    let lo = (joint.rho_star * c0).sqrt();
    let eps_grid = grid_points(lo, n_p);

    let solved: Vec<(GridPoint, Option<(AwParameters, CovarianceBounds)>)> = eps_grid
        .par_iter()
        .map(|&eps| {
            let rho = eps * eps / c0;
            let start = Instant::now();
            let sol = match mode {
                GridMode::TimeDependent(sigma) => {
                    solve_time_dependent_with(joint, sigma, eps, rho, n_s, pool, system)
                }
                GridMode::SteadyState => {
                    solve_steady_state_relaxation_with(joint, eps, rho, n_s, pool, system)
                }
            }
            .map(|sol| (sol.p, sol.lambda, sol.status.as_str().to_string()))
            .or_else(|e| {
                solve_fallback(mode, joint, eps, rho, n_s, pool, system)
                    .map(|fb| (fb.p, fb.lambda, "fallback".to_string()))
                    .map_err(|_| e)
            });
            let mut point = GridPoint {
                epsilon: eps,
                rho,
                p: None,
                lambda_star: f64::NAN,
                lambda_bar_u: f64::NAN,
                epsilon_certified: f64::NAN,
                solve_time_ms: 0.0,
                status: String::new(),
            };
            match sol {
                Ok((p, lambda, status)) => {
                    point.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
                    point.lambda_star = lambda;
                    point.status = status;
                    match certify(mode, pool, system, n_s, delta, eps, &p) {
                        Ok((params, bounds)) => {
                            point.lambda_bar_u = bounds.worst_case();
                            point.epsilon_certified = params.epsilon();
                            point.p = Some(p);
                            (point, Some((params, bounds)))
                        }
                        Err(e) => {
                            point.status = format!("certify_failed: {e}");
                            point.p = Some(p);
                            (point, None)
                        }
                    }
                }
                Err(e) => {
                    point.solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
                    point.status = format!("failed: {e}");
                    (point, None)
                }
            }
        })
        .collect();

    let key = |pt: &GridPoint| match mode {
        GridMode::TimeDependent(_) => -pt.lambda_star,
        GridMode::SteadyState => pt.lambda_bar_u,
    };
    let chosen = solved
        .iter()
        .enumerate()
        .filter(|(_, (pt, cert))| cert.is_some() && pt.ok())
        .min_by(|(_, (a, _)), (_, (b, _))| key(a).total_cmp(&key(b)))
        .map(|(i, _)| i);
    let Some(chosen) = chosen else {
        let msg = solved
            .iter()
            .map(|(pt, _)| format!("eps {:.5}: {}", pt.epsilon, pt.status))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::GridExhausted(msg));
    };
    let (params, bounds) = solved[chosen].1.clone().expect("chosen point is certified");
    Ok(GridSearchResult {
        points: solved.into_iter().map(|(pt, _)| pt).collect(),
        chosen,
        joint: joint.clone(),
        n_s,
        delta,
        c0,
        mode: mode.name(),
        bounds,
        params,
    })
}

/// Independent per-partition steady-state searches and the fused bound.
#[derive(Debug)]
pub struct HeterogeneousResult {
    pub partitions: Vec<Result<GridSearchResult>>,
    pub fused: Option<CovarianceBounds>,
    pub solve_times_ms: Vec<f64>,
}

pub fn grid_search_heterogeneous(
    partitioning: &Partitioning,
    n_p: &[usize],
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<HeterogeneousResult> {
    partitioning.check_covers(pool.len())?;
    let k = partitioning.num_partitions();
    if n_p.len() != k {
        return Err(Error::Dimension {
            context: "per-partition grid sizes",
            expected: k,
            found: n_p.len(),
        });
    }
    let runs: Vec<(Result<GridSearchResult>, f64)> = (0..k)
        .into_par_iter()
        .map(|i| {
            let start = Instant::now();
            let res = pool.slice(partitioning.range(i)).and_then(|sub| {
                grid_search(
                    partitioning.sample_sizes()[i],
                    n_p[i],
                    partitioning.deltas()[i],
                    &sub,
                    system,
                    &GridMode::SteadyState,
                )
            });
            (res, start.elapsed().as_secs_f64() * 1e3)
        })
        .collect();
    let solve_times_ms = runs.iter().map(|(_, t)| *t).collect();
    let partitions: Vec<Result<GridSearchResult>> = runs.into_iter().map(|(r, _)| r).collect();
    let fused = if partitions.iter().all(|r| r.is_ok()) {
        let params: Vec<AwParameters> = partitions
            .iter()
            .map(|r| r.as_ref().expect("checked").params.clone())
            .collect();
        Some(bounds_heterogeneous(partitioning, &params, pool, system)?)
    } else {
        None
    };
    Ok(HeterogeneousResult {
        partitions,
        fused,
        solve_times_ms,
    })
}

/// Uniform-distribution comparison policy.
#[derive(Clone, Debug)]
pub struct UniformBaseline {
    pub rho_u: f64,
    pub epsilon_u: f64,
    pub params: AwParameters,
    pub bounds: CovarianceBounds,
}

/// `p = 1/n_c`, `ρ_u` minimal for it, `ε_u = √(ρ_u c₀)`, steady-state bounds.
pub fn uniform_baseline(
    pool: &SensorPool,
    n_s: usize,
    delta: f64,
    system: &LtiSystem,
) -> Result<UniformBaseline> {
    let u = Distribution::uniform(pool.len());
    let rho_u = rho_star_for_distribution(pool, &u)?;
    let m = pool.state_dim();
    let c0 = compute_c0(n_s, m, delta)?;
    if rho_u * c0 >= 1.0 {
        return Err(Error::SampleSizeInfeasible {
            n_s,
            rho_star: rho_u,
            min_n_s: min_sample_size(rho_u, m, delta)?,
        });
    }
    let epsilon_u = (rho_u * c0).sqrt();
    let params = AwParameters::new(pool, n_s, delta, epsilon_u, u)?;
    let bounds = bounds_steady_state(&params, pool, system)?;
    Ok(UniformBaseline {
        rho_u,
        epsilon_u,
        params,
        bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CandidateSensor;

    fn sensor(c: &[f64], s2: f64) -> CandidateSensor {
        CandidateSensor::new(DVector::from_column_slice(c), s2).unwrap()
    }

    fn symmetric_setup() -> (SensorPool, LtiSystem) {
        let pool =
            SensorPool::new(vec![sensor(&[1.0, 0.0], 1.0), sensor(&[0.0, 1.0], 1.0)]).unwrap();
        let sys = LtiSystem::new(DMatrix::zeros(2, 2), PsdMatrix::identity(2)).unwrap();
        (pool, sys)
    }

    #[test]
    fn grid_points_half_open() {
        let c0 = compute_c0(100, 3, 0.05).unwrap();
        let pts = grid_points(c0.sqrt(), 5);
        let expected = [0.43761, 0.55009, 0.66257, 0.77504, 0.88752];
        for (a, b) in pts.iter().zip(expected) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
        assert_eq!(grid_points(0.3, 1), vec![0.3]);
    }

    #[test]
    fn sym_index_layout() {
        assert_eq!(
            (0..3)
                .flat_map(|k| (k..3).map(move |l| sym_index(3, k, l)))
                .collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn symmetric_time_dependent() {
        let (pool, sys) = symmetric_setup();
        let sol = solve_time_dependent(&PsdMatrix::identity(2), 0.5, 4.0, 50, &pool, &sys).unwrap();
        assert!((sol.p.as_slice()[0] - 0.5).abs() < 1e-5, "{:?}", sol.p);
        assert!((sol.lambda - (1.0 + 0.5 * 50.0 * 0.5)).abs() < 1e-6);
    }

    #[test]
    fn symmetric_steady_state() {
        let (pool, sys) = symmetric_setup();
        let sol = solve_steady_state_relaxation(0.5, 4.0, 50, &pool, &sys).unwrap();
        assert!((sol.p.as_slice()[0] - 0.5).abs() < 1e-5, "{:?}", sol.p);
        // A = 0: U = (Q⁻¹ + Π)⁻¹ so λ* = 1 + 12.5
        assert!((sol.lambda - 13.5).abs() < 1e-5, "{}", sol.lambda);
    }

    #[test]
    fn rho_below_minimum_names_binding_candidate() {
        let (pool, sys) = symmetric_setup();
        let err =
            solve_time_dependent(&PsdMatrix::identity(2), 0.5, 1.5, 50, &pool, &sys).unwrap_err();
        assert!(
            matches!(err, Error::RhoInfeasible { binding_candidate, .. } if binding_candidate >= 1)
        );
    }

    #[test]
    fn single_candidate() {
        let pool = SensorPool::new(vec![sensor(&[1.0, 0.5], 0.5)]).unwrap();
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.3]),
            PsdMatrix::identity(2),
        )
        .unwrap();
        let sigma = PsdMatrix::identity(2);
        let sol = solve_time_dependent(&sigma, 0.5, 2.0, 10, &pool, &sys).unwrap();
        assert_eq!(sol.p.as_slice(), &[1.0]);
        let expected = min_eig(&(DMatrix::identity(2, 2) + pool.information(0).as_matrix() * 5.0));
        assert!((sol.lambda - expected).abs() < 1e-12);
    }

    #[test]
    fn fallback_agrees_on_symmetric_pool() {
        let (pool, sys) = symmetric_setup();
        let joint = rho_star_joint(&pool).unwrap();
        let fb = solve_fallback(
            &GridMode::TimeDependent(PsdMatrix::identity(2)),
            &joint,
            0.5,
            4.0,
            50,
            &pool,
            &sys,
        )
        .unwrap();
        assert!((fb.lambda - 13.5).abs() < 1e-4, "{fb:?}");
        let ss = solve_fallback(&GridMode::SteadyState, &joint, 0.5, 4.0, 50, &pool, &sys).unwrap();
        assert!((ss.lambda - 13.5).abs() < 1e-4, "{ss:?}");
    }

    #[test]
    fn uniform_baseline_symmetric() {
        let (pool, sys) = symmetric_setup();
        let base = uniform_baseline(&pool, 200, 0.05, &sys).unwrap();
        assert!((base.rho_u - 2.0).abs() < 1e-12);
        assert!(matches!(
            uniform_baseline(&pool, 5, 0.05, &sys),
            Err(Error::SampleSizeInfeasible { .. })
        ));
    }
}
