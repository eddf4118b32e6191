//! Covariance recursions of the Kalman filter for a fixed information matrix.
//!
//! Both the "truth" covariance of a drawn selection and the concentration
//! bounds are fixed points of the same map `P ↦ f2(P, Θ)`; only `Θ` differs.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{f2_raw, f4, norm_inf, PsdMatrix};
use crate::system::{information_detectable, information_sum, LtiSystem, Selection, SensorPool};

/// Absolute ∞-norm residual at which the fixed-point iteration stops.
pub const DARE_TOL: f64 = 1e-11;
pub const DARE_MAX_ITER: usize = 100_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyStateOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Run the PBH test on `(A, Θ^{1/2})` before iterating.
    pub check_detectability: bool,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        Self {
            tol: DARE_TOL,
            max_iter: DARE_MAX_ITER,
            check_detectability: true,
        }
    }
}

/// Filtered covariances `P(0..=T)` and one-step predictions `Σ(1..=T)`.
#[derive(Clone, Debug)]
pub struct CovarianceTrajectory {
    /// `filtered[t] = P(t)`.
    pub filtered: Vec<PsdMatrix>,
    /// `predicted[t] = Σ(t + 1) = A P(t) Aᵀ + Q`.
    pub predicted: Vec<PsdMatrix>,
}

impl CovarianceTrajectory {
    pub fn horizon(&self) -> usize {
        self.filtered.len() - 1
    }
}

#[derive(Clone, Debug)]
pub struct SteadyStateResult {
    pub p: PsdMatrix,
    pub iterations: usize,
    /// `‖P − f2(P, Θ)‖∞` of the returned `P`.
    pub residual: f64,
}

fn check_orders(system: &LtiSystem, theta: &PsdMatrix, p0: &PsdMatrix) -> Result<()> {
    let m = system.state_dim();
    for (ctx, found) in [
        ("information matrix order", theta.order()),
        ("initial covariance order", p0.order()),
    ] {
        if found != m {
            return Err(Error::Dimension {
                context: ctx,
                expected: m,
                found,
            });
        }
    }
    Ok(())
}

/// Iterates `P(t+1) = f2(P(t), Θ)` exactly `horizon` times.
pub fn propagate_filtered(
    p0: &PsdMatrix,
    theta: &PsdMatrix,
    system: &LtiSystem,
    horizon: usize,
) -> Result<CovarianceTrajectory> {
    check_orders(system, theta, p0)?;
    if nalgebra::Cholesky::new(p0.as_matrix().clone()).is_none() {
        return Err(Error::InvalidInput(
            "initial covariance must be positive definite".into(),
        ));
    }
    let mut filtered = Vec::with_capacity(horizon + 1);
    let mut predicted = Vec::with_capacity(horizon);
    filtered.push(p0.clone());
    for _ in 0..horizon {
        let last = filtered.last().expect("non-empty");
        predicted.push(f4(last, system.a(), system.q())?);
        let next = f2_raw(
            last.as_matrix(),
            theta.as_matrix(),
            system.a(),
            system.q().as_matrix(),
        )?;
        filtered.push(PsdMatrix::from_trusted(next));
    }
    Ok(CovarianceTrajectory {
        filtered,
        predicted,
    })
}

/// Fixed point of `P ↦ f2(P, Θ)` by plain iteration from `p0`.
pub fn steady_state(
    theta: &PsdMatrix,
    system: &LtiSystem,
    p0: &PsdMatrix,
) -> Result<SteadyStateResult> {
    steady_state_with(theta, system, p0, SteadyStateOptions::default())
}

pub fn steady_state_with(
    theta: &PsdMatrix,
    system: &LtiSystem,
    p0: &PsdMatrix,
    opts: SteadyStateOptions,
) -> Result<SteadyStateResult> {
    check_orders(system, theta, p0)?;
    if opts.check_detectability && !information_detectable(system.a(), theta) {
        return Err(Error::Undetectable("(A, Θ^1/2) fails the PBH test".into()));
    }
    let (p, iterations, residual) = fixed_point(
        theta.as_matrix(),
        system.a(),
        system.q().as_matrix(),
        p0.as_matrix().clone(),
        opts.tol,
        opts.max_iter,
    )?;
    Ok(SteadyStateResult {
        p: PsdMatrix::from_trusted(p),
        iterations,
        residual,
    })
}

pub(crate) fn fixed_point(
    theta: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    mut p: DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<(DMatrix<f64>, usize, f64)> {
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        let next = f2_raw(&p, theta, a, q)?;
        residual = norm_inf(&(&next - &p));
        if !residual.is_finite() {
            break;
        }
        if residual <= tol {
            return Ok((p, it, residual));
        }
        p = next;
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

/// Steady-state covariance of a concrete selection, `Θ = C_Sᵀ R_S⁻¹ C_S`.
pub fn selection_steady_state(
    pool: &SensorPool,
    sel: &Selection,
    system: &LtiSystem,
    p0: &PsdMatrix,
) -> Result<SteadyStateResult> {
    let theta = information_sum(pool, sel)?;
    steady_state(&theta, system, p0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CandidateSensor;
    use nalgebra::DVector;

    fn scalar_system(a: f64, q: f64) -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_element(1, 1, a),
            PsdMatrix::from_diagonal(&[q]).unwrap(),
        )
        .unwrap()
    }

    fn s(x: f64) -> PsdMatrix {
        PsdMatrix::from_diagonal(&[x]).unwrap()
    }

    #[test]
    fn propagate_cases() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            PsdMatrix::from_diagonal(&[0.5, 2.0]).unwrap(),
        )
        .unwrap();
        let traj =
            propagate_filtered(&PsdMatrix::identity(2), &PsdMatrix::zeros(2), &sys, 4).unwrap();
        assert_eq!(traj.horizon(), 4);
        for p in &traj.filtered[1..] {
            assert!((p.as_matrix() - sys.q().as_matrix()).amax() < 1e-15);
        }
        let scalar = propagate_filtered(&s(1.0), &s(1.0), &scalar_system(0.5, 0.5), 1).unwrap();
        assert!((scalar.filtered[1].as_matrix()[(0, 0)] - 3.0 / 7.0).abs() < 1e-15);
        let none = propagate_filtered(&s(1.0), &s(1.0), &scalar_system(0.5, 0.5), 0).unwrap();
        assert_eq!(none.filtered.len(), 1);
        assert!(none.predicted.is_empty());
    }

    #[test]
    fn scalar_quadratic_fixed_point() {
        let r = steady_state(&s(1.0), &scalar_system(0.5, 0.5), &s(1.0)).unwrap();
        let exact = (-5.0 + 33f64.sqrt()) / 2.0;
        assert!((r.p.as_matrix()[(0, 0)] - exact).abs() < 1e-10);
        assert!(r.residual <= DARE_TOL);
    }

    #[test]
    fn large_information_shrinks_covariance() {
        let r = steady_state(&s(1e6), &scalar_system(0.5, 0.5), &s(1.0)).unwrap();
        assert!(r.p.max_eigenvalue() <= 1e-5);
    }

    #[test]
    fn zero_dynamics_is_one_step() {
        let sys = LtiSystem::new(
            DMatrix::zeros(2, 2),
            PsdMatrix::from_diagonal(&[0.5, 2.0]).unwrap(),
        )
        .unwrap();
        let theta = PsdMatrix::from_diagonal(&[1.0, 3.0]).unwrap();
        let r = steady_state(&theta, &sys, &PsdMatrix::identity(2)).unwrap();
        let expected = (sys.q().inverse().unwrap().as_matrix() + theta.as_matrix())
            .try_inverse()
            .unwrap();
        assert!((r.p.as_matrix() - expected).amax() < 1e-14);
        assert!(r.iterations <= 1);
    }

    #[test]
    fn undetectable_pair_is_rejected() {
        let sys = scalar_system(2.0, 0.5);
        assert!(matches!(
            steady_state(&s(0.0), &sys, &s(1.0)),
            Err(Error::Undetectable(_))
        ));
        let opts = SteadyStateOptions {
            check_detectability: false,
            max_iter: 50,
            ..Default::default()
        };
        assert!(matches!(
            steady_state_with(&s(0.0), &sys, &s(1.0), opts),
            Err(Error::Convergence { .. })
        ));
    }

    #[test]
    fn selection_steady_state_cases() {
        let sys = scalar_system(0.5, 0.5);
        let pool = crate::system::SensorPool::new(vec![CandidateSensor::new(
            DVector::from_element(1, 1.0),
            1.0,
        )
        .unwrap()])
        .unwrap();
        let r =
            selection_steady_state(&pool, &Selection::homogeneous(vec![0]), &sys, &s(1.0)).unwrap();
        assert!((r.p.as_matrix()[(0, 0)] - (-5.0 + 33f64.sqrt()) / 2.0).abs() < 1e-10);

        let mut prev = f64::INFINITY;
        for copies in 1..6 {
            let r = selection_steady_state(
                &pool,
                &Selection::homogeneous(vec![0; copies]),
                &sys,
                &s(1.0),
            )
            .unwrap();
            assert!(r.p.max_eigenvalue() < prev);
            prev = r.p.max_eigenvalue();
        }
    }
}
