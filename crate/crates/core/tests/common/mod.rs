#![allow(dead_code)]

use concsel::matrix::PsdMatrix;
use concsel::sampling::RngStream;
use concsel::system::{CandidateSensor, LtiSystem, SensorPool};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

pub fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| DMatrix::from_row_slice(rows, cols, &v))
}

/// `BBᵀ + shift·I`.
pub fn pd(m: usize, shift: f64) -> impl Strategy<Value = PsdMatrix> {
    matrix(m, m).prop_map(move |b| {
        PsdMatrix::from_matrix(&b * b.transpose() + DMatrix::identity(m, m) * shift).unwrap()
    })
}

/// Rank-deficient allowed.
pub fn psd(m: usize) -> impl Strategy<Value = PsdMatrix> {
    (1..=m)
        .prop_flat_map(move |r| matrix(m, r))
        .prop_map(move |b| PsdMatrix::from_matrix(&b * b.transpose()).unwrap())
}

pub fn dim() -> impl Strategy<Value = usize> {
    1usize..=4
}

pub fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).amax() <= tol * (1.0 + a.amax().max(b.amax()))
}

pub fn uniform(rng: &mut RngStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.next_uniform()
}

/// Random pool of `n_c` scalar sensors in dimension `m` with noise variances in `[0.2, 1)`.
pub fn random_pool(rng: &mut RngStream, m: usize, n_c: usize) -> SensorPool {
    let sensors = (0..n_c)
        .map(|_| {
            let c = DVector::from_fn(m, |_, _| uniform(rng, -1.0, 1.0));
            CandidateSensor::new(c, uniform(rng, 0.2, 1.0)).unwrap()
        })
        .collect();
    SensorPool::new(sensors).unwrap()
}

/// Random system with spectral radius of `A` scaled to `radius`.
pub fn random_system(rng: &mut RngStream, m: usize, radius: f64) -> LtiSystem {
    let a = DMatrix::from_fn(m, m, |_, _| uniform(rng, -1.0, 1.0));
    let sr = a
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
        .max(1e-3);
    LtiSystem::new(
        a * (radius / sr),
        PsdMatrix::from_diagonal(&vec![0.5; m]).unwrap(),
    )
    .unwrap()
}
