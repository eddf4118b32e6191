//! Dense symmetric-matrix algebra.
//!
//! Everything downstream (covariance recursions, concentration bounds, the
//! conic programs) speaks in terms of [`SymmetricMatrix`] and [`PsdMatrix`].
//! The Kalman-style matrix maps `f1`..`f4`, the binomial mass `f5` and the
//! probability clamp [`clamp_phi`] live here as free functions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use statrs::function::factorial::{binomial, ln_binomial};

use crate::error::{Error, Result};

/// Default tolerance for Loewner comparisons.
pub const LOEWNER_TOL: f64 = 1e-8;

/// Relative cutoff below which eigenvalues count as zero (numerical rank).
pub const RANK_TOL: f64 = 1e-10;

/// Relative scale of the PSD membership tolerance.
pub const PSD_REL_TOL: f64 = 1e-9;

/// Square real matrix whose entries satisfy `m[(i, j)] == m[(j, i)]` exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Wraps `m`, rejecting non-square, empty, non-finite or visibly
    /// asymmetric input. Entries are mirrored from the upper triangle.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension {
                context: "symmetric matrix (columns)",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(Error::InvalidInput(
                "matrix order must be at least 1".into(),
            ));
        }
        check_finite(&m)?;
        let scale = 1.0 + m.amax();
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(mirror_upper(m)))
    }

    /// Symmetrizes `m` as `(m + mᵀ) / 2` without checking how asymmetric it was.
    pub(crate) fn symmetrize(m: DMatrix<f64>) -> Self {
        Self(symmetrize(&m))
    }

    pub fn identity(order: usize) -> Self {
        Self(DMatrix::identity(order, order))
    }

    pub fn zeros(order: usize) -> Self {
        Self(DMatrix::zeros(order, order))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// `scale * v vᵀ`.
    pub fn outer(v: &DVector<f64>, scale: f64) -> Self {
        Self(symmetrize(&(v * v.transpose() * scale)))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self(&self.0 * s)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        same_order(self, other, "matrix sum")?;
        Ok(Self(&self.0 + &other.0))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        same_order(self, other, "matrix difference")?;
        Ok(Self(&self.0 - &other.0))
    }

    /// `T M Tᵀ` for an arbitrary (compatible) `T`.
    pub fn congruence(&self, t: &DMatrix<f64>) -> Result<Self> {
        if t.ncols() != self.order() {
            return Err(Error::Dimension {
                context: "congruence transform",
                expected: self.order(),
                found: t.ncols(),
            });
        }
        Ok(Self::symmetrize(t * &self.0 * t.transpose()))
    }

    pub fn eigen(&self) -> SymmetricEigen<f64, nalgebra::Dyn> {
        SymmetricEigen::new(self.0.clone())
    }

    /// Largest absolute eigenvalue, i.e. `λ̄(|M|)`.
    pub fn spectral_radius(&self) -> f64 {
        self.eigen().eigenvalues.amax()
    }

    /// Tolerance used for PSD membership of this matrix.
    pub fn psd_tolerance(&self) -> f64 {
        PSD_REL_TOL * (1.0 + self.spectral_radius())
    }

    pub fn is_psd(&self) -> bool {
        let eig = self.eigen();
        let radius = eig.eigenvalues.amax();
        eig.eigenvalues.min() >= -PSD_REL_TOL * (1.0 + radius)
    }

    /// Infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        norm_inf(&self.0)
    }

    /// Inverse of a positive-definite matrix; falls back to LU when the
    /// Cholesky factorization breaks down.
    pub fn inverse(&self) -> Result<Self> {
        spd_inverse(&self.0).map(Self)
    }

    /// Symmetric square root with negative eigenvalues clamped at zero.
    pub fn sqrt_psd(&self) -> Self {
        let eig = self.eigen();
        let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        Self::symmetrize(
            &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose(),
        )
    }
}

/// Symmetric matrix certified positive semi-definite at construction.
#[derive(Clone, Debug, PartialEq)]
pub struct PsdMatrix(SymmetricMatrix);

impl PsdMatrix {
    pub fn new(base: SymmetricMatrix) -> Result<Self> {
        let eig = base.eigen();
        let radius = eig.eigenvalues.amax();
        let min = eig.eigenvalues.min();
        if min < -PSD_REL_TOL * (1.0 + radius) {
            return Err(Error::InvalidInput(format!(
                "matrix is not positive semi-definite (min eigenvalue {min:e})"
            )));
        }
        Ok(Self(base))
    }

    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        Self::new(SymmetricMatrix::new(m)?)
    }

    /// Wraps a matrix that is PSD by construction (sums of PSD terms,
    /// inverses of p.d. matrices). Only symmetrizes.
    pub(crate) fn from_trusted(m: DMatrix<f64>) -> Self {
        Self(SymmetricMatrix::symmetrize(m))
    }

    pub fn identity(order: usize) -> Self {
        Self(SymmetricMatrix::identity(order))
    }

    pub fn zeros(order: usize) -> Self {
        Self(SymmetricMatrix::zeros(order))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        if diag.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidInput(
                "diagonal entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self(SymmetricMatrix::from_diagonal(diag)))
    }

    pub fn order(&self) -> usize {
        self.0.order()
    }

    pub fn sym(&self) -> &SymmetricMatrix {
        &self.0
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        self.0.as_matrix()
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0.into_matrix()
    }

    /// Non-negative scaling stays PSD.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::Domain(format!(
                "PSD scaling factor must be >= 0, got {s}"
            )));
        }
        Ok(Self(self.0.scaled(s)))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        Ok(Self(self.0.add(&other.0)?))
    }

    pub fn inverse(&self) -> Result<Self> {
        Ok(Self(self.0.inverse()?))
    }

    pub fn sqrt(&self) -> Self {
        Self(self.0.sqrt_psd())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        min_eigenvalue(&self.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        max_eigenvalue(&self.0)
    }
}

impl AsRef<SymmetricMatrix> for PsdMatrix {
    fn as_ref(&self) -> &SymmetricMatrix {
        &self.0
    }
}

impl AsRef<SymmetricMatrix> for SymmetricMatrix {
    fn as_ref(&self) -> &SymmetricMatrix {
        self
    }
}

/// Argument of the probability clamp; must not exceed one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClampInput(f64);

impl ClampInput {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_nan() || gamma > 1.0 {
            return Err(Error::Domain(format!(
                "clamp argument must lie in (-inf, 1], got {gamma}"
            )));
        }
        Ok(Self(gamma))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

pub fn min_eigenvalue(m: &SymmetricMatrix) -> f64 {
    m.eigen().eigenvalues.min()
}

pub fn max_eigenvalue(m: &SymmetricMatrix) -> f64 {
    m.eigen().eigenvalues.max()
}

/// `A ⪯ B` up to `tol`: true iff `λ̲(B − A) ≥ −tol`.
pub fn loewner_leq<A: AsRef<SymmetricMatrix>, B: AsRef<SymmetricMatrix>>(
    a: A,
    b: B,
    tol: f64,
) -> Result<bool> {
    let (a, b) = (a.as_ref(), b.as_ref());
    let diff = b.sub(a)?;
    Ok(min_eigenvalue(&diff) >= -tol)
}

/// Moore–Penrose pseudo-inverse through the eigendecomposition. Eigenvalues
/// below `RANK_TOL · λ̄` are treated as zero.
pub fn pseudo_inverse(m: &PsdMatrix) -> SymmetricMatrix {
    let eig = m.sym().eigen();
    let cutoff = RANK_TOL * eig.eigenvalues.amax();
    let inv = eig.eigenvalues.map(|l| {
        if l.abs() > cutoff && l != 0.0 {
            1.0 / l
        } else {
            0.0
        }
    });
    SymmetricMatrix::symmetrize(
        &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose(),
    )
}

/// Filtered covariance update in gain form: `Λ − ΛΞᵀ(Γ + ΞΛΞᵀ)⁻¹ΞΛ`.
pub fn f1(lambda: &PsdMatrix, xi: &DMatrix<f64>, gamma: &PsdMatrix) -> Result<PsdMatrix> {
    let m = lambda.order();
    if xi.ncols() != m {
        return Err(Error::Dimension {
            context: "f1 output matrix columns",
            expected: m,
            found: xi.ncols(),
        });
    }
    if gamma.order() != xi.nrows() {
        return Err(Error::Dimension {
            context: "f1 noise covariance order",
            expected: xi.nrows(),
            found: gamma.order(),
        });
    }
    let l = lambda.as_matrix();
    let inner = gamma.as_matrix() + xi * l * xi.transpose();
    let inner_inv = general_inverse(&symmetrize(&inner)).ok_or(Error::Singular("f1: Γ + ΞΛΞᵀ"))?;
    let lx = l * xi.transpose();
    Ok(PsdMatrix::from_trusted(
        l - &lx * inner_inv * lx.transpose(),
    ))
}

/// Predict-then-update map `((AΛAᵀ + Q)⁻¹ + Θ)⁻¹`.
pub fn f2(
    lambda: &PsdMatrix,
    theta: &PsdMatrix,
    a: &DMatrix<f64>,
    q: &PsdMatrix,
) -> Result<PsdMatrix> {
    let m = lambda.order();
    check_square(a, m, "f2 state matrix")?;
    if theta.order() != m || q.order() != m {
        return Err(Error::Dimension {
            context: "f2 operand order",
            expected: m,
            found: theta.order().max(q.order()),
        });
    }
    f2_raw(lambda.as_matrix(), theta.as_matrix(), a, q.as_matrix()).map(PsdMatrix::from_trusted)
}

/// Information-form update `(Λ⁻¹ + ΞᵀΓ⁻¹Ξ)⁻¹` for p.d. `Λ`, `Γ`.
pub fn f3(lambda: &PsdMatrix, xi: &DMatrix<f64>, gamma: &PsdMatrix) -> Result<PsdMatrix> {
    let m = lambda.order();
    if xi.ncols() != m {
        return Err(Error::Dimension {
            context: "f3 output matrix columns",
            expected: m,
            found: xi.ncols(),
        });
    }
    if gamma.order() != xi.nrows() {
        return Err(Error::Dimension {
            context: "f3 noise covariance order",
            expected: xi.nrows(),
            found: gamma.order(),
        });
    }
    let l_inv = strict_spd_inverse(lambda.as_matrix()).ok_or(Error::Singular("f3: Λ"))?;
    let g_inv = strict_spd_inverse(gamma.as_matrix()).ok_or(Error::Singular("f3: Γ"))?;
    let info = l_inv + xi.transpose() * g_inv * xi;
    spd_inverse(&info)
        .map(PsdMatrix::from_trusted)
        .map_err(|_| Error::Singular("f3: information matrix"))
}

/// Prediction `AΛAᵀ + Q`.
pub fn f4(lambda: &PsdMatrix, a: &DMatrix<f64>, q: &PsdMatrix) -> Result<PsdMatrix> {
    let m = lambda.order();
    check_square(a, m, "f4 state matrix")?;
    if q.order() != m {
        return Err(Error::Dimension {
            context: "f4 process noise order",
            expected: m,
            found: q.order(),
        });
    }
    Ok(PsdMatrix::from_trusted(
        a * lambda.as_matrix() * a.transpose() + q.as_matrix(),
    ))
}

/// Binomial mass `C(n, k) pᵏ (1 − p)ⁿ⁻ᵏ`; log space above 170 trials.
pub fn f5(n_s: u64, k: u64, p: f64) -> Result<f64> {
    if k > n_s {
        return Err(Error::Domain(format!(
            "binomial count {k} exceeds trials {n_s}"
        )));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!(
            "probability must lie in [0, 1], got {p}"
        )));
    }
    if p == 0.0 {
        return Ok(if k == 0 { 1.0 } else { 0.0 });
    }
    if p == 1.0 {
        return Ok(if k == n_s { 1.0 } else { 0.0 });
    }
    if n_s <= 170 {
        let mass = binomial(n_s, k) * p.powi(k as i32) * (1.0 - p).powi((n_s - k) as i32);
        return Ok(mass.min(1.0));
    }
    let (n, kf) = (n_s as f64, k as f64);
    let log_coef = ln_binomial(n_s, k);
    let log_mass = log_coef + kf * p.ln() + (n - kf) * (-p).ln_1p();
    Ok(log_mass.exp().min(1.0))
}

/// Clamp `Φ(γ)`: identity on `[0, 1]`, zero below.
pub fn clamp_phi(gamma: ClampInput) -> f64 {
    gamma.value().max(0.0)
}

/// Convenience wrapper for callers holding a raw value.
pub fn phi(gamma: f64) -> Result<f64> {
    Ok(clamp_phi(ClampInput::new(gamma)?))
}

// ---------------------------------------------------------------------------
// raw helpers shared with the recursions and the solver

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn mirror_upper(mut m: DMatrix<f64>) -> DMatrix<f64> {
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            m[(j, i)] = m[(i, j)];
        }
    }
    m
}

pub(crate) fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput("matrix has non-finite entries".into()))
    }
}

fn check_square(a: &DMatrix<f64>, m: usize, context: &'static str) -> Result<()> {
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::Dimension {
            context,
            expected: m,
            found: if a.nrows() != m { a.nrows() } else { a.ncols() },
        });
    }
    Ok(())
}

fn same_order(a: &SymmetricMatrix, b: &SymmetricMatrix, context: &'static str) -> Result<()> {
    if a.order() != b.order() {
        return Err(Error::Dimension {
            context,
            expected: a.order(),
            found: b.order(),
        });
    }
    Ok(())
}

/// Cholesky-only inverse; `None` if the matrix is not numerically p.d.
pub(crate) fn strict_spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(symmetrize(m))?;
    let inv = chol.inverse();
    inv.iter().all(|x| x.is_finite()).then(|| symmetrize(&inv))
}

pub(crate) fn general_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(inv) = strict_spd_inverse(m) {
        return Some(inv);
    }
    let inv = m.clone().lu().try_inverse()?;
    inv.iter().all(|x| x.is_finite()).then_some(inv)
}

pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    general_inverse(m)
        .map(|x| symmetrize(&x))
        .ok_or(Error::Singular("matrix inverse"))
}

pub(crate) fn f2_raw(
    lambda: &DMatrix<f64>,
    theta: &DMatrix<f64>,
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pred = a * lambda * a.transpose() + q;
    let pred_inv = strict_spd_inverse(&pred).ok_or(Error::Singular("f2: AΛAᵀ + Q"))?;
    spd_inverse(&(pred_inv + theta)).map_err(|_| Error::Singular("f2: information matrix"))
}
