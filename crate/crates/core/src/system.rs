//! Plant model, candidate-sensor pool and selections.
//!
//! Indices are 0-based in memory. Anything written for humans (selection
//! lines, CSV, logs) uses 1-based indices so that candidate `1` is the first
//! sensor of the pool file.

use std::fmt;
use std::ops::Range;

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{PsdMatrix, RANK_TOL};

/// Tolerance on `|Σp − 1|` for probability vectors.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Linear time-invariant plant `x⁺ = A x + w`, `w ~ N(0, Q)` with `Q ≻ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    q: PsdMatrix,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, q: PsdMatrix) -> Result<Self> {
        let m = a.nrows();
        if a.ncols() != m {
            return Err(Error::Dimension {
                context: "state matrix columns",
                expected: m,
                found: a.ncols(),
            });
        }
        if q.order() != m {
            return Err(Error::Dimension {
                context: "process noise order",
                expected: m,
                found: q.order(),
            });
        }
        crate::matrix::check_finite(&a)?;
        if nalgebra::Cholesky::new(q.as_matrix().clone()).is_none() || q.min_eigenvalue() <= 0.0 {
            return Err(Error::InvalidInput(
                "process noise covariance Q must be positive definite".into(),
            ));
        }
        Ok(Self { a, q })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn q(&self) -> &PsdMatrix {
        &self.q
    }
}

/// A candidate sensor `y = cᵀx + v`, `v ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSensor {
    pub c: DVector<f64>,
    pub sigma2: f64,
}

impl CandidateSensor {
    pub fn new(c: DVector<f64>, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "measurement noise variance must be positive, got {sigma2}"
            )));
        }
        if c.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput(
                "sensor row has non-finite entries".into(),
            ));
        }
        Ok(Self { c, sigma2 })
    }

    /// Information matrix `σ⁻² c cᵀ`.
    pub fn information(&self) -> PsdMatrix {
        PsdMatrix::from_trusted(&self.c * self.c.transpose() / self.sigma2)
    }
}

/// The `n_c` distinct candidates and their cached information matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorPool {
    sensors: Vec<CandidateSensor>,
    info: Vec<PsdMatrix>,
    state_dim: usize,
}

impl SensorPool {
    pub fn new(sensors: Vec<CandidateSensor>) -> Result<Self> {
        let first = sensors
            .first()
            .ok_or_else(|| Error::InvalidInput("sensor pool is empty".into()))?;
        let state_dim = first.c.len();
        if state_dim == 0 {
            return Err(Error::InvalidInput(
                "sensor rows must have at least one entry".into(),
            ));
        }
        for (i, s) in sensors.iter().enumerate() {
            if s.c.len() != state_dim {
                return Err(Error::Dimension {
                    context: "sensor row length",
                    expected: state_dim,
                    found: s.c.len(),
                });
            }
            for (j, t) in sensors.iter().enumerate().skip(i + 1) {
                // exact comparison: uniqueness of pairs is definitional
                if s.sigma2 == t.sigma2 && s.c == t.c {
                    return Err(Error::InvalidInput(format!(
                        "candidates {} and {} are identical pairs (c, sigma2)",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        let info = sensors.iter().map(CandidateSensor::information).collect();
        Ok(Self {
            sensors,
            info,
            state_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn sensors(&self) -> &[CandidateSensor] {
        &self.sensors
    }

    pub fn sensor(&self, i: usize) -> &CandidateSensor {
        &self.sensors[i]
    }

    /// Cached `Z_i = σ_i⁻² c_i c_iᵀ`.
    pub fn information(&self, i: usize) -> &PsdMatrix {
        &self.info[i]
    }

    pub fn informations(&self) -> &[PsdMatrix] {
        &self.info
    }

    /// Sub-pool over a contiguous index range (a partition).
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.end > self.len() || range.is_empty() {
            return Err(Error::InvalidInput(format!(
                "invalid pool slice {range:?} of {}",
                self.len()
            )));
        }
        Ok(Self {
            sensors: self.sensors[range.clone()].to_vec(),
            info: self.info[range].to_vec(),
            state_dim: self.state_dim,
        })
    }

    /// Sensor rows stacked as an `n_c × m` matrix.
    pub fn output_rows(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), self.state_dim, |i, j| self.sensors[i].c[j])
    }
}

/// Probability vector on the simplex `Δⁿ`.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::InvalidInput(
                "distribution must have at least one entry".into(),
            ));
        }
        if let Some(i) = p.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidInput(format!(
                "probability {} is negative or non-finite: {}",
                i + 1,
                p[i]
            )));
        }
        let total: f64 = p.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInput(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self(p))
    }

    /// Clips tiny negative solver noise and renormalizes.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        let clipped: Vec<f64> = w.iter().map(|x| x.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidInput("weights have no positive mass".into()));
        }
        Self::new(clipped.into_iter().map(|x| x / total).collect())
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn support_size(&self) -> usize {
        self.0.iter().filter(|x| **x > 0.0).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionKind {
    Homogeneous,
    Heterogeneous,
    /// Accepted after `rejection_count` draws (the first accepted draw counts).
    Constrained {
        rejection_count: u64,
    },
}

/// Ordered sequence of pool indices; repeats allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    indices: Vec<usize>,
    kind: SelectionKind,
}

impl Selection {
    pub fn new(indices: Vec<usize>, kind: SelectionKind) -> Self {
        Self { indices, kind }
    }

    pub fn homogeneous(indices: Vec<usize>) -> Self {
        Self::new(indices, SelectionKind::Homogeneous)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn kind(&self) -> SelectionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn rejection_count(&self) -> Option<u64> {
        match self.kind {
            SelectionKind::Constrained { rejection_count } => Some(rejection_count),
            _ => None,
        }
    }

    pub fn validate(&self, pool: &SensorPool) -> Result<()> {
        match self.indices.iter().find(|&&i| i >= pool.len()) {
            Some(i) => Err(Error::InvalidInput(format!(
                "selection index {} outside pool of {}",
                i + 1,
                pool.len()
            ))),
            None => Ok(()),
        }
    }

    /// Per-candidate multiplicities.
    pub fn counts(&self, n_c: usize) -> Vec<u64> {
        let mut counts = vec![0u64; n_c];
        for &i in &self.indices {
            counts[i] += 1;
        }
        counts
    }

    /// One-line, 1-based, space-separated export.
    pub fn to_line(&self) -> String {
        self.indices
            .iter()
            .map(|i| (i + 1).to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse_line(line: &str, kind: SelectionKind) -> Result<Self> {
        let indices = line
            .split_whitespace()
            .map(|tok| match tok.parse::<usize>() {
                Ok(i) if i >= 1 => Ok(i - 1),
                _ => Err(Error::Parse {
                    line: 1,
                    message: format!("bad 1-based index '{tok}'"),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(indices, kind))
    }
}

impl fmt::Display for Selection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_line())
    }
}

/// Contiguous split of the pool into `K` disjoint partitions.
#[derive(Clone, Debug, PartialEq)]
pub struct Partitioning {
    pool_sizes: Vec<usize>,
    sample_sizes: Vec<usize>,
    deltas: Vec<f64>,
}

impl Partitioning {
    pub fn new(pool_sizes: Vec<usize>, sample_sizes: Vec<usize>, deltas: Vec<f64>) -> Result<Self> {
        let k = pool_sizes.len();
        if k == 0 {
            return Err(Error::InvalidInput(
                "partitioning needs at least one partition".into(),
            ));
        }
        if sample_sizes.len() != k || deltas.len() != k {
            return Err(Error::Dimension {
                context: "partition parameter lists",
                expected: k,
                found: sample_sizes.len().min(deltas.len()),
            });
        }
        if pool_sizes.contains(&0) || sample_sizes.contains(&0) {
            return Err(Error::InvalidInput(
                "partition sizes must be positive".into(),
            ));
        }
        if let Some(d) = deltas.iter().find(|d| !(**d > 0.0 && **d < 1.0)) {
            return Err(Error::Domain(format!(
                "partition confidence delta must lie in (0, 1), got {d}"
            )));
        }
        Ok(Self {
            pool_sizes,
            sample_sizes,
            deltas,
        })
    }

    /// Comparison-mode split: `n_c/K` candidates and `n_s/K` samples per
    /// partition, with `δ⁽ⁱ⁾ = 1 − (1 − δ)^{1/K}` so the joint floor is `1 − δ`.
    pub fn equal(n_c: usize, n_s: usize, k: usize, delta: f64) -> Result<Self> {
        if k == 0 || n_c % k != 0 || n_s % k != 0 {
            return Err(Error::Config(format!(
                "K = {k} must divide n_c = {n_c} and n_s = {n_s}"
            )));
        }
        let d = partition_delta(delta, k);
        Self::new(vec![n_c / k; k], vec![n_s / k; k], vec![d; k])
    }

    pub fn num_partitions(&self) -> usize {
        self.pool_sizes.len()
    }

    pub fn pool_sizes(&self) -> &[usize] {
        &self.pool_sizes
    }

    pub fn sample_sizes(&self) -> &[usize] {
        &self.sample_sizes
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    pub fn total_candidates(&self) -> usize {
        self.pool_sizes.iter().sum()
    }

    pub fn total_samples(&self) -> usize {
        self.sample_sizes.iter().sum()
    }

    /// 0-based half-open index range of partition `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        let start: usize = self.pool_sizes[..i].iter().sum();
        start..start + self.pool_sizes[i]
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        (0..self.num_partitions()).map(|i| self.range(i)).collect()
    }

    /// Product of the per-partition confidences.
    pub fn probability_floor(&self) -> f64 {
        self.deltas.iter().map(|d| (-d).ln_1p()).sum::<f64>().exp()
    }

    pub fn check_covers(&self, n_c: usize) -> Result<()> {
        if self.total_candidates() != n_c {
            return Err(Error::Dimension {
                context: "partition coverage of pool",
                expected: n_c,
                found: self.total_candidates(),
            });
        }
        Ok(())
    }
}

/// Per-partition confidence that makes `K` partitions jointly hold with `1 − δ`.
pub fn partition_delta(delta: f64, k: usize) -> f64 {
    // 1 - (1-δ)^{1/K} without cancellation
    -((-delta).ln_1p() / k as f64).exp_m1()
}

/// Output matrix and diagonal noise covariance of a selection.
pub fn assemble_output(pool: &SensorPool, sel: &Selection) -> Result<(DMatrix<f64>, PsdMatrix)> {
    sel.validate(pool)?;
    let m = pool.state_dim();
    let c = DMatrix::from_fn(sel.len(), m, |i, j| pool.sensor(sel.indices()[i]).c[j]);
    let r: Vec<f64> = sel
        .indices()
        .iter()
        .map(|&i| pool.sensor(i).sigma2)
        .collect();
    Ok((c, PsdMatrix::from_diagonal(&r)?))
}

/// `Σ_{i ∈ S} Z_i`, which equals `Cᵀ R⁻¹ C` of the assembled output.
pub fn information_sum(pool: &SensorPool, sel: &Selection) -> Result<PsdMatrix> {
    sel.validate(pool)?;
    let m = pool.state_dim();
    let mut acc = DMatrix::zeros(m, m);
    for &i in sel.indices() {
        acc += pool.information(i).as_matrix();
    }
    Ok(PsdMatrix::from_trusted(acc))
}

/// `E[Z] = Σ p_i Z_i`.
pub fn expected_information(pool: &SensorPool, p: &Distribution) -> Result<PsdMatrix> {
    if p.len() != pool.len() {
        return Err(Error::Dimension {
            context: "distribution length",
            expected: pool.len(),
            found: p.len(),
        });
    }
    Ok(PsdMatrix::from_trusted(weighted_information(
        pool,
        p.as_slice(),
    )))
}

pub(crate) fn weighted_information(pool: &SensorPool, w: &[f64]) -> DMatrix<f64> {
    let m = pool.state_dim();
    let mut acc = DMatrix::zeros(m, m);
    for (wi, z) in w.iter().zip(pool.informations()) {
        if *wi != 0.0 {
            acc += z.as_matrix() * *wi;
        }
    }
    acc
}

/// PBH test: every eigenvalue `λ` of `A` with `|λ| ≥ 1` must leave
/// `[λI − A; C]` with full column rank.
pub fn pbh_detectable(a: &DMatrix<f64>, c: &DMatrix<f64>) -> bool {
    let m = a.nrows();
    let eigs = a.complex_eigenvalues();
    let scale = 1.0 + a.amax().max(c.amax());
    for lam in eigs.iter() {
        if lam.norm() < 1.0 {
            continue;
        }
        let rows = m + c.nrows();
        let stacked = DMatrix::<Complex<f64>>::from_fn(rows, m, |i, j| {
            if i < m {
                let diag = if i == j { *lam } else { Complex::new(0.0, 0.0) };
                diag - Complex::new(a[(i, j)], 0.0)
            } else {
                Complex::new(c[(i - m, j)], 0.0)
            }
        });
        let sv = stacked.singular_values();
        let cutoff = RANK_TOL * scale.max(sv.max());
        let rank = sv.iter().filter(|s| **s > cutoff).count();
        if rank < m {
            return false;
        }
    }
    true
}

/// Detectability of `(A, Θ^{1/2})` for an information matrix `Θ`.
pub fn information_detectable(a: &DMatrix<f64>, theta: &PsdMatrix) -> bool {
    pbh_detectable(a, theta.sqrt().as_matrix())
}

/// Which of the sufficient detectability conditions hold for a pool.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectabilityReport {
    /// `(A, c_i)` detectable, per candidate.
    pub per_candidate: Vec<bool>,
    /// Condition (i): every candidate is detectable on its own.
    pub all_candidates: bool,
    /// `(A, E[Z]^{1/2})` detectable.
    pub mixture: bool,
    /// Condition (ii): the anchor selection, if provided, is detectable.
    pub anchor: Option<bool>,
    pub warnings: Vec<String>,
}

impl DetectabilityReport {
    /// Whether the steady-state bounds are backed by a sufficient condition.
    pub fn certified(&self) -> bool {
        self.mixture && (self.all_candidates || self.anchor == Some(true))
    }
}

pub fn check_detectability_conditions(
    system: &LtiSystem,
    pool: &SensorPool,
    p: &Distribution,
    anchor: Option<&Selection>,
) -> Result<DetectabilityReport> {
    let a = system.a();
    let per_candidate: Vec<bool> = pool
        .sensors()
        .iter()
        .map(|s| pbh_detectable(a, &DMatrix::from_row_slice(1, s.c.len(), s.c.as_slice())))
        .collect();
    let all_candidates = per_candidate.iter().all(|d| *d);
    let mixture = information_detectable(a, &expected_information(pool, p)?);
    let anchor = match anchor {
        Some(sel) if !sel.is_empty() => {
            let (c, _) = assemble_output(pool, sel)?;
            Some(pbh_detectable(a, &c))
        }
        _ => None,
    };
    let mut warnings = Vec::new();
    if !mixture {
        warnings
            .push("(A, E[Z]^1/2) is not detectable; steady-state bounds do not exist".to_string());
    }
    if !all_candidates && anchor != Some(true) {
        let bad: Vec<String> = per_candidate
            .iter()
            .enumerate()
            .filter(|(_, d)| !**d)
            .map(|(i, _)| (i + 1).to_string())
            .collect();
        warnings.push(format!(
            "neither sufficient condition holds (undetectable candidates: {}); random selections may be undetectable",
            bad.join(" ")
        ));
    }
    Ok(DetectabilityReport {
        per_candidate,
        all_candidates,
        mixture,
        anchor,
        warnings,
    })
}

/// Appends a deterministic anchor selection that makes `(A, C)` detectable.
pub fn augment_selection(
    system: &LtiSystem,
    pool: &SensorPool,
    sel: &Selection,
    anchor: &Selection,
) -> Result<Selection> {
    sel.validate(pool)?;
    if anchor.is_empty() {
        return Ok(sel.clone());
    }
    let (c, _) = assemble_output(pool, anchor)?;
    if !pbh_detectable(system.a(), &c) {
        return Err(Error::Undetectable(format!(
            "anchor selection [{}] does not make the plant detectable",
            anchor
        )));
    }
    let mut indices = sel.indices().to_vec();
    indices.extend_from_slice(anchor.indices());
    Ok(Selection::new(indices, sel.kind()))
}
