//! Concentration parameters and the covariance bounds they certify.
//!
//! For a sampling distribution `p`, the sum of `n_s` i.i.d. information
//! matrices lies between `(1 − ε) n_s E[Z]` and `(1 + ε) n_s E[Z]` with
//! probability at least `1 − δ` whenever
//!
//! * `ε² / ρ = c₀ = (4 / n_s) ln(2m / δ)`, and
//! * `Z_j ⪯ ρ E[Z]` for every candidate `j`.
//!
//! Pushing those two matrix sandwiches through the Kalman recursions gives
//! lower and upper covariance bounds at a time instant or at steady state.

use nalgebra::{DMatrix, DVector};

use crate::conic::{solve_checked, Coef, ConicProblem, LmiBlock, SolveStatus, SolverSettings};
use crate::error::{Error, Result};
use crate::kalman::steady_state;
use crate::matrix::{
    loewner_leq, phi, pseudo_inverse, spd_inverse, PsdMatrix, LOEWNER_TOL, RANK_TOL,
};
use crate::system::{
    expected_information, information_detectable, weighted_information, Distribution, LtiSystem,
    Partitioning, SensorPool,
};

/// `c₀ = (4 / n_s) ln(2m / δ)`.
pub fn compute_c0(n_s: usize, m: usize, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    if n_s == 0 || m == 0 {
        return Err(Error::InvalidInput("n_s and m must be positive".into()));
    }
    Ok(4.0 / n_s as f64 * (2.0 * m as f64 / delta).ln())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    Ok(())
}

/// Smallest `n_s` with `n_s > 4 ϱ* ln(2m / δ)`.
pub fn min_sample_size(rho_star: f64, m: usize, delta: f64) -> Result<usize> {
    check_delta(delta)?;
    let threshold = 4.0 * rho_star * (2.0 * m as f64 / delta).ln();
    Ok(threshold.floor() as usize + 1)
}

/// A validated `(n_s, δ, ε, ρ, c₀, p)` tuple.
#[derive(Clone, Debug, PartialEq)]
pub struct AwParameters {
    n_s: usize,
    delta: f64,
    epsilon: f64,
    rho: f64,
    c0: f64,
    p: Distribution,
}

impl AwParameters {
    /// Builds the tuple from `ε` (so `ρ = ε² / c₀`) and checks `Z_j ⪯ ρ E[Z]` for all `j`.
    pub fn new(
        pool: &SensorPool,
        n_s: usize,
        delta: f64,
        epsilon: f64,
        p: Distribution,
    ) -> Result<Self> {
        if p.len() != pool.len() {
            return Err(Error::Dimension {
                context: "distribution length",
                expected: pool.len(),
                found: p.len(),
            });
        }
        let c0 = compute_c0(n_s, pool.state_dim(), delta)?;
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        let rho = epsilon * epsilon / c0;
        if rho < 1.0 - 1e-12 {
            return Err(Error::Domain(format!(
                "rho = {rho} is below 1; raise epsilon to at least {}",
                c0.sqrt()
            )));
        }
        let e = expected_information(pool, &p)?;
        let scaled = e.scaled(rho)?;
        let tol = LOEWNER_TOL * (1.0 + scaled.max_eigenvalue());
        for (j, z) in pool.informations().iter().enumerate() {
            if !loewner_leq(z, &scaled, tol)? {
                return Err(Error::RhoInfeasible {
                    rho,
                    rho_star: rho_star_for_distribution(pool, &p).unwrap_or(f64::INFINITY),
                    binding_candidate: j + 1,
                });
            }
        }
        Ok(Self {
            n_s,
            delta,
            epsilon,
            rho,
            c0,
            p,
        })
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn distribution(&self) -> &Distribution {
        &self.p
    }

    /// `n_s E[Z]`.
    pub fn mean_information(&self, pool: &SensorPool) -> Result<PsdMatrix> {
        expected_information(pool, &self.p)?.scaled(self.n_s as f64)
    }
}

/// Orthonormal basis (columns) of the range of a p.s.d. matrix.
pub(crate) fn range_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = nalgebra::SymmetricEigen::new(m.clone());
    let cutoff = RANK_TOL * eig.eigenvalues.amax();
    let keep: Vec<usize> = (0..eig.eigenvalues.len())
        .filter(|&i| eig.eigenvalues[i] > cutoff)
        .collect();
    DMatrix::from_fn(m.nrows(), keep.len(), |r, c| eig.eigenvectors[(r, keep[c])])
}

/// `σ_j⁻² c_jᵀ E⁺ c_j` for every candidate; `None` where `c_j ∉ range(E)`.
fn domination_ratios(pool: &SensorPool, p: &Distribution) -> Result<Vec<Option<f64>>> {
    let e = expected_information(pool, p)?;
    let e_pinv = pseudo_inverse(&e);
    let basis = range_basis(e.as_matrix());
    Ok(pool
        .sensors()
        .iter()
        .map(|s| {
            let proj = &basis * (basis.transpose() * &s.c);
            let outside = (&s.c - proj).norm();
            if outside > 1e-8 * (1.0 + s.c.norm()) {
                None
            } else {
                Some(s.c.dot(&(e_pinv.as_matrix() * &s.c)) / s.sigma2)
            }
        })
        .collect())
}

/// Minimal `ρ ≥ 1` with `Z_j ⪯ ρ E[Z]` for a fixed distribution.
pub fn rho_star_for_distribution(pool: &SensorPool, p: &Distribution) -> Result<f64> {
    let ratios = domination_ratios(pool, p)?;
    let mut best = 1.0f64;
    for (j, r) in ratios.into_iter().enumerate() {
        match r {
            Some(v) => best = best.max(v),
            None => return Err(Error::UnreachableCandidate { candidate: j + 1 }),
        }
    }
    Ok(best)
}

/// 1-based index of the candidate attaining the domination ratio at `p`.
pub fn binding_candidate(pool: &SensorPool, p: &Distribution) -> Result<usize> {
    let ratios = domination_ratios(pool, p)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (j, r) in ratios.into_iter().enumerate() {
        let v = r.unwrap_or(f64::INFINITY);
        if v > best.1 {
            best = (j, v);
        }
    }
    Ok(best.0 + 1)
}

/// Result of the joint program over `(ϱ, p)`.
#[derive(Clone, Debug)]
pub struct JointRho {
    /// Closed-form ratio at the returned certificate (never below the solver value).
    pub rho_star: f64,
    pub p: Distribution,
    pub solver_value: f64,
    pub status: SolveStatus,
    pub iterations: usize,
}

/// Assembles the program `min ϱ s.t. [E c_j; c_jᵀ ϱσ_j²] ⪰ 0 ∀j, ϱ ≥ 1`,
/// over `p ∈ Δ` when `fixed` is `None`, otherwise at the given distribution.
///
/// Blocks are written in coordinates of the range of `E` so that the
/// feasible set has an interior even for rank-deficient pools.
/// Variable 0 is `ϱ`; variables `1..=n_c` are `p` in the joint case.
pub fn domination_program(pool: &SensorPool, fixed: Option<&Distribution>) -> Result<ConicProblem> {
    let n_c = pool.len();
    let weights = match fixed {
        Some(p) => {
            if p.len() != n_c {
                return Err(Error::Dimension {
                    context: "distribution length",
                    expected: n_c,
                    found: p.len(),
                });
            }
            p.as_slice().to_vec()
        }
        None => vec![1.0 / n_c as f64; n_c],
    };
    let basis = range_basis(&weighted_information(pool, &weights));
    let r = basis.ncols();
    if r == 0 {
        return Err(Error::InvalidInput(
            "all candidate output vectors are zero".into(),
        ));
    }
    let d = r + 1;
    let reduced: Vec<DVector<f64>> = pool
        .sensors()
        .iter()
        .map(|s| basis.transpose() * &s.c)
        .collect();
    let lifted: Vec<DVector<f64>> = reduced
        .iter()
        .zip(pool.sensors())
        .map(|(c, s)| {
            let mut u = DVector::zeros(d);
            u.rows_mut(0, r).copy_from(&(c / s.sigma2.sqrt()));
            u
        })
        .collect();

    let num_vars = if fixed.is_some() { 1 } else { 1 + n_c };
    let mut prob = ConicProblem::new(num_vars);
    prob.objective[0] = -1.0;
    if fixed.is_none() {
        prob.simplex = Some(1..1 + n_c);
    }
    let fixed_e = fixed.map(|_| {
        let mut e = DMatrix::zeros(d, d);
        for (w, u) in weights.iter().zip(&lifted) {
            e += u * u.transpose() * *w;
        }
        e
    });
    for (j, (cj, s)) in reduced.iter().zip(pool.sensors()).enumerate() {
        let mut constant = fixed_e.clone().unwrap_or_else(|| DMatrix::zeros(d, d));
        for k in 0..r {
            constant[(k, r)] = cj[k];
            constant[(r, k)] = cj[k];
        }
        let mut block = LmiBlock::new(format!("domination[{}]", j + 1), constant);
        block.push(0, Coef::rank_one(s.sigma2, crate::conic::unit(d, r)));
        if fixed.is_none() {
            for (i, u) in lifted.iter().enumerate() {
                block.push(1 + i, Coef::rank_one(1.0, u.clone()));
            }
        }
        prob.add_block(block);
    }
    prob.add_block(
        LmiBlock::new("rho>=1", DMatrix::from_element(1, 1, -1.0))
            .with(0, Coef::rank_one(1.0, DVector::from_element(1, 1.0))),
    );
    Ok(prob)
}

/// Joint minimization of the domination ratio over the simplex.
pub fn rho_star_joint(pool: &SensorPool) -> Result<JointRho> {
    if pool.len() == 1 {
        return Ok(JointRho {
            rho_star: 1.0,
            p: Distribution::uniform(1),
            solver_value: 1.0,
            status: SolveStatus::Optimal,
            iterations: 0,
        });
    }
    let prob = domination_program(pool, None)?;
    let sol = solve_checked(&prob, &SolverSettings::default())?;
    let p = Distribution::from_weights(&sol.vars[1..])?;
    let rho_star = rho_star_for_distribution(pool, &p)?;
    Ok(JointRho {
        rho_star,
        p,
        solver_value: sol.vars[0],
        status: sol.status,
        iterations: sol.iterations,
    })
}

/// How `ε` is picked from the admissible interval `[√(ϱ* c₀), 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum EpsilonChoice {
    #[default]
    Midpoint,
    LowerEndpoint,
    /// Position `t ∈ [0, 1)` along the interval.
    Fraction(f64),
    Value(f64),
}

impl EpsilonChoice {
    fn resolve(self, lo: f64) -> Result<f64> {
        let eps = match self {
            EpsilonChoice::Midpoint => 0.5 * (lo + 1.0),
            EpsilonChoice::LowerEndpoint => lo,
            EpsilonChoice::Fraction(t) if (0.0..1.0).contains(&t) => lo + t * (1.0 - lo),
            EpsilonChoice::Fraction(t) => {
                return Err(Error::Domain(format!(
                    "epsilon fraction must lie in [0, 1), got {t}"
                )))
            }
            EpsilonChoice::Value(v) => v,
        };
        if eps < lo * (1.0 - 1e-12) || eps >= 1.0 {
            return Err(Error::Domain(format!(
                "epsilon {eps} outside admissible interval [{lo}, 1)"
            )));
        }
        Ok(eps.max(lo))
    }
}

/// Smallest admissible `n_s` (plus `margin`) for a fixed distribution, and
/// the matching parameters.
pub fn select_sample_size(
    pool: &SensorPool,
    p: &Distribution,
    delta: f64,
    margin: usize,
    choice: EpsilonChoice,
) -> Result<AwParameters> {
    let rho_star = rho_star_for_distribution(pool, p)?;
    let n_s = min_sample_size(rho_star, pool.state_dim(), delta)? + margin;
    parameters_at(pool, n_s, delta, rho_star, p.clone(), choice)
}

/// Feasible parameters for a given `n_s`; `p` defaults to the joint certificate.
pub fn select_parameters_for_sample_size(
    pool: &SensorPool,
    n_s: usize,
    delta: f64,
    choice: EpsilonChoice,
) -> Result<AwParameters> {
    let joint = rho_star_joint(pool)?;
    select_parameters_with(pool, &joint, n_s, delta, choice)
}

/// As [`select_parameters_for_sample_size`] with a precomputed joint solve.
pub fn select_parameters_with(
    pool: &SensorPool,
    joint: &JointRho,
    n_s: usize,
    delta: f64,
    choice: EpsilonChoice,
) -> Result<AwParameters> {
    parameters_at(pool, n_s, delta, joint.rho_star, joint.p.clone(), choice)
}

fn parameters_at(
    pool: &SensorPool,
    n_s: usize,
    delta: f64,
    rho_star: f64,
    p: Distribution,
    choice: EpsilonChoice,
) -> Result<AwParameters> {
    let m = pool.state_dim();
    let c0 = compute_c0(n_s, m, delta)?;
    if rho_star * c0 >= 1.0 {
        return Err(Error::SampleSizeInfeasible {
            n_s,
            rho_star,
            min_n_s: min_sample_size(rho_star, m, delta)?,
        });
    }
    let lo = (rho_star * c0).sqrt();
    let eps = choice.resolve(lo)?;
    AwParameters::new(pool, n_s, delta, eps, p)
}

/// Whether a matrix sum satisfies `(1 − ε) n_s E ⪯ Σ ⪯ (1 + ε) n_s E`.
pub fn aw_sandwich_holds(
    sum: &PsdMatrix,
    mean: &PsdMatrix,
    epsilon: f64,
    tol: f64,
) -> Result<bool> {
    Ok(loewner_leq(mean.scaled(1.0 - epsilon)?, sum, tol)?
        && loewner_leq(sum, mean.scaled(1.0 + epsilon)?, tol)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundScope {
    TimeInstant,
    SteadyState,
}

/// `L ⪯ P ⪯ U` with probability at least `probability_floor`.
#[derive(Clone, Debug)]
pub struct CovarianceBounds {
    pub lower: PsdMatrix,
    pub upper: PsdMatrix,
    pub probability_floor: f64,
    pub scope: BoundScope,
}

impl CovarianceBounds {
    pub fn contains(&self, p: &PsdMatrix, tol: f64) -> Result<bool> {
        Ok(loewner_leq(&self.lower, p, tol)? && loewner_leq(p, &self.upper, tol)?)
    }

    /// `λ̄(U)`.
    pub fn worst_case(&self) -> f64 {
        self.upper.max_eigenvalue()
    }

    /// `λ̄(U) − λ̄(L)`.
    pub fn gap(&self) -> f64 {
        self.upper.max_eigenvalue() - self.lower.max_eigenvalue()
    }
}

/// Time-instant bounds from a predicted covariance `Σ_t` and the mean information `n_s E[Z]`.
pub fn time_bounds_from_information(
    sigma_t: &PsdMatrix,
    mean: &PsdMatrix,
    epsilon: f64,
    floor: f64,
) -> Result<CovarianceBounds> {
    if sigma_t.order() != mean.order() {
        return Err(Error::Dimension {
            context: "predicted covariance order",
            expected: mean.order(),
            found: sigma_t.order(),
        });
    }
    let sigma_inv =
        spd_inverse(sigma_t.as_matrix()).map_err(|_| Error::Singular("predicted covariance"))?;
    let upper = spd_inverse(&(&sigma_inv + mean.as_matrix() * (1.0 - epsilon)))?;
    let lower = spd_inverse(&(&sigma_inv + mean.as_matrix() * (1.0 + epsilon)))?;
    Ok(CovarianceBounds {
        lower: PsdMatrix::from_trusted(lower),
        upper: PsdMatrix::from_trusted(upper),
        probability_floor: floor,
        scope: BoundScope::TimeInstant,
    })
}

/// Bounds on the filtered covariance one step after the predicted covariance `Σ_t`.
pub fn bounds_at_time(
    sigma_t: &PsdMatrix,
    params: &AwParameters,
    pool: &SensorPool,
) -> Result<CovarianceBounds> {
    time_bounds_from_information(
        sigma_t,
        &params.mean_information(pool)?,
        params.epsilon,
        1.0 - params.delta,
    )
}

/// Steady-state bounds for aggregate information matrices `Θ_U ⪯ Θ_L`.
pub fn steady_bounds_from_information(
    system: &LtiSystem,
    theta_upper: &PsdMatrix,
    theta_lower: &PsdMatrix,
    floor: f64,
) -> Result<CovarianceBounds> {
    if !information_detectable(system.a(), theta_upper) {
        return Err(Error::Undetectable(
            "(A, E[Z]^1/2) fails the PBH test".into(),
        ));
    }
    let p0 = PsdMatrix::identity(system.state_dim());
    let upper = steady_state(theta_upper, system, &p0)?.p;
    let lower = steady_state(theta_lower, system, &p0)?.p;
    Ok(CovarianceBounds {
        lower,
        upper,
        probability_floor: floor,
        scope: BoundScope::SteadyState,
    })
}

pub fn bounds_steady_state(
    params: &AwParameters,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<CovarianceBounds> {
    let mean = params.mean_information(pool)?;
    steady_bounds_from_information(
        system,
        &mean.scaled(1.0 - params.epsilon)?,
        &mean.scaled(1.0 + params.epsilon)?,
        1.0 - params.delta,
    )
}

/// Fused steady-state bounds for independent per-partition draws.
///
/// `params[i]` refers to the sub-pool `pool[partitioning.range(i)]`.
pub fn bounds_heterogeneous(
    partitioning: &Partitioning,
    params: &[AwParameters],
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<CovarianceBounds> {
    partitioning.check_covers(pool.len())?;
    let k = partitioning.num_partitions();
    if params.len() != k {
        return Err(Error::Dimension {
            context: "per-partition parameters",
            expected: k,
            found: params.len(),
        });
    }
    let m = pool.state_dim();
    let mut theta_u = DMatrix::zeros(m, m);
    let mut theta_l = DMatrix::zeros(m, m);
    for (i, par) in params.iter().enumerate() {
        if par.n_s != partitioning.sample_sizes()[i] {
            return Err(Error::InvalidInput(format!(
                "partition {} samples {} sensors but parameters use n_s = {}",
                i + 1,
                partitioning.sample_sizes()[i],
                par.n_s
            )));
        }
        if par.delta != partitioning.deltas()[i] {
            return Err(Error::InvalidInput(format!(
                "partition {} confidence does not match its parameters",
                i + 1
            )));
        }
        let sub = pool.slice(partitioning.range(i))?;
        let mean = par.mean_information(&sub)?;
        theta_u += mean.as_matrix() * (1.0 - par.epsilon);
        theta_l += mean.as_matrix() * (1.0 + par.epsilon);
    }
    steady_bounds_from_information(
        system,
        &PsdMatrix::from_trusted(theta_u),
        &PsdMatrix::from_trusted(theta_l),
        partitioning.probability_floor(),
    )
}

/// Per-candidate appearance caps.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ConstraintSpec {
    Explicit(Vec<u64>),
    /// The same cap `k_u` on every candidate with positive probability.
    Uniform(u64),
}

impl ConstraintSpec {
    /// Caps for a concrete distribution, with `k_i = 0` wherever `p_i = 0`.
    pub fn caps(&self, p: &Distribution) -> Result<Vec<u64>> {
        match self {
            ConstraintSpec::Explicit(k) => {
                if k.len() != p.len() {
                    return Err(Error::Dimension {
                        context: "constraint caps",
                        expected: p.len(),
                        found: k.len(),
                    });
                }
                if let Some(i) = (0..k.len()).find(|&i| p.as_slice()[i] == 0.0 && k[i] != 0) {
                    return Err(Error::Domain(format!(
                        "candidate {} has zero probability but cap {}",
                        i + 1,
                        k[i]
                    )));
                }
                Ok(k.clone())
            }
            ConstraintSpec::Uniform(ku) => Ok(p
                .as_slice()
                .iter()
                .map(|&x| if x > 0.0 { *ku } else { 0 })
                .collect()),
        }
    }

    /// Checks `n_s ∈ [k_m, k_Σ]` and returns the caps.
    pub fn checked_caps(&self, n_s: u64, p: &Distribution) -> Result<Vec<u64>> {
        let caps = self.caps(p)?;
        let k_m = caps.iter().copied().max().unwrap_or(0);
        let k_sum: u64 = caps.iter().sum();
        if n_s < k_m || n_s > k_sum {
            return Err(Error::Domain(format!(
                "n_s = {n_s} outside [k_m, k_sum] = [{k_m}, {k_sum}]"
            )));
        }
        Ok(caps)
    }
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Lower bound `α` on the probability that a homogeneous draw respects every cap.
pub fn alpha(spec: &ConstraintSpec, n_s: u64, p: &Distribution) -> Result<f64> {
    let caps = spec.checked_caps(n_s, p)?;
    // α = 1 − Σ_j ℙ[count_j > k_j]; tails are summed directly to avoid cancellation
    let mut tails = Vec::with_capacity(caps.len());
    for (&k, &pj) in caps.iter().zip(p.as_slice()) {
        let terms = (k + 1..=n_s)
            .map(|i| crate::matrix::f5(n_s, i, pj))
            .collect::<Result<Vec<_>>>()?;
        tails.push(compensated_sum(terms.into_iter()));
    }
    Ok(1.0 - compensated_sum(tails.into_iter()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConstrainedFloors {
    /// `Φ(α − δ)`: joint event of the bounds and the caps.
    pub intersection: f64,
    /// `Φ(1 − δ/α)`: bounds given an accepted draw.
    pub conditional: f64,
    /// `1/α`, `+∞` when `α ≤ 0`.
    pub expected_draws_bound: f64,
}

pub fn constrained_floors(alpha: f64, delta: f64) -> Result<ConstrainedFloors> {
    check_delta(delta)?;
    if alpha.is_nan() || alpha > 1.0 {
        return Err(Error::Domain(format!(
            "alpha must not exceed 1, got {alpha}"
        )));
    }
    if alpha <= 0.0 {
        return Ok(ConstrainedFloors {
            intersection: 0.0,
            conditional: 0.0,
            expected_draws_bound: f64::INFINITY,
        });
    }
    Ok(ConstrainedFloors {
        intersection: phi(alpha - delta)?,
        conditional: phi(1.0 - delta / alpha)?,
        expected_draws_bound: 1.0 / alpha,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CandidateSensor;

    fn sensor(c: &[f64], s2: f64) -> CandidateSensor {
        CandidateSensor::new(DVector::from_column_slice(c), s2).unwrap()
    }

    fn orthonormal_pool() -> SensorPool {
        SensorPool::new(vec![sensor(&[1.0, 0.0], 1.0), sensor(&[0.0, 1.0], 1.0)]).unwrap()
    }

    #[test]
    fn c0_cases() {
        assert!((compute_c0(100, 3, 0.05).unwrap() - 0.04 * 120f64.ln()).abs() < 1e-15);
        assert!((compute_c0(100, 3, 0.05).unwrap() - 0.1914996).abs() < 1e-7);
        let ratio = compute_c0(100, 3, 0.05).unwrap() / compute_c0(200, 3, 0.05).unwrap();
        assert!((ratio - 2.0).abs() < 1e-14);
        let d = 2.0 / std::f64::consts::E;
        assert!((compute_c0(8, 1, d).unwrap() - 0.5).abs() < 1e-14);
        assert!(compute_c0(10, 3, 1.0).is_err());
    }

    #[test]
    fn min_sample_size_cases() {
        assert_eq!(min_sample_size(2.0, 3, 0.05).unwrap(), 39);
        let one = 4.0 * 120f64.ln();
        assert_eq!(
            min_sample_size(1.0, 3, 0.05).unwrap(),
            one.floor() as usize + 1
        );
    }

    #[test]
    fn rho_star_closed_form_cases() {
        let single = SensorPool::new(vec![sensor(&[1.0, 2.0], 0.5)]).unwrap();
        assert!(
            (rho_star_for_distribution(&single, &Distribution::uniform(1)).unwrap() - 1.0).abs()
                < 1e-12
        );
        let pool = orthonormal_pool();
        assert!(
            (rho_star_for_distribution(&pool, &Distribution::uniform(2)).unwrap() - 2.0).abs()
                < 1e-12
        );
        assert!(matches!(
            rho_star_for_distribution(&pool, &Distribution::point_mass(2, 0)),
            Err(Error::UnreachableCandidate { candidate: 2 })
        ));
    }

    #[test]
    fn joint_program_symmetric_pool() {
        let joint = rho_star_joint(&orthonormal_pool()).unwrap();
        assert!((joint.rho_star - 2.0).abs() < 1e-6, "{joint:?}");
        assert!((joint.p.as_slice()[0] - 0.5).abs() < 1e-5);
        let single = rho_star_joint(&SensorPool::new(vec![sensor(&[1.0], 1.0)]).unwrap()).unwrap();
        assert_eq!(single.rho_star, 1.0);
    }

    #[test]
    fn fixed_distribution_program_matches_closed_form() {
        let pool = SensorPool::new(vec![
            sensor(&[1.0, 0.2], 0.5),
            sensor(&[0.1, 0.9], 0.5),
            sensor(&[0.6, 0.6], 1.0),
        ])
        .unwrap();
        let p = Distribution::new(vec![0.5, 0.3, 0.2]).unwrap();
        let prob = domination_program(&pool, Some(&p)).unwrap();
        let sol = solve_checked(&prob, &SolverSettings::default()).unwrap();
        let closed = rho_star_for_distribution(&pool, &p).unwrap();
        assert!(
            (sol.vars[0] - closed).abs() < 1e-6 * closed,
            "{} vs {closed}",
            sol.vars[0]
        );
    }

    #[test]
    fn parameter_selection() {
        let pool = orthonormal_pool();
        let p = Distribution::uniform(2);
        let par = select_sample_size(&pool, &p, 0.05, 0, EpsilonChoice::Midpoint).unwrap();
        assert_eq!(par.n_s(), min_sample_size(2.0, 2, 0.05).unwrap());
        assert!((par.epsilon().powi(2) / par.rho() - par.c0()).abs() < 1e-12);

        let low = select_parameters_for_sample_size(&pool, 200, 0.05, EpsilonChoice::LowerEndpoint)
            .unwrap();
        assert!((low.rho() - 2.0).abs() < 1e-6);
        assert!(matches!(
            select_parameters_for_sample_size(&pool, 10, 0.05, EpsilonChoice::Midpoint),
            Err(Error::SampleSizeInfeasible { min_n_s, .. }) if min_n_s == min_sample_size(2.0, 2, 0.05).unwrap()
        ));
    }

    #[test]
    fn time_bounds_scalar() {
        let b = time_bounds_from_information(
            &PsdMatrix::identity(1),
            &PsdMatrix::identity(1),
            0.5,
            0.95,
        )
        .unwrap();
        assert!((b.upper.as_matrix()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.lower.as_matrix()[(0, 0)] - 0.4).abs() < 1e-15);
        let tight = time_bounds_from_information(
            &PsdMatrix::identity(1),
            &PsdMatrix::identity(1),
            0.0,
            0.95,
        )
        .unwrap();
        assert_eq!(tight.lower.as_matrix(), tight.upper.as_matrix());
    }

    #[test]
    fn steady_bounds_scalar() {
        let sys = LtiSystem::new(
            DMatrix::from_element(1, 1, 0.5),
            PsdMatrix::from_diagonal(&[0.5]).unwrap(),
        )
        .unwrap();
        let one = PsdMatrix::identity(1);
        let b = steady_bounds_from_information(&sys, &one, &one, 0.95).unwrap();
        assert!((b.upper.as_matrix()[(0, 0)] - (-5.0 + 33f64.sqrt()) / 2.0).abs() < 1e-10);
        assert_eq!(b.scope, BoundScope::SteadyState);
    }

    #[test]
    fn alpha_cases() {
        let p = Distribution::uniform(2);
        assert!((alpha(&ConstraintSpec::Explicit(vec![1, 1]), 2, &p).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(
            alpha(&ConstraintSpec::Explicit(vec![5, 5]), 5, &p).unwrap(),
            1.0
        );
        let q = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let explicit = alpha(&ConstraintSpec::Explicit(vec![3, 3, 3]), 6, &q).unwrap();
        assert_eq!(explicit, alpha(&ConstraintSpec::Uniform(3), 6, &q).unwrap());
        assert!(alpha(&ConstraintSpec::Explicit(vec![1, 1]), 3, &p).is_err());
        let z = Distribution::new(vec![1.0, 0.0]).unwrap();
        assert!(alpha(&ConstraintSpec::Explicit(vec![2, 1]), 2, &z).is_err());
        assert_eq!(ConstraintSpec::Uniform(2).caps(&z).unwrap(), vec![2, 0]);
    }

    #[test]
    fn floors_cases() {
        let f = constrained_floors(0.5, 0.05).unwrap();
        assert!(
            (f.intersection - 0.45).abs() < 1e-15
                && (f.conditional - 0.9).abs() < 1e-15
                && f.expected_draws_bound == 2.0
        );
        let one = constrained_floors(1.0, 0.05).unwrap();
        assert!((one.intersection - 0.95).abs() < 1e-15 && (one.conditional - 0.95).abs() < 1e-15);
        let edge = constrained_floors(0.05, 0.05).unwrap();
        assert_eq!((edge.intersection, edge.conditional), (0.0, 0.0));
        assert!((edge.expected_draws_bound - 20.0).abs() < 1e-12);
        assert!(constrained_floors(-0.1, 0.05)
            .unwrap()
            .expected_draws_bound
            .is_infinite());
        assert!(constrained_floors(1.1, 0.05).is_err());
    }
}
