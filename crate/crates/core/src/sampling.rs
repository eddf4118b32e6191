//! Random selections: with-replacement draws, capped rejection sampling and
//! partitioned (heterogeneous) ensembles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::concentration::{alpha, ConstraintSpec};
use crate::error::{Error, Result};
use crate::system::{Distribution, Partitioning, Selection, SelectionKind};

/// Identifier of the generator family written into run metadata.
pub const RNG_ALGORITHM: &str = "chacha8";

/// Fallback rejection budget when `α` is not positive.
pub const DEFAULT_MAX_ATTEMPTS: u64 = 1_000_000;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of sub-stream `index` of a master seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0xA076_1D64_78BD_642F)))
}

/// Seeded single-owner generator with a count of consumed variates.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha8Rng,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
        }
    }

    /// Independent stream for trial `index` of master seed `seed`.
    pub fn substream(seed: u64, index: u64) -> Self {
        Self::new(derive_seed(seed, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm_id(&self) -> &'static str {
        RNG_ALGORITHM
    }

    /// Number of variates drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Uniform on `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.random::<f64>()
    }

    /// Uniform integer on `[0, n)`.
    pub fn next_below(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.rng.random_range(0..n)
    }

    /// `k` distinct indices from `[0, n)`, uniformly.
    pub fn subset(&mut self, n: usize, k: usize) -> Vec<usize> {
        self.counter += k as u64;
        rand::seq::index::sample(&mut self.rng, n, k).into_vec()
    }
}

/// Inverse-transform sampler for a categorical distribution.
#[derive(Clone, Debug)]
pub struct CategoricalSampler {
    p: Distribution,
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(p: Distribution) -> Self {
        let mut cdf = Vec::with_capacity(p.len());
        let mut acc = 0.0;
        for &x in p.as_slice() {
            acc += x;
            cdf.push(acc);
        }
        // pin the tail at exactly 1 from the last category with mass on
        let last = p
            .as_slice()
            .iter()
            .rposition(|x| *x > 0.0)
            .unwrap_or(p.len() - 1);
        for c in &mut cdf[last..] {
            *c = 1.0;
        }
        Self { p, cdf }
    }

    pub fn distribution(&self) -> &Distribution {
        &self.p
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn len(&self) -> usize {
        self.cdf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cdf.is_empty()
    }

    /// 0-based category for a uniform variate `u ∈ [0, 1)`: first `i` with `u < cdf[i]`.
    pub fn index_for(&self, u: f64) -> usize {
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }

    pub fn draw(&self, rng: &mut RngStream) -> usize {
        self.index_for(rng.next_uniform())
    }
}

/// `n_s` i.i.d. indices; consumes exactly `n_s` variates.
pub fn draw_homogeneous(
    sampler: &CategoricalSampler,
    n_s: usize,
    rng: &mut RngStream,
) -> Selection {
    Selection::homogeneous((0..n_s).map(|_| sampler.draw(rng)).collect())
}

/// Maps given uniform variates through the sampler.
pub fn draw_from_uniforms(sampler: &CategoricalSampler, uniforms: &[f64]) -> Selection {
    Selection::homogeneous(uniforms.iter().map(|&u| sampler.index_for(u)).collect())
}

/// Redraws until no candidate exceeds its cap.
///
/// The budget defaults to `⌈50/α⌉` when `α > 0` and [`DEFAULT_MAX_ATTEMPTS`] otherwise.
pub fn draw_constrained(
    sampler: &CategoricalSampler,
    n_s: usize,
    spec: &ConstraintSpec,
    rng: &mut RngStream,
    max_attempts: Option<u64>,
) -> Result<Selection> {
    if n_s == 0 {
        return Err(Error::InvalidInput("n_s must be positive".into()));
    }
    let caps = spec.checked_caps(n_s as u64, sampler.distribution())?;
    let mut alpha_cache = None;
    let mut get_alpha = || -> Result<f64> {
        if alpha_cache.is_none() {
            alpha_cache = Some(alpha(spec, n_s as u64, sampler.distribution())?);
        }
        Ok(alpha_cache.unwrap_or(f64::NAN))
    };
    let budget = match max_attempts {
        Some(b) => b,
        None => {
            let a = get_alpha()?;
            if a > 0.0 {
                (50.0 / a).ceil() as u64
            } else {
                DEFAULT_MAX_ATTEMPTS
            }
        }
    };
    let n_c = sampler.len();
    let mut counts = vec![0u64; n_c];
    let mut indices = vec![0usize; n_s];
    for attempt in 1..=budget {
        counts.iter_mut().for_each(|c| *c = 0);
        let mut ok = true;
        for slot in indices.iter_mut() {
            let i = sampler.draw(rng);
            *slot = i;
            counts[i] += 1;
            if counts[i] > caps[i] {
                ok = false;
            }
        }
        if ok {
            return Ok(Selection::new(
                indices,
                SelectionKind::Constrained {
                    rejection_count: attempt,
                },
            ));
        }
    }
    let a = get_alpha()?;
    Err(Error::RejectionBudget {
        attempts: budget,
        alpha: a,
        expected_draws: if a > 0.0 { 1.0 / a } else { f64::INFINITY },
    })
}

/// Concatenation of independent per-partition draws, indices in pool coordinates.
pub fn draw_heterogeneous(
    partitioning: &Partitioning,
    samplers: &[CategoricalSampler],
    rng: &mut RngStream,
) -> Result<Selection> {
    let k = partitioning.num_partitions();
    if samplers.len() != k {
        return Err(Error::Dimension {
            context: "per-partition samplers",
            expected: k,
            found: samplers.len(),
        });
    }
    let mut indices = Vec::with_capacity(partitioning.total_samples());
    for (i, sampler) in samplers.iter().enumerate() {
        let range = partitioning.range(i);
        if sampler.len() != range.len() {
            return Err(Error::Dimension {
                context: "partition sampler size",
                expected: range.len(),
                found: sampler.len(),
            });
        }
        for _ in 0..partitioning.sample_sizes()[i] {
            indices.push(range.start + sampler.draw(rng));
        }
    }
    Ok(Selection::new(indices, SelectionKind::Heterogeneous))
}
