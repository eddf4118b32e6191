//! Reproducible experiment harness: instance generation, policy comparisons,
//! partitioned and capped-selection studies, CSV output with metadata.
//!
//! Every random quantity derives from `config.seed` through
//! [`derive_seed`], so a run replays bit for bit. Wall-clock timings are
//! kept in separate tables because they cannot replay.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concentration::{alpha, constrained_floors, rho_star_joint, ConstraintSpec};
use crate::error::{Error, Result};
use crate::format::Instance;
use crate::greedy::{greedy_select, GreedyConfig};
use crate::kalman::{propagate_filtered, selection_steady_state};
use crate::matrix::PsdMatrix;
use crate::optimizer::{grid_search_heterogeneous, grid_search_with, uniform_baseline, GridMode};
use crate::sampling::{
    derive_seed, draw_constrained, draw_homogeneous, CategoricalSampler, RngStream, RNG_ALGORITHM,
};
use crate::system::{
    check_detectability_conditions, expected_information, pbh_detectable, CandidateSensor,
    Distribution, LtiSystem, Partitioning, SensorPool,
};

/// Bumped whenever a CSV column changes.
pub const SCHEMA_VERSION: u32 = 1;

/// Regeneration attempts before instance generation gives up.
pub const MAX_GENERATION_ATTEMPTS: usize = 100;

// sub-stream tags
const STREAM_INSTANCE: u64 = 0;
const STREAM_TRIALS: u64 = 1 << 32;
const STREAM_GREEDY: u64 = 2 << 32;
const STREAM_CONSTRAINED: u64 = 3 << 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub m: usize,
    pub n_c: usize,
    pub n_s: Vec<usize>,
    pub delta: f64,
    pub n_p: usize,
    /// Partition counts `K` for the heterogeneous study.
    pub partitions: Vec<usize>,
    /// Subset fractions for greedy (`1` = deterministic).
    pub greedy_gammas: Vec<f64>,
    /// Uniformity factors for the capped-selection study.
    pub k_u: Vec<u64>,
    pub trials: usize,
    /// Draws per cell used to estimate the mean number of rejections.
    pub constrained_trials: usize,
    pub seed: u64,
    pub sigma2: f64,
    /// `Q = q_scale · I`.
    pub q_scale: f64,
    /// Entries of `A` and `c_i` are uniform on `[entry_low, entry_high)`.
    pub entry_low: f64,
    pub entry_high: f64,
    pub loewner_tol: f64,
    pub timing_repeats: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            m: 3,
            n_c: 42,
            n_s: (1..=10).map(|i| 40 * i).collect(),
            delta: 0.05,
            n_p: 5,
            partitions: vec![1, 2],
            greedy_gammas: vec![1.0, 0.1],
            k_u: vec![25, 50, 100, 200, 400],
            trials: 100,
            constrained_trials: 200,
            seed: 2024,
            sigma2: 0.5,
            q_scale: 0.5,
            entry_low: 0.0,
            entry_high: 1.0,
            loewner_tol: 1e-8,
            timing_repeats: 5,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.m == 0 || self.n_c == 0 {
            return fail("m and n_c must be positive");
        }
        if self.n_s.is_empty() || self.n_s.contains(&0) {
            return fail("n_s sweep must be non-empty with positive entries");
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return fail("delta must lie in (0, 1)");
        }
        if self.trials == 0 || self.n_p == 0 || self.timing_repeats == 0 {
            return fail("trials, n_p and timing_repeats must be at least 1");
        }
        if self.partitions.is_empty() || self.partitions.contains(&0) {
            return fail("partition sweep must be non-empty with positive entries");
        }
        if self.greedy_gammas.is_empty()
            || self.greedy_gammas.iter().any(|g| !(*g > 0.0 && *g <= 1.0))
        {
            return fail("greedy gammas must be non-empty and lie in (0, 1]");
        }
        if self.k_u.is_empty() {
            return fail("k_u sweep must be non-empty");
        }
        if !(self.sigma2 > 0.0 && self.q_scale > 0.0) {
            return fail("sigma2 and q_scale must be positive");
        }
        if !(self.entry_low < self.entry_high)
            || !self.entry_low.is_finite()
            || !self.entry_high.is_finite()
        {
            return fail("entry range must satisfy entry_low < entry_high");
        }
        Ok(())
    }
}

/// Random instance with every `(A, c_i)` detectable.
pub fn generate_instance(config: &ExperimentConfig, rng: &mut RngStream) -> Result<Instance> {
    config.validate()?;
    let (m, lo, width) = (
        config.m,
        config.entry_low,
        config.entry_high - config.entry_low,
    );
    let q = PsdMatrix::from_diagonal(&vec![config.q_scale; m])?;
    for _ in 0..MAX_GENERATION_ATTEMPTS {
        let a = DMatrix::from_fn(m, m, |_, _| lo + width * rng.next_uniform());
        let rows: Vec<DVector<f64>> = (0..config.n_c)
            .map(|_| DVector::from_fn(m, |_, _| lo + width * rng.next_uniform()))
            .collect();
        let all_detectable = rows
            .iter()
            .all(|c| pbh_detectable(&a, &DMatrix::from_row_slice(1, m, c.as_slice())));
        if !all_detectable {
            continue;
        }
        let sensors = rows
            .into_iter()
            .map(|c| CandidateSensor::new(c, config.sigma2))
            .collect::<Result<Vec<_>>>()?;
        let Ok(pool) = SensorPool::new(sensors) else {
            continue;
        };
        return Ok(Instance {
            system: LtiSystem::new(a, q.clone())?,
            pool,
        });
    }
    Err(Error::Generation(MAX_GENERATION_ATTEMPTS))
}

/// Instance `index` of a configuration (index 0 is the default instance).
pub fn instance_for(config: &ExperimentConfig, index: u64) -> Result<Instance> {
    generate_instance(
        config,
        &mut RngStream::substream(config.seed, STREAM_INSTANCE + index),
    )
}

/// CSV table with a header row; all cells pre-formatted.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wr = csv::Writer::from_writer(Vec::new());
        wr.write_record(&self.header)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        let bytes = wr.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Config snapshot plus output tables of one study.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub kind: &'static str,
    pub config: ExperimentConfig,
    /// Deterministic tables (replay bit-identically).
    pub tables: Vec<Table>,
    /// Wall-clock measurements.
    pub timings: Table,
}

impl RunRecord {
    /// Writes `<table>.csv` plus `<table>.meta.toml` for every table; returns the CSV paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        for table in self.tables.iter().chain(std::iter::once(&self.timings)) {
            let path = dir.join(format!("{}.csv", table.name));
            fs::write(&path, table.to_csv()?)?;
            fs::write(
                dir.join(format!("{}.meta.toml", table.name)),
                self.metadata(table),
            )?;
            out.push(path);
        }
        Ok(out)
    }

    pub fn metadata(&self, table: &Table) -> String {
        let mut meta = toml::Table::new();
        meta.insert("kind".into(), self.kind.into());
        meta.insert("table".into(), table.name.clone().into());
        meta.insert("schema_version".into(), i64::from(SCHEMA_VERSION).into());
        meta.insert("rows".into(), (table.rows.len() as i64).into());
        meta.insert("config_hash".into(), self.config.hash().into());
        meta.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
        meta.insert("rng".into(), RNG_ALGORITHM.into());
        meta.insert(
            "config".into(),
            toml::Value::try_from(&self.config).expect("config converts"),
        );
        toml::to_string(&meta).expect("metadata serializes")
    }
}

/// Writes `<name>.csv` and a `<name>.meta.toml` sidecar with provenance fields.
pub fn write_artifact(
    dir: &Path,
    name: &str,
    kind: &str,
    csv_text: &str,
    provenance: &[(&str, String)],
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{name}.csv"));
    fs::write(&path, csv_text)?;
    let mut meta = toml::Table::new();
    meta.insert("kind".into(), kind.into());
    meta.insert("table".into(), name.into());
    meta.insert("schema_version".into(), i64::from(SCHEMA_VERSION).into());
    meta.insert("crate_version".into(), env!("CARGO_PKG_VERSION").into());
    meta.insert("rng".into(), RNG_ALGORITHM.into());
    meta.insert(
        "input_hash".into(),
        hex::encode(Sha256::digest(
            provenance
                .iter()
                .map(|(k, v)| format!("{k}={v}\n"))
                .collect::<String>(),
        ))
        .into(),
    );
    for (k, v) in provenance {
        meta.insert((*k).into(), v.clone().into());
    }
    fs::write(
        dir.join(format!("{name}.meta.toml")),
        toml::to_string(&meta).expect("metadata serializes"),
    )?;
    Ok(path)
}

/// Predicted covariance `Σ(horizon)` from `P(0) = I` under the uniform-sampling
/// mean information `n_s E_u[Z]`; the default `Σ_t` for time-dependent runs.
pub fn warmup_prediction(inst: &Instance, n_s: usize, horizon: usize) -> Result<PsdMatrix> {
    if horizon == 0 {
        return Err(Error::InvalidInput(
            "warm-up horizon must be at least 1".into(),
        ));
    }
    let theta = expected_information(&inst.pool, &Distribution::uniform(inst.pool.len()))?
        .scaled(n_s as f64)?;
    let m = inst.system.state_dim();
    let traj = propagate_filtered(&PsdMatrix::identity(m), &theta, &inst.system, horizon)?;
    Ok(traj.predicted[horizon - 1].clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub n_s: usize,
    pub trial: usize,
    pub lambda_bar_p: f64,
    pub covered: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyRow {
    pub n_s: usize,
    pub status: String,
    pub epsilon: f64,
    pub rho: f64,
    pub lambda_bar_u: f64,
    pub lambda_bar_l: f64,
    pub mc_mean: f64,
    pub mc_std: f64,
    pub coverage: f64,
    /// `λ̄(P_G)` per configured greedy `γ`, same order as the config.
    pub greedy: Vec<f64>,
    pub uniform_u: f64,
    pub solve_time_ms: f64,
}

impl PolicyRow {
    fn failed(n_s: usize, status: String, n_gamma: usize) -> Self {
        let nan = f64::NAN;
        Self {
            n_s,
            status,
            epsilon: nan,
            rho: nan,
            lambda_bar_u: nan,
            lambda_bar_l: nan,
            mc_mean: nan,
            mc_std: nan,
            coverage: nan,
            greedy: vec![nan; n_gamma],
            uniform_u: nan,
            solve_time_ms: nan,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PolicyComparison {
    pub config: ExperimentConfig,
    pub rows: Vec<PolicyRow>,
    pub trials: Vec<TrialRow>,
}

/// Mean and sample standard deviation, summed in order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl PolicyComparison {
    /// Recomputes every aggregate from the trial rows and compares exactly.
    pub fn aggregates_consistent(&self) -> bool {
        self.rows.iter().all(|row| {
            let trials: Vec<&TrialRow> = self.trials.iter().filter(|t| t.n_s == row.n_s).collect();
            if trials.is_empty() {
                return row.mc_mean.is_nan();
            }
            let vals: Vec<f64> = trials.iter().map(|t| t.lambda_bar_p).collect();
            let (mean, std) = mean_std(&vals);
            let cov = trials.iter().filter(|t| t.covered).count() as f64 / trials.len() as f64;
            mean.to_bits() == row.mc_mean.to_bits()
                && std.to_bits() == row.mc_std.to_bits()
                && cov.to_bits() == row.coverage.to_bits()
        })
    }

    pub fn to_record(&self) -> RunRecord {
        let mut header = vec![
            "n_s",
            "status",
            "epsilon",
            "rho",
            "lambda_bar_U",
            "lambda_bar_L",
            "bound_gap",
            "mc_mean",
            "mc_std",
            "coverage",
        ];
        let greedy_names: Vec<String> = self
            .config
            .greedy_gammas
            .iter()
            .map(|g| format!("greedy_gamma_{g}"))
            .collect();
        header.extend(greedy_names.iter().map(String::as_str));
        header.push("uniform_U");
        let mut summary = Table::new("policy_summary", &header);
        let mut timing = Table::new("policy_timing", &["n_s", "solve_time_ms"]);
        for r in &self.rows {
            let mut cells = vec![
                r.n_s.to_string(),
                r.status.clone(),
                num(r.epsilon),
                num(r.rho),
                num(r.lambda_bar_u),
                num(r.lambda_bar_l),
                num(r.lambda_bar_u - r.lambda_bar_l),
                num(r.mc_mean),
                num(r.mc_std),
                num(r.coverage),
            ];
            cells.extend(r.greedy.iter().map(|g| num(*g)));
            cells.push(num(r.uniform_u));
            summary.rows.push(cells);
            timing
                .rows
                .push(vec![r.n_s.to_string(), format!("{:.3}", r.solve_time_ms)]);
        }
        let mut trials = Table::new(
            "policy_trials",
            &["n_s", "trial", "lambda_bar_P", "covered"],
        );
        for t in &self.trials {
            trials.rows.push(vec![
                t.n_s.to_string(),
                t.trial.to_string(),
                num(t.lambda_bar_p),
                (t.covered as u8).to_string(),
            ]);
        }
        RunRecord {
            kind: "compare",
            config: self.config.clone(),
            tables: vec![summary, trials],
            timings: timing,
        }
    }
}

pub fn run_policy_comparison(config: &ExperimentConfig) -> Result<PolicyComparison> {
    config.validate()?;
    let inst = instance_for(config, 0)?;
    run_policy_comparison_on(config, &inst)
}

/// Proposed policy (steady-state grid search + Monte Carlo), greedy and uniform, per `n_s`.
pub fn run_policy_comparison_on(
    config: &ExperimentConfig,
    inst: &Instance,
) -> Result<PolicyComparison> {
    config.validate()?;
    let (pool, system) = (&inst.pool, &inst.system);
    let report =
        check_detectability_conditions(system, pool, &Distribution::uniform(pool.len()), None)?;
    if !report.all_candidates {
        return Err(Error::Undetectable(report.warnings.join("; ")));
    }
    let joint = rho_star_joint(pool)?;
    let n_max = *config.n_s.iter().max().expect("validated non-empty");
    let n_gamma = config.greedy_gammas.len();

    // greedy prefixes: round k of one long run is the k-sensor greedy selection
    let greedy: Vec<Result<Vec<f64>>> = config
        .greedy_gammas
        .par_iter()
        .enumerate()
        .map(|(gi, &gamma)| {
            let cfg = GreedyConfig {
                gamma,
                n_s: n_max,
                seed: derive_seed(config.seed, STREAM_GREEDY + gi as u64),
            };
            greedy_select(&cfg, pool, system)
                .map(|r| r.rounds.iter().map(|x| x.lambda_bar).collect())
        })
        .collect();

    let p0 = PsdMatrix::identity(system.state_dim());
    let mut rows = Vec::with_capacity(config.n_s.len());
    let mut trials = Vec::new();
    for &n_s in &config.n_s {
        let start = Instant::now();
        let grid = match grid_search_with(
            &joint,
            n_s,
            config.n_p,
            config.delta,
            pool,
            system,
            &GridMode::SteadyState,
        ) {
            Ok(g) => g,
            Err(e) => {
                rows.push(PolicyRow::failed(n_s, format!("infeasible: {e}"), n_gamma));
                continue;
            }
        };
        let solve_time_ms = start.elapsed().as_secs_f64() * 1e3;
        let sampler = CategoricalSampler::new(grid.distribution().clone());
        let outcomes: Vec<Result<TrialRow>> = (0..config.trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = RngStream::substream(
                    config.seed,
                    STREAM_TRIALS + ((n_s as u64) << 20) + t as u64,
                );
                let sel = draw_homogeneous(&sampler, n_s, &mut rng);
                let p = selection_steady_state(pool, &sel, system, &p0)?.p;
                Ok(TrialRow {
                    n_s,
                    trial: t,
                    lambda_bar_p: p.max_eigenvalue(),
                    covered: grid.bounds.contains(&p, config.loewner_tol)?,
                })
            })
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
        let vals: Vec<f64> = outcomes.iter().map(|t| t.lambda_bar_p).collect();
        let (mc_mean, mc_std) = mean_std(&vals);
        let coverage = outcomes.iter().filter(|t| t.covered).count() as f64 / outcomes.len() as f64;
        let uniform_u = uniform_baseline(pool, n_s, config.delta, system)
            .map(|u| u.bounds.worst_case())
            .unwrap_or(f64::NAN);
        let greedy_vals = greedy
            .iter()
            .map(|g| g.as_ref().map(|v| v[n_s - 1]).unwrap_or(f64::NAN))
            .collect();
        let chosen = grid.chosen_point();
        rows.push(PolicyRow {
            n_s,
            status: chosen.status.clone(),
            epsilon: grid.params.epsilon(),
            rho: grid.params.rho(),
            lambda_bar_u: grid.bounds.worst_case(),
            lambda_bar_l: grid.bounds.lower.max_eigenvalue(),
            mc_mean,
            mc_std,
            coverage,
            greedy: greedy_vals,
            uniform_u,
            solve_time_ms,
        });
        trials.extend(outcomes);
    }
    Ok(PolicyComparison {
        config: config.clone(),
        rows,
        trials,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroRow {
    pub n_s: usize,
    pub k: usize,
    pub status: String,
    pub lambda_bar_u: f64,
    pub lambda_bar_l: f64,
    pub floor: f64,
    /// Median over repeats of the mean per-partition search time.
    pub partition_time_ms: f64,
}

#[derive(Clone, Debug)]
pub struct HeterogeneousStudy {
    pub config: ExperimentConfig,
    pub rows: Vec<HeteroRow>,
}

impl HeterogeneousStudy {
    pub fn to_record(&self) -> RunRecord {
        let mut t = Table::new(
            "hetero_summary",
            &[
                "n_s",
                "K",
                "status",
                "lambda_bar_U_H",
                "lambda_bar_L_H",
                "floor",
            ],
        );
        let mut timing = Table::new("hetero_timing", &["n_s", "K", "partition_time_ms"]);
        for r in &self.rows {
            t.rows.push(vec![
                r.n_s.to_string(),
                r.k.to_string(),
                r.status.clone(),
                num(r.lambda_bar_u),
                num(r.lambda_bar_l),
                num(r.floor),
            ]);
            timing.rows.push(vec![
                r.n_s.to_string(),
                r.k.to_string(),
                format!("{:.3}", r.partition_time_ms),
            ]);
        }
        RunRecord {
            kind: "hetero",
            config: self.config.clone(),
            tables: vec![t],
            timings: timing,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run_heterogeneous_study(config: &ExperimentConfig) -> Result<HeterogeneousStudy> {
    config.validate()?;
    let inst = instance_for(config, 0)?;
    run_heterogeneous_study_on(config, &inst)
}

/// Fused bounds of equal partitions, `δ⁽ⁱ⁾ = 1 − (1 − δ)^{1/K}`, across `(n_s, K)`.
pub fn run_heterogeneous_study_on(
    config: &ExperimentConfig,
    inst: &Instance,
) -> Result<HeterogeneousStudy> {
    config.validate()?;
    for &k in &config.partitions {
        if let Some(bad) =
            config
                .n_s
                .iter()
                .find(|&&n| n % k != 0)
                .copied()
                .or(if config.n_c % k != 0 {
                    Some(config.n_c)
                } else {
                    None
                })
        {
            return Err(Error::Config(format!(
                "K = {k} does not divide {bad} (n_c = {}, n_s sweep)",
                config.n_c
            )));
        }
    }
    let mut rows = Vec::new();
    for &n_s in &config.n_s {
        for &k in &config.partitions {
            let part = Partitioning::equal(inst.pool.len(), n_s, k, config.delta)?;
            let n_p = vec![config.n_p; k];
            let mut times = Vec::with_capacity(config.timing_repeats);
            let mut last = None;
            for _ in 0..config.timing_repeats {
                let res = grid_search_heterogeneous(&part, &n_p, &inst.pool, &inst.system);
                if let Ok(r) = &res {
                    times.push(r.solve_times_ms.iter().sum::<f64>() / k as f64);
                }
                last = Some(res);
            }
            let row = match last.expect("at least one repeat") {
                Ok(r) => match (&r.fused, r.partitions.iter().find_map(|p| p.as_ref().err())) {
                    (Some(b), _) => HeteroRow {
                        n_s,
                        k,
                        status: "ok".into(),
                        lambda_bar_u: b.worst_case(),
                        lambda_bar_l: b.lower.max_eigenvalue(),
                        floor: b.probability_floor,
                        partition_time_ms: median(times),
                    },
                    (None, err) => HeteroRow {
                        n_s,
                        k,
                        status: format!(
                            "partition_failed: {}",
                            err.map(|e| e.to_string()).unwrap_or_default()
                        ),
                        lambda_bar_u: f64::NAN,
                        lambda_bar_l: f64::NAN,
                        floor: part.probability_floor(),
                        partition_time_ms: median(times),
                    },
                },
                Err(e) => HeteroRow {
                    n_s,
                    k,
                    status: format!("failed: {e}"),
                    lambda_bar_u: f64::NAN,
                    lambda_bar_l: f64::NAN,
                    floor: part.probability_floor(),
                    partition_time_ms: f64::NAN,
                },
            };
            rows.push(row);
        }
    }
    Ok(HeterogeneousStudy {
        config: config.clone(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstrainedRow {
    pub k_u: u64,
    pub n_s: usize,
    pub status: String,
    pub alpha: f64,
    pub intersection_floor: f64,
    pub conditional_floor: f64,
    pub expected_draws_bound: f64,
    /// Mean rejection count over `constrained_trials` draws (`NaN` when skipped).
    pub empirical_mean_n: f64,
}

#[derive(Clone, Debug)]
pub struct ConstrainedStudy {
    pub config: ExperimentConfig,
    pub distribution: Distribution,
    pub rows: Vec<ConstrainedRow>,
}

impl ConstrainedStudy {
    pub fn to_record(&self) -> RunRecord {
        let mut t = Table::new(
            "constrained_summary",
            &[
                "k_u",
                "n_s",
                "status",
                "alpha",
                "alpha_minus_delta",
                "intersection_floor",
                "conditional_floor",
                "expected_draws_bound",
                "empirical_mean_N",
            ],
        );
        for r in &self.rows {
            t.rows.push(vec![
                r.k_u.to_string(),
                r.n_s.to_string(),
                r.status.clone(),
                num(r.alpha),
                num(r.alpha - self.config.delta),
                num(r.intersection_floor),
                num(r.conditional_floor),
                num(r.expected_draws_bound),
                num(r.empirical_mean_n),
            ]);
        }
        RunRecord {
            kind: "constrained",
            config: self.config.clone(),
            tables: vec![t],
            timings: Table::new("constrained_timing", &["note"]),
        }
    }
}

/// Smallest `α` for which the empirical rejection count is estimated.
pub const MIN_ALPHA_FOR_SAMPLING: f64 = 0.02;

pub fn run_constrained_study(config: &ExperimentConfig) -> Result<ConstrainedStudy> {
    config.validate()?;
    let inst = instance_for(config, 0)?;
    let joint = rho_star_joint(&inst.pool)?;
    run_constrained_study_with(config, joint.p)
}

/// `α(k_u, n_s)` table with floors and the empirical mean of `N` under `p`.
pub fn run_constrained_study_with(
    config: &ExperimentConfig,
    p: Distribution,
) -> Result<ConstrainedStudy> {
    config.validate()?;
    let sampler = CategoricalSampler::new(p.clone());
    let mut rows = Vec::new();
    for (ki, &k_u) in config.k_u.iter().enumerate() {
        for &n_s in &config.n_s {
            let spec = ConstraintSpec::Uniform(k_u);
            let nan = f64::NAN;
            let mut row = ConstrainedRow {
                k_u,
                n_s,
                status: "ok".into(),
                alpha: nan,
                intersection_floor: nan,
                conditional_floor: nan,
                expected_draws_bound: nan,
                empirical_mean_n: nan,
            };
            match alpha(&spec, n_s as u64, &p) {
                Err(e) => row.status = format!("assumption_violated: {e}"),
                Ok(a) => {
                    row.alpha = a;
                    let f = constrained_floors(a, config.delta)?;
                    row.intersection_floor = f.intersection;
                    row.conditional_floor = f.conditional;
                    row.expected_draws_bound = f.expected_draws_bound;
                    if a >= MIN_ALPHA_FOR_SAMPLING {
                        let counts: Vec<Result<u64>> = (0..config.constrained_trials)
                            .into_par_iter()
                            .map(|t| {
                                let tag = STREAM_CONSTRAINED
                                    + ((ki as u64) << 24)
                                    + ((n_s as u64) << 12)
                                    + t as u64;
                                let mut rng = RngStream::substream(config.seed, tag);
                                let sel = draw_constrained(&sampler, n_s, &spec, &mut rng, None)?;
                                Ok(sel.rejection_count().unwrap_or(0))
                            })
                            .collect();
                        let counts = counts.into_iter().collect::<Result<Vec<_>>>()?;
                        row.empirical_mean_n =
                            counts.iter().sum::<u64>() as f64 / counts.len().max(1) as f64;
                    } else {
                        row.status = "alpha_too_small_to_sample".into();
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok(ConstrainedStudy {
        config: config.clone(),
        distribution: p,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            n_c: 6,
            n_s: vec![120, 240],
            trials: 8,
            n_p: 3,
            timing_repeats: 1,
            constrained_trials: 20,
            k_u: vec![40, 120],
            ..Default::default()
        }
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(cfg.hash().len(), 64);
        assert!(ExperimentConfig::from_toml("delta = 1.5").is_err());
        assert!(ExperimentConfig::from_toml("n_s = []").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        let partial = ExperimentConfig::from_toml("n_c = 10\ntrials = 3").unwrap();
        assert_eq!((partial.n_c, partial.trials, partial.m), (10, 3, 3));
    }

    #[test]
    fn generation_is_deterministic_and_detectable() {
        let cfg = small();
        let a = instance_for(&cfg, 0).unwrap();
        let b = instance_for(&cfg, 0).unwrap();
        assert_eq!(a, b);
        let report = check_detectability_conditions(
            &a.system,
            &a.pool,
            &Distribution::uniform(a.pool.len()),
            None,
        )
        .unwrap();
        assert!(report.all_candidates);
        assert_ne!(instance_for(&cfg, 1).unwrap(), a);
    }

    #[test]
    fn comparison_aggregates_match_trials() {
        let cfg = small();
        let run = run_policy_comparison(&cfg).unwrap();
        assert_eq!(run.rows.len(), 2);
        assert!(run.aggregates_consistent());
        let rec = run.to_record();
        assert_eq!(rec.tables[1].rows.len(), 16);
    }

    #[test]
    fn mean_std_basic() {
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 2f64.sqrt()));
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        assert!(mean_std(&[]).0.is_nan());
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn artifact_and_warmup() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_artifact(
            dir.path(),
            "x",
            "test",
            "a,b\n1,2\n",
            &[("seed", "3".into())],
        )
        .unwrap();
        assert!(path.exists());
        let meta = fs::read_to_string(dir.path().join("x.meta.toml")).unwrap();
        assert!(meta.contains("seed = \"3\"") && meta.contains("schema_version = 1"));
        let inst = instance_for(&small(), 0).unwrap();
        let s = warmup_prediction(&inst, 60, 5).unwrap();
        assert!(s.min_eigenvalue() > 0.0);
        assert!(warmup_prediction(&inst, 60, 0).is_err());
    }

    #[test]
    fn heterogeneous_divisibility() {
        let cfg = ExperimentConfig {
            partitions: vec![4],
            ..small()
        };
        assert!(matches!(
            run_heterogeneous_study(&cfg),
            Err(Error::Config(_))
        ));
    }
}
