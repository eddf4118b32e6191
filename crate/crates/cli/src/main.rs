use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use concsel::concentration::{
    alpha, bounds_steady_state, compute_c0, constrained_floors, rho_star_for_distribution,
    AwParameters, ConstraintSpec,
};
use concsel::experiment::{
    instance_for, run_constrained_study, run_heterogeneous_study, run_policy_comparison,
    warmup_prediction, write_artifact, ExperimentConfig,
};
use concsel::format::{dump_instance, parse_instance, Instance};
use concsel::greedy::{greedy_select, GreedyConfig};
use concsel::optimizer::{grid_search, GridMode};
use concsel::sampling::{draw_constrained, draw_homogeneous, CategoricalSampler, RngStream};
use concsel::system::Distribution;
use concsel::{Error, Result};

#[derive(Parser)]
#[command(
    name = "concsel",
    version,
    about = "Randomized sensor selection with certified Kalman covariance bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory receiving CSV files and metadata sidecars.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct InstanceArg {
    /// Instance file; generated from the config and seed when omitted.
    #[arg(long)]
    instance: Option<PathBuf>,
}

impl InstanceArg {
    fn load(&self, common: &Common) -> Result<Instance> {
        match &self.instance {
            Some(p) => parse_instance(&fs::read_to_string(p)?),
            None => instance_for(&common.config()?, 0),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    SteadyState,
    TimeDependent,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random detectable instance file.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Output instance path.
        #[arg(long)]
        out: PathBuf,
        /// Instance index within the seeded family.
        #[arg(long, default_value_t = 0)]
        index: u64,
    },
    /// Re-emit an instance file in canonical form.
    Dump {
        #[arg(long)]
        instance: PathBuf,
        /// Output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grid search over (epsilon, rho) and write the chosen distribution.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inst: InstanceArg,
        #[arg(long)]
        n_s: usize,
        #[arg(long)]
        n_p: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, value_enum, default_value = "steady-state")]
        mode: Mode,
        /// Warm-up horizon defining the predicted covariance in time-dependent mode.
        #[arg(long, default_value_t = 10)]
        warmup: usize,
    },
    /// Draw selections from a distribution CSV (one index line per draw).
    Sample {
        #[command(flatten)]
        common: Common,
        /// CSV with columns index, probability.
        #[arg(long)]
        distribution: PathBuf,
        #[arg(long)]
        n_s: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Uniform per-candidate cap; enables rejection sampling.
        #[arg(long, conflicts_with = "caps")]
        k_u: Option<u64>,
        /// Explicit comma-separated caps.
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<u64>>,
    },
    /// Certified steady-state bounds for a given distribution.
    Bounds {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inst: InstanceArg,
        #[arg(long)]
        distribution: PathBuf,
        #[arg(long)]
        n_s: usize,
        #[arg(long)]
        delta: Option<f64>,
        /// Concentration parameter; midpoint of the admissible range when omitted.
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Probability that a draw satisfies the caps, with its floors.
    Alpha {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        distribution: PathBuf,
        #[arg(long)]
        n_s: u64,
        #[arg(long, conflicts_with = "caps")]
        k_u: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        caps: Option<Vec<u64>>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Greedy selection with per-round scores.
    Greedy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inst: InstanceArg,
        #[arg(long)]
        n_s: usize,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
    },
    /// Proposed policy versus greedy and uniform across the n_s sweep.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Partitioned selection across the (n_s, K) grid.
    Hetero {
        #[command(flatten)]
        common: Common,
    },
    /// Capped selection: alpha table, floors and rejection counts.
    Constrained {
        #[command(flatten)]
        common: Common,
    },
}

fn read_distribution(path: &Path) -> Result<Distribution> {
    let mut rd = csv::Reader::from_path(path)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut probs = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |msg: &str| Error::Parse {
            line: row + 2,
            message: msg.to_string(),
        };
        let idx: usize = rec
            .get(0)
            .ok_or_else(|| bad("missing index"))?
            .trim()
            .parse()
            .map_err(|_| bad("bad index"))?;
        if idx != row + 1 {
            return Err(bad("indices must be 1, 2, 3, ... in order"));
        }
        probs.push(
            rec.get(1)
                .ok_or_else(|| bad("missing probability"))?
                .trim()
                .parse()
                .map_err(|_| bad("bad probability"))?,
        );
    }
    Distribution::new(probs)
}

fn constraint(k_u: Option<u64>, caps: Option<Vec<u64>>) -> Option<ConstraintSpec> {
    match (k_u, caps) {
        (Some(k), _) => Some(ConstraintSpec::Uniform(k)),
        (None, Some(c)) => Some(ConstraintSpec::Explicit(c)),
        (None, None) => None,
    }
}

fn to_csv<F: FnOnce(&mut Vec<u8>) -> Result<()>>(f: F) -> Result<String> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { common, out, index } => {
            let cfg = common.config()?;
            let inst = instance_for(&cfg, index)?;
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(&out, dump_instance(&inst.system, &inst.pool))?;
            report(&[out]);
        }
        Command::Dump { instance, out } => {
            let inst = parse_instance(&fs::read_to_string(&instance)?)?;
            let text = dump_instance(&inst.system, &inst.pool);
            match out {
                Some(p) => fs::write(p, text)?,
                None => print!("{text}"),
            }
        }
        Command::Optimize {
            common,
            inst,
            n_s,
            n_p,
            delta,
            mode,
            warmup,
        } => {
            let cfg = common.config()?;
            let instance = inst.load(&common)?;
            let (n_p, delta) = (n_p.unwrap_or(cfg.n_p), delta.unwrap_or(cfg.delta));
            let mode = match mode {
                Mode::SteadyState => GridMode::SteadyState,
                Mode::TimeDependent => {
                    GridMode::TimeDependent(warmup_prediction(&instance, n_s, warmup)?)
                }
            };
            let res = grid_search(n_s, n_p, delta, &instance.pool, &instance.system, &mode)?;
            let prov = [
                ("mode", res.mode.to_string()),
                ("n_s", n_s.to_string()),
                ("n_p", n_p.to_string()),
                ("delta", format!("{delta:?}")),
                ("warmup", warmup.to_string()),
                ("rho_star", format!("{:?}", res.joint.rho_star)),
                ("chosen_epsilon", format!("{:?}", res.params.epsilon())),
                ("chosen_rho", format!("{:?}", res.params.rho())),
                ("lambda_bar_U", format!("{:?}", res.bounds.worst_case())),
            ];
            let a = write_artifact(
                &common.out_dir,
                "grid_points",
                "optimize",
                &to_csv(|b| res.write_points_csv(b))?,
                &prov,
            )?;
            let b = write_artifact(
                &common.out_dir,
                "distribution",
                "optimize",
                &to_csv(|b| res.write_distribution_csv(b))?,
                &prov,
            )?;
            println!(
                "epsilon={:?} rho={:?} lambda_bar_U={:?}",
                res.params.epsilon(),
                res.params.rho(),
                res.bounds.worst_case()
            );
            report(&[a, b]);
        }
        Command::Sample {
            common,
            distribution,
            n_s,
            count,
            k_u,
            caps,
        } => {
            let cfg = common.config()?;
            let sampler = CategoricalSampler::new(read_distribution(&distribution)?);
            let spec = constraint(k_u, caps);
            let mut lines = String::new();
            for i in 0..count {
                let mut rng = RngStream::substream(cfg.seed, i as u64);
                let sel = match &spec {
                    Some(s) => draw_constrained(&sampler, n_s, s, &mut rng, None)?,
                    None => draw_homogeneous(&sampler, n_s, &mut rng),
                };
                lines.push_str(&sel.to_line());
                lines.push('\n');
            }
            fs::create_dir_all(&common.out_dir)?;
            let path = common.out_dir.join("selections.txt");
            fs::write(&path, lines)?;
            report(&[path]);
        }
        Command::Bounds {
            common,
            inst,
            distribution,
            n_s,
            delta,
            epsilon,
        } => {
            let cfg = common.config()?;
            let instance = inst.load(&common)?;
            let p = read_distribution(&distribution)?;
            let delta = delta.unwrap_or(cfg.delta);
            let params = match epsilon {
                Some(e) => AwParameters::new(&instance.pool, n_s, delta, e, p)?,
                None => {
                    let lo = (rho_star_for_distribution(&instance.pool, &p)?
                        * compute_c0(n_s, instance.pool.state_dim(), delta)?)
                    .sqrt();
                    if lo >= 1.0 {
                        return Err(Error::Config(format!(
                            "n_s = {n_s} is too small for this distribution"
                        )));
                    }
                    AwParameters::new(&instance.pool, n_s, delta, 0.5 * (lo + 1.0), p)?
                }
            };
            let b = bounds_steady_state(&params, &instance.pool, &instance.system)?;
            let csv_text = format!(
                "epsilon,rho,lambda_bar_U,lambda_bar_L,gap,probability_floor\n{:?},{:?},{:?},{:?},{:?},{:?}\n",
                params.epsilon(),
                params.rho(),
                b.worst_case(),
                b.lower.max_eigenvalue(),
                b.gap(),
                b.probability_floor
            );
            print!("{csv_text}");
            let path = write_artifact(
                &common.out_dir,
                "bounds",
                "bounds",
                &csv_text,
                &[("n_s", n_s.to_string()), ("delta", format!("{delta:?}"))],
            )?;
            report(&[path]);
        }
        Command::Alpha {
            common,
            distribution,
            n_s,
            k_u,
            caps,
            delta,
        } => {
            let cfg = common.config()?;
            let p = read_distribution(&distribution)?;
            let spec = constraint(k_u, caps)
                .ok_or_else(|| Error::Config("one of --k-u or --caps is required".into()))?;
            let delta = delta.unwrap_or(cfg.delta);
            let a = alpha(&spec, n_s, &p)?;
            let f = constrained_floors(a, delta)?;
            let csv_text = format!(
                "alpha,alpha_minus_delta,intersection_floor,conditional_floor,expected_draws_bound\n{a:?},{:?},{:?},{:?},{:?}\n",
                a - delta,
                f.intersection,
                f.conditional,
                f.expected_draws_bound
            );
            print!("{csv_text}");
            let path = write_artifact(
                &common.out_dir,
                "alpha",
                "alpha",
                &csv_text,
                &[("n_s", n_s.to_string()), ("delta", format!("{delta:?}"))],
            )?;
            report(&[path]);
        }
        Command::Greedy {
            common,
            inst,
            n_s,
            gamma,
        } => {
            let cfg = common.config()?;
            let instance = inst.load(&common)?;
            let res = greedy_select(
                &GreedyConfig {
                    gamma,
                    n_s,
                    seed: cfg.seed,
                },
                &instance.pool,
                &instance.system,
            )?;
            let prov = [
                ("n_s", n_s.to_string()),
                ("gamma", format!("{gamma:?}")),
                ("seed", cfg.seed.to_string()),
                ("selection", res.selection.to_line()),
            ];
            let path = write_artifact(
                &common.out_dir,
                "greedy",
                "greedy",
                &to_csv(|b| res.write_csv(b))?,
                &prov,
            )?;
            report(&[path]);
        }
        Command::Compare { common } => {
            let rec = run_policy_comparison(&common.config()?)?.to_record();
            report(&rec.write(&common.out_dir)?);
        }
        Command::Hetero { common } => {
            let rec = run_heterogeneous_study(&common.config()?)?.to_record();
            report(&rec.write(&common.out_dir)?);
        }
        Command::Constrained { common } => {
            let rec = run_constrained_study(&common.config()?)?.to_record();
            report(&rec.write(&common.out_dir)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
