use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use concsel::experiment::{
    instance_for, run_constrained_study, run_heterogeneous_study, run_policy_comparison,
    ExperimentConfig, RunRecord, SCHEMA_VERSION,
};
use concsel::system::{check_detectability_conditions, Distribution};
use concsel::Error;

fn pinned() -> ExperimentConfig {
    ExperimentConfig {
        n_c: 8,
        n_s: vec![160, 320],
        trials: 10,
        n_p: 2,
        partitions: vec![1, 2],
        greedy_gammas: vec![1.0, 0.5],
        k_u: vec![40, 160, 320],
        constrained_trials: 20,
        timing_repeats: 1,
        seed: 7,
        ..Default::default()
    }
}

fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

fn check_golden(rec: &RunRecord) {
    for table in &rec.tables {
        let path = golden_dir().join(format!("{}.csv", table.name));
        let text = table.to_csv().unwrap();
        if std::env::var_os("UPDATE_GOLDEN").is_some() || !path.exists() {
            fs::write(&path, &text).unwrap();
            continue;
        }
        assert_eq!(
            fs::read_to_string(&path).unwrap(),
            text,
            "golden mismatch for {}",
            table.name
        );
    }
}

#[test]
fn generation_is_detectable_and_fast() {
    let cfg = ExperimentConfig {
        n_c: 420,
        ..Default::default()
    };
    let start = Instant::now();
    let inst = instance_for(&cfg, 0).unwrap();
    assert!(start.elapsed().as_secs_f64() < 1.0);
    assert_eq!(inst.pool.len(), 420);
    let report =
        check_detectability_conditions(&inst.system, &inst.pool, &Distribution::uniform(420), None)
            .unwrap();
    assert!(report.all_candidates);
}

#[test]
fn policy_comparison_replays_and_matches_golden() {
    let cfg = pinned();
    let a = run_policy_comparison(&cfg).unwrap();
    let b = run_policy_comparison(&cfg).unwrap();
    assert!(a.aggregates_consistent());
    let (ra, rb) = (a.to_record(), b.to_record());
    assert_eq!(ra.tables, rb.tables);
    for row in &a.rows {
        assert!(
            row.lambda_bar_l <= row.mc_mean && row.mc_mean <= row.lambda_bar_u,
            "envelope at n_s = {}",
            row.n_s
        );
        assert!(row.coverage >= 0.8);
    }
    check_golden(&ra);
}

#[test]
fn heterogeneous_study_shape() {
    let cfg = pinned();
    let study = run_heterogeneous_study(&cfg).unwrap();
    assert_eq!(study.rows.len(), 4);
    for row in &study.rows {
        assert!((row.floor - 0.95).abs() < 1e-12, "floor {}", row.floor);
    }
    check_golden(&study.to_record());
    let bad = ExperimentConfig {
        partitions: vec![3],
        ..pinned()
    };
    assert!(matches!(
        run_heterogeneous_study(&bad),
        Err(Error::Config(_))
    ));
}

#[test]
fn constrained_study_properties() {
    let cfg = pinned();
    let study = run_constrained_study(&cfg).unwrap();
    let again = run_constrained_study(&cfg).unwrap();
    assert_eq!(study.to_record().tables, again.to_record().tables);
    for row in &study.rows {
        if row.alpha.is_nan() {
            assert!(row.status.starts_with("assumption_violated"));
            continue;
        }
        if row.k_u as usize == row.n_s {
            assert!((row.alpha - 1.0).abs() < 1e-12);
        }
        assert!(row.conditional_floor >= row.intersection_floor);
    }
    for &n_s in &cfg.n_s {
        let alphas: Vec<f64> = study
            .rows
            .iter()
            .filter(|r| r.n_s == n_s && !r.alpha.is_nan())
            .map(|r| r.alpha)
            .collect();
        assert!(alphas.windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }
    check_golden(&study.to_record());
}

#[test]
fn records_write_csv_and_metadata() {
    let cfg = ExperimentConfig {
        n_s: vec![160],
        k_u: vec![160],
        ..pinned()
    };
    let rec = run_constrained_study(&cfg).unwrap().to_record();
    let dir = tempfile::tempdir().unwrap();
    let paths = rec.write(dir.path()).unwrap();
    assert_eq!(paths.len(), 2);
    let csv = fs::read_to_string(&paths[0]).unwrap();
    assert!(csv.starts_with("k_u,n_s,status,alpha"));
    let meta: toml::Table = toml::from_str(
        &fs::read_to_string(dir.path().join("constrained_summary.meta.toml")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["config_hash"].as_str().unwrap(), cfg.hash());
    assert_eq!(
        meta["schema_version"].as_integer().unwrap(),
        SCHEMA_VERSION as i64
    );
    assert_eq!(meta["rng"].as_str().unwrap(), "chacha8");
}
