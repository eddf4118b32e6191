//! Greedy sensor selection scored by the steady-state worst-case covariance.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kalman::{fixed_point, DARE_MAX_ITER, DARE_TOL};
use crate::matrix::{max_eigenvalue, PsdMatrix};
use crate::sampling::RngStream;
use crate::system::{information_detectable, LtiSystem, Selection, SensorPool};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyConfig {
    /// Fraction of the pool scored per round; `1` is deterministic greedy.
    pub gamma: f64,
    pub n_s: usize,
    /// Seed for the per-round candidate subsets when `gamma < 1`.
    pub seed: u64,
}

impl GreedyConfig {
    pub fn deterministic(n_s: usize) -> Self {
        Self {
            gamma: 1.0,
            n_s,
            seed: 0,
        }
    }

    /// `⌈γ n_c⌉`.
    pub fn subset_size(&self, n_c: usize) -> usize {
        ((self.gamma * n_c as f64).ceil() as usize).clamp(1, n_c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreedyRound {
    /// 1-based round number.
    pub round: usize,
    /// 0-based pool index.
    pub chosen: usize,
    /// `λ̄` of the steady-state covariance after this round.
    pub lambda_bar: f64,
}

#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub selection: Selection,
    pub rounds: Vec<GreedyRound>,
    pub covariance: PsdMatrix,
}

impl GreedyResult {
    /// Rows `round, chosen_index, lambda_bar` with 1-based indices.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["round", "chosen_index", "lambda_bar"])?;
        for r in &self.rounds {
            wr.write_record([
                r.round.to_string(),
                (r.chosen + 1).to_string(),
                format!("{:?}", r.lambda_bar),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Runs `n_s` greedy rounds, appending one sensor (with replacement) per round.
pub fn greedy_select(
    config: &GreedyConfig,
    pool: &SensorPool,
    system: &LtiSystem,
) -> Result<GreedyResult> {
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(Error::Domain(format!(
            "gamma must lie in (0, 1], got {}",
            config.gamma
        )));
    }
    if pool.state_dim() != system.state_dim() {
        return Err(Error::Dimension {
            context: "pool state dimension",
            expected: system.state_dim(),
            found: pool.state_dim(),
        });
    }
    let n_c = pool.len();
    let m = system.state_dim();
    let k = config.subset_size(n_c);
    let mut rng = RngStream::new(config.seed);
    let (a, q) = (system.a(), system.q().as_matrix());

    let mut theta = nalgebra::DMatrix::<f64>::zeros(m, m);
    let mut p_prev = nalgebra::DMatrix::<f64>::identity(m, m);
    let mut indices = Vec::with_capacity(config.n_s);
    let mut rounds = Vec::with_capacity(config.n_s);

    for round in 1..=config.n_s {
        let mut subset = if k == n_c {
            (0..n_c).collect()
        } else {
            rng.subset(n_c, k)
        };
        subset.sort_unstable();
        let scored: Vec<(usize, f64, Option<nalgebra::DMatrix<f64>>)> = subset
            .par_iter()
            .map(|&g| {
                let cand = &theta + pool.information(g).as_matrix();
                if !information_detectable(a, &PsdMatrix::from_trusted(cand.clone())) {
                    return (g, f64::INFINITY, None);
                }
                match fixed_point(&cand, a, q, p_prev.clone(), DARE_TOL, DARE_MAX_ITER) {
                    Ok((p, _, _)) => (
                        g,
                        max_eigenvalue(PsdMatrix::from_trusted(p.clone()).sym()),
                        Some(p),
                    ),
                    Err(_) => (g, f64::INFINITY, None),
                }
            })
            .collect();
        // lowest index wins ties: subset is sorted and only a strict improvement replaces
        let mut best: Option<&(usize, f64, Option<nalgebra::DMatrix<f64>>)> = None;
        for s in &scored {
            if best.is_none_or(|b| s.1 < b.1) {
                best = Some(s);
            }
        }
        let (g, score, p) = best.expect("subset is non-empty");
        let Some(p) = p else {
            if round == 1 {
                return Err(Error::UndetectablePool);
            }
            return Err(Error::Undetectable(format!(
                "no detectable augmentation in round {round}"
            )));
        };
        theta += pool.information(*g).as_matrix();
        p_prev = p.clone();
        indices.push(*g);
        rounds.push(GreedyRound {
            round,
            chosen: *g,
            lambda_bar: *score,
        });
    }
    Ok(GreedyResult {
        selection: Selection::homogeneous(indices),
        rounds,
        covariance: PsdMatrix::from_trusted(p_prev),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::CandidateSensor;
    use nalgebra::{DMatrix, DVector};

    fn system() -> LtiSystem {
        LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.9, 0.2, 0.0, 0.7]),
            PsdMatrix::from_diagonal(&[0.5, 0.5]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn strong_sensor_first() {
        let pool = SensorPool::new(vec![
            CandidateSensor::new(DVector::from_column_slice(&[2.0, 1.0]), 0.5).unwrap(),
            CandidateSensor::new(DVector::from_column_slice(&[1.0, 0.5]), 0.5).unwrap(),
        ])
        .unwrap();
        let res = greedy_select(&GreedyConfig::deterministic(1), &pool, &system()).unwrap();
        assert_eq!(res.selection.indices(), &[0]);
    }

    #[test]
    fn single_candidate_repeats() {
        let pool = SensorPool::new(vec![CandidateSensor::new(
            DVector::from_column_slice(&[1.0, 1.0]),
            0.5,
        )
        .unwrap()])
        .unwrap();
        let res = greedy_select(&GreedyConfig::deterministic(4), &pool, &system()).unwrap();
        assert_eq!(res.selection.indices(), &[0, 0, 0, 0]);
        for w in res.rounds.windows(2) {
            assert!(w[1].lambda_bar <= w[0].lambda_bar + 1e-9);
        }
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pool = SensorPool::new(vec![
            CandidateSensor::new(DVector::from_column_slice(&[1.0, 0.0]), 0.5).unwrap(),
            CandidateSensor::new(DVector::from_column_slice(&[-1.0, 0.0]), 0.5).unwrap(),
        ])
        .unwrap();
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]),
            PsdMatrix::identity(2),
        )
        .unwrap();
        let res = greedy_select(&GreedyConfig::deterministic(3), &pool, &sys).unwrap();
        assert_eq!(res.selection.indices(), &[0, 0, 0]);
    }

    #[test]
    fn undetectable_pool_is_reported() {
        let sys = LtiSystem::new(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.5]),
            PsdMatrix::identity(2),
        )
        .unwrap();
        let pool = SensorPool::new(vec![CandidateSensor::new(
            DVector::from_column_slice(&[0.0, 1.0]),
            0.5,
        )
        .unwrap()])
        .unwrap();
        assert!(matches!(
            greedy_select(&GreedyConfig::deterministic(2), &pool, &sys),
            Err(Error::UndetectablePool)
        ));
    }

    #[test]
    fn csv_rows() {
        let pool = SensorPool::new(vec![CandidateSensor::new(
            DVector::from_column_slice(&[1.0, 1.0]),
            0.5,
        )
        .unwrap()])
        .unwrap();
        let res = greedy_select(&GreedyConfig::deterministic(2), &pool, &system()).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("round,chosen_index,lambda_bar\n1,1,"));
        assert_eq!(text.lines().count(), 3);
    }
}
