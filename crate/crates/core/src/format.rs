//! Plain-text instance files.
//!
//! ```text
//! # lines starting with '#' and blank lines are ignored
//! dim 3
//! A
//! 0.1 0.2 0.3
//! 0.4 0.5 0.6
//! 0.7 0.8 0.9
//! Q
//! 0.5 0 0
//! 0 0.5 0
//! 0 0 0.5
//! sensors 2
//! 0.3 0.1 0.9 0.5
//! 0.2 0.8 0.4 0.5
//! ```
//!
//! Matrices are row-major, one row per line. Each sensor line holds the `m`
//! entries of `c_i` followed by `σ_i²`. Values are written with the shortest
//! representation that parses back to the same `f64`, so
//! `dump(parse(dump(x))) == dump(x)` byte for byte.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::PsdMatrix;
use crate::system::{CandidateSensor, LtiSystem, SensorPool};

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub system: LtiSystem,
    pub pool: SensorPool,
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next_content(&mut self) -> Option<(usize, &'a str)> {
        for (i, raw) in self.inner.by_ref() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            return Some((i + 1, line));
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        self.next_content().ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("unexpected end of file, expected {what}"),
        })
    }
}

fn parse_values(line_no: usize, line: &str, expected: usize) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>().map_err(|e| Error::Parse {
                line: line_no,
                message: format!("'{t}': {e}"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != expected {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected {expected} values, found {}", vals.len()),
        });
    }
    Ok(vals)
}

fn parse_header(lines: &mut Lines<'_>, key: &str) -> Result<Option<usize>> {
    let (no, line) = lines.expect(key)?;
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(Error::Parse {
            line: no,
            message: format!("expected '{key}'"),
        });
    }
    match parts.next() {
        None => Ok(None),
        Some(tok) => tok.parse().map(Some).map_err(|_| Error::Parse {
            line: no,
            message: format!("bad count '{tok}'"),
        }),
    }
}

fn parse_matrix(lines: &mut Lines<'_>, m: usize) -> Result<DMatrix<f64>> {
    let mut data = Vec::with_capacity(m * m);
    for _ in 0..m {
        let (no, line) = lines.expect("matrix row")?;
        data.extend(parse_values(no, line, m)?);
    }
    Ok(DMatrix::from_row_slice(m, m, &data))
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let m = parse_header(&mut lines, "dim")?.ok_or(Error::Parse {
        line: 0,
        message: "dim needs a value".into(),
    })?;
    if m == 0 {
        return Err(Error::Parse {
            line: 0,
            message: "dim must be positive".into(),
        });
    }
    parse_header(&mut lines, "A")?;
    let a = parse_matrix(&mut lines, m)?;
    parse_header(&mut lines, "Q")?;
    let q = PsdMatrix::from_matrix(parse_matrix(&mut lines, m)?)?;
    let n_c = parse_header(&mut lines, "sensors")?.ok_or(Error::Parse {
        line: 0,
        message: "sensors needs a count".into(),
    })?;
    let mut sensors = Vec::with_capacity(n_c);
    for _ in 0..n_c {
        let (no, line) = lines.expect("sensor line")?;
        let vals = parse_values(no, line, m + 1)?;
        sensors.push(CandidateSensor::new(
            DVector::from_column_slice(&vals[..m]),
            vals[m],
        )?);
    }
    if let Some((no, _)) = lines.next_content() {
        return Err(Error::Parse {
            line: no,
            message: "trailing content after sensor list".into(),
        });
    }
    Ok(Instance {
        system: LtiSystem::new(a, q)?,
        pool: SensorPool::new(sensors)?,
    })
}

fn push_row<'a>(out: &mut String, vals: impl Iterator<Item = &'a f64>) {
    let row: Vec<String> = vals.map(|v| format!("{v:?}")).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

pub fn dump_instance(system: &LtiSystem, pool: &SensorPool) -> String {
    let m = system.state_dim();
    let mut out = String::new();
    let _ = writeln!(out, "dim {m}");
    out.push_str("A\n");
    for r in system.a().row_iter() {
        push_row(&mut out, r.iter());
    }
    out.push_str("Q\n");
    for r in system.q().as_matrix().row_iter() {
        push_row(&mut out, r.iter());
    }
    let _ = writeln!(out, "sensors {}", pool.len());
    for s in pool.sensors() {
        push_row(&mut out, s.c.iter().chain(std::iter::once(&s.sigma2)));
    }
    out
}
