//! File formats: dataset CSV, ground-truth sidecar, run history CSV and run
//! summary JSON.
//!
//! Dataset CSV layout:
//!
//! ```text
//! # dt=0.1 n_x=3 n_u=3 n_z=3
//! k,u_1,u_2,u_3,z_1,z_2,z_3
//! 0,1.0000012e-5,...
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Vector};
use crate::optimizer::{EpochRecord, IdentificationRun, StopReason};
use crate::systems::NoiseSpec;

/// Dimensions recorded in the dataset metadata line.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetMeta {
    pub dt: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub n_z: usize,
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse(format!("line {line}: bad number {field:?}: {e}")))
}

pub fn dataset_to_csv(dataset: &Dataset, n_x: usize) -> String {
    let (n_u, n_z) = (dataset.n_u(), dataset.n_z());
    let mut out = format!("# dt={} n_x={n_x} n_u={n_u} n_z={n_z}\nk", num(dataset.dt()));
    for i in 1..=n_u {
        let _ = write!(out, ",u_{i}");
    }
    for i in 1..=n_z {
        let _ = write!(out, ",z_{i}");
    }
    out.push('\n');
    for (k, (u, z)) in dataset.inputs().iter().zip(dataset.observations()).enumerate() {
        out.push_str(&k.to_string());
        for v in u.iter().chain(z.iter()) {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}

pub fn dataset_from_csv(text: &str) -> Result<(Dataset, DatasetMeta)> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, meta_line) = lines.next().ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let meta = parse_meta(meta_line)?;

    let (_, header) = lines.next().ok_or_else(|| Error::Parse("missing header row".into()))?;
    let mut expected = vec!["k".to_string()];
    expected.extend((1..=meta.n_u).map(|i| format!("u_{i}")));
    expected.extend((1..=meta.n_z).map(|i| format!("z_{i}")));
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    if got != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!("unexpected header {header:?}")));
    }

    let mut inputs = Vec::new();
    let mut observations = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 1 + meta.n_u + meta.n_z {
            return Err(Error::Parse(format!(
                "line {line_no}: expected {} fields, got {}",
                1 + meta.n_u + meta.n_z,
                fields.len()
            )));
        }
        let k: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("line {line_no}: bad step index {:?}", fields[0])))?;
        if k != inputs.len() {
            return Err(Error::Parse(format!("line {line_no}: step index {k} out of order")));
        }
        let values = fields[1..]
            .iter()
            .map(|f| parse_f64(f, line_no))
            .collect::<Result<Vec<f64>>>()?;
        inputs.push(Vector::from_column_slice(&values[..meta.n_u]));
        observations.push(Vector::from_column_slice(&values[meta.n_u..]));
    }
    Ok((Dataset::new(inputs, observations, meta.dt)?, meta))
}

fn parse_meta(line: &str) -> Result<DatasetMeta> {
    let body = line
        .trim()
        .strip_prefix('#')
        .ok_or_else(|| Error::Parse(format!("expected metadata comment, got {line:?}")))?;
    let (mut dt, mut n_x, mut n_u, mut n_z) = (None, None, None, None);
    for token in body.split_whitespace() {
        let (key, value) = token
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("bad metadata token {token:?}")))?;
        let count = || {
            value
                .parse::<usize>()
                .map_err(|_| Error::Parse(format!("bad metadata value {token:?}")))
        };
        match key {
            "dt" => dt = Some(parse_f64(value, 1)?),
            "n_x" => n_x = Some(count()?),
            "n_u" => n_u = Some(count()?),
            "n_z" => n_z = Some(count()?),
            _ => return Err(Error::Parse(format!("unknown metadata key {key:?}"))),
        }
    }
    match (dt, n_x, n_u, n_z) {
        (Some(dt), Some(n_x), Some(n_u), Some(n_z)) => Ok(DatasetMeta { dt, n_x, n_u, n_z }),
        _ => Err(Error::Parse(format!("incomplete metadata line {line:?}"))),
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset, n_x: usize) -> Result<()> {
    fs::write(path, dataset_to_csv(dataset, n_x))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Dataset, DatasetMeta)> {
    dataset_from_csv(&fs::read_to_string(path)?)
}

/// Ground truth written next to a generated dataset. Only evaluation code
/// reads it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthSidecar {
    pub theta_true: Vec<f64>,
    pub x0_true: Vec<f64>,
    pub seed: u64,
    pub noise: NoiseSpec,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let (n_theta, n_x) = history.first().map_or((0, 0), |r| (r.theta.len(), r.x0.len()));
    let mut out = String::from("epoch,cost,grad_norm");
    for i in 1..=n_theta {
        let _ = write!(out, ",theta_{i}");
    }
    for i in 1..=n_x {
        let _ = write!(out, ",x0_{i}");
    }
    out.push('\n');
    for r in history {
        let _ = write!(out, "{},{},{}", r.epoch, num(r.cost), num(r.grad_norm));
        for v in r.theta.iter().chain(r.x0.iter()) {
            out.push(',');
            out.push_str(&num(*v));
        }
        out.push('\n');
    }
    out
}

pub fn history_from_csv(text: &str) -> Result<Vec<EpochRecord>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Parse("empty history file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[..3] != ["epoch", "cost", "grad_norm"] {
        return Err(Error::Parse(format!("unexpected history header {header:?}")));
    }
    let n_theta = cols.iter().filter(|c| c.starts_with("theta_")).count();
    let n_x = cols.iter().filter(|c| c.starts_with("x0_")).count();
    if 3 + n_theta + n_x != cols.len() {
        return Err(Error::Parse(format!("unexpected history header {header:?}")));
    }
    lines
        .map(|(idx, line)| {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != cols.len() {
                return Err(Error::Parse(format!("line {line_no}: wrong field count")));
            }
            let epoch = fields[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {line_no}: bad epoch")))?;
            let vals = fields[1..]
                .iter()
                .map(|f| parse_f64(f, line_no))
                .collect::<Result<Vec<f64>>>()?;
            Ok(EpochRecord {
                epoch,
                cost: vals[0],
                grad_norm: vals[1],
                theta: Vector::from_column_slice(&vals[2..2 + n_theta]),
                x0: Vector::from_column_slice(&vals[2 + n_theta..]),
            })
        })
        .collect()
}

/// JSON summary of an identification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub theta_hat: Vec<f64>,
    pub x0_hat: Vec<f64>,
    pub stop_reason: StopReason,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_cost: f64,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub rejected_steps: usize,
    /// `‖θ̂ − θ_true‖₂`, present only when ground truth was available for evaluation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_error: Option<f64>,
}

impl RunSummary {
    pub fn from_run(run: &IdentificationRun) -> Self {
        Self {
            theta_hat: run.theta_hat.iter().copied().collect(),
            x0_hat: run.x0_hat.iter().copied().collect(),
            stop_reason: run.stop_reason,
            epochs: run.history.len(),
            best_epoch: run.best_epoch,
            best_cost: run.best_record().cost,
            initial_cost: run.history[0].cost,
            final_cost: run.final_record().cost,
            rejected_steps: run.rejections.len(),
            theta_error: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn sample() -> Dataset {
        Dataset::new(
            vec![v(&[1e-5, -3.25]), v(&[0.1, 1e300])],
            vec![v(&[9.915e-6]), v(&[-1.102e-3])],
            0.1,
        )
        .unwrap()
    }

    #[test]
    fn dataset_csv_layout() {
        let text = dataset_to_csv(&sample(), 3);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# dt=0.1 n_x=3 n_u=2 n_z=1"));
        assert_eq!(lines.next(), Some("k,u_1,u_2,z_1"));
        assert_eq!(lines.next(), Some("0,1e-5,-3.25,9.915e-6"));
        let (back, meta) = dataset_from_csv(&text).unwrap();
        assert_eq!(back, sample());
        assert_eq!(meta, DatasetMeta { dt: 0.1, n_x: 3, n_u: 2, n_z: 1 });
    }

    #[test]
    fn dataset_csv_errors() {
        assert!(dataset_from_csv("").is_err());
        assert!(dataset_from_csv("k,u_1,z_1\n0,1,2\n1,1,2\n").is_err());
        let bad_header = "# dt=0.1 n_x=1 n_u=1 n_z=1\nk,u_1,y_1\n0,1,2\n1,1,2\n";
        assert!(dataset_from_csv(bad_header).is_err());
        let bad_row = "# dt=0.1 n_x=1 n_u=1 n_z=1\nk,u_1,z_1\n0,1,2\n1,1\n";
        assert!(dataset_from_csv(bad_row).is_err());
        let bad_num = "# dt=0.1 n_x=1 n_u=1 n_z=1\nk,u_1,z_1\n0,1,2\n1,1,x\n";
        assert!(dataset_from_csv(bad_num).is_err());
        let out_of_order = "# dt=0.1 n_x=1 n_u=1 n_z=1\nk,u_1,z_1\n0,1,2\n2,1,2\n";
        assert!(dataset_from_csv(out_of_order).is_err());
    }

    #[test]
    fn history_round_trip() {
        let history = vec![
            EpochRecord {
                epoch: 0,
                cost: 1.5e-7,
                grad_norm: 3.0,
                theta: v(&[0.04, 0.05]),
                x0: v(&[1e-3]),
            },
            EpochRecord {
                epoch: 1,
                cost: 1.0 / 3.0,
                grad_norm: 0.0,
                theta: v(&[0.041, 0.049]),
                x0: v(&[-2e-3]),
            },
        ];
        let text = history_to_csv(&history);
        assert!(text.starts_with("epoch,cost,grad_norm,theta_1,theta_2,x0_1\n"));
        assert_eq!(history_from_csv(&text).unwrap(), history);
    }

    #[test]
    fn truth_sidecar_shape() {
        let truth = TruthSidecar {
            theta_true: vec![0.0403, 0.0404, 0.008],
            x0_true: vec![1.0, 2.0, 3.0],
            seed: 7,
            noise: NoiseSpec::satellite(7),
        };
        let json = serde_json::to_value(&truth).unwrap();
        for key in ["theta_true", "x0_true", "seed", "noise"] {
            assert!(json.get(key).is_some(), "{key}");
        }
        let back: TruthSidecar = serde_json::from_value(json).unwrap();
        assert_eq!(back, truth);
    }
}
