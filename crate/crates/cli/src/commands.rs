//! The four commands. Each takes a resolved config and an output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use physid::gradient::GradientSummary;
use physid::io::{self, RunSummary, TruthSidecar};
use physid::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DataConfig, RunConfig};
use crate::CliError;

pub const DATA_FILE: &str = "data.csv";
pub const TRUTH_FILE: &str = "data.truth.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.json";
pub const SWEEP_FILE: &str = "sweep.csv";

/// Analytic pair must agree to this relative error.
pub const ANALYTIC_PAIR_TOL: f64 = 1e-10;
/// Analytic and finite-difference gradients must agree to this relative error.
pub const ANALYTIC_FD_TOL: f64 = 1e-5;

/// Truth sidecar path for a dataset file: `data.csv` -> `data.truth.json`.
pub fn sidecar_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("truth.json")
}

fn ensure_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("cannot create {}: {e}", out.display())))
}

fn io_err(e: physid::Error) -> CliError {
    CliError::Io(e.to_string())
}

fn theta_error(theta_hat: &Vector, truth: Option<&(Vector, Vector)>) -> Option<f64> {
    truth.map(|(theta, _)| (theta_hat - theta).norm())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOutput {
    pub data_path: PathBuf,
    pub truth_path: PathBuf,
    pub rows: usize,
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<GenerateOutput, CliError> {
    let DataConfig::Generate(spec) = &cfg.data else {
        return Err(CliError::Config("data: generate needs a generate spec".into()));
    };
    let (model, _) = cfg.build_model()?;
    let (data, _) = cfg.load_data(model.as_ref())?;
    ensure_dir(out)?;
    let data_path = out.join(DATA_FILE);
    let truth_path = sidecar_path(&data_path);
    io::write_dataset(&data_path, &data, model.dims().n_x).map_err(io_err)?;
    let truth = TruthSidecar {
        theta_true: spec.theta_true.clone(),
        x0_true: spec.x0_true.clone(),
        seed: cfg.seed,
        noise: spec.noise.with_seed(cfg.seed),
    };
    io::write_json(&truth_path, &truth).map_err(io_err)?;
    Ok(GenerateOutput {
        data_path,
        truth_path,
        rows: data.len(),
    })
}

/// Runs identification without touching disk.
pub fn identify_in_memory(cfg: &RunConfig, horizon: Option<usize>) -> Result<(IdentificationRun, RunSummary), CliError> {
    let p = cfg.problem(horizon)?;
    let run = identify(p.model.as_ref(), &p.dataset, &p.spec, &p.theta0, &p.x00, &p.options)?;
    let mut summary = RunSummary::from_run(&run);
    summary.theta_error = match (&p.truth, &cfg.data) {
        (Some(_), _) => theta_error(&run.theta_hat, p.truth.as_ref()),
        // Recorded data: the sidecar is read only here, after the run.
        (None, DataConfig::Path(path)) => io::read_json::<TruthSidecar>(&sidecar_path(path))
            .ok()
            .map(|t| (&run.theta_hat - Vector::from_vec(t.theta_true)).norm()),
        (None, DataConfig::Generate(_)) => None,
    };
    Ok((run, summary))
}

pub fn cmd_identify(cfg: &RunConfig, out: &Path) -> Result<RunSummary, CliError> {
    let (run, summary) = identify_in_memory(cfg, None)?;
    ensure_dir(out)?;
    io::write_json(&out.join(SUMMARY_FILE), &summary).map_err(io_err)?;
    fs::write(out.join(HISTORY_FILE), io::history_to_csv(&run.history))
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub analytic: f64,
    pub naive: f64,
    pub finite_difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub horizon: usize,
    pub fd_step: f64,
    pub analytic: GradientSummary,
    pub naive: GradientSummary,
    pub finite_difference: GradientSummary,
    pub err_analytic_naive: f64,
    pub err_analytic_fd: f64,
    pub err_naive_fd: f64,
    pub chain_applications_analytic: usize,
    pub chain_applications_naive: usize,
    /// Zero cost with exactly zero analytic gradients. The finite-difference
    /// result is then pure truncation error and is not held to the
    /// relative tolerance.
    pub exact_stationary: bool,
    /// Wall-clock seconds.
    pub timings: Timings,
    pub pass: bool,
}

fn joined(s: &GradientSummary) -> Vector {
    Vector::from_iterator(
        s.grad_theta.len() + s.grad_x0.len(),
        s.grad_theta.iter().chain(&s.grad_x0).copied(),
    )
}

/// Compares the three gradients at the configured initial point.
pub fn gradcheck_in_memory(cfg: &RunConfig) -> Result<GradcheckReport, CliError> {
    let p = cfg.problem(None)?;
    let model = p.model.as_ref();
    let traj = rollout(model, &p.x00, &p.theta0, p.dataset.inputs())?;

    let t = Instant::now();
    let analytic = gradient(model, &traj, &p.dataset, &p.spec, &p.theta0)?;
    let t_analytic = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let naive = gradient_naive(model, &traj, &p.dataset, &p.spec, &p.theta0)?;
    let t_naive = t.elapsed().as_secs_f64();

    let step = cfg.gradcheck.fd_step;
    let t = Instant::now();
    let fd = fd_gradient(model, &p.x00, &p.theta0, &p.dataset, &p.spec, step)?;
    let t_fd = t.elapsed().as_secs_f64();

    let a = analytic.summary();
    let n = naive.summary();
    let f = fd.summary();
    let (va, vn, vf) = (joined(&a), joined(&n), joined(&f));
    let err_analytic_naive = max_relative_error(&va, &vn);
    let err_analytic_fd = max_relative_error(&va, &vf);
    let err_naive_fd = max_relative_error(&vn, &vf);
    let zero = |v: &Vector| v.iter().all(|&g| g == 0.0);
    let exact_stationary = a.cost == 0.0 && zero(&va) && zero(&vn);
    Ok(GradcheckReport {
        horizon: p.spec.horizon(),
        fd_step: step,
        analytic: a,
        naive: n,
        finite_difference: f,
        err_analytic_naive,
        err_analytic_fd,
        err_naive_fd,
        chain_applications_analytic: analytic.work.chain_applications,
        chain_applications_naive: naive.work.chain_applications,
        exact_stationary,
        timings: Timings {
            analytic: t_analytic,
            naive: t_naive,
            finite_difference: t_fd,
        },
        pass: err_analytic_naive <= ANALYTIC_PAIR_TOL && (exact_stationary || err_analytic_fd <= ANALYTIC_FD_TOL),
    })
}

/// Writes the report; a failed comparison is a numerical failure.
pub fn cmd_gradcheck(cfg: &RunConfig, out: &Path) -> Result<GradcheckReport, CliError> {
    let report = gradcheck_in_memory(cfg)?;
    ensure_dir(out)?;
    io::write_json(&out.join(GRADCHECK_FILE), &report).map_err(io_err)?;
    if !report.pass {
        return Err(CliError::Numerical(format!(
            "gradients disagree: analytic/naive {:.3e} (limit {ANALYTIC_PAIR_TOL:e}), analytic/fd {:.3e} (limit {ANALYTIC_FD_TOL:e})",
            report.err_analytic_naive, report.err_analytic_fd
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub horizon: usize,
    pub theta_error: Option<f64>,
    pub wall_time: f64,
    pub final_cost: Option<f64>,
    pub theta_hat: Option<Vec<f64>>,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "T,theta_error,wall_time_s,final_cost,error";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

impl SweepRow {
    pub fn to_csv(&self) -> String {
        let error = self.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        format!(
            "{},{},{:?},{},{error}",
            self.horizon,
            opt(self.theta_error),
            self.wall_time,
            opt(self.final_cost)
        )
    }
}

/// Parses a sweep table back into rows. `theta_hat` is not stored.
pub fn sweep_from_csv(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(CliError::Config("sweep table: unexpected header".into()));
    }
    let num = |s: &str| -> Result<Option<f64>, CliError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| CliError::Config(format!("sweep table: bad number {s:?}")))
        }
    };
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.splitn(5, ',').collect();
            if f.len() != 5 {
                return Err(CliError::Config(format!("sweep table: bad row {line:?}")));
            }
            Ok(SweepRow {
                horizon: f[0].parse().map_err(|_| CliError::Config(format!("sweep table: bad T {:?}", f[0])))?,
                theta_error: num(f[1])?,
                wall_time: num(f[2])?.unwrap_or(f64::NAN),
                final_cost: num(f[3])?,
                theta_hat: None,
                error: (!f[4].is_empty()).then(|| f[4].to_string()),
            })
        })
        .collect()
}

/// Runs one identification per horizon, sequentially so wall times are
/// comparable. The table is rewritten after every row; a horizon that fails
/// gets a row with its error message.
pub fn cmd_sweep(cfg: &RunConfig, horizons: &[usize], out: &Path) -> Result<Vec<SweepRow>, CliError> {
    if horizons.is_empty() {
        return Err(CliError::Config("horizons: empty horizon list".into()));
    }
    if let Some(&h) = horizons.iter().find(|&&h| h < 2) {
        return Err(CliError::Config(format!("horizons: {h} is below the minimum of 2")));
    }
    cfg.check_files()?;
    cfg.build_model()?;
    ensure_dir(out)?;
    let path = out.join(SWEEP_FILE);
    let mut table = format!("{SWEEP_HEADER}\n");
    let mut rows = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let mut run_cfg = cfg.clone();
        let horizon = match &mut run_cfg.data {
            DataConfig::Generate(g) => {
                g.horizon = h;
                run_cfg.loss.horizon = None;
                None
            }
            DataConfig::Path(_) => Some(h),
        };
        let start = Instant::now();
        let result = identify_in_memory(&run_cfg, horizon);
        let wall_time = start.elapsed().as_secs_f64();
        let row = match result {
            Ok((run, summary)) => SweepRow {
                horizon: h,
                theta_error: summary.theta_error,
                wall_time,
                final_cost: Some(summary.final_cost),
                theta_hat: Some(run.theta_hat.iter().copied().collect()),
                error: None,
            },
            Err(e) => SweepRow {
                horizon: h,
                theta_error: None,
                wall_time,
                final_cost: None,
                theta_hat: None,
                error: Some(e.to_string()),
            },
        };
        let _ = writeln!(table, "{}", row.to_csv());
        fs::write(&path, &table).map_err(|e| CliError::Io(e.to_string()))?;
        rows.push(row);
    }
    Ok(rows)
}
