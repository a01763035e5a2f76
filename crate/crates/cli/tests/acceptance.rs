//! End-to-end acceptance checks. Runs as a plain binary so every line is
//! printed; exits nonzero if any check fails.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use physid::penalties::{PenaltyConfig, PenaltyKind, PenaltySpec, PenaltyTerm};
use physid::prelude::*;
use physid_cli::commands::{cmd_sweep, identify_in_memory};
use physid_cli::config::{BoxConfig, DataConfig, RunConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn config(name: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name);
    RunConfig::load(&path).unwrap()
}

fn truth(cfg: &RunConfig) -> (Vector, Vector) {
    let DataConfig::Generate(g) = &cfg.data else {
        panic!("fixture must generate its data");
    };
    (Vector::from_vec(g.theta_true.clone()), Vector::from_vec(g.x0_true.clone()))
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn sci(xs: &[f64], digits: usize) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.digits$e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn min(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::INFINITY, f64::min)
}

fn stacked(r: &GradientReport) -> Vector {
    Vector::from_iterator(
        r.grad_theta.len() + r.grad_x0.len(),
        r.grad_theta.iter().chain(r.grad_x0.iter()).copied(),
    )
}

/// `E = ½ Σ_i θ_{i mod n_θ} x_i²`.
struct QuadraticEnergy;

impl EnergyFunction for QuadraticEnergy {
    fn energy(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        Ok(0.5 * x.iter().enumerate().map(|(i, v)| theta[i % theta.len()] * v * v).sum::<f64>())
    }

    fn grad_x(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
        Ok(Vector::from_fn(x.len(), |i, _| theta[i % theta.len()] * x[i]))
    }

    fn grad_theta(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
        let mut g = Vector::zeros(theta.len());
        for (i, v) in x.iter().enumerate() {
            g[i % theta.len()] += 0.5 * v * v;
        }
        Ok(g)
    }
}

fn random_penalty(rng: &mut ChaCha8Rng, variant: usize, n_x: usize, n_theta: usize) -> PenaltyTerm {
    let lambda = rng.random_range(0.01..0.5);
    let kind = match variant {
        0 => PenaltyKind::EnergyConservation {
            energy: Arc::new(QuadraticEnergy),
            reference: rng.random_range(0.0..1.0),
        },
        1 => PenaltyKind::UpperBarrier {
            bounds: Vector::from_fn(n_x, |_, _| rng.random_range(0.5..2.0)),
            alpha: rng.random_range(0.5..3.0),
        },
        2 => PenaltyKind::LowerBarrier {
            bounds: Vector::from_fn(n_x, |_, _| rng.random_range(-2.0..-0.5)),
            alpha: rng.random_range(0.5..3.0),
        },
        _ => PenaltyKind::ParameterBox {
            lower: Vector::from_element(n_theta, 0.6),
            upper: Vector::from_element(n_theta, 1.4),
            alpha: rng.random_range(0.5..3.0),
        },
    };
    PenaltyTerm::new(kind, lambda).unwrap()
}

fn bounded(model: &RandomSmoothModel, x0: &Vector, theta: &Vector, inputs: &[Vector]) -> bool {
    rollout(model, x0, theta, inputs).is_ok_and(|t| t.states().iter().all(|x| x.amax() < 10.0))
}

/// Worst analytic/naive and analytic/fd errors over one random instance.
fn random_instance_errors(seed: u64, penalties: &[usize]) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n_x = rng.random_range(1..=4);
        let n_theta = rng.random_range(1..=4);
        let n_u = rng.random_range(1..=2);
        let n_z = rng.random_range(1..=n_x);
        let horizon = rng.random_range(2..=30);
        let model = RandomSmoothModel::sample(rng.random(), n_x, n_u, n_z, n_theta).unwrap();
        let theta_true = Vector::from_fn(n_theta, |_, _| rng.random_range(0.7..1.3));
        let x0_true = Vector::from_fn(n_x, |_, _| rng.random_range(-0.5..0.5));
        let inputs: Vec<Vector> = (0..horizon)
            .map(|_| Vector::from_fn(n_u, |_, _| rng.random_range(-0.3..0.3)))
            .collect();
        let theta = theta_true.map(|v| v * rng.random_range(0.8..1.2));
        let x0 = x0_true.map(|v| v + rng.random_range(-0.1..0.1));
        if !bounded(&model, &x0_true, &theta_true, &inputs) || !bounded(&model, &x0, &theta, &inputs) {
            continue;
        }
        let observations = rollout(&model, &x0_true, &theta_true, &inputs)
            .unwrap()
            .predictions()
            .iter()
            .map(|z| z.map(|v| v + rng.random_range(-0.05..0.05)))
            .collect();
        let data = Dataset::new(inputs, observations, 0.1).unwrap();
        let terms = penalties.iter().map(|&v| random_penalty(&mut rng, v, n_x, n_theta)).collect();
        let spec = LossSpec::scaled_identity(n_z, 1.0, horizon)
            .unwrap()
            .with_penalties(PenaltySpec::new(terms));

        let traj = rollout(&model, &x0, &theta, data.inputs()).unwrap();
        let a = stacked(&gradient(&model, &traj, &data, &spec, &theta).unwrap());
        let n = stacked(&gradient_naive(&model, &traj, &data, &spec, &theta).unwrap());
        let f = stacked(&fd_gradient(&model, &x0, &theta, &data, &spec, 1e-6).unwrap());
        return (max_relative_error(&a, &n), max_relative_error(&a, &f));
    }
}

fn c1_gradient_correctness() -> Outcome {
    let start = Instant::now();
    let (mut pair, mut fd) = (0.0f64, 0.0f64);
    for seed in 0..50u64 {
        let penalties: Vec<usize> = match seed % 6 {
            0 => vec![],
            5 => vec![0, 1, 2, 3],
            v => vec![(v - 1) as usize],
        };
        let (p, f) = random_instance_errors(1000 + seed, &penalties);
        pair = pair.max(p);
        fd = fd.max(f);
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: pair <= 1e-10 && fd <= 1e-5 && elapsed < Duration::from_secs(10),
        detail: format!("50 instances: analytic/naive {pair:.2e} (<= 1e-10), analytic/fd {fd:.2e} (<= 1e-5), {elapsed:.2?} (< 10s)"),
    }
}

fn c2_noiseless_recovery() -> Outcome {
    let cfg = config("satellite_noiseless.json");
    let (theta_true, _) = truth(&cfg);
    let start = Instant::now();
    let (_, summary) = identify_in_memory(&cfg, None).unwrap();
    let elapsed = start.elapsed();
    let rel = summary.theta_error.unwrap() / theta_true.norm();
    Outcome {
        pass: rel <= 1e-3 && elapsed < Duration::from_secs(30),
        detail: format!(
            "relative error {rel:.2e} (<= 1e-3) after {} epochs ({:?}), {elapsed:.2?} (< 30s)",
            summary.epochs, summary.stop_reason
        ),
    }
}

fn c3_c4_satellite() -> (Outcome, Outcome) {
    let start = Instant::now();
    let mut errors = Vec::new();
    let mut ratios = Vec::new();
    let mut trend_ok = true;
    for seed in 1..=5u64 {
        let mut cfg = config("satellite.json");
        cfg.seed = seed;
        let (run, summary) = identify_in_memory(&cfg, None).unwrap();
        errors.push(summary.theta_error.unwrap());
        let costs: Vec<f64> = run.history.iter().map(|h| h.cost).collect();
        let tenth = (costs.len() / 10).max(1);
        ratios.push(costs.last().unwrap() / costs[0]);
        trend_ok &= min(&costs[costs.len() - tenth..]) <= min(&costs[..tenth]);
    }
    let elapsed = start.elapsed();
    let med = median(errors.clone());
    let worst_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let c3 = Outcome {
        pass: med <= 5e-3 && elapsed < Duration::from_secs(120),
        detail: format!("seeds 1-5: median error {med:.3e} (<= 5e-3), errors {}, {elapsed:.2?} (< 2min)", sci(&errors, 3)),
    };
    let c4 = Outcome {
        pass: worst_ratio < 0.1 && trend_ok,
        detail: format!("worst final/initial cost {worst_ratio:.3e} (< 0.1), late minimum <= early minimum: {trend_ok}"),
    };
    (c3, c4)
}

fn c5_horizon_sweep() -> Outcome {
    let cfg = config("satellite.json");
    let dir = tempfile::tempdir().unwrap();
    let rows = cmd_sweep(&cfg, &[10, 25, 50, 100], dir.path()).unwrap();
    let times: Vec<f64> = rows.iter().map(|r| r.wall_time).collect();
    let errs: Vec<f64> = rows.iter().map(|r| r.theta_error.unwrap_or(f64::NAN)).collect();
    let increasing = times.windows(2).all(|w| w[0] < w[1]);
    Outcome {
        pass: increasing && errs[2] <= errs[0],
        detail: format!(
            "T 10/25/50/100: wall {times:.3?} s (strictly increasing: {increasing}), error T=50 {:.3e} <= T=10 {:.3e}",
            errs[2], errs[0]
        ),
    }
}

fn c6_analytic_vs_fd() -> Outcome {
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for seed in 1..=3u64 {
        let mut cfg = config("satellite.json");
        cfg.seed = seed;
        cfg.optimizer.max_epochs = 100;
        analytic.push(identify_in_memory(&cfg, None).unwrap().1.theta_error.unwrap());
        cfg.optimizer.gradient = GradientMethod::FiniteDifference { step: 1e-4 };
        numeric.push(identify_in_memory(&cfg, None).unwrap().1.theta_error.unwrap());
    }
    let (a, f) = (median(analytic.clone()), median(numeric.clone()));
    Outcome {
        pass: a <= f,
        detail: format!("E_max=100, seeds 1-3: median error analytic {a:.6e} <= fd(h=1e-4) {f:.6e} (analytic {}, fd {})", sci(&analytic, 6), sci(&numeric, 6)),
    }
}

/// Largest amount by which any predicted state exceeds its bound.
fn max_violation(cfg: &RunConfig, run: &IdentificationRun, bound: f64) -> f64 {
    let p = cfg.problem(None).unwrap();
    let traj = rollout(p.model.as_ref(), &run.x0_hat, &run.theta_hat, p.dataset.inputs()).unwrap();
    traj.states().iter().flat_map(|x| x.iter().map(|v| (v - bound).max(0.0)).collect::<Vec<_>>()).fold(0.0, f64::max)
}

fn c7_penalties() -> Outcome {
    let base = config("satellite.json");
    let (theta_true, x0_true) = truth(&base);
    let bound = 1.5 * x0_true.amax();
    let (free, _) = identify_in_memory(&base, None).unwrap();
    let mut barrier = base.clone();
    barrier.penalties.push(PenaltyConfig::UpperBarrier {
        alpha: 1e4,
        bounds: vec![Some(bound); 3],
        lambda: 1e-6,
    });
    let (bounded_run, _) = identify_in_memory(&barrier, None).unwrap();
    let (v_free, v_barrier) = (max_violation(&base, &free, bound), max_violation(&base, &bounded_run, bound));

    let mut boxed = base.clone();
    let lower: Vec<f64> = theta_true.iter().map(|t| 0.5 * t).collect();
    let upper: Vec<f64> = theta_true.iter().map(|t| 1.6 * t).collect();
    boxed.penalties.push(PenaltyConfig::ParameterBox {
        alpha: 1e3,
        lower: lower.iter().copied().map(Some).collect(),
        upper: upper.iter().copied().map(Some).collect(),
        lambda: 1e-6,
    });
    boxed.optimizer.theta_box = Some(BoxConfig {
        lower: lower.clone(),
        upper: upper.clone(),
    });
    let (box_run, _) = identify_in_memory(&boxed, None).unwrap();
    let feasible = box_run
        .history
        .iter()
        .all(|h| h.theta.iter().enumerate().all(|(i, &t)| lower[i] <= t && t <= upper[i]));
    Outcome {
        pass: v_barrier <= v_free && feasible,
        detail: format!(
            "upper bound {bound:.3e}: violation barrier {v_barrier:.3e} <= free {v_free:.3e}; box: all {} iterates feasible: {feasible}",
            box_run.history.len()
        ),
    }
}

fn c8_complexity() -> Outcome {
    let mut chains_ok = true;
    for n_theta in 1..=4 {
        for t in [2usize, 10, 50] {
            let model = RandomSmoothModel::sample(7, 3, 1, 2, n_theta).unwrap();
            let theta = Vector::from_element(n_theta, 0.9);
            let inputs = vec![Vector::from_element(1, 0.05); t];
            let traj = rollout(&model, &Vector::from_element(3, 0.1), &theta, &inputs).unwrap();
            let data = Dataset::new(inputs, vec![Vector::zeros(2); t], 0.1).unwrap();
            let spec = LossSpec::scaled_identity(2, 1.0, t).unwrap();
            chains_ok &= gradient(&model, &traj, &data, &spec, &theta).unwrap().work.chain_applications == t - 1;
        }
    }

    let t = 400;
    let theta = Vector::from_column_slice(&SATELLITE_INERTIA);
    let x0 = Vector::from_column_slice(&SATELLITE_OMEGA0);
    let mask = EulerAttitudeModel::structural_mask();
    let n_nz = mask.n_nz();
    let model = EulerAttitudeModel::satellite().with_mask(mask).unwrap();
    let data = generate_dataset(&model, &x0, &theta, t, &NoiseSpec::satellite(1), SATELLITE_DT).unwrap();
    let spec = LossSpec::scaled_identity(3, 1.0, t).unwrap();
    let traj = rollout(&model, &x0, &(&theta * 1.1), data.inputs()).unwrap();
    let report = gradient(&model, &traj, &data, &spec, &(&theta * 1.1)).unwrap();
    let entries_ok = report.work.jacobian_entries == (t - 1) * n_nz;

    let best = |f: &dyn Fn()| {
        (0..5)
            .map(|_| {
                let s = Instant::now();
                f();
                s.elapsed().as_secs_f64()
            })
            .fold(f64::INFINITY, f64::min)
    };
    let fast = best(&|| {
        gradient(&model, &traj, &data, &spec, &(&theta * 1.1)).unwrap();
    });
    let slow = best(&|| {
        gradient_naive(&model, &traj, &data, &spec, &(&theta * 1.1)).unwrap();
    });
    let ratio = slow / fast;
    Outcome {
        pass: chains_ok && entries_ok && ratio > 5.0,
        detail: format!(
            "chain applications T-1 for n_theta 1-4: {chains_ok}; masked entries {} = (T-1)*{n_nz}: {entries_ok}; naive/recursive at T=400 {ratio:.1}x (> 5x)",
            report.work.jacobian_entries
        ),
    }
}

fn main() {
    let (c3, c4) = c3_c4_satellite();
    let outcomes = [
        ("1 gradient correctness", c1_gradient_correctness()),
        ("2 noiseless recovery", c2_noiseless_recovery()),
        ("3 satellite estimate", c3),
        ("4 loss curve", c4),
        ("5 horizon sweep", c5_horizon_sweep()),
        ("6 analytic vs numeric", c6_analytic_vs_fd()),
        ("7 penalty efficacy", c7_penalties()),
        ("8 complexity", c8_complexity()),
    ];
    let mut failed = 0;
    for (name, o) in &outcomes {
        println!("criterion {name}: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
