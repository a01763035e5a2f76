//! ADAM and the epoch loop that fits `(θ, x̂_0)`.
//!
//! Each epoch rolls the model out, evaluates cost and gradient, checks the
//! stopping conditions, then takes one ADAM step on `θ` and one on `x̂_0`
//! with independent learning rates and moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::gradient::{fd_gradient, gradient, gradient_naive, GradientReport, LossSpec};
use crate::model::{rollout, Dataset, DynamicalModel, Vector};
use crate::penalties::project_box;

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS_NUM: f64 = 1e-8;
pub const DEFAULT_ETA_THETA: f64 = 1e-3;
pub const DEFAULT_ETA_X0: f64 = 1e-4;
/// Consecutive rejected steps after which identification gives up.
pub const MAX_CONSECUTIVE_REJECTIONS: usize = 10;

/// Bias-corrected ADAM moments for one decision vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vector,
    pub v: Vector,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_num: f64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self::with_rates(n, lr, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS_NUM)
    }

    pub fn with_rates(n: usize, lr: f64, beta1: f64, beta2: f64, eps_num: f64) -> Self {
        Self {
            m: Vector::zeros(n),
            v: Vector::zeros(n),
            t: 0,
            beta1,
            beta2,
            eps_num,
            lr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !(in_unit(self.beta1) && in_unit(self.beta2)) {
            return Err(Error::InvalidArgument(format!(
                "decay rates must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps_num > 0.0 && self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate and epsilon must be positive, got {} and {}",
                self.lr, self.eps_num
            )));
        }
        Ok(())
    }

    /// One update; returns the new parameters and moments without mutating `self`.
    pub fn step(&self, grad: &Vector, params: &Vector) -> Result<(Vector, AdamState)> {
        check_len("gradient", params.len(), grad.len())?;
        check_len("ADAM moments", self.m.len(), grad.len())?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        let t = self.t + 1;
        let m = &self.m * self.beta1 + grad * (1.0 - self.beta1);
        let v = &self.v * self.beta2 + grad.component_mul(grad) * (1.0 - self.beta2);
        let bc1 = 1.0 - self.beta1.powf(t as f64);
        let bc2 = 1.0 - self.beta2.powf(t as f64);
        let updated = Vector::from_fn(params.len(), |i, _| {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            params[i] - self.lr * m_hat / (v_hat.sqrt() + self.eps_num)
        });
        let state = AdamState {
            m,
            v,
            t,
            ..self.clone()
        };
        Ok((updated, state))
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: &AdamState, grad: &Vector, params: &Vector) -> Result<(Vector, AdamState)> {
    state.step(grad, params)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingCriteria {
    /// `E_max`.
    pub max_epochs: usize,
    /// Stop once `C < ε`.
    pub cost_eps: f64,
    /// Stop once `‖∇C‖₂ < δ`.
    pub grad_delta: f64,
}

impl StoppingCriteria {
    pub fn new(max_epochs: usize, cost_eps: f64, grad_delta: f64) -> Result<Self> {
        let s = Self {
            max_epochs,
            cost_eps,
            grad_delta,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_epochs < 1 {
            return Err(Error::InvalidArgument("max_epochs must be >= 1".into()));
        }
        if !(self.cost_eps >= 0.0 && self.grad_delta >= 0.0) {
            return Err(Error::InvalidArgument("cost and gradient thresholds must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    MaxEpochs,
    CostBelowEps,
    GradBelowDelta,
}

/// Which gradient drives the updates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GradientMethod {
    /// Backward adjoint sweep.
    #[default]
    Analytic,
    /// Explicit double sum; same values, quadratic cost.
    Naive,
    /// Central differences of the cost with the given relative step.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOptions {
    pub eta_theta: f64,
    pub eta_x0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_num: f64,
    pub stopping: StoppingCriteria,
    /// Box `(lower, upper)` onto which `θ` is projected after every update.
    pub theta_box: Option<(Vector, Vector)>,
    pub gradient: GradientMethod,
}

impl IdentifyOptions {
    pub fn new(stopping: StoppingCriteria) -> Self {
        Self {
            eta_theta: DEFAULT_ETA_THETA,
            eta_x0: DEFAULT_ETA_X0,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps_num: DEFAULT_EPS_NUM,
            stopping,
            theta_box: None,
            gradient: GradientMethod::Analytic,
        }
    }
}

/// One row of the per-epoch history.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub cost: f64,
    pub grad_norm: f64,
    pub theta: Vector,
    pub x0: Vector,
}

/// Which decision vector had its learning rate halved after a rejected step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectedTarget {
    Theta,
    InitialState,
}

/// A proposed update whose rollout failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    pub epoch: usize,
    pub target: RejectedTarget,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationRun {
    /// Iterate with the lowest recorded cost.
    pub theta_hat: Vector,
    pub x0_hat: Vector,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub rejections: Vec<Rejection>,
}

impl IdentificationRun {
    pub fn final_record(&self) -> &EpochRecord {
        self.history.last().expect("history is never empty")
    }

    pub fn best_record(&self) -> &EpochRecord {
        &self.history[self.best_epoch]
    }
}

fn evaluate<M: DynamicalModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    spec: &LossSpec,
    method: GradientMethod,
    theta: &Vector,
    x0: &Vector,
) -> Result<GradientReport> {
    let traj = rollout(model, x0, theta, dataset.inputs())?;
    match method {
        GradientMethod::Analytic => gradient(model, &traj, dataset, spec, theta),
        GradientMethod::Naive => gradient_naive(model, &traj, dataset, spec, theta),
        GradientMethod::FiniteDifference { step } => fd_gradient(model, x0, theta, dataset, spec, step),
    }
}

/// Fits `(θ, x̂_0)` to the dataset starting from `(theta0, x00)`.
pub fn identify<M: DynamicalModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    spec: &LossSpec,
    theta0: &Vector,
    x00: &Vector,
    opts: &IdentifyOptions,
) -> Result<IdentificationRun> {
    let dims = model.dims();
    check_len("initial parameters", dims.n_theta, theta0.len())?;
    check_len("initial state", dims.n_x, x00.len())?;
    dataset.check_dims(&dims)?;
    spec.penalties().check_dims(&dims)?;
    opts.stopping.validate()?;
    if let GradientMethod::FiniteDifference { step } = opts.gradient {
        if step.is_nan() || step <= 0.0 {
            return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
        }
    }
    if let Some((lo, hi)) = &opts.theta_box {
        project_box(theta0, lo, hi)?;
    }

    let mut adam_theta = AdamState::with_rates(dims.n_theta, opts.eta_theta, opts.beta1, opts.beta2, opts.eps_num);
    let mut adam_x0 = AdamState::with_rates(dims.n_x, opts.eta_x0, opts.beta1, opts.beta2, opts.eps_num);
    adam_theta.validate()?;
    adam_x0.validate()?;

    let mut theta = theta0.clone();
    let mut x0 = x00.clone();
    let mut report = evaluate(model, dataset, spec, opts.gradient, &theta, &x0)?;
    let mut history = Vec::new();
    let mut rejections = Vec::new();
    let mut epoch = 0;

    let stop_reason = loop {
        history.push(EpochRecord {
            epoch,
            cost: report.cost,
            grad_norm: report.norm(),
            theta: theta.clone(),
            x0: x0.clone(),
        });
        if report.cost < opts.stopping.cost_eps {
            break StopReason::CostBelowEps;
        }
        if report.norm() < opts.stopping.grad_delta {
            break StopReason::GradBelowDelta;
        }
        if epoch >= opts.stopping.max_epochs {
            break StopReason::MaxEpochs;
        }

        let mut consecutive = 0;
        loop {
            let (mut theta_new, theta_state) = adam_theta.step(&report.grad_theta, &theta)?;
            if let Some((lo, hi)) = &opts.theta_box {
                theta_new = project_box(&theta_new, lo, hi)?;
            }
            let (x0_new, x0_state) = adam_x0.step(&report.grad_x0, &x0)?;
            match evaluate(model, dataset, spec, opts.gradient, &theta_new, &x0_new) {
                Ok(next) => {
                    theta = theta_new;
                    x0 = x0_new;
                    adam_theta = theta_state;
                    adam_x0 = x0_state;
                    report = next;
                    break;
                }
                Err(error) => {
                    consecutive += 1;
                    let target = if rollout(model, &x0, &theta_new, dataset.inputs()).is_err() {
                        adam_theta.lr *= 0.5;
                        RejectedTarget::Theta
                    } else {
                        adam_x0.lr *= 0.5;
                        RejectedTarget::InitialState
                    };
                    rejections.push(Rejection {
                        epoch,
                        target,
                        error,
                    });
                    if consecutive >= MAX_CONSECUTIVE_REJECTIONS {
                        return Err(Error::DivergedRollout {
                            epoch,
                            rejections: consecutive,
                        });
                    }
                }
            }
        }
        epoch += 1;
    };

    let best_epoch = history
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost))
        .map(|(i, _)| i)
        .expect("history is never empty");
    Ok(IdentificationRun {
        theta_hat: history[best_epoch].theta.clone(),
        x0_hat: history[best_epoch].x0.clone(),
        best_epoch,
        history,
        stop_reason,
        rejections,
    })
}
