//! Multi-step cost and its closed-form gradients.
//!
//! With `e_k = ẑ_k − z̃_k` the cost is
//!
//! ```text
//! C = Σ_{k=0}^{T-1} (1/T) e_kᵀ Q e_k  +  Σ_k Σ_state λ h(x̂_k, θ)  +  Σ_param λ h(θ)
//! ```
//!
//! Per-step seeds (row vectors, `1 × n_x` and `n_θ`):
//!
//! ```text
//! Γ_k = (2/T) e_kᵀ Q ∂g/∂x(x̂_k) + λ ∇_x h(x̂_k, θ)
//! γ_k = λ ∇_θ h(x̂_k, θ)
//! ```
//!
//! The gradients follow from one backward sweep over the horizon:
//!
//! ```text
//! a_{T-1} = Γ_{T-1}
//! a_{k-1} = Γ_{k-1} + a_k J^{x/x}_k          J^{x/x}_k = ∂f/∂x(x̂_{k-1}, u_{k-1}, θ)
//! ∇_θ C   = Σ_k γ_k + Σ_{k=1}^{T-1} a_k J^{x/θ}_k
//! ∇_x0 C  = a_0
//! ```
//!
//! which is the fixpoint form of the explicit double sum over `(k, τ)` pairs
//! implemented in [`gradient_naive`]. The `k = 0` terms (the direct effect of
//! `x̂_0` on `L_0`, and penalties at `k = 0`) are included; finite differences
//! of the cost require them.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{rollout, Dataset, DynamicalModel, Matrix, RowVector, Trajectory, Vector, DEFAULT_FD_STEP};
use crate::penalties::PenaltySpec;
use crate::structure::{masked_jac_f_x, sparse_chain_apply};

/// Weight matrix, horizon and penalty terms of the multi-step cost.
#[derive(Debug, Clone)]
pub struct LossSpec {
    q: Matrix,
    horizon: usize,
    penalties: PenaltySpec,
}

impl LossSpec {
    pub fn new(q: Matrix, horizon: usize) -> Result<Self> {
        if !q.is_square() || q.nrows() == 0 {
            return Err(Error::InvalidArgument(format!(
                "Q must be square and non-empty, got {}x{}",
                q.nrows(),
                q.ncols()
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { what: "Q" });
        }
        let scale = q.amax().max(1.0);
        if (&q - q.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidArgument("Q must be symmetric".into()));
        }
        let min_eig = q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-12 {
            return Err(Error::InvalidArgument(format!(
                "Q must be positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        if horizon < 2 {
            return Err(Error::InvalidArgument(format!("horizon must be >= 2, got {horizon}")));
        }
        Ok(Self {
            q,
            horizon,
            penalties: PenaltySpec::default(),
        })
    }

    /// `Q = scale · I`.
    pub fn scaled_identity(n_z: usize, scale: f64, horizon: usize) -> Result<Self> {
        Self::new(Matrix::identity(n_z, n_z) * scale, horizon)
    }

    pub fn with_penalties(mut self, penalties: PenaltySpec) -> Self {
        self.penalties = penalties;
        self
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn penalties(&self) -> &PenaltySpec {
        &self.penalties
    }

    fn check(&self, trajectory: &Trajectory, dataset: &Dataset) -> Result<()> {
        check_len("dataset length", self.horizon, dataset.len())?;
        check_len("trajectory horizon", self.horizon, trajectory.horizon())?;
        check_len("Q", self.q.nrows(), dataset.n_z())
    }
}

/// Work done by one gradient evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounters {
    /// Row-vector × `J^{x/x}` products.
    pub chain_applications: usize,
    /// State-Jacobian entries evaluated.
    pub jacobian_entries: usize,
}

/// Cost, gradients and per-step diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub cost: f64,
    pub grad_theta: Vector,
    pub grad_x0: Vector,
    /// `L_k = (1/T) e_kᵀ Q e_k`.
    pub per_step_loss: Vec<f64>,
    /// `‖Γ_k‖₂`; empty for finite-difference reports.
    pub per_step_gamma_norm: Vec<f64>,
    /// Weighted penalty contribution, so that `cost = Σ L_k + penalty_total`.
    pub penalty_total: f64,
    pub work: WorkCounters,
}

/// Flat JSON form of a [`GradientReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSummary {
    pub cost: f64,
    pub grad_theta: Vec<f64>,
    pub grad_x0: Vec<f64>,
    pub penalty_total: f64,
}

impl GradientReport {
    /// Euclidean norm of the stacked gradient `[∇_θ C, ∇_x0 C]`.
    pub fn norm(&self) -> f64 {
        (self.grad_theta.norm_squared() + self.grad_x0.norm_squared()).sqrt()
    }

    pub fn summary(&self) -> GradientSummary {
        GradientSummary {
            cost: self.cost,
            grad_theta: self.grad_theta.iter().copied().collect(),
            grad_x0: self.grad_x0.iter().copied().collect(),
            penalty_total: self.penalty_total,
        }
    }
}

/// Per-step gradient seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaTerms {
    /// `γ_k`, direct parameter gradient of the local loss at step `k`.
    pub gamma: Vec<Vector>,
    /// `Γ_k`, local loss gradient pulled back to the state at step `k`.
    pub big_gamma: Vec<RowVector>,
}

/// `e_k = ẑ_k − z̃_k`.
pub fn prediction_error(trajectory: &Trajectory, dataset: &Dataset) -> Result<Vec<Vector>> {
    check_len("predictions", dataset.len(), trajectory.horizon())?;
    trajectory
        .predictions()
        .iter()
        .zip(dataset.observations())
        .map(|(z_hat, z)| {
            check_len("prediction", z.len(), z_hat.len())?;
            Ok(z_hat - z)
        })
        .collect()
}

struct CostParts {
    errors: Vec<Vector>,
    per_step_loss: Vec<f64>,
    penalty_total: f64,
}

impl CostParts {
    fn total(&self) -> f64 {
        self.per_step_loss.iter().sum::<f64>() + self.penalty_total
    }
}

fn cost_parts(trajectory: &Trajectory, dataset: &Dataset, spec: &LossSpec, theta: &Vector) -> Result<CostParts> {
    spec.check(trajectory, dataset)?;
    let errors = prediction_error(trajectory, dataset)?;
    let inv_t = 1.0 / spec.horizon as f64;
    let per_step_loss: Vec<f64> = errors.iter().map(|e| inv_t * e.dot(&(&spec.q * e))).collect();

    let penalties = spec.penalties();
    let mut penalty_total = 0.0;
    if penalties.has_state_terms() {
        for x in &trajectory.states()[..spec.horizon] {
            penalty_total += penalties.state_value(x, theta)?;
        }
    }
    if penalties.has_parameter_terms() {
        penalty_total += penalties.parameter_value(trajectory.initial_state(), theta)?;
    }

    if !penalty_total.is_finite() || per_step_loss.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFiniteValue { what: "cost" });
    }
    Ok(CostParts {
        errors,
        per_step_loss,
        penalty_total,
    })
}

/// Multi-step cost, penalties included.
pub fn cost(trajectory: &Trajectory, dataset: &Dataset, spec: &LossSpec, theta: &Vector) -> Result<f64> {
    Ok(cost_parts(trajectory, dataset, spec, theta)?.total())
}

fn seeds<M: DynamicalModel + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    spec: &LossSpec,
    theta: &Vector,
    errors: &[Vector],
) -> Result<GammaTerms> {
    let dims = model.dims();
    let scale = 2.0 / spec.horizon as f64;
    let penalties = spec.penalties();
    let mut gamma = Vec::with_capacity(errors.len());
    let mut big_gamma = Vec::with_capacity(errors.len());

    for (k, e) in errors.iter().enumerate() {
        let x = &trajectory.states()[k];
        let jzx = model.jac_g_x(x)?;
        check_len("observation Jacobian rows", dims.n_z, jzx.nrows())?;
        let mut row: RowVector = (e.transpose() * &spec.q) * &jzx * scale;
        let mut g = Vector::zeros(dims.n_theta);
        if penalties.has_state_terms() {
            let (gx, gt) = penalties.weighted_gradients(true, x, theta)?;
            row += gx.transpose();
            g += gt;
        }
        if k == 0 && penalties.has_parameter_terms() {
            let (_, gt) = penalties.weighted_gradients(false, x, theta)?;
            g += gt;
        }
        if row.iter().chain(g.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue { what: "gradient seeds" });
        }
        big_gamma.push(row);
        gamma.push(g);
    }
    Ok(GammaTerms { gamma, big_gamma })
}

/// Per-step seeds `γ_k` and `Γ_k`.
pub fn gamma_terms<M: DynamicalModel + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    dataset: &Dataset,
    spec: &LossSpec,
    theta: &Vector,
) -> Result<GammaTerms> {
    let parts = cost_parts(trajectory, dataset, spec, theta)?;
    seeds(model, trajectory, spec, theta, &parts.errors)
}

/// Re-evaluates the model at three steps and requires bit-identical states.
fn spot_check<M: DynamicalModel + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    dataset: &Dataset,
    theta: &Vector,
) -> Result<()> {
    if trajectory.parameters() != theta {
        return Err(Error::TrajectoryMismatch { step: 0 });
    }
    let t = trajectory.horizon();
    let states = trajectory.states();
    if states.len() != t + 1 {
        return Err(Error::TrajectoryMismatch { step: states.len() });
    }
    let mut steps = [0, t / 2, t - 1];
    steps.sort_unstable();
    for &k in steps.iter() {
        let next = model.step(&states[k], &dataset.inputs()[k], theta)?;
        if next != states[k + 1] {
            return Err(Error::TrajectoryMismatch { step: k + 1 });
        }
        if model.observe(&states[k])? != trajectory.predictions()[k] {
            return Err(Error::TrajectoryMismatch { step: k });
        }
    }
    Ok(())
}

fn finish(
    parts: CostParts,
    seeds: &GammaTerms,
    grad_theta: Vector,
    grad_x0: Vector,
    work: WorkCounters,
) -> Result<GradientReport> {
    if grad_theta.iter().chain(grad_x0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { what: "gradient" });
    }
    Ok(GradientReport {
        cost: parts.total(),
        grad_theta,
        grad_x0,
        per_step_gamma_norm: seeds.big_gamma.iter().map(|r| r.norm()).collect(),
        per_step_loss: parts.per_step_loss,
        penalty_total: parts.penalty_total,
        work,
    })
}

/// Closed-form gradient by a single backward adjoint sweep, `O(T)`.
///
/// Uses the model's sparsity mask, when present, for `J^{x/x}`.
pub fn gradient<M: DynamicalModel + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    dataset: &Dataset,
    spec: &LossSpec,
    theta: &Vector,
) -> Result<GradientReport> {
    let parts = cost_parts(trajectory, dataset, spec, theta)?;
    spot_check(model, trajectory, dataset, theta)?;
    let seeds = seeds(model, trajectory, spec, theta, &parts.errors)?;
    let dims = model.dims();
    let t = spec.horizon;
    let states = trajectory.states();
    let inputs = dataset.inputs();
    let mut work = WorkCounters::default();

    let mut grad_theta = seeds.gamma.iter().fold(Vector::zeros(dims.n_theta), |acc, g| acc + g);
    let mut adjoint = seeds.big_gamma[t - 1].clone();
    for k in (1..t).rev() {
        let (x_prev, u_prev) = (&states[k - 1], &inputs[k - 1]);
        let jxt = model.jac_f_theta(x_prev, u_prev, theta)?;
        grad_theta += (&adjoint * &jxt).transpose();
        let pulled = match model.sparsity() {
            Some(mask) => {
                let jxx = masked_jac_f_x(model, x_prev, u_prev, theta, mask)?;
                work.jacobian_entries += jxx.nnz();
                sparse_chain_apply(&adjoint, &jxx)?
            }
            None => {
                let jxx = model.jac_f_x(x_prev, u_prev, theta)?;
                work.jacobian_entries += jxx.len();
                &adjoint * &jxx
            }
        };
        work.chain_applications += 1;
        adjoint = &seeds.big_gamma[k - 1] + pulled;
    }
    finish(parts, &seeds, grad_theta, adjoint.transpose(), work)
}

/// Literal double-sum gradient: every `(τ, k)` pair walks its own Jacobian
/// chain, `O(T²)`. Reference for [`gradient`]; never used by the optimizer.
pub fn gradient_naive<M: DynamicalModel + ?Sized>(
    model: &M,
    trajectory: &Trajectory,
    dataset: &Dataset,
    spec: &LossSpec,
    theta: &Vector,
) -> Result<GradientReport> {
    let parts = cost_parts(trajectory, dataset, spec, theta)?;
    spot_check(model, trajectory, dataset, theta)?;
    let seeds = seeds(model, trajectory, spec, theta, &parts.errors)?;
    let dims = model.dims();
    let t = spec.horizon;
    let states = trajectory.states();
    let inputs = dataset.inputs();
    let mut work = WorkCounters::default();

    // J^{x/x}_k and J^{x/θ}_k for k = 1..T-1, evaluated once and reused.
    let mut jxx = vec![Matrix::zeros(0, 0)];
    let mut jxt = vec![Matrix::zeros(0, 0)];
    for k in 1..t {
        let m = model.jac_f_x(&states[k - 1], &inputs[k - 1], theta)?;
        work.jacobian_entries += m.len();
        jxx.push(m);
        jxt.push(model.jac_f_theta(&states[k - 1], &inputs[k - 1], theta)?);
    }

    let mut grad_theta = seeds.gamma.iter().fold(Vector::zeros(dims.n_theta), |acc, g| acc + g);
    let mut grad_x0 = seeds.big_gamma[0].transpose();
    for tau in 1..t {
        // Γ_τ J^{x/x}_τ ⋯ J^{x/x}_{k+1}, extended one factor per k.
        let mut chain = seeds.big_gamma[tau].clone();
        for k in (1..=tau).rev() {
            grad_theta += (&chain * &jxt[k]).transpose();
            chain = &chain * &jxx[k];
            work.chain_applications += 1;
        }
        grad_x0 += chain.transpose();
    }
    finish(parts, &seeds, grad_theta, grad_x0, work)
}

/// Cost at `(θ, x0)` after a fresh rollout.
pub fn rollout_cost<M: DynamicalModel + ?Sized>(
    model: &M,
    x0: &Vector,
    theta: &Vector,
    dataset: &Dataset,
    spec: &LossSpec,
) -> Result<f64> {
    let traj = rollout(model, x0, theta, dataset.inputs())?;
    cost(&traj, dataset, spec, theta)
}

/// Central finite differences of the cost in every `θ_i` and `x0_j`,
/// re-rolling the trajectory for each perturbation. The step for a
/// component `p` is `step · max(1, |p|)`.
pub fn fd_gradient<M: DynamicalModel + ?Sized>(
    model: &M,
    x0: &Vector,
    theta: &Vector,
    dataset: &Dataset,
    spec: &LossSpec,
    step: f64,
) -> Result<GradientReport> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {step}")));
    }
    let traj = rollout(model, x0, theta, dataset.inputs())?;
    let parts = cost_parts(&traj, dataset, spec, theta)?;

    let central = |p: &Vector, eval: &dyn Fn(&Vector) -> Result<f64>| -> Result<Vector> {
        let mut out = Vector::zeros(p.len());
        let mut probe = p.clone();
        for i in 0..p.len() {
            let h = step * p[i].abs().max(1.0);
            probe[i] = p[i] + h;
            let plus = eval(&probe)?;
            probe[i] = p[i] - h;
            let minus = eval(&probe)?;
            probe[i] = p[i];
            out[i] = (plus - minus) / (2.0 * h);
        }
        Ok(out)
    };
    let grad_theta = central(theta, &|th| rollout_cost(model, x0, th, dataset, spec))?;
    let grad_x0 = central(x0, &|x| rollout_cost(model, x, theta, dataset, spec))?;
    if grad_theta.iter().chain(grad_x0.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { what: "finite-difference gradient" });
    }
    Ok(GradientReport {
        cost: parts.total(),
        grad_theta,
        grad_x0,
        per_step_gamma_norm: Vec::new(),
        per_step_loss: parts.per_step_loss,
        penalty_total: parts.penalty_total,
        work: WorkCounters::default(),
    })
}

/// `fd_gradient` with the default step.
pub fn fd_gradient_default<M: DynamicalModel + ?Sized>(
    model: &M,
    x0: &Vector,
    theta: &Vector,
    dataset: &Dataset,
    spec: &LossSpec,
) -> Result<GradientReport> {
    fd_gradient(model, x0, theta, dataset, spec, DEFAULT_FD_STEP)
}

/// `max|a − b| / max(max|a|, max|b|)`, or 0 when both are zero.
pub fn max_relative_error(a: &Vector, b: &Vector) -> f64 {
    let scale = a.amax().max(b.amax());
    if scale == 0.0 {
        return if a == b { 0.0 } else { f64::INFINITY };
    }
    (a - b).amax() / scale
}

/// Relative error between two reports over the stacked gradient.
pub fn report_relative_error(a: &GradientReport, b: &GradientReport) -> f64 {
    let stack = |r: &GradientReport| {
        Vector::from_iterator(
            r.grad_theta.len() + r.grad_x0.len(),
            r.grad_theta.iter().chain(r.grad_x0.iter()).copied(),
        )
    };
    max_relative_error(&stack(a), &stack(b))
}
