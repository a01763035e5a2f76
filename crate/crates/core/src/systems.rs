//! Bundled models: rigid-body attitude dynamics with diagonal inertia, a
//! scalar gain system, and a seeded noisy dataset generator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{rollout, Dataset, DynamicalModel, Matrix, ModelDims, Vector};
use crate::penalties::EnergyFunction;
use crate::structure::SparsityMask;

/// Inertia, initial rate and sampling period of the satellite scenario.
pub const SATELLITE_INERTIA: [f64; 3] = [0.0403, 0.0404, 0.0080];
pub const SATELLITE_OMEGA0: [f64; 3] = [9.915e-6, -1.102e-3, 1.3179e-5];
pub const SATELLITE_DT: f64 = 0.1;
/// Disturbance torque mean and spread, measurement noise spread.
pub const SATELLITE_TORQUE_MEAN: f64 = 1e-5;
pub const SATELLITE_TORQUE_STD: f64 = 1e-7;
pub const SATELLITE_OBS_STD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Integrator {
    #[default]
    ForwardEuler,
    Rk4,
}

fn check_inertia(theta: &Vector) -> Result<()> {
    check_len("inertia", 3, theta.len())?;
    for (index, &value) in theta.iter().enumerate() {
        if value.is_nan() || value <= 0.0 {
            return Err(Error::NonPositiveInertia { index, value });
        }
    }
    Ok(())
}

/// `ω̇ = I⁻¹(M − ω × Iω)` for diagonal `I`.
fn body_rates(omega: &Vector, torque: &Vector, inertia: &Vector) -> Vector {
    Vector::from_fn(3, |i, _| {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        (torque[i] - (inertia[k] - inertia[j]) * omega[j] * omega[k]) / inertia[i]
    })
}

/// One integrator step of the Euler rigid-body equations.
pub fn euler_step(omega: &Vector, torque: &Vector, theta: &Vector, dt: f64, integrator: Integrator) -> Result<Vector> {
    check_inertia(theta)?;
    check_len("angular rate", 3, omega.len())?;
    check_len("torque", 3, torque.len())?;
    Ok(match integrator {
        Integrator::ForwardEuler => omega + body_rates(omega, torque, theta) * dt,
        Integrator::Rk4 => {
            let k1 = body_rates(omega, torque, theta);
            let k2 = body_rates(&(omega + &k1 * (0.5 * dt)), torque, theta);
            let k3 = body_rates(&(omega + &k2 * (0.5 * dt)), torque, theta);
            let k4 = body_rates(&(omega + &k3 * dt), torque, theta);
            omega + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0)
        }
    })
}

/// `∂f_i/∂ω_l` of the forward-Euler map.
fn fe_state_entry(omega: &Vector, theta: &Vector, dt: f64, i: usize, l: usize) -> f64 {
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let coupling = theta[k] - theta[j];
    if l == i {
        1.0
    } else if l == j {
        -dt * coupling * omega[k] / theta[i]
    } else {
        -dt * coupling * omega[j] / theta[i]
    }
}

/// `∂f_i/∂I_l` of the forward-Euler map.
fn fe_param_entry(omega: &Vector, torque: &Vector, theta: &Vector, dt: f64, i: usize, l: usize) -> f64 {
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    let cross = omega[j] * omega[k];
    if l == i {
        let net = torque[i] - (theta[k] - theta[j]) * cross;
        -dt * net / (theta[i] * theta[i])
    } else if l == j {
        dt * cross / theta[i]
    } else {
        -dt * cross / theta[i]
    }
}

/// Analytic `(∂f/∂ω, ∂f/∂I)` of the forward-Euler map.
pub fn euler_jacobians(omega: &Vector, torque: &Vector, theta: &Vector, dt: f64) -> Result<(Matrix, Matrix)> {
    check_inertia(theta)?;
    check_len("angular rate", 3, omega.len())?;
    check_len("torque", 3, torque.len())?;
    let jx = Matrix::from_fn(3, 3, |i, l| fe_state_entry(omega, theta, dt, i, l));
    let jt = Matrix::from_fn(3, 3, |i, l| fe_param_entry(omega, torque, theta, dt, i, l));
    Ok((jx, jt))
}

/// `E = ½ Σ I_i ω_i²`.
pub fn rotational_energy(omega: &Vector, theta: &Vector) -> Result<f64> {
    check_inertia(theta)?;
    check_len("angular rate", 3, omega.len())?;
    Ok(0.5 * (0..3).map(|i| theta[i] * omega[i] * omega[i]).sum::<f64>())
}

/// Rotational kinetic energy as an [`EnergyFunction`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RotationalEnergy;

impl EnergyFunction for RotationalEnergy {
    fn energy(&self, x: &Vector, theta: &Vector) -> Result<f64> {
        rotational_energy(x, theta)
    }

    fn grad_x(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
        check_inertia(theta)?;
        Ok(x.component_mul(theta))
    }

    fn grad_theta(&self, x: &Vector, theta: &Vector) -> Result<Vector> {
        check_inertia(theta)?;
        Ok(x.map(|w| 0.5 * w * w))
    }
}

/// Rigid-body attitude rates with diagonal inertia `θ = [I_x, I_y, I_z]`,
/// state `ω`, torque input `M` and identity observation.
#[derive(Debug, Clone)]
pub struct EulerAttitudeModel {
    dt: f64,
    integrator: Integrator,
    mask: Option<SparsityMask>,
}

impl EulerAttitudeModel {
    pub fn new(dt: f64, integrator: Integrator) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        Ok(Self {
            dt,
            integrator,
            mask: None,
        })
    }

    /// Forward-Euler model with the satellite sampling period.
    pub fn satellite() -> Self {
        Self::new(SATELLITE_DT, Integrator::ForwardEuler).expect("valid dt")
    }

    /// Every rate is coupled to the other two through the gyroscopic term, so
    /// the state pattern is full; each torque acts only on its own axis.
    pub fn structural_mask() -> SparsityMask {
        let input = (0..3).map(|i| (0..3).map(|j| i == j).collect()).collect();
        SparsityMask::new(vec![vec![true; 3]; 3], input).expect("3x3 mask")
    }

    /// Attaches a mask so gradients take the sparse path.
    pub fn with_mask(mut self, mask: SparsityMask) -> Result<Self> {
        check_len("mask", 3, mask.n_x())?;
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn integrator(&self) -> Integrator {
        self.integrator
    }
}

impl DynamicalModel for EulerAttitudeModel {
    fn dims(&self) -> ModelDims {
        ModelDims::new(3, 3, 3, 3).expect("static dims")
    }

    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector> {
        euler_step(x, u, theta, self.dt, self.integrator)
    }

    fn observe(&self, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }

    fn jac_f_x(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        match self.integrator {
            Integrator::ForwardEuler => Ok(euler_jacobians(x, u, theta, self.dt)?.0),
            Integrator::Rk4 => crate::model::numeric_jacobian(
                |p| self.step(p, u, theta),
                x,
                crate::model::DEFAULT_FD_STEP,
            ),
        }
    }

    fn jac_f_theta(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        match self.integrator {
            Integrator::ForwardEuler => Ok(euler_jacobians(x, u, theta, self.dt)?.1),
            Integrator::Rk4 => crate::model::numeric_jacobian(
                |p| self.step(x, u, p),
                theta,
                crate::model::DEFAULT_FD_STEP,
            ),
        }
    }

    fn jac_g_x(&self, _x: &Vector) -> Result<Matrix> {
        Ok(Matrix::identity(3, 3))
    }

    fn jac_f_x_entries(
        &self,
        x: &Vector,
        u: &Vector,
        theta: &Vector,
        entries: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        match self.integrator {
            Integrator::ForwardEuler => {
                check_inertia(theta)?;
                check_len("angular rate", 3, x.len())?;
                Ok(entries
                    .iter()
                    .map(|&(i, l)| fe_state_entry(x, theta, self.dt, i, l))
                    .collect())
            }
            Integrator::Rk4 => {
                let dense = self.jac_f_x(x, u, theta)?;
                Ok(entries.iter().map(|&(i, l)| dense[(i, l)]).collect())
            }
        }
    }

    fn sparsity(&self) -> Option<&SparsityMask> {
        self.mask.as_ref()
    }
}

/// `x_{k+1} = θ·x_k + u_k`, `z_k = x_k`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarGainModel;

impl DynamicalModel for ScalarGainModel {
    fn dims(&self) -> ModelDims {
        ModelDims::new(1, 1, 1, 1).expect("static dims")
    }

    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector> {
        check_len("state", 1, x.len())?;
        check_len("parameters", 1, theta.len())?;
        Ok(Vector::from_element(1, theta[0] * x[0] + u[0]))
    }

    fn observe(&self, x: &Vector) -> Result<Vector> {
        Ok(x.clone())
    }

    fn jac_f_x(&self, _x: &Vector, _u: &Vector, theta: &Vector) -> Result<Matrix> {
        Ok(Matrix::from_element(1, 1, theta[0]))
    }

    fn jac_f_theta(&self, x: &Vector, _u: &Vector, _theta: &Vector) -> Result<Matrix> {
        Ok(Matrix::from_element(1, 1, x[0]))
    }

    fn jac_g_x(&self, _x: &Vector) -> Result<Matrix> {
        Ok(Matrix::identity(1, 1))
    }
}

/// A randomly drawn smooth model mixing linear, polynomial and
/// trigonometric terms, with analytic Jacobians:
///
/// ```text
/// f_i = x_i + dt·( Σ_j A_ij x_j + Σ_l θ_l (B_il sin x_{s_il} + C_il x_{p_il} x_{q_il})
///                  + Σ_m D_im u_m + E_i θ_{r_i}² cos x_i )
/// g_i = x_i + G_i x_{(i+1) mod n_x}²,  i < n_z
/// ```
///
/// Used to exercise gradient code on dynamics other than the bundled ones.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomSmoothModel {
    dims: ModelDims,
    dt: f64,
    a: Matrix,
    b: Matrix,
    c: Matrix,
    d: Matrix,
    e: Vector,
    g: Vector,
    s_idx: Vec<Vec<usize>>,
    p_idx: Vec<Vec<usize>>,
    q_idx: Vec<Vec<usize>>,
    r_idx: Vec<usize>,
}

impl RandomSmoothModel {
    /// Draws a model from `seed`. Requires `n_z <= n_x`.
    pub fn sample(seed: u64, n_x: usize, n_u: usize, n_z: usize, n_theta: usize) -> Result<Self> {
        let dims = ModelDims::new(n_x, n_u, n_z, n_theta)?;
        if n_z > n_x {
            return Err(Error::InvalidArgument(format!("n_z ({n_z}) must not exceed n_x ({n_x})")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut coef = |r: usize, c: usize, scale: f64| Matrix::from_fn(r, c, |_, _| scale * rng.random_range(-1.0..1.0));
        // Damped linear part keeps rollouts bounded over a few dozen steps.
        let a = coef(n_x, n_x, 0.3) - Matrix::identity(n_x, n_x) * 0.5;
        let b = coef(n_x, n_theta, 1.0);
        let c = coef(n_x, n_theta, 0.3);
        let d = coef(n_x, n_u, 1.0);
        let e = coef(n_x, 1, 1.0).column(0).into_owned();
        let g = coef(n_x, 1, 0.3).column(0).into_owned();
        let mut idx = || -> Vec<Vec<usize>> {
            (0..n_x)
                .map(|_| (0..n_theta).map(|_| rng.random_range(0..n_x)).collect())
                .collect()
        };
        let (s_idx, p_idx, q_idx) = (idx(), idx(), idx());
        let r_idx = (0..n_x).map(|_| rng.random_range(0..n_theta)).collect();
        Ok(Self {
            dims,
            dt: 0.1,
            a,
            b,
            c,
            d,
            e,
            g,
            s_idx,
            p_idx,
            q_idx,
            r_idx,
        })
    }

    fn check(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<()> {
        check_len("state", self.dims.n_x, x.len())?;
        check_len("input", self.dims.n_u, u.len())?;
        check_len("parameters", self.dims.n_theta, theta.len())
    }
}

impl DynamicalModel for RandomSmoothModel {
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector> {
        self.check(x, u, theta)?;
        let drift = &self.a * x + &self.d * u;
        Ok(Vector::from_fn(self.dims.n_x, |i, _| {
            let mut rate = drift[i];
            for l in 0..self.dims.n_theta {
                let (s, p, q) = (self.s_idx[i][l], self.p_idx[i][l], self.q_idx[i][l]);
                rate += theta[l] * (self.b[(i, l)] * x[s].sin() + self.c[(i, l)] * x[p] * x[q]);
            }
            let r = theta[self.r_idx[i]];
            rate += self.e[i] * r * r * x[i].cos();
            x[i] + self.dt * rate
        }))
    }

    fn observe(&self, x: &Vector) -> Result<Vector> {
        check_len("state", self.dims.n_x, x.len())?;
        let n = self.dims.n_x;
        Ok(Vector::from_fn(self.dims.n_z, |i, _| {
            let nb = x[(i + 1) % n];
            x[i] + self.g[i] * nb * nb
        }))
    }

    fn jac_f_x(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        self.check(x, u, theta)?;
        let n = self.dims.n_x;
        let mut j = Matrix::identity(n, n) + &self.a * self.dt;
        for i in 0..n {
            for l in 0..self.dims.n_theta {
                let (s, p, q) = (self.s_idx[i][l], self.p_idx[i][l], self.q_idx[i][l]);
                let w = self.dt * theta[l];
                j[(i, s)] += w * self.b[(i, l)] * x[s].cos();
                j[(i, p)] += w * self.c[(i, l)] * x[q];
                j[(i, q)] += w * self.c[(i, l)] * x[p];
            }
            let r = theta[self.r_idx[i]];
            j[(i, i)] -= self.dt * self.e[i] * r * r * x[i].sin();
        }
        Ok(j)
    }

    fn jac_f_theta(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        self.check(x, u, theta)?;
        let mut j = Matrix::zeros(self.dims.n_x, self.dims.n_theta);
        for i in 0..self.dims.n_x {
            for l in 0..self.dims.n_theta {
                let (s, p, q) = (self.s_idx[i][l], self.p_idx[i][l], self.q_idx[i][l]);
                j[(i, l)] = self.dt * (self.b[(i, l)] * x[s].sin() + self.c[(i, l)] * x[p] * x[q]);
            }
            let r = self.r_idx[i];
            j[(i, r)] += 2.0 * self.dt * self.e[i] * theta[r] * x[i].cos();
        }
        Ok(j)
    }

    fn jac_g_x(&self, x: &Vector) -> Result<Matrix> {
        check_len("state", self.dims.n_x, x.len())?;
        let n = self.dims.n_x;
        let mut j = Matrix::zeros(self.dims.n_z, n);
        for i in 0..self.dims.n_z {
            let nb = (i + 1) % n;
            j[(i, i)] += 1.0;
            j[(i, nb)] += 2.0 * self.g[i] * x[nb];
        }
        Ok(j)
    }
}

/// Input disturbance and measurement noise for dataset generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Mean of every input component.
    pub torque_mean: f64,
    /// Standard deviation of every input component.
    pub torque_std: f64,
    /// Standard deviation of additive observation noise.
    pub obs_std: f64,
    pub seed: u64,
}

impl NoiseSpec {
    /// The satellite disturbance and sensor figures.
    pub fn satellite(seed: u64) -> Self {
        Self {
            torque_mean: SATELLITE_TORQUE_MEAN,
            torque_std: SATELLITE_TORQUE_STD,
            obs_std: SATELLITE_OBS_STD,
            seed,
        }
    }

    /// No inputs and no noise.
    pub fn noiseless(seed: u64) -> Self {
        Self {
            torque_mean: 0.0,
            torque_std: 0.0,
            obs_std: 0.0,
            seed,
        }
    }

    /// Same mean input, zero spread and zero sensor noise.
    pub fn without_noise(self) -> Self {
        Self {
            torque_std: 0.0,
            obs_std: 0.0,
            ..self
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.torque_std >= 0.0 && self.obs_std >= 0.0 && self.torque_mean.is_finite()) {
            return Err(Error::InvalidArgument(format!("invalid noise spec {self:?}")));
        }
        Ok(())
    }
}

/// Rolls out the true system under seeded random inputs and adds seeded
/// observation noise. A pure function of its arguments.
pub fn generate_dataset<M: DynamicalModel + ?Sized>(
    model: &M,
    x0_true: &Vector,
    theta_true: &Vector,
    horizon: usize,
    noise: &NoiseSpec,
    dt: f64,
) -> Result<Dataset> {
    noise.validate()?;
    if horizon < 2 {
        return Err(Error::InvalidArgument(format!("horizon must be >= 2, got {horizon}")));
    }
    let dims = model.dims();
    let mut input_rng = ChaCha8Rng::seed_from_u64(noise.seed);
    input_rng.set_stream(1);
    let mut obs_rng = ChaCha8Rng::seed_from_u64(noise.seed);
    obs_rng.set_stream(2);
    let torque = Normal::new(noise.torque_mean, noise.torque_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let sensor = Normal::new(0.0, noise.obs_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let inputs: Vec<Vector> = (0..horizon)
        .map(|_| Vector::from_fn(dims.n_u, |_, _| torque.sample(&mut input_rng)))
        .collect();
    let truth = rollout(model, x0_true, theta_true, &inputs)?;
    let observations = truth
        .predictions()
        .iter()
        .map(|z| z.map(|v| v + sensor.sample(&mut obs_rng)))
        .collect();
    Dataset::new(inputs, observations, dt)
}

/// What the identifier is told about the inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// The recorded input realizations.
    #[default]
    Known,
    /// Only the disturbance mean: every input is replaced by `torque_mean`.
    UnknownDisturbance,
}

impl InputMode {
    /// The dataset the identifier sees under this mode.
    pub fn apply(&self, dataset: &Dataset, torque_mean: f64) -> Result<Dataset> {
        match self {
            InputMode::Known => Ok(dataset.clone()),
            InputMode::UnknownDisturbance => {
                let nominal = vec![Vector::from_element(dataset.n_u(), torque_mean); dataset.len()];
                dataset.with_inputs(nominal)
            }
        }
    }
}
