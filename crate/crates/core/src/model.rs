//! Parametric discrete-time models, measured datasets and the multi-step rollout.
//!
//! A model is the pair of maps
//!
//! ```text
//! x_{k+1} = f(x_k, u_k, θ)
//! z_k     = g(x_k)
//! ```
//!
//! together with their Jacobians. The rollout applies `f` recursively from an
//! initial state, so the whole horizon behaves like an unrolled network whose
//! layers all share the same weights `θ`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{check_len, Error, Result};
use crate::structure::SparsityMask;

pub type Vector = DVector<f64>;
pub type RowVector = RowDVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default central-difference step, applied relative to `max(1, |p_j|)`.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

/// Dimensions of a model: state, input, observation and parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub n_x: usize,
    pub n_u: usize,
    pub n_z: usize,
    pub n_theta: usize,
}

impl ModelDims {
    pub fn new(n_x: usize, n_u: usize, n_z: usize, n_theta: usize) -> Result<Self> {
        if n_x == 0 || n_u == 0 || n_z == 0 || n_theta == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions must be positive (n_x={n_x}, n_u={n_u}, n_z={n_z}, n_theta={n_theta})"
            )));
        }
        Ok(Self {
            n_x,
            n_u,
            n_z,
            n_theta,
        })
    }
}

/// A deterministic, time-invariant parametric model.
///
/// Implementations must be pure: identical arguments give identical results
/// on every call and from every thread. Jacobians default to central
/// differences; bundled models override them with analytic forms.
pub trait DynamicalModel: Send + Sync {
    fn dims(&self) -> ModelDims;

    /// Next state `f(x, u, θ)`.
    fn step(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Vector>;

    /// Observation `g(x)`.
    fn observe(&self, x: &Vector) -> Result<Vector>;

    /// `∂f/∂x`, an `n_x × n_x` matrix.
    fn jac_f_x(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        numeric_jacobian(|p| self.step(p, u, theta), x, DEFAULT_FD_STEP)
    }

    /// `∂f/∂θ`, an `n_x × n_θ` matrix.
    fn jac_f_theta(&self, x: &Vector, u: &Vector, theta: &Vector) -> Result<Matrix> {
        numeric_jacobian(|p| self.step(x, u, p), theta, DEFAULT_FD_STEP)
    }

    /// `∂g/∂x`, an `n_z × n_x` matrix.
    fn jac_g_x(&self, x: &Vector) -> Result<Matrix> {
        numeric_jacobian(|p| self.observe(p), x, DEFAULT_FD_STEP)
    }

    /// Selected entries of `∂f/∂x`, in the order given.
    ///
    /// Models with cheap per-entry derivatives override this so that masked
    /// evaluation never touches structurally zero entries.
    fn jac_f_x_entries(
        &self,
        x: &Vector,
        u: &Vector,
        theta: &Vector,
        entries: &[(usize, usize)],
    ) -> Result<Vec<f64>> {
        let dense = self.jac_f_x(x, u, theta)?;
        Ok(entries.iter().map(|&(i, j)| dense[(i, j)]).collect())
    }

    /// Structural sparsity of `∂f/∂x`, when known.
    fn sparsity(&self) -> Option<&SparsityMask> {
        None
    }
}

/// Central-difference Jacobian of `map` at `point`.
///
/// Column `j` uses the step `h · max(1, |p_j|)`.
pub fn numeric_jacobian<F>(map: F, point: &Vector, step: f64) -> Result<Matrix>
where
    F: Fn(&Vector) -> Result<Vector>,
{
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let n = point.len();
    let mut columns = Vec::with_capacity(n);
    let mut probe = point.clone();
    for j in 0..n {
        let h = step * point[j].abs().max(1.0);
        probe[j] = point[j] + h;
        let plus = map(&probe)?;
        probe[j] = point[j] - h;
        let minus = map(&probe)?;
        probe[j] = point[j];
        if plus.iter().chain(minus.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue {
                what: "finite-difference evaluation",
            });
        }
        columns.push((plus - minus) / (2.0 * h));
    }
    let rows = columns.first().map_or(0, |c| c.len());
    Ok(Matrix::from_fn(rows, n, |i, j| columns[j][i]))
}

/// Measured input and observation sequences of equal length `T ≥ 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: Vec<Vector>,
    observations: Vec<Vector>,
    dt: f64,
}

impl Dataset {
    pub fn new(inputs: Vec<Vector>, observations: Vec<Vector>, dt: f64) -> Result<Self> {
        check_len("dataset observations", inputs.len(), observations.len())?;
        if inputs.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "dataset needs at least 2 samples, got {}",
                inputs.len()
            )));
        }
        let n_u = inputs[0].len();
        let n_z = observations[0].len();
        for u in &inputs {
            check_len("dataset input", n_u, u.len())?;
        }
        for z in &observations {
            check_len("dataset observation", n_z, z.len())?;
        }
        Ok(Self {
            inputs,
            observations,
            dt,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vector] {
        &self.inputs
    }

    pub fn observations(&self) -> &[Vector] {
        &self.observations
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn n_z(&self) -> usize {
        self.observations[0].len()
    }

    pub fn check_dims(&self, dims: &ModelDims) -> Result<()> {
        check_len("dataset input", dims.n_u, self.n_u())?;
        check_len("dataset observation", dims.n_z, self.n_z())
    }

    /// First `horizon` samples.
    pub fn truncate(&self, horizon: usize) -> Result<Self> {
        if horizon > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot truncate a {}-sample dataset to {horizon}",
                self.len()
            )));
        }
        Self::new(
            self.inputs[..horizon].to_vec(),
            self.observations[..horizon].to_vec(),
            self.dt,
        )
    }

    /// Same observations with a replacement input sequence.
    pub fn with_inputs(&self, inputs: Vec<Vector>) -> Result<Self> {
        Self::new(inputs, self.observations.clone(), self.dt)
    }
}

/// States `x̂_0..x̂_T` and predictions `ẑ_0..ẑ_{T-1}` for one candidate `(θ, x̂_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<Vector>,
    predictions: Vec<Vector>,
    parameters: Vector,
}

impl Trajectory {
    /// Assembles a trajectory without checking it against any model.
    ///
    /// `gradient` spot-checks trajectories built this way and rejects ones
    /// that do not reproduce.
    pub fn from_parts(states: Vec<Vector>, predictions: Vec<Vector>, parameters: Vector) -> Self {
        Self {
            states,
            predictions,
            parameters,
        }
    }

    pub fn states(&self) -> &[Vector] {
        &self.states
    }

    pub fn predictions(&self) -> &[Vector] {
        &self.predictions
    }

    pub fn parameters(&self) -> &Vector {
        &self.parameters
    }

    pub fn initial_state(&self) -> &Vector {
        &self.states[0]
    }

    /// Number of predicted samples `T`.
    pub fn horizon(&self) -> usize {
        self.predictions.len()
    }
}

/// Rolls the model forward over `inputs.len()` steps from `x0`.
pub fn rollout<M: DynamicalModel + ?Sized>(
    model: &M,
    x0: &Vector,
    theta: &Vector,
    inputs: &[Vector],
) -> Result<Trajectory> {
    let dims = model.dims();
    check_len("initial state", dims.n_x, x0.len())?;
    check_len("parameters", dims.n_theta, theta.len())?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("rollout needs at least one input".into()));
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }

    let mut states = Vec::with_capacity(inputs.len() + 1);
    let mut predictions = Vec::with_capacity(inputs.len());
    states.push(x0.clone());
    for (k, u) in inputs.iter().enumerate() {
        check_len("input", dims.n_u, u.len())?;
        let x = &states[k];
        let z = model.observe(x)?;
        check_len("observation", dims.n_z, z.len())?;
        predictions.push(z);
        let next = model.step(x, u, theta)?;
        check_len("state", dims.n_x, next.len())?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: k + 1 });
        }
        states.push(next);
    }

    Ok(Trajectory {
        states,
        predictions,
        parameters: theta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Identity;

    impl DynamicalModel for Identity {
        fn dims(&self) -> ModelDims {
            ModelDims::new(2, 1, 2, 1).unwrap()
        }
        fn step(&self, x: &Vector, _u: &Vector, _theta: &Vector) -> Result<Vector> {
            Ok(x.clone())
        }
        fn observe(&self, x: &Vector) -> Result<Vector> {
            Ok(x.clone())
        }
    }

    struct Gain;

    impl DynamicalModel for Gain {
        fn dims(&self) -> ModelDims {
            ModelDims::new(1, 1, 1, 1).unwrap()
        }
        fn step(&self, x: &Vector, _u: &Vector, theta: &Vector) -> Result<Vector> {
            Ok(x * theta[0])
        }
        fn observe(&self, x: &Vector) -> Result<Vector> {
            Ok(x.clone())
        }
    }

    fn zeros(n: usize, t: usize) -> Vec<Vector> {
        vec![Vector::zeros(n); t]
    }

    #[test]
    fn identity_model_stays_put() {
        let x0 = Vector::from_vec(vec![1.0, 2.0]);
        let traj = rollout(&Identity, &x0, &Vector::zeros(1), &zeros(1, 3)).unwrap();
        assert_eq!(traj.states().len(), 4);
        assert_eq!(traj.predictions().len(), 3);
        assert!(traj.states().iter().all(|s| *s == x0));
    }

    #[test]
    fn scalar_gain_is_geometric() {
        let traj = rollout(
            &Gain,
            &Vector::from_element(1, 1.0),
            &Vector::from_element(1, 2.0),
            &zeros(1, 3),
        )
        .unwrap();
        let xs: Vec<f64> = traj.states().iter().map(|s| s[0]).collect();
        assert_eq!(xs, vec![1.0, 2.0, 4.0, 8.0]);
        let zs: Vec<f64> = traj.predictions().iter().map(|s| s[0]).collect();
        assert_eq!(zs, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn rollout_rejects_wrong_dimensions() {
        let err = rollout(&Identity, &Vector::zeros(3), &Vector::zeros(1), &zeros(1, 3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
        let err = rollout(&Identity, &Vector::zeros(2), &Vector::zeros(1), &zeros(2, 3));
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn divergent_rollout_reports_first_bad_step() {
        let err = rollout(
            &Gain,
            &Vector::from_element(1, 1.0),
            &Vector::from_element(1, 1e200),
            &zeros(1, 5),
        );
        assert_eq!(err.unwrap_err(), Error::NonFiniteState { step: 2 });
    }

    #[test]
    fn numeric_jacobian_of_identity() {
        let p = Vector::from_vec(vec![0.3, -7.0, 120.0]);
        let j = numeric_jacobian(|x| Ok(x.clone()), &p, 1e-6).unwrap();
        assert!((j - Matrix::identity(3, 3)).abs().max() < 1e-9);
    }

    #[test]
    fn numeric_jacobian_of_square() {
        let p = Vector::from_element(1, 3.0);
        let j = numeric_jacobian(|x| Ok(x.map(|v| v * v)), &p, 1e-6).unwrap();
        assert!((j[(0, 0)] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn numeric_jacobian_flags_non_finite() {
        let p = Vector::from_element(1, 0.0);
        let err = numeric_jacobian(|x| Ok(x.map(|v| 1.0 / (v + 1e-6))), &p, 1e-6);
        assert!(matches!(err, Err(Error::NonFiniteValue { .. })));
        assert!(numeric_jacobian(|x| Ok(x.clone()), &p, 0.0).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(zeros(1, 1), zeros(1, 1), 0.1).is_err());
        assert!(Dataset::new(zeros(1, 3), zeros(1, 2), 0.1).is_err());
        let d = Dataset::new(zeros(1, 4), zeros(2, 4), 0.1).unwrap();
        assert_eq!(d.truncate(2).unwrap().len(), 2);
        assert!(d.truncate(5).is_err());
        assert!(d.check_dims(&ModelDims::new(3, 1, 2, 1).unwrap()).is_ok());
        assert!(d.check_dims(&ModelDims::new(3, 1, 3, 1).unwrap()).is_err());
    }

    #[test]
    fn zero_dims_rejected() {
        assert!(ModelDims::new(0, 1, 1, 1).is_err());
    }
}
