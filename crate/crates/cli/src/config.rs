//! Run configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use physid::penalties::{EnergyFunction, PenaltyConfig, PenaltySpec};
use physid::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub input_mode: InputMode,
    /// Input assumed under `unknown_disturbance`. Defaults to the generation mean.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal_input: Option<f64>,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub penalties: Vec<PenaltyConfig>,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    pub init: InitConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub horizons: Vec<usize>,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    EulerAttitude {
        #[serde(default = "default_dt")]
        dt: f64,
        #[serde(default)]
        integrator: Integrator,
        /// Use the structural Jacobian mask.
        #[serde(default)]
        masked: bool,
    },
    ScalarGain,
}

fn default_dt() -> f64 {
    SATELLITE_DT
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataConfig {
    Path(PathBuf),
    Generate(GenerateSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSpec {
    pub theta_true: Vec<f64>,
    pub x0_true: Vec<f64>,
    pub horizon: usize,
    pub noise: NoiseConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub torque_mean: f64,
    pub torque_std: f64,
    pub obs_std: f64,
}

impl NoiseConfig {
    pub fn with_seed(&self, seed: u64) -> NoiseSpec {
        NoiseSpec {
            torque_mean: self.torque_mean,
            torque_std: self.torque_std,
            obs_std: self.obs_std,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QConfig {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_q")]
    pub q: QConfig,
    /// Defaults to the dataset length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
}

fn default_q() -> QConfig {
    QConfig::Scalar(1.0)
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            q: default_q(),
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "d_eta_theta")]
    pub eta_theta: f64,
    #[serde(default = "d_eta_x0")]
    pub eta_x0: f64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps_num")]
    pub eps_num: f64,
    #[serde(default = "d_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub cost_eps: f64,
    #[serde(default)]
    pub grad_delta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta_box: Option<BoxConfig>,
    #[serde(default)]
    pub gradient: GradientMethod,
}

fn d_eta_theta() -> f64 {
    1e-3
}
fn d_eta_x0() -> f64 {
    1e-4
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps_num() -> f64 {
    1e-8
}
fn d_max_epochs() -> usize {
    1000
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            eta_theta: d_eta_theta(),
            eta_x0: d_eta_x0(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps_num: d_eps_num(),
            max_epochs: d_max_epochs(),
            cost_eps: 0.0,
            grad_delta: 0.0,
            theta_box: None,
            gradient: GradientMethod::Analytic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitConfig {
    Explicit { theta: Vec<f64>, x0: Vec<f64> },
    /// Every component of the generating truth scaled by `1 ± fraction`,
    /// signs drawn from the run seed.
    Perturb { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    #[serde(default = "d_fd_step")]
    pub fd_step: f64,
}

fn d_fd_step() -> f64 {
    1e-6
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { fd_step: d_fd_step() }
    }
}

type Energy = Arc<dyn EnergyFunction>;

/// Everything a command needs, resolved from a config.
pub struct Problem {
    pub model: Box<dyn DynamicalModel>,
    /// Data as the identifier sees it.
    pub dataset: Dataset,
    /// Data as recorded, before the input mode is applied.
    pub recorded: Dataset,
    pub spec: LossSpec,
    pub theta0: Vector,
    pub x00: Vector,
    pub options: IdentifyOptions,
    /// Known when the data were generated from the config.
    pub truth: Option<(Vector, Vector)>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks that cannot be expressed in the serde schema.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |path: &str, msg: String| Err(CliError::Config(format!("{path}: {msg}")));
        if self.optimizer.max_epochs == 0 {
            return bad("optimizer.max_epochs", "must be at least 1".into());
        }
        if let InitConfig::Perturb { fraction } = self.init {
            if !(fraction.is_finite() && fraction >= 0.0) {
                return bad("init.perturb.fraction", format!("must be a non-negative number, got {fraction}"));
            }
            if matches!(self.data, DataConfig::Path(_)) {
                return bad(
                    "init.perturb",
                    "needs a generate spec; recorded data carry no truth the identifier may use".into(),
                );
            }
        }
        if self.input_mode == InputMode::UnknownDisturbance
            && self.nominal_input.is_none()
            && matches!(self.data, DataConfig::Path(_))
        {
            return bad("nominal_input", "required for unknown_disturbance on recorded data".into());
        }
        if let Some(h) = self.loss.horizon {
            if h < 2 {
                return bad("loss.horizon", format!("must be at least 2, got {h}"));
            }
        }
        if self.horizons.iter().any(|&h| h < 2) {
            return bad("horizons", "every horizon must be at least 2".into());
        }
        Ok(())
    }

    pub fn check_files(&self) -> Result<(), CliError> {
        if let DataConfig::Path(p) = &self.data {
            if !p.is_file() {
                return Err(CliError::Config(format!("data: file {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    pub fn build_model(&self) -> Result<(Box<dyn DynamicalModel>, Option<Energy>), CliError> {
        Ok(match &self.model {
            ModelConfig::EulerAttitude { dt, integrator, masked } => {
                let mut model = EulerAttitudeModel::new(*dt, *integrator).map_err(config_at("model"))?;
                if *masked {
                    model = model
                        .with_mask(EulerAttitudeModel::structural_mask())
                        .map_err(config_at("model.masked"))?;
                }
                (Box::new(model), Some(Arc::new(RotationalEnergy) as Arc<dyn EnergyFunction>))
            }
            ModelConfig::ScalarGain => (Box::new(ScalarGainModel), None),
        })
    }

    /// Recorded data plus the generating truth when the config holds it.
    pub fn load_data(&self, model: &dyn DynamicalModel) -> Result<(Dataset, Option<(Vector, Vector)>), CliError> {
        match &self.data {
            DataConfig::Path(p) => {
                let (data, _) = physid::io::read_dataset(p).map_err(config_at("data"))?;
                data.check_dims(&model.dims()).map_err(config_at("data"))?;
                Ok((data, None))
            }
            DataConfig::Generate(g) => {
                let theta = Vector::from_column_slice(&g.theta_true);
                let x0 = Vector::from_column_slice(&g.x0_true);
                let dt = self.model_dt();
                let data = generate_dataset(model, &x0, &theta, g.horizon, &g.noise.with_seed(self.seed), dt)
                    .map_err(config_at("data.generate"))?;
                Ok((data, Some((theta, x0))))
            }
        }
    }

    pub fn model_dt(&self) -> f64 {
        match self.model {
            ModelConfig::EulerAttitude { dt, .. } => dt,
            ModelConfig::ScalarGain => 1.0,
        }
    }

    fn nominal(&self) -> f64 {
        match (&self.nominal_input, &self.data) {
            (Some(v), _) => *v,
            (None, DataConfig::Generate(g)) => g.noise.torque_mean,
            (None, DataConfig::Path(_)) => 0.0,
        }
    }

    pub fn loss_spec(&self, n_z: usize, horizon: usize, energy: Option<Arc<dyn EnergyFunction>>) -> Result<LossSpec, CliError> {
        let q = match &self.loss.q {
            QConfig::Scalar(s) => Matrix::identity(n_z, n_z) * *s,
            QConfig::Matrix(rows) => {
                if rows.len() != n_z || rows.iter().any(|r| r.len() != n_z) {
                    return Err(CliError::Config(format!("loss.q: expected a {n_z}x{n_z} matrix")));
                }
                Matrix::from_fn(n_z, n_z, |i, j| rows[i][j])
            }
        };
        let terms = self
            .penalties
            .iter()
            .enumerate()
            .map(|(i, p)| p.build(energy.clone()).map_err(config_at(&format!("penalties[{i}]"))))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LossSpec::new(q, horizon)
            .map_err(config_at("loss"))?
            .with_penalties(PenaltySpec::new(terms)))
    }

    pub fn identify_options(&self) -> Result<IdentifyOptions, CliError> {
        let o = &self.optimizer;
        let stopping = StoppingCriteria::new(o.max_epochs, o.cost_eps, o.grad_delta).map_err(config_at("optimizer"))?;
        let mut opts = IdentifyOptions::new(stopping);
        opts.eta_theta = o.eta_theta;
        opts.eta_x0 = o.eta_x0;
        opts.beta1 = o.beta1;
        opts.beta2 = o.beta2;
        opts.eps_num = o.eps_num;
        opts.gradient = o.gradient;
        if let Some(b) = &o.theta_box {
            let (lo, hi) = (Vector::from_column_slice(&b.lower), Vector::from_column_slice(&b.upper));
            project_box(&lo, &lo, &hi).map_err(config_at("optimizer.theta_box"))?;
            opts.theta_box = Some((lo, hi));
        }
        Ok(opts)
    }

    pub fn initial_point(&self, truth: Option<&(Vector, Vector)>) -> Result<(Vector, Vector), CliError> {
        match &self.init {
            InitConfig::Explicit { theta, x0 } => Ok((Vector::from_column_slice(theta), Vector::from_column_slice(x0))),
            InitConfig::Perturb { fraction } => {
                let (theta, x0) = truth.ok_or_else(|| CliError::Config("init.perturb: no generating truth".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(3);
                let mut jitter = |v: &Vector| {
                    v.map(|c| {
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        c * (1.0 + sign * fraction)
                    })
                };
                let theta0 = jitter(theta);
                let x00 = jitter(x0);
                Ok((theta0, x00))
            }
        }
    }

    /// Resolves the whole problem, optionally at a shorter horizon.
    pub fn problem(&self, horizon: Option<usize>) -> Result<Problem, CliError> {
        self.check_files()?;
        let (model, energy) = self.build_model()?;
        let (mut recorded, truth) = self.load_data(model.as_ref())?;
        let horizon = horizon.or(self.loss.horizon).unwrap_or(recorded.len());
        if horizon > recorded.len() {
            return Err(CliError::Config(format!(
                "loss.horizon: {horizon} exceeds the {} recorded steps",
                recorded.len()
            )));
        }
        recorded = recorded.truncate(horizon).map_err(config_at("loss.horizon"))?;
        let dataset = self.input_mode.apply(&recorded, self.nominal()).map_err(config_at("input_mode"))?;
        let spec = self.loss_spec(dataset.n_z(), horizon, energy)?;
        spec.penalties().check_dims(&model.dims()).map_err(config_at("penalties"))?;
        let (theta0, x00) = self.initial_point(truth.as_ref())?;
        let dims = model.dims();
        if theta0.len() != dims.n_theta || x00.len() != dims.n_x {
            return Err(CliError::Config(format!(
                "init: expected {} parameters and {} states, got {} and {}",
                dims.n_theta,
                dims.n_x,
                theta0.len(),
                x00.len()
            )));
        }
        Ok(Problem {
            model,
            dataset,
            recorded,
            spec,
            theta0,
            x00,
            options: self.identify_options()?,
            truth,
        })
    }
}

fn config_at(path: &str) -> impl Fn(physid::Error) -> CliError + '_ {
    move |e| CliError::Config(format!("{path}: {e}"))
}
