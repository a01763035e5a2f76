//! Multi-step identification of physical parameters and initial state for
//! nonlinear discrete-time models.
//!
//! The model is rolled out over the whole horizon from a candidate `(θ, x̂_0)`
//! and scored by the accumulated prediction error plus optional physics-based
//! penalties. Gradients with respect to both `θ` and `x̂_0` come from a single
//! backward sweep over the rollout, and ADAM drives the updates.
//!
//! ```
//! use physid::prelude::*;
//!
//! let model = EulerAttitudeModel::satellite();
//! let theta = Vector::from_column_slice(&SATELLITE_INERTIA);
//! let x0 = Vector::from_column_slice(&SATELLITE_OMEGA0);
//! let data = generate_dataset(&model, &x0, &theta, 50, &NoiseSpec::satellite(1), 0.1).unwrap();
//! let spec = LossSpec::scaled_identity(3, 1.0, 50).unwrap();
//! let traj = rollout(&model, &x0, &theta, data.inputs()).unwrap();
//! let report = gradient(&model, &traj, &data, &spec, &theta).unwrap();
//! assert_eq!(report.work.chain_applications, 49);
//! ```

pub mod error;
pub mod gradient;
pub mod io;
pub mod model;
pub mod optimizer;
pub mod penalties;
pub mod structure;
pub mod systems;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::error::{Error, Result};
    pub use crate::gradient::{
        cost, fd_gradient, gamma_terms, gradient, gradient_naive, max_relative_error, prediction_error,
        report_relative_error, rollout_cost, GammaTerms, GradientReport, LossSpec,
    };
    pub use crate::model::{numeric_jacobian, rollout, Dataset, DynamicalModel, Matrix, ModelDims, RowVector, Trajectory, Vector};
    pub use crate::optimizer::{
        adam_step, identify, AdamState, GradientMethod, IdentificationRun, IdentifyOptions, StopReason,
        StoppingCriteria,
    };
    pub use crate::penalties::{
        eval_penalty, penalty_gradients, project_box, EnergyFunction, PenaltyConfig, PenaltyKind, PenaltySpec,
        PenaltyTerm,
    };
    pub use crate::structure::{masked_jac_f_x, sparse_chain_apply, SparseMatrix, SparsityMask};
    pub use crate::systems::{
        euler_jacobians, euler_step, generate_dataset, rotational_energy, EulerAttitudeModel, InputMode,
        Integrator, NoiseSpec, RandomSmoothModel, RotationalEnergy, ScalarGainModel, SATELLITE_DT, SATELLITE_INERTIA,
        SATELLITE_OBS_STD, SATELLITE_OMEGA0, SATELLITE_TORQUE_MEAN, SATELLITE_TORQUE_STD,
    };
}
