//! Command-line front end for `physid`: dataset generation, identification
//! runs, gradient checks and horizon sweeps driven by a JSON run config.

pub mod commands;
pub mod config;

pub use commands::{cmd_generate, cmd_gradcheck, cmd_identify, cmd_sweep};
pub use config::RunConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status. File problems count as configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<physid::Error> for CliError {
    fn from(e: physid::Error) -> Self {
        use physid::Error as E;
        match e {
            E::DimensionMismatch { .. } | E::InvalidArgument(_) | E::InvalidBox { .. } | E::Parse(_) => {
                CliError::Config(e.to_string())
            }
            E::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}
