//! Operator entry point for the cross-modal GZSL pipeline: configuration
//! loading, the `synth` / `train` / `eval` / `gradcheck` /
//! `export-embeddings` subcommands, and stable exit codes.

pub mod commands;
pub mod config;
pub mod logging;

use acmr_core::CoreError;

pub use commands::{
    format_gradcheck, metrics_json, run_eval, run_export, run_gradcheck, run_synth, run_train,
};
pub use config::{DatasetFiles, DatasetSource, RunConfig};

/// Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric
/// failure. This is a stable contract.
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Usage or configuration problem.
    Config(String),
    Core(CoreError),
    /// The gradient suite exceeded its threshold.
    GradcheckFailed,
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "{msg}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::GradcheckFailed => write!(f, "gradient check exceeded threshold"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::GradcheckFailed => EXIT_NUMERIC,
            CliError::Core(CoreError::InvalidSpec { .. }) => EXIT_CONFIG,
            CliError::Core(e) if e.is_data_error() => EXIT_DATA,
            CliError::Core(_) => EXIT_NUMERIC,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_contract() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Core(CoreError::InvalidSpec { detail: "x".into() }).exit_code(),
            1
        );
        assert_eq!(
            CliError::Core(CoreError::HeaderMismatch { detail: "x".into() }).exit_code(),
            2
        );
        assert_eq!(CliError::Core(CoreError::non_finite("loss")).exit_code(), 3);
        assert_eq!(CliError::GradcheckFailed.exit_code(), 3);
    }
}
