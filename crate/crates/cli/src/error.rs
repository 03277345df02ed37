//! Error type and process exit-code mapping.
//!
//! Exit codes: 0 success, 2 configuration/validation problems, 3 numerical
//! divergence, 4 I/O failures.

use sbridge_core::bridge::BridgeError;
use sbridge_core::ipf::IpfError;
use sbridge_core::metrics::MetricsError;
use sbridge_core::nnet::NnetError;
use sbridge_core::sinkhorn::SinkhornError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid configuration, arguments, or file contents.
    #[error("{0}")]
    Config(String),
    /// Training or solving produced non-finite numbers.
    #[error("numerical divergence: {0}")]
    Diverged(String),
    /// Filesystem trouble.
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    /// Annotate an I/O error with the path it concerned.
    pub fn io(context: &str, err: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {err}"))
    }
}

impl From<IpfError> for CliError {
    fn from(e: IpfError) -> Self {
        match e {
            IpfError::Diverged { .. } => CliError::Diverged(e.to_string()),
            IpfError::Bridge(BridgeError::Diverged { .. }) => CliError::Diverged(e.to_string()),
            IpfError::Net(NnetError::NonFinite { .. }) => CliError::Diverged(e.to_string()),
            // Observer hooks only fail on filesystem writes.
            IpfError::Observer(msg) => CliError::Io(msg),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SinkhornError> for CliError {
    fn from(e: SinkhornError) -> Self {
        match e {
            SinkhornError::Overflow { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<BridgeError> for CliError {
    fn from(e: BridgeError) -> Self {
        match e {
            BridgeError::Diverged { .. } => CliError::Diverged(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
