//! CLI error type with the documented exit-code split: configuration
//! problems (bad files, bad flags, constraint violations) exit 2, runtime
//! failures (io, training, data corruption) exit 1.

use dmfd_core::agent::AgentError;
use dmfd_core::env::EnvError;
use dmfd_core::expert::DatasetError;

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn config(msg: impl Into<String>) -> CliError {
        CliError::Config(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

impl From<AgentError> for CliError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::ConfigMismatch(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_distinguish_config_from_runtime() {
        assert_eq!(CliError::config("x").exit_code(), 2);
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 1);
        let from_agent: CliError = AgentError::Config("p_eta".into()).into();
        assert_eq!(from_agent.exit_code(), 2);
        let from_agent: CliError = AgentError::EmptyBuffer.into();
        assert_eq!(from_agent.exit_code(), 1);
    }
}
