use std::fmt;

use simplex_stdp::Error as CoreError;

/// Failure of a scenario run, each kind with its own exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Malformed config file, unknown key or out-of-range value.
    Config(Vec<String>),
    /// A theorem or routine precondition does not hold for the parameters.
    Precondition(String),
    /// A check failed in `--assert` mode.
    Assertion(Vec<String>),
    UnknownScenario(String),
    /// The output directory or one of its files cannot be written.
    Output(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Precondition(_) => 3,
            CliError::Assertion(_) => 4,
            CliError::UnknownScenario(_) => 64,
            CliError::Output(_) => 73,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(vec![message.into()])
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(v) => write!(f, "configuration error: {}", v.join("; ")),
            CliError::Precondition(m) => write!(f, "precondition violated: {m}"),
            CliError::Assertion(v) => write!(f, "check failed: {}", v.join("; ")),
            CliError::UnknownScenario(s) => write!(f, "unknown scenario `{s}`"),
            CliError::Output(m) => write!(f, "cannot write output: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(v) => CliError::Config(v),
            CoreError::InvalidInput(m) => CliError::config(m),
            CoreError::DimensionMismatch { .. } => CliError::config(e.to_string()),
            CoreError::Precondition(m) => CliError::Precondition(m),
            CoreError::Io(m) => CliError::Output(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
