use thiserror::Error;

/// Stable exit-code contract: 0 success, 2 input/config error,
/// 3 degenerate model, 4 numeric failure.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Engine(#[from] bymscan::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Engine(bymscan::Error::DegenerateDesign { .. }) => 3,
            CliError::Engine(bymscan::Error::Numeric { .. })
            | CliError::Engine(bymscan::Error::Diagnostic(_)) => 4,
            _ => 2,
        }
    }
}
