use std::fmt;
use std::path::PathBuf;

use serde::Serialize;

#[derive(Debug)]
pub enum CliError {
    Core(fleetgame_core::Error),
    Io { path: PathBuf, source: std::io::Error },
    Invalid(String),
}

impl From<fleetgame_core::Error> for CliError {
    fn from(e: fleetgame_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Invalid(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

/// Error report written to stderr as one JSON line.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub exit_code: i32,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pointer: Option<String>,
}

impl CliError {
    /// 1 for bad input, 2 when a solver fails to converge, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        use fleetgame_core::Error as E;
        match self {
            CliError::Core(E::NonConvergence { .. } | E::SingularSystem(_)) => 2,
            CliError::Core(E::Io(_)) | CliError::Io { .. } => 3,
            _ => 1,
        }
    }

    pub fn report(&self) -> ErrorReport {
        use fleetgame_core::Error as E;
        let (kind, pointer) = match self {
            CliError::Core(e) => (
                match e {
                    E::Parse(_) => "parse",
                    E::Validation { .. } => "validation",
                    E::ReducibleChain(_) => "reducible_chain",
                    E::SingularSystem(_) => "singular_system",
                    E::Unstable { .. } => "unstable_queue",
                    E::ZeroRow { .. } => "zero_row",
                    E::IllegalAction(_) => "illegal_action",
                    E::StateSpaceTooLarge { .. } => "state_space_too_large",
                    E::NonConvergence { .. } => "non_convergence",
                    E::PolicyUndefined(_) => "policy_undefined",
                    E::InvalidArgument(_) => "invalid_argument",
                    E::Io(_) => "io",
                },
                match e {
                    E::Validation { pointer, .. } => Some(pointer.clone()),
                    _ => None,
                },
            ),
            CliError::Io { .. } => ("io", None),
            CliError::Invalid(_) => ("invalid_argument", None),
        };
        ErrorReport {
            error: kind,
            exit_code: self.exit_code(),
            message: self.to_string(),
            pointer,
        }
    }
}
