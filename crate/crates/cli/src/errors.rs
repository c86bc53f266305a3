//! CLI error type carrying the exit-code split: usage errors exit 2,
//! run failures exit 1.

use blip3_forge::ForgeError;

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags, malformed config, unusable environment. Exit 2.
    Usage(String),
    /// The run itself failed: missing data, bad records, numeric trouble.
    /// Exit 1.
    Run(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ForgeError> for CliError {
    fn from(e: ForgeError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
