use std::fmt;

/// Exit code 2 for anything wrong with the input, 1 for failures of the
/// computation itself.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Domain(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Domain(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Domain(m) => write!(f, "error: {m}"),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Tags an error as a config problem or a domain failure.
pub trait Classify<T> {
    fn config(self) -> CliResult<T>;
    fn domain(self) -> CliResult<T>;
}

impl<T, E: fmt::Display> Classify<T> for Result<T, E> {
    fn config(self) -> CliResult<T> {
        self.map_err(|e| CliError::Config(e.to_string()))
    }

    fn domain(self) -> CliResult<T> {
        self.map_err(|e| CliError::Domain(e.to_string()))
    }
}
