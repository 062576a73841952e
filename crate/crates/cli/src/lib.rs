//! Support code for the `ersaa` command-line tool.

pub mod config;

use std::fmt;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_SOLVER: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    /// Malformed or out-of-range configuration.
    Config(String),
    /// Missing or unreadable input files.
    Input(String),
    Core(ersaa::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use ersaa::Error as E;
        match self {
            CliError::Config(_) | CliError::Input(_) => EXIT_CONFIG,
            CliError::Core(e) => match root(e) {
                E::InfeasibleCandidate(_) => EXIT_INFEASIBLE,
                E::BadConfig(_) | E::Parse(_) | E::Io(_) | E::DimensionMismatch(_) | E::NonpositiveDelta(_) => EXIT_CONFIG,
                _ => EXIT_SOLVER,
            },
        }
    }
}

fn root(e: &ersaa::Error) -> &ersaa::Error {
    match e {
        ersaa::Error::Omitted { source, .. } | ersaa::Error::Batch { source, .. } => root(source),
        other => other,
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ersaa::Error> for CliError {
    fn from(e: ersaa::Error) -> Self {
        CliError::Core(e)
    }
}

/// Numbers separated by whitespace or commas; `#` starts a comment line.
pub fn parse_vector(text: &str) -> Result<Vec<f64>, CliError> {
    text.lines()
        .filter(|l| !l.trim_start().starts_with('#'))
        .flat_map(|l| l.split(|c: char| c == ',' || c.is_whitespace()))
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Input(format!("`{t}` is not a number"))))
        .collect()
}
