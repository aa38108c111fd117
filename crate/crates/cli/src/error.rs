use std::fmt;

/// Failure classes, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flag or config value.
    Validation(String),
    Io(String),
    /// Anything the core library reports that is not an input problem.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Io(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "{m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Internal(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<dsd_core::Error> for CliError {
    fn from(e: dsd_core::Error) -> Self {
        match e {
            dsd_core::Error::InvalidInput(_) | dsd_core::Error::Domain { .. } | dsd_core::Error::MalformedPacket(_) => {
                CliError::Validation(e.to_string())
            }
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

/// Writes a line to stdout; a closed pipe (e.g. `| head`) is not an error.
pub fn say(line: std::fmt::Arguments<'_>) -> CliResult<()> {
    use std::io::Write;
    match writeln!(std::io::stdout().lock(), "{line}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
