use std::fmt;
use std::path::Path;

/// Command failure, carrying the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// A check ran and failed (exit 1).
    Check(String),
    /// Bad flags, settings or inconsistent inputs (exit 2).
    Usage(String),
    /// Unreadable, unwritable or malformed files (exit 3).
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Check(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Check(m) => write!(f, "check failed: {m}"),
            CliError::Usage(m) => write!(f, "invalid input: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<featsel::Error> for CliError {
    fn from(e: featsel::Error) -> Self {
        use featsel::Error as E;
        match e {
            E::Format { .. } | E::Io(_) => CliError::Io(e.to_string()),
            E::Config(_) | E::Shape { .. } | E::Capacity(_) | E::Data { .. } => CliError::Usage(e.to_string()),
        }
    }
}

/// Attaches the path to core I/O and format errors.
pub fn at(path: &Path) -> impl Fn(featsel::Error) -> CliError + '_ {
    move |e| match CliError::from(e) {
        CliError::Io(m) => CliError::io(path, m),
        other => other,
    }
}
