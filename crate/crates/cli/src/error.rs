use std::fmt;
use std::path::Path;

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    /// An artifact from an earlier stage is missing.
    Missing {
        path: String,
        producer: &'static str,
    },
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Missing { .. } => 4,
        }
    }

    pub fn data(context: impl fmt::Display, err: zadex::Error) -> Self {
        CliError::Data(format!("{context}: {err}"))
    }

    /// Ensure a prerequisite artifact exists.
    pub fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
        if path.exists() {
            Ok(())
        } else {
            Err(CliError::Missing {
                path: path.display().to_string(),
                producer,
            })
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Missing { path, producer } => {
                write!(f, "missing {path}; run `zadex {producer}` first")
            }
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<zadex::Error> for CliError {
    fn from(e: zadex::Error) -> Self {
        match e {
            zadex::Error::Config(m) => CliError::Config(m),
            e @ zadex::Error::Arch { .. } => CliError::Config(e.to_string()),
            e => CliError::Other(e.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}
