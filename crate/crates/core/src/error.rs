use std::path::PathBuf;

/// Errors produced anywhere in the estimation stack.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tunable is outside its admissible range.
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },

    /// Input data violates an operation's precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation was called on a state that cannot serve it yet.
    #[error("state error: {0}")]
    State(String),

    /// Linear algebra broke down (singular or indefinite block).
    #[error("numerical error{}: {message} (condition estimate {condition:.3e})", at_time(*.time))]
    Numerical {
        message: String,
        condition: f64,
        time: Option<i64>,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

fn at_time(time: Option<i64>) -> String {
    time.map(|t| format!(" at t={t}")).unwrap_or_default()
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a time index to a numerical error; other variants pass through.
    pub fn at(self, t: i64) -> Self {
        match self {
            Error::Numerical {
                message, condition, ..
            } => Error::Numerical {
                message,
                condition,
                time: Some(t),
            },
            other => other,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
