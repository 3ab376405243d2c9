use thiserror::Error;

/// Errors surfaced by the reachability engine and its tooling.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("enclosure diverged: {0}")]
    Diverged(String),

    /// The remainder never became contractive; `ratio` is the worst
    /// per-dimension |I1| / |I0| observed on the final attempt.
    #[error("flowpipe step {step} failed: remainder not contractive (ratio {ratio:.3e})")]
    StepFailure { step: usize, ratio: f64 },

    /// An analytical expression left its domain of validity (for example
    /// the Euler-angle singularity).
    #[error("domain error: {0}")]
    Domain(String),

    /// A sampled trajectory escaped a computed enclosure.
    #[error("soundness audit failed: {0}")]
    Soundness(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) | Error::Config(_) | Error::Unsupported(_) => 2,
            Error::Dimension { .. } => 3,
            Error::StepFailure { .. } => 4,
            Error::Diverged(_) | Error::Domain(_) => 5,
            Error::Io(_) | Error::Json(_) => 6,
            Error::Soundness(_) => 7,
        }
    }
}

/// `Error::Dimension` unless `expected == got`.
pub fn check_dim(expected: usize, got: usize, context: &'static str) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            expected,
            got,
            context,
        })
    }
}
