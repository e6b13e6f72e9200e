use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A signature key block was presented a second time.
    #[error("key reuse: signature keys were already consumed")]
    KeyReuse,

    #[error("irreducible polynomial generation failed after {attempts} attempts")]
    GenerationFailure { attempts: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient statistics: {0}")]
    InsufficientStatistics(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("insufficient key material: need {needed} bits, have {available}")]
    InsufficientKey { needed: usize, available: usize },

    /// Local refinement stalled; `best_delta` is the conservative grid-only value.
    #[error("optimizer did not converge (grid-only coin imbalance {best_delta})")]
    NonConvergence { best_delta: f64 },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Wraps the error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
