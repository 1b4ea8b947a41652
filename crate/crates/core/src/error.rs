use thiserror::Error;

/// Errors raised by the moment-propagation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integer overflow while computing {0}")]
    Overflow(&'static str),

    #[error("multi-index {lower} is not bounded entrywise by {upper}")]
    NotBounded { lower: String, upper: String },

    #[error("requested order {requested} exceeds the supported maximum {max}")]
    OrderTooLarge { requested: usize, max: usize },

    #[error("model evaluation failed: {0}")]
    ModelEvaluation(String),

    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("sample {sample}: {source}")]
    AtSample {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is not symmetric positive semi-definite: {0}")]
    NotPositiveSemiDefinite(String),

    #[error("design matrix is rank deficient (condition number {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("degenerate auxiliary density for component {component}: variance {variance:e}")]
    DegenerateAuxiliary { component: usize, variance: f64 },

    #[error("degenerate sample set: {0}")]
    DegenerateSamples(String),

    #[error("{skipped} of {total} mixture samples had non-positive surrogate sigma")]
    TooManySkipped { skipped: usize, total: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn at_sample(self, sample: usize) -> Self {
        Error::AtSample {
            sample,
            source: Box::new(self),
        }
    }

    /// The innermost error, with step/sample context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::AtStep { source, .. } | Error::AtSample { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for failures caused by a singular fit or a degenerate density.
    pub fn is_degeneracy(&self) -> bool {
        matches!(
            self.root(),
            Error::RankDeficient { .. }
                | Error::NotPositiveDefinite
                | Error::DegenerateAuxiliary { .. }
                | Error::DegenerateSamples(_)
                | Error::TooManySkipped { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
