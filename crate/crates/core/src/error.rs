use alloc::boxed::Box;

/// Errors produced by the identification core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter `{name}` = {value} is outside its admissible range")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("time series must contain at least one sample")]
    EmptySeries,

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("denominator has a zero leading coefficient")]
    NonCausalDenominator,

    #[error("polynomial is not stable (largest root modulus {max_modulus})")]
    Unstable { max_modulus: f64 },

    #[error("cholesky factorization of the {block} block failed (jitter {jitter:e})")]
    Factorization { block: &'static str, jitter: f64 },

    #[error("too few samples: {n} available, more than {required} required")]
    TooFewSamples { n: usize, required: usize },

    #[error("dimension {dim} exceeds the brute-force limit {max}")]
    DimensionGuard { dim: usize, max: usize },

    #[error("{0} has zero variance")]
    ZeroVariance(&'static str),

    #[error("matrix is singular: {0}")]
    Singular(&'static str),

    #[error("no stable trial step could be found from the current iterate")]
    NoStableStep,

    #[error("all {evaluations} hyperparameter evaluations failed or did not converge")]
    SearchFailed {
        evaluations: usize,
        /// Objective value of every evaluation, in order (`inf` for failures).
        trace: alloc::vec::Vec<f64>,
    },

    #[error("no admissible random system after {attempts} attempts")]
    GenerationFailed { attempts: usize },

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
