use thiserror::Error;

/// Errors raised by the transform, the fitting machinery and the file formats.
#[derive(Debug, Error)]
pub enum GdnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid tying: {0}")]
    InvalidTying(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at sample {sample}, component {component}: {what}")]
    NonFinite {
        sample: usize,
        component: usize,
        what: &'static str,
    },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("fixed-point inversion did not converge for sample {sample} (residual {residual:e})")]
    NotConverged { sample: usize, residual: f64 },

    #[error("parameter invariant violated: {0}")]
    InvariantViolation(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("optimization diverged at epoch {epoch}, step {step}: {reason}")]
    Diverged {
        epoch: usize,
        step: usize,
        reason: String,
        /// Parameters before the failing step.
        last_valid: Box<crate::params::GdnParams>,
    },

    #[error("cascade stage {stage}: {source}")]
    Stage {
        stage: usize,
        #[source]
        source: Box<GdnError>,
    },

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl GdnError {
    /// True for errors that come from numerics rather than from bad input
    /// or unreadable files.
    pub fn is_numerical(&self) -> bool {
        match self {
            GdnError::NonFinite { .. }
            | GdnError::Singular(_)
            | GdnError::NotConverged { .. }
            | GdnError::Diverged { .. }
            | GdnError::Degenerate(_) => true,
            GdnError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GdnError>;
