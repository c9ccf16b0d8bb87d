use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpatError {
    #[error("invalid mesh size h={h}: 2/h must be a positive integer")]
    InvalidMeshSize { h: f64 },

    #[error("angular grid needs at least 4 directions, got {0}")]
    TooFewDirections(usize),

    #[error("anisotropy factor must satisfy |g| < 1, got {0}")]
    InvalidAnisotropy(f64),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("infeasible parameters: {0}")]
    Infeasible(String),

    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("p0 has support outside the detection circle of radius {radius}")]
    SupportOutsideDetector { radius: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<QpatError>,
    },

    #[error(
        "iteration {iteration}: functional J{functional} diverged ({value:.3e} > {limit:.3e})"
    )]
    Diverged {
        iteration: usize,
        functional: usize,
        value: f64,
        limit: f64,
    },
}

impl QpatError {
    pub fn at_iteration(self, iteration: usize) -> Self {
        QpatError::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, QpatError>;

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(QpatError::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}
