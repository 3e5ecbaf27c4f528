use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("operator is not unitary (max deviation {deviation:.3e})")]
    NotUnitary { deviation: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    /// Population in the top guard band of the truncated Fock space exceeded the threshold.
    #[error(
        "truncation leak in {context}: guard-band population {population:.3e} exceeds {threshold:.1e}{}",
        required_dim.map(|d| format!(" (requires fock dim >= {d})")).unwrap_or_default()
    )]
    Truncation {
        context: String,
        population: f64,
        threshold: f64,
        required_dim: Option<usize>,
    },

    #[error("phase-space grid mismatch: {0}")]
    GridMismatch(String),

    #[error("support escapes the grid: boundary mass {mass:.3e} exceeds {limit:.1e}")]
    BoundaryMass { mass: f64, limit: f64 },

    #[error(
        "covariance matrix is not positive definite (det = {det:.3e}); the filter has no Gaussian closed form"
    )]
    NotPositiveDefinite { det: f64 },

    #[error("segment {segment}: {source}")]
    Segment {
        segment: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("trajectory {trajectory}: {source}")]
    Trajectory {
        trajectory: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn at_segment(self, segment: usize) -> Self {
        Error::Segment {
            segment,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_trajectory(self, trajectory: usize) -> Self {
        Error::Trajectory {
            trajectory,
            source: Box::new(self),
        }
    }
}
