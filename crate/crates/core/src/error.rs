use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm below {eps:e}: {what}")]
    ZeroVector { what: &'static str, eps: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("joint {0} is the root and has no bone")]
    RootHasNoBone(usize),

    #[error("invalid kinematic tree: {0}")]
    InvalidTree(String),

    #[error("zero-length target bone at joint {joint} ({name})")]
    ZeroBone { joint: usize, name: String },

    #[error("registration points are degenerate (correlation rank < 2)")]
    DegenerateTriplet,

    #[error("grandparent and distal joint coincide; backward update undefined")]
    CoincidentAC,

    #[error("joint {joint} lies behind the camera (depth {depth:.6} m)")]
    BehindCamera { joint: usize, depth: f64 },

    #[error("observed 2D keypoints carry no scale information")]
    DegenerateObservation,

    #[error("infeasible geometry: {0}")]
    Infeasible(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics (as opposed to malformed input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::ZeroVector { .. }
                | Error::Degenerate(_)
                | Error::ZeroBone { .. }
                | Error::DegenerateTriplet
                | Error::CoincidentAC
                | Error::BehindCamera { .. }
                | Error::DegenerateObservation
                | Error::Infeasible(_)
                | Error::NonFinite(_)
        )
    }

    pub(crate) fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }
}
