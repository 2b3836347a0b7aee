use crate::graph::EdgeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate edge id {0}")]
    DuplicateEdge(EdgeId),

    #[error("edge id 0 is reserved for the off-road state")]
    ReservedEdgeId,

    #[error("edge {0} has zero length")]
    ZeroLengthEdge(EdgeId),

    #[error("edge {id} polyline needs at least 2 vertices, got {vertices}")]
    ShortPolyline { id: EdgeId, vertices: usize },

    #[error("non-finite coordinate in edge {0}")]
    NonFiniteCoordinate(EdgeId),

    #[error("unknown edge id {0}")]
    UnknownEdge(EdgeId),

    #[error("edge {from} is not connected to edge {to}")]
    DisconnectedPath { from: EdgeId, to: EdgeId },

    #[error("distance {distance} outside path range [0, {length}]")]
    DistanceOutOfRange { distance: f64, length: f64 },

    #[error("edge index {index} out of range for path of {len} edges")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("covariance matrix is not positive definite ({0})")]
    SingularCovariance(&'static str),

    #[error("empty candidate set")]
    EmptyCandidateSet,

    #[error("all particle weights are zero at step {step}: observation inconsistent with model")]
    DegenerateWeights { step: usize },

    #[error("trajectory stuck on dead-end edge {0} with zero off-road probability")]
    Stuck(EdgeId),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors raised by the numerics of a run rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance(_)
                | Error::DegenerateWeights { .. }
                | Error::Stuck(_)
                | Error::EmptyCandidateSet
        )
    }

    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Parse { .. } | Error::InvalidParameter(_)
        )
    }
}
