use thiserror::Error;

use crate::geometry::GeometryError;
use crate::model::ModelError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("simulating from {state}: {source}")]
    Simulation {
        state: String,
        #[source]
        source: SimError,
    },
    #[error("state space exceeded the limit of {limit} states")]
    TooManyStates { limit: usize },
    #[error("reachable set is empty")]
    EmptyReachableSet,
    #[error("QDAA reached rectangles outside the rectangular abstraction: {0:?}")]
    ContainmentViolation(Vec<String>),
    #[error("unknown bundled model `{name}`; available: {available}")]
    UnknownModel { name: String, available: String },
}

impl Error {
    /// True for failures of the numerical integration itself.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            Error::Simulation { .. } | Error::TooManyStates { .. } | Error::ContainmentViolation(_)
        )
    }
}
