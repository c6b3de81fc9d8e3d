use thiserror::Error;

use crate::model_core::SpaceId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("{coords:?} is not a proper point of {space}")]
    ImproperPoint { space: SpaceId, coords: [f64; 4] },

    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("ambiguous minimizer: {0}")]
    Ambiguous(String),

    #[error("{what} did not converge (residual {residual:e})")]
    NoConvergence { what: &'static str, residual: f64 },

    #[error("matrix is singular or ill-conditioned (condition number {0:e})")]
    IllConditioned(f64),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("points do not lie on a common geodesic (residual {0:e})")]
    NotCollinear(f64),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("{0} is not available in {1}")]
    Unsupported(&'static str, SpaceId),

    #[error("at vertex {index}: {source}")]
    AtVertex {
        index: usize,
        #[source]
        source: Box<GeomError>,
    },
}

impl GeomError {
    /// True for failures of an iterative solver, as opposed to rejected input.
    pub fn is_numeric(&self) -> bool {
        match self {
            GeomError::NoConvergence { .. } | GeomError::IllConditioned(_) => true,
            GeomError::AtVertex { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, GeomError>;
