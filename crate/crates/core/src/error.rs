use crate::lattice::Site;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("site {0} is outside the materialized region")]
    Unmaterialized(Site),

    #[error("site {0} is absorbing (stay mass 1)")]
    Absorbing(Site),

    #[error("site {0} has positive holding mass {1}; remove laziness first")]
    LazySite(Site, f64),

    #[error("site {0} is not elliptic")]
    NotElliptic(Site),

    #[error("grid function has no value at {0}")]
    MissingValue(Site),

    #[error("empty set")]
    EmptySet,

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("solver did not converge: best residual {residual:e} after {iterations} iterations")]
    NotConverged { residual: f64, iterations: usize },

    #[error("operator is not harmonic on the domain: residual {0:e}")]
    NotHarmonic(f64),

    #[error("no admissible step at {0}")]
    NoAdmissibleStep(Site),

    #[error("cluster of {0} touches the edge of the labeled box")]
    Censored(Site),

    #[error("malformed environment file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
