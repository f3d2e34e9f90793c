use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("site {0:?} is not on the required lattice")]
    NotASite(Vec<i64>),

    #[error("sites are not nearest neighbours on the coarse lattice")]
    NotAdjacent,

    #[error("operation requires a {required} lattice")]
    WrongBoundary { required: &'static str },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("quadratic form is not positive definite on the constraint surface (smallest eigenvalue {min_eig:e})")]
    IndefiniteOnSurface { min_eig: f64 },

    #[error("singular operator: {0}")]
    SingularOperator(String),

    #[error("field is not admissible: {0}")]
    Inadmissible(String),

    #[error("ambient dimension {dim} exceeds the resource cap {cap}")]
    ResourceCap { dim: usize, cap: usize },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
