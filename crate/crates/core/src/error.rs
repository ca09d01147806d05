//! Crate-wide error type. All fallible core operations return [`Result`].

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A pose container failed validation (wrong shape, non-finite values).
    #[error("invalid pose: {0}")]
    InvalidPose(String),

    /// A joint fell outside the quantizer's class grid.
    #[error("joint {joint} at {coords:?} is outside the class grid")]
    JointOutOfRange { joint: usize, coords: Vec<f64> },

    /// A configuration value is outside its documented domain.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A tensor argument had an unexpected shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// An adjacency or relation matrix failed validation.
    #[error("invalid adjacency: {0}")]
    InvalidAdjacency(String),

    /// A checkpoint could not be encoded or decoded.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// A dataset or batch was unusable (empty, inconsistent sizes, ...).
    #[error("invalid data: {0}")]
    InvalidData(String),
}

pub type Result<T> = std::result::Result<T, Error>;
