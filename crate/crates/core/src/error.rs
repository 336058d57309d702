use thiserror::Error;

/// Errors raised by the core algorithms.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("point is not on the box surface (distance {distance:e})")]
    NotOnSurface { distance: f64 },
    #[error("vector is not unit length (norm {norm})")]
    NotUnit { norm: f64 },
    #[error("cosine of incidence {0} outside (0, 1]")]
    CosineOutOfRange(f64),
    #[error("negative radiance {0} cannot be gamma corrected")]
    NegativeRadiance(f64),
    #[error("ray tree is malformed at node {node}: {reason}")]
    MalformedTree { node: usize, reason: &'static str },
    #[error("non-finite value produced by `{op}` (tape node {node})")]
    NonFinite { op: &'static str, node: usize },
    #[error("loss component `{0}` is not finite")]
    NonFiniteLoss(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("mesh is empty")]
    EmptyMesh,
    #[error("non-finite field value at grid coordinate ({0}, {1}, {2})")]
    NonFiniteField(usize, usize, usize),
    #[error("object is not contained in the box")]
    ObjectEscapesBox,
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
}

pub type Result<T> = core::result::Result<T, Error>;
