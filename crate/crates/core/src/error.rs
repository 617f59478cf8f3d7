use thiserror::Error;

use crate::whitney::DyadicCube;

/// Errors raised by the extension pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point {point:?} lies outside the bounding box")]
    OutOfBounds { point: Vec<f64> },

    #[error("distance to empty set")]
    EmptySet,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("Whitney decomposition was generated from a different set")]
    GeneratorMismatch,

    #[error("finest level {finest} too coarse: no cube accepted")]
    TooCoarse { finest: i32 },

    #[error("cube {0:?} is not part of the decomposition")]
    CubeNotFound(DyadicCube),

    #[error("region mismatch: expected `{expected}`, found `{found}`")]
    RegionMismatch { expected: String, found: String },

    #[error("reflection set of exterior cube {0:?} is empty at the working resolution")]
    EmptyReflection(DyadicCube),

    #[error("grid window too small: {0}")]
    WindowTooSmall(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::OutOfBounds { .. } => "out_of_bounds",
            Error::EmptySet => "empty_set",
            Error::Config(_) => "config",
            Error::InvalidParams(_) => "invalid_params",
            Error::GeneratorMismatch => "generator_mismatch",
            Error::TooCoarse { .. } => "too_coarse",
            Error::CubeNotFound(_) => "cube_not_found",
            Error::RegionMismatch { .. } => "region_mismatch",
            Error::EmptyReflection(_) => "empty_reflection",
            Error::WindowTooSmall(_) => "window_too_small",
            Error::Contract(_) => "contract",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// Process exit code used by the command line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParams(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
