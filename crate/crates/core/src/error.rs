//! Crate-wide error type aggregating the per-module error enums.

use thiserror::Error;

/// Any failure the pipeline can produce.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
    #[error(transparent)]
    Learn(#[from] crate::simlearn::LearnError),
    #[error(transparent)]
    Sweep(#[from] crate::planesweep::SweepError),
    #[error(transparent)]
    Regularize(#[from] crate::regularize::RegularizeError),
    #[error(transparent)]
    GroundTruth(#[from] crate::groundtruth::GroundTruthError),
    #[error(transparent)]
    Eval(#[from] crate::eval::EvalError),
    #[error(transparent)]
    Fusion(#[from] crate::fusion::FusionError),
    #[error(transparent)]
    Scene(#[from] crate::scene::SceneError),
    #[error(transparent)]
    Format(#[from] crate::io::FormatError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by unreadable/invalid inputs and configuration
    /// rather than by the matching pipeline itself. The CLI maps these to a
    /// distinct exit code.
    pub fn is_input_error(&self) -> bool {
        matches!(self, Error::Format(_) | Error::Io(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
