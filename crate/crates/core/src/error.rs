use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated a documented precondition (bad index, mismatched grids, bad config).
    #[error("usage error: {0}")]
    Usage(String),

    /// A vector is too short to define a direction; usually the expectation of a
    /// distribution that is spread over the whole sphere.
    #[error("degenerate direction: norm {norm:e} is below threshold {threshold:e}")]
    DegenerateDirection { norm: f64, threshold: f64 },

    #[error("matrix is rank deficient (smallest singular value {sigma_min:e})")]
    SingularInput { sigma_min: f64 },

    /// Two vectors that must span a plane are (nearly) parallel.
    #[error("degenerate frame: input vectors are parallel")]
    DegenerateFrame,

    /// The axis of a rotation by (nearly) pi is sign ambiguous, so its square root is too.
    #[error("half rotation is ambiguous for rotation angle {angle_rad} rad")]
    AmbiguousHalfRotation { angle_rad: f64 },

    #[error("fit diverged at step {step}: loss became non-finite")]
    DivergedFit { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    /// True for failures of the numerics rather than of the caller or the filesystem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDirection { .. }
                | Error::SingularInput { .. }
                | Error::DegenerateFrame
                | Error::AmbiguousHalfRotation { .. }
                | Error::DivergedFit { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
