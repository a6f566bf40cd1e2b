//! Directional relative camera pose.
//!
//! Relative pose `(R, t)` is represented by four unit directions: the three columns of
//! `R` and the translation direction `t`. Each direction is predicted as a discrete
//! probability distribution on the sphere ([`sphere_grid`]), read out by its
//! expectation, and rotations are recovered by projecting onto SO(3) ([`so3`]).
//!
//! The remaining modules supply everything needed to exercise that representation
//! without a trained network: losses with analytic gradients, a grid-fitting driver,
//! pinhole cameras and derotation homographies, a synthetic panorama dataset
//! generator, and the evaluation harness.

pub mod camera;
pub mod epipolar_eval;
pub mod error;
pub mod grid_fit;
pub mod io;
pub mod losses;
pub mod pano;
pub mod so3;
pub mod sphere_grid;

pub use camera::{ImageBuffer, Intrinsics, RelativePose};
pub use error::{Error, Result};
pub use pano::{PosePair, SceneSpec};
pub use so3::Rotation3;
pub use sphere_grid::{GridSpec, RawGrid, SphericalDistribution, UnitVec3};
