//! Multi-view plane-sweep dense image matching.
//!
//! The crate implements a complete aerial-style dense matching pipeline:
//!
//! - [`geometry`]: pinhole cameras, planar transforms, robust homography
//!   estimation, calibrated epipolar rectification
//! - [`image`]: grayscale raster container with validity masks
//! - [`features`]: radiometric normalization, patch descriptors, and
//!   geometry-aware feature extraction through alignment transforms
//! - [`simlearn`]: similarity learning — sample mining, triplet/BCE losses,
//!   and a hand-rolled MLP with exact gradients
//! - [`planesweep`]: depth hypotheses, sampling grids, per-view similarity,
//!   multi-view aggregation into a cost volume
//! - [`regularize`]: semi-global cost regularization, sub-step depth
//!   extraction, and the multi-resolution matching driver
//! - [`groundtruth`]: point-cloud projection, visibility filtering, and
//!   Delaunay densification into reference depth maps
//! - [`eval`]: accuracy/completeness metrics against ground truth
//! - [`fusion`]: late fusion of per-pair depth maps
//! - [`scene`]: deterministic synthetic scene rendering for verification
//! - [`io`]: file formats (PGM, PFM, FMAP, MLPW, camera lists, point clouds)
//!
//! # Conventions
//!
//! Pixel centers sit at integer coordinates: `x` is the column (rightward),
//! `y` the row (downward), so a `w x h` raster spans `[0, w-1] x [0, h-1]`.
//! Camera rotations map world coordinates into the camera frame and cameras
//! look along their +z axis. "Ray depth" means the z coordinate of a point in
//! the camera frame; "elevation" means the world Z coordinate. Depth maps
//! carry whichever quantity the generating hypotheses used.

pub mod error;
pub mod eval;
pub mod features;
pub mod fusion;
pub mod geometry;
pub mod groundtruth;
pub mod image;
pub mod io;
pub mod planesweep;
pub mod regularize;
pub mod scene;
pub mod simlearn;

pub use error::{Error, Result};
pub use image::Image2D;
pub use regularize::DepthMap;
