//! Depth-guided near-surface sampling for small radiance fields.
//!
//! The crate covers the full pipeline from posed RGB-D frames to a trained
//! radiance field: fused point clouds ([`pointcloud`]), reprojected depth
//! with hole filling ([`depthmap`]), ray samplers that concentrate samples
//! around known surface depth ([`sampling`]), a positional-encoded MLP with
//! hand-rolled gradients ([`field`]), classical volume rendering
//! ([`render`]), and a training/evaluation harness ([`trainer`]).
//!
//! All numeric code is generic over [`Scalar`] so the same operations run in
//! `f32` (fast training) or `f64` (reference math). [`Real`] is the default
//! precision used by the CLI pipeline.

pub mod dataio;
pub mod depthmap;
pub mod field;
pub mod geom;
pub mod pointcloud;
pub mod render;
pub mod sampling;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

/// Re-exported so downstream crates build vectors and poses against the
/// same nalgebra version without declaring their own dependency.
pub use nalgebra;

/// Default pipeline precision.
///
/// Training throughput on CPU roughly doubles in `f32` and every tolerance
/// in the pipeline sits far above `f32` noise, so the shipped binaries run
/// at this precision. Reference math in tests instantiates `f64` directly.
pub type Real = f32;

/// Camera intrinsics at pipeline precision.
pub type CameraIntrinsics = geom::CameraIntrinsics<Real>;
/// Rigid camera-to-world pose at pipeline precision.
pub type Pose = geom::Pose<Real>;
/// World-space ray at pipeline precision.
pub type Ray = geom::Ray<Real>;
/// Posed RGB-D dataset at pipeline precision.
pub type Dataset = dataio::Dataset<Real>;
/// Fused point cloud at pipeline precision.
pub type PointCloud = pointcloud::PointCloud<Real>;
/// Radiance-field parameters at pipeline precision.
pub type FieldParams = field::FieldParams<Real>;
