//! Point-cloud generation from depth images and iterative multi-view
//! refinement.
//!
//! The refinement loop walks a strided subset of the training frames in
//! trajectory order. For each new view it projects the accumulated cloud,
//! keeps the nearest projection per pixel, checks that projection against
//! the view's ground-truth depth, and back-projects a new point wherever
//! ground truth exists but no redundant projection covers it.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dataio::{ColorImage, Dataset, DepthImage};
use crate::geom::{back_project, project, CameraIntrinsics, Pose};
use crate::scalar::{sc, Scalar};

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("refinement needs at least 2 subset frames, stride {stride} of {total} leaves {subset}")]
    TooFewFrames {
        stride: usize,
        total: usize,
        subset: usize,
    },
    #[error("invalid refine config: {0}")]
    InvalidConfig(String),
}

/// One fused point: position, display color, and the frame that created it.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudPoint<T: Scalar> {
    pub position: Vector3<T>,
    pub color: [T; 3],
    pub source_frame: u32,
}

/// Ordered point list; order is deterministic (frame order, then row-major
/// pixel order within a frame).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud<T: Scalar> {
    pub points: Vec<CloudPoint<T>>,
}

impl<T: Scalar> PointCloud<T> {
    pub fn new() -> Self {
        Self { points: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Refinement parameters: redundancy threshold and frame-subset stride.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefineConfig<T: Scalar> {
    pub tau: T,
    pub stride: usize,
}

impl<T: Scalar> RefineConfig<T> {
    pub fn new(tau: T, stride: usize) -> Result<Self, CloudError> {
        if !(tau > T::zero()) || !tau.is_finite() {
            return Err(CloudError::InvalidConfig(format!(
                "tau must be positive and finite, got {tau}"
            )));
        }
        if stride == 0 {
            return Err(CloudError::InvalidConfig("stride must be at least 1".into()));
        }
        Ok(Self { tau, stride })
    }
}

/// Back-projects every nonzero-depth pixel of one frame.
pub fn cloud_from_depth<T: Scalar>(
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    depth: &DepthImage<T>,
    color: &ColorImage<T>,
    source_frame: u32,
) -> PointCloud<T> {
    assert!(
        depth.width() == intr.width
            && depth.height() == intr.height
            && color.width() == intr.width
            && color.height() == intr.height,
        "images must match the intrinsics dimensions"
    );
    let mut points = Vec::new();
    for y in 0..intr.height {
        for x in 0..intr.width {
            let d = depth.get(x, y);
            if d <= T::zero() {
                continue;
            }
            let position = back_project(intr, pose, x, y, d).expect("positive depth, valid pixel");
            points.push(CloudPoint {
                position,
                color: color.get(x, y),
                source_frame,
            });
        }
    }
    PointCloud { points }
}

/// Eq.-(3) redundancy test: the projected distance matches ground truth
/// within `tau`, boundary inclusive.
///
/// The comparison allows a few ulps of slack so that decimal boundary cases
/// such as `(1.1, 1.0, 0.1)` remain inclusive even though `1.1 - 1.0`
/// exceeds `0.1` by one rounding step in binary floating point.
#[inline]
pub fn redundancy_check<T: Scalar>(d_tilde: T, d_gt: T, tau: T) -> bool {
    let scale = d_tilde.abs().max(d_gt.abs()).max(T::one());
    (d_tilde - d_gt).abs() <= tau + T::machine_epsilon() * sc(4.0) * scale
}

/// Per-pixel nearest projection of a cloud: `(ray_distance, point_index)`
/// minima, rasterized with the nearest-pixel rule.
pub(crate) fn z_buffer<T: Scalar>(
    cloud: &PointCloud<T>,
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
) -> Vec<Option<(T, usize)>> {
    let mut buf: Vec<Option<(T, usize)>> = vec![None; (intr.width * intr.height) as usize];
    for (idx, point) in cloud.points.iter().enumerate() {
        let Some(proj) = project(intr, pose, &point.position) else {
            continue;
        };
        let Some((x, y)) = proj.nearest_pixel(intr) else {
            continue;
        };
        let slot = &mut buf[(y * intr.width + x) as usize];
        let candidate = (proj.ray_distance, idx);
        // Keep the smallest distance; break ties by the lower point index.
        let replace = match slot {
            None => true,
            Some((d, i)) => candidate.0 < *d || (candidate.0 == *d && candidate.1 < *i),
        };
        if replace {
            *slot = Some(candidate);
        }
    }
    buf
}

/// One refinement pass of the accumulated cloud against a single view:
/// back-projects new points at nonzero-ground-truth pixels not covered by a
/// redundant projection. Returns how many points were added.
pub fn augment_with_view<T: Scalar>(
    cloud: &mut PointCloud<T>,
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    depth: &DepthImage<T>,
    color: &ColorImage<T>,
    source_frame: u32,
    tau: T,
) -> usize {
    let buf = z_buffer(cloud, intr, pose);
    let mut added = 0;
    for y in 0..intr.height {
        for x in 0..intr.width {
            let d_gt = depth.get(x, y);
            if d_gt <= T::zero() {
                // Eq. (3) is undefined without ground truth; nothing to add.
                continue;
            }
            let covered = match buf[(y * intr.width + x) as usize] {
                Some((d_tilde, _)) => redundancy_check(d_tilde, d_gt, tau),
                None => false,
            };
            if !covered {
                let position =
                    back_project(intr, pose, x, y, d_gt).expect("positive depth, valid pixel");
                cloud.points.push(CloudPoint {
                    position,
                    color: color.get(x, y),
                    source_frame,
                });
                added += 1;
            }
        }
    }
    added
}

/// Builds a refined cloud from every `stride`-th frame of the dataset.
///
/// The first subset frame seeds the cloud via [`cloud_from_depth`]; each
/// later subset frame runs [`augment_with_view`]. Output is deterministic.
pub fn generate_refined_cloud<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &RefineConfig<T>,
) -> Result<PointCloud<T>, CloudError> {
    RefineConfig::new(cfg.tau, cfg.stride)?;
    let subset: Vec<usize> = (0..dataset.frames.len()).step_by(cfg.stride).collect();
    if subset.len() < 2 {
        return Err(CloudError::TooFewFrames {
            stride: cfg.stride,
            total: dataset.frames.len(),
            subset: subset.len(),
        });
    }

    let intr = &dataset.intrinsics;
    let first = &dataset.frames[subset[0]];
    let mut cloud = cloud_from_depth(intr, &first.pose, &first.depth, &first.color, subset[0] as u32);
    for &fi in &subset[1..] {
        let frame = &dataset.frames[fi];
        augment_with_view(
            &mut cloud,
            intr,
            &frame.pose,
            &frame.depth,
            &frame.color,
            fi as u32,
            cfg.tau,
        );
    }
    Ok(cloud)
}
