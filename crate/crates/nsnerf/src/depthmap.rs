//! Test-stage depth synthesis: rasterize a saved point cloud into a novel
//! view, then classify the resulting zero pixels as surface holes or true
//! background and fill the former.
//!
//! Classification is a local statistics test. For a zero pixel, take the
//! M-by-M window around it (clamped at borders, centre excluded), compute the
//! mean and standard deviation of the neighbor values *with zeros included as
//! measurements of emptiness*, and call the pixel a surface hole when
//! `mu / sigma > kappa` and at least a quarter of the window is nonzero.
//! Including zeros makes the statistic sensitive to local support: a window
//! with nonzero fraction `f` of a roughly constant depth has
//! `mu / sigma = sqrt(f / (1 - f))`, so `kappa = 2` demands `f > 0.8` —
//! interior pinholes pass, silhouette-adjacent background (f near 0.5) never
//! does. Statistics over only the nonzero neighbors would instead fire on
//! nearly every background pixel with enough support, because the depth
//! spread of a partial surface patch is always small next to its mean.
//! Filled values are the mean of the nonzero window pixels, taken from the
//! pre-fill image in a single pass.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataio::DepthImage;
use crate::geom::{CameraIntrinsics, Pose};
use crate::pointcloud::{z_buffer, PointCloud};
use crate::scalar::{sc, to_f64, Scalar};

/// Below this, a window's standard deviation is treated as exactly zero and
/// the constant-window escape hatch applies.
const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DepthMapError {
    #[error("hole-fill window must be an odd integer >= 3, got {0}")]
    BadWindow(u32),
    #[error("kappa must be positive and finite, got {0}")]
    BadKappa(f64),
    #[error("invalid projected depth: {0}")]
    Invalid(String),
}

/// Where a projected-depth pixel got its value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelSource {
    /// Rasterized from the point cloud.
    FromCloud,
    /// Zero in the projection, classified as a surface hole and filled.
    Filled,
    /// No data; stays zero.
    Empty,
}

/// Hole classification parameters: threshold `kappa` and window side `M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoleFillConfig<T: Scalar> {
    pub kappa: T,
    pub window: u32,
}

impl<T: Scalar> HoleFillConfig<T> {
    pub fn new(kappa: T, window: u32) -> Result<Self, DepthMapError> {
        if !(kappa > T::zero()) || !kappa.is_finite() {
            return Err(DepthMapError::BadKappa(to_f64(kappa)));
        }
        if window < 3 || window % 2 == 0 {
            return Err(DepthMapError::BadWindow(window));
        }
        Ok(Self { kappa, window })
    }
}

impl<T: Scalar> Default for HoleFillConfig<T> {
    /// kappa = 2, M = 11.
    fn default() -> Self {
        Self {
            kappa: sc(2.0),
            window: 11,
        }
    }
}

/// A depth image with per-pixel provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDepth<T: Scalar> {
    depth: DepthImage<T>,
    source: Vec<PixelSource>,
}

impl<T: Scalar> ProjectedDepth<T> {
    /// Wraps an image and provenance buffer, checking that `FromCloud` and
    /// `Filled` pixels are positive and `Empty` pixels are zero.
    pub fn new(depth: DepthImage<T>, source: Vec<PixelSource>) -> Result<Self, DepthMapError> {
        let n = (depth.width() * depth.height()) as usize;
        if source.len() != n {
            return Err(DepthMapError::Invalid(format!(
                "{} provenance flags for {n} pixels",
                source.len()
            )));
        }
        for (i, (v, s)) in depth.values().iter().zip(&source).enumerate() {
            let ok = match s {
                PixelSource::Empty => *v == T::zero(),
                _ => *v > T::zero(),
            };
            if !ok {
                return Err(DepthMapError::Invalid(format!(
                    "pixel {i} has value {v} but provenance {s:?}"
                )));
            }
        }
        Ok(Self { depth, source })
    }

    pub fn width(&self) -> u32 {
        self.depth.width()
    }

    pub fn height(&self) -> u32 {
        self.depth.height()
    }

    pub fn depth(&self) -> &DepthImage<T> {
        &self.depth
    }

    pub fn into_depth(self) -> DepthImage<T> {
        self.depth
    }

    #[inline]
    pub fn source(&self, x: u32, y: u32) -> PixelSource {
        self.source[(y * self.depth.width() + x) as usize]
    }

    pub fn count_source(&self, s: PixelSource) -> usize {
        self.source.iter().filter(|v| **v == s).count()
    }
}

/// Rasterizes the cloud into the view: per pixel the minimum ray distance
/// over all points landing there (ties broken by lower point index), zero
/// where no point lands.
pub fn project_cloud_depth<T: Scalar>(
    cloud: &PointCloud<T>,
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
) -> ProjectedDepth<T> {
    let buf = z_buffer(cloud, intr, pose);
    let mut depth = DepthImage::new(intr.width, intr.height);
    let mut source = vec![PixelSource::Empty; buf.len()];
    for y in 0..intr.height {
        for x in 0..intr.width {
            let i = (y * intr.width + x) as usize;
            if let Some((d, _)) = buf[i] {
                depth.set(x, y, d);
                source[i] = PixelSource::FromCloud;
            }
        }
    }
    ProjectedDepth { depth, source }
}

/// Window statistics used by [`classify_hole`] and the fill value.
struct WindowStats<T> {
    /// Mean over all window pixels except the centre, zeros included.
    mu: T,
    /// Population standard deviation over the same set.
    sigma: T,
    /// Number of nonzero pixels in the window.
    nonzero: usize,
    /// Pixel count of the clamped window, centre included.
    area: usize,
    /// Sum of the nonzero pixels (for the fill value).
    nonzero_sum: T,
}

fn window_stats<T: Scalar>(depth: &DepthImage<T>, x: u32, y: u32, window: u32) -> WindowStats<T> {
    let r = (window / 2) as i64;
    let x0 = (x as i64 - r).max(0) as u32;
    let y0 = (y as i64 - r).max(0) as u32;
    let x1 = (x as i64 + r).min(depth.width() as i64 - 1) as u32;
    let y1 = (y as i64 + r).min(depth.height() as i64 - 1) as u32;

    let mut sum = T::zero();
    let mut sum_sq = T::zero();
    let mut nonzero = 0usize;
    let mut nonzero_sum = T::zero();
    for wy in y0..=y1 {
        for wx in x0..=x1 {
            let v = depth.get(wx, wy);
            if v > T::zero() {
                nonzero += 1;
                nonzero_sum += v;
            }
            if wx == x && wy == y {
                continue;
            }
            sum += v;
            sum_sq += v * v;
        }
    }
    let area = ((x1 - x0 + 1) * (y1 - y0 + 1)) as usize;
    let n = sc::<T>((area - 1) as f64);
    let mu = sum / n;
    let sigma = (sum_sq / n - mu * mu).max(T::zero()).sqrt();
    WindowStats {
        mu,
        sigma,
        nonzero,
        area,
        nonzero_sum,
    }
}

/// Decides whether the zero pixel at `(x, y)` is a surface hole.
///
/// Returns true iff the window has at least `ceil(area / 4)` nonzero pixels
/// and `mu / sigma > kappa` over the centre-excluded window (zeros included
/// in the statistics; see the module docs). A constant nonzero window has
/// `sigma = 0`; that is unambiguously a surface hole, so `sigma <= 1e-12`
/// short-circuits to `mu > 0`. Pixels that already carry depth are not holes.
pub fn classify_hole<T: Scalar>(
    projected: &ProjectedDepth<T>,
    x: u32,
    y: u32,
    cfg: &HoleFillConfig<T>,
) -> bool {
    if projected.depth.get(x, y) > T::zero() {
        return false;
    }
    let stats = window_stats(&projected.depth, x, y, cfg.window);
    if stats.nonzero < stats.area.div_ceil(4) {
        return false;
    }
    if stats.sigma <= sc(SIGMA_FLOOR) {
        return stats.mu > sc(SIGMA_FLOOR);
    }
    stats.mu / stats.sigma > cfg.kappa
}

/// Fills every zero pixel classified as a surface hole with the mean of the
/// nonzero pixels in its window. Single pass: all statistics and fill values
/// come from the input image, so filled pixels never seed further fills.
pub fn fill_holes<T: Scalar>(
    projected: &ProjectedDepth<T>,
    cfg: &HoleFillConfig<T>,
) -> ProjectedDepth<T> {
    let mut out = projected.clone();
    for y in 0..projected.height() {
        for x in 0..projected.width() {
            if projected.source(x, y) != PixelSource::Empty {
                continue;
            }
            if !classify_hole(projected, x, y, cfg) {
                continue;
            }
            let stats = window_stats(&projected.depth, x, y, cfg.window);
            // Support >= ceil(area/4) >= 1 held during classification.
            let fill = stats.nonzero_sum / sc::<T>(stats.nonzero as f64);
            out.depth.set(x, y, fill);
            out.source[(y * projected.width() + x) as usize] = PixelSource::Filled;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synthetic::{
        build_dataset, orbit_pose, render_synthetic, ring_poses, SyntheticSceneSpec,
    };
    use crate::dataio::Dataset;
    use crate::pointcloud::{cloud_from_depth, generate_refined_cloud, RefineConfig};
    use nalgebra::Vector3;

    fn image_with(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> ProjectedDepth<f64> {
        let mut depth = DepthImage::new(width, height);
        let mut source = Vec::new();
        for y in 0..height {
            for x in 0..width {
                let v = f(x, y);
                depth.set(x, y, v);
                source.push(if v > 0.0 {
                    PixelSource::FromCloud
                } else {
                    PixelSource::Empty
                });
            }
        }
        ProjectedDepth::new(depth, source).unwrap()
    }

    #[test]
    fn empty_cloud_projects_to_all_empty() {
        let intr = CameraIntrinsics::new(4.0, 4.0, 2.0, 2.0, 4, 4).unwrap();
        let projected = project_cloud_depth(&PointCloud::<f64>::new(), &intr, &Pose::identity());
        assert_eq!(projected.count_source(PixelSource::Empty), 16);
        assert!(projected.depth().values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn nearest_point_wins_shared_pixel() {
        let intr = CameraIntrinsics::new(10.0, 10.0, 2.0, 2.0, 4, 4).unwrap();
        let mut cloud = PointCloud::new();
        for z in [3.0, 2.0] {
            cloud.points.push(crate::pointcloud::CloudPoint {
                position: Vector3::new(0.0, 0.0, z),
                color: [0.5; 3],
                source_frame: 0,
            });
        }
        let projected = project_cloud_depth(&cloud, &intr, &Pose::identity());
        assert_eq!(projected.depth().get(2, 2), 2.0);
        assert_eq!(projected.source(2, 2), PixelSource::FromCloud);
        assert_eq!(projected.count_source(PixelSource::FromCloud), 1);
    }

    #[test]
    fn single_frame_cloud_round_trips_its_depth() {
        let res = 32;
        let f = 0.9 * res as f64;
        let intr =
            CameraIntrinsics::new(f, f, res as f64 / 2.0, res as f64 / 2.0, res, res).unwrap();
        let pose = orbit_pose(3.8, -1.2, 0.4, Vector3::zeros()).unwrap();
        let (color, depth, _) =
            render_synthetic(&SyntheticSceneSpec::sphere(), &intr, &pose, 0.0, 0).unwrap();
        let cloud = cloud_from_depth(&intr, &pose, &depth, &color, 0);
        let projected = project_cloud_depth(&cloud, &intr, &pose);
        for y in 0..res {
            for x in 0..res {
                let gt = depth.get(x, y);
                if gt == 0.0 {
                    assert_eq!(projected.source(x, y), PixelSource::Empty);
                } else {
                    assert_eq!(projected.source(x, y), PixelSource::FromCloud);
                    assert!(
                        (projected.depth().get(x, y) - gt).abs() < 1e-5,
                        "pixel ({x},{y}): {} vs {gt}",
                        projected.depth().get(x, y)
                    );
                }
            }
        }
    }

    #[test]
    fn all_zero_window_is_background() {
        let projected = image_with(15, 15, |_, _| 0.0);
        let cfg = HoleFillConfig::default();
        assert!(!classify_hole(&projected, 7, 7, &cfg));
    }

    #[test]
    fn jittered_full_window_is_a_hole() {
        // 120 nonzero neighbors at 3.0 plus a deterministic tiny jitter
        // around a zero centre. Brute-force oracle: mu ~ 3, sigma ~ jitter,
        // ratio far above kappa = 2.
        let projected = image_with(11, 11, |x, y| {
            if (x, y) == (5, 5) {
                0.0
            } else {
                3.0 + 1e-6 * ((x + 11 * y) as f64 - 60.0)
            }
        });
        let cfg = HoleFillConfig::default();

        let mut vals = Vec::new();
        for y in 0..11 {
            for x in 0..11 {
                if (x, y) != (5, 5) {
                    vals.push(projected.depth().get(x, y));
                }
            }
        }
        assert_eq!(vals.len(), 120);
        let mu = vals.iter().sum::<f64>() / 120.0;
        let sigma =
            (vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / 120.0).sqrt();
        assert!((mu - 3.0).abs() < 1e-4 && sigma < 1e-3);
        assert!(mu / sigma > 2.0);

        assert!(classify_hole(&projected, 5, 5, &cfg));
    }

    #[test]
    fn sparse_window_lacks_support() {
        // 10 nonzero of 121 is below ceil(121 / 4) = 31.
        let projected = image_with(11, 11, |x, y| if y == 0 && x < 10 { 3.0 } else { 0.0 });
        let cfg = HoleFillConfig::default();
        assert!(!classify_hole(&projected, 5, 5, &cfg));
    }

    #[test]
    fn clamped_corner_window_scales_support() {
        // M = 11 clamped at the corner to 6x6: area 36, support needs 9.
        let full = image_with(16, 16, |x, y| {
            if (x, y) == (0, 0) {
                0.0
            } else {
                3.0 + 0.001 * (x + y) as f64
            }
        });
        let cfg = HoleFillConfig::default();
        assert!(classify_hole(&full, 0, 0, &cfg));

        let sparse = image_with(16, 16, |x, y| {
            if y == 0 && (1..=8).contains(&x) {
                3.0 + 0.001 * x as f64
            } else {
                0.0
            }
        });
        assert!(!classify_hole(&sparse, 0, 0, &cfg));
    }

    #[test]
    fn no_holes_is_a_fixed_point() {
        let projected = image_with(9, 9, |x, y| 2.0 + 0.01 * (x * y) as f64 + 0.01);
        let filled = fill_holes(&projected, &HoleFillConfig::default());
        assert_eq!(filled, projected);
    }

    #[test]
    fn constant_window_pinhole_fills_exactly() {
        // sigma = 0 forces the escape hatch; the fill is the mean of equal
        // values, hence exactly 3.0.
        let projected = image_with(5, 5, |x, y| if (x, y) == (2, 2) { 0.0 } else { 3.0 });
        let cfg = HoleFillConfig::new(2.0, 3).unwrap();
        let filled = fill_holes(&projected, &cfg);
        assert_eq!(filled.depth().get(2, 2), 3.0);
        assert_eq!(filled.source(2, 2), PixelSource::Filled);
        assert_eq!(filled.count_source(PixelSource::Filled), 1);
    }

    /// Sphere-scene fixture: cloud fused from a ring of views, projected to
    /// a novel azimuth with a slightly longer focal length. The mild
    /// magnification plus half-pixel parallax rounding scatters isolated
    /// surface pinholes across the silhouette (the regime hole filling is
    /// for); the analytic depth of the novel pose is the oracle.
    fn novel_view_fixture() -> (ProjectedDepth<f64>, DepthImage<f64>) {
        let res = 96;
        let f = 0.9 * res as f64;
        let intr =
            CameraIntrinsics::new(f, f, res as f64 / 2.0, res as f64 / 2.0, res, res).unwrap();
        let poses = ring_poses(8, 3.8, -1.2, 0.0, Vector3::zeros());
        let ds: Dataset<f64> =
            build_dataset(&SyntheticSceneSpec::sphere(), intr, &poses, 0.0, 0, 1e-3).unwrap();
        let cloud = generate_refined_cloud(&ds, &RefineConfig::new(0.1, 1).unwrap()).unwrap();

        let novel = orbit_pose(3.8, -1.2, std::f64::consts::TAU * 0.35 / 8.0, Vector3::zeros())
            .unwrap();
        let zf = 1.05 * f;
        let novel_intr =
            CameraIntrinsics::new(zf, zf, res as f64 / 2.0, res as f64 / 2.0, res, res).unwrap();
        let projected = project_cloud_depth(&cloud, &novel_intr, &novel);
        let (_, gt_depth, _) =
            render_synthetic(&SyntheticSceneSpec::sphere(), &novel_intr, &novel, 0.0, 0).unwrap();
        (projected, gt_depth)
    }

    #[test]
    fn novel_view_fill_clears_silhouette_and_spares_background() {
        let (projected, gt) = novel_view_fixture();
        let cfg = HoleFillConfig::default();
        let filled = fill_holes(&projected, &cfg);

        let mut holes_before = 0usize;
        let mut holes_after = 0usize;
        let mut background = 0usize;
        let mut background_filled = 0usize;
        let mut fill_errors = Vec::new();
        for y in 0..projected.height() {
            for x in 0..projected.width() {
                let inside = gt.get(x, y) > 0.0;
                if inside {
                    holes_before += (projected.source(x, y) == PixelSource::Empty) as usize;
                    holes_after += (filled.source(x, y) == PixelSource::Empty) as usize;
                } else {
                    background += 1;
                    background_filled += (filled.source(x, y) == PixelSource::Filled) as usize;
                }
                if filled.source(x, y) == PixelSource::Filled {
                    fill_errors.push((filled.depth().get(x, y) - gt.get(x, y)).abs());
                }
                // from_cloud pixels are untouched.
                if projected.source(x, y) == PixelSource::FromCloud {
                    assert_eq!(filled.depth().get(x, y), projected.depth().get(x, y));
                }
            }
        }

        assert!(holes_before >= 20, "fixture too clean: {holes_before} holes");
        assert!(
            holes_after * 2 <= holes_before,
            "fill cleared too little: {holes_before} -> {holes_after}"
        );
        assert!(
            background_filled as f64 <= 0.01 * background as f64,
            "{background_filled} of {background} background pixels filled"
        );
        let tau = 0.1;
        let good = fill_errors.iter().filter(|e| **e <= 3.0 * tau).count();
        assert!(
            good as f64 >= 0.9 * fill_errors.len() as f64,
            "{good} of {} filled pixels within 3 tau",
            fill_errors.len()
        );
    }

    #[test]
    fn second_pass_changes_under_one_percent() {
        let (projected, _) = novel_view_fixture();
        let cfg = HoleFillConfig::default();
        let once = fill_holes(&projected, &cfg);
        let twice = fill_holes(&once, &cfg);
        let changed = twice
            .depth()
            .values()
            .iter()
            .zip(once.depth().values())
            .filter(|(a, b)| a != b)
            .count();
        let total = (projected.width() * projected.height()) as usize;
        assert!(
            (changed as f64) < 0.01 * total as f64,
            "second pass changed {changed} of {total}"
        );
    }

    #[test]
    fn fill_count_is_monotone_in_kappa() {
        let (projected, gt) = novel_view_fixture();
        let mut counts = Vec::new();
        let mut background_fills = Vec::new();
        for kappa in [0.5, 1.0, 2.0, 4.0] {
            let cfg = HoleFillConfig::new(kappa, 11).unwrap();
            let filled = fill_holes(&projected, &cfg);
            counts.push(filled.count_source(PixelSource::Filled));
            let mut bg = 0usize;
            for y in 0..projected.height() {
                for x in 0..projected.width() {
                    if gt.get(x, y) == 0.0 && filled.source(x, y) == PixelSource::Filled {
                        bg += 1;
                    }
                }
            }
            background_fills.push(bg);
        }
        assert!(
            counts.windows(2).all(|w| w[0] >= w[1]),
            "fill counts not antitone in kappa: {counts:?}"
        );
        assert!(counts[2] > 0, "default kappa filled nothing");
        // Too-small kappa spills into the background; the default does not.
        assert!(background_fills[0] > 0, "{background_fills:?}");
        assert_eq!(background_fills[2], 0, "{background_fills:?}");
    }

    #[test]
    fn denser_clouds_never_add_silhouette_empties() {
        let res = 64;
        let f = 0.9 * res as f64;
        let intr =
            CameraIntrinsics::new(f, f, res as f64 / 2.0, res as f64 / 2.0, res, res).unwrap();
        let poses = ring_poses(8, 3.8, -1.2, 0.0, Vector3::zeros());
        let ds: Dataset<f64> =
            build_dataset(&SyntheticSceneSpec::sphere(), intr, &poses, 0.0, 0, 1e-3).unwrap();
        let novel = orbit_pose(3.8, -1.2, std::f64::consts::TAU * 0.3 / 8.0, Vector3::zeros())
            .unwrap();
        let (_, gt, _) =
            render_synthetic(&SyntheticSceneSpec::sphere(), &intr, &novel, 0.0, 0).unwrap();

        let mut prev = usize::MAX;
        for k in [2, 4, 8] {
            let sub = Dataset::new(ds.intrinsics, ds.frames[..k].to_vec(), ds.depth_scale).unwrap();
            let cloud =
                generate_refined_cloud(&sub, &RefineConfig::new(0.1, 1).unwrap()).unwrap();
            let projected = project_cloud_depth(&cloud, &intr, &novel);
            let mut empties = 0usize;
            for y in 0..res {
                for x in 0..res {
                    if gt.get(x, y) > 0.0 && projected.source(x, y) == PixelSource::Empty {
                        empties += 1;
                    }
                }
            }
            assert!(
                empties <= prev,
                "silhouette empties grew from {prev} to {empties} at {k} frames"
            );
            prev = empties;
        }
    }

    #[test]
    fn config_validation_rejects_bad_parameters() {
        assert!(matches!(
            HoleFillConfig::new(0.0, 11),
            Err(DepthMapError::BadKappa(_))
        ));
        assert!(matches!(
            HoleFillConfig::new(2.0, 4),
            Err(DepthMapError::BadWindow(4))
        ));
        assert!(matches!(
            HoleFillConfig::new(2.0, 1),
            Err(DepthMapError::BadWindow(1))
        ));
        let depth = DepthImage::from_values(2, 1, vec![0.0, 1.0]).unwrap();
        assert!(ProjectedDepth::new(depth, vec![PixelSource::FromCloud; 2]).is_err());
    }

    #[test]
    fn f32_and_f64_agree_on_classification() {
        let (projected, _) = novel_view_fixture();
        let depth32 = DepthImage::from_values(
            projected.width(),
            projected.height(),
            projected.depth().values().iter().map(|v| *v as f32).collect(),
        )
        .unwrap();
        let source32: Vec<PixelSource> = (0..projected.height())
            .flat_map(|y| (0..projected.width()).map(move |x| (x, y)))
            .map(|(x, y)| projected.source(x, y))
            .collect();
        let projected32 = ProjectedDepth::new(depth32, source32).unwrap();

        let cfg64 = HoleFillConfig::<f64>::default();
        let cfg32 = HoleFillConfig::<f32>::default();
        let filled64 = fill_holes(&projected, &cfg64);
        let filled32 = fill_holes(&projected32, &cfg32);
        for y in 0..projected.height() {
            for x in 0..projected.width() {
                assert_eq!(filled64.source(x, y), filled32.source(x, y), "({x},{y})");
            }
        }
    }

}
