//! Training loop, evaluation harness, and experiment reports.
//!
//! One training iteration draws `batch_rays` random pixels across all
//! training frames (background pixels included — they exercise the
//! full-range fallback), builds a per-ray [`SampleSet`] with the configured
//! sampler, renders every ray, applies an MSE loss in linear RGB, and steps
//! ADAM. The whole batch is evaluated as one matrix pass through the field,
//! which is how "batch rays in parallel" cashes out on a CPU; the optimizer
//! step stays serial. Evaluation renders whole test views (parallel across
//! views, deterministic per view) and scores masked PSNR against ground
//! truth.
//!
//! Every random draw is tied to `(seed, ray index)` or to the master seed,
//! so equal seeds reproduce checkpoints and reports byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataio::{ColorImage, Dataset, DepthImage};
use crate::depthmap::{fill_holes, project_cloud_depth, DepthMapError, HoleFillConfig};
use crate::field::{
    adam_step, backward_batch, forward_batch, AdamState, EncodingConfig, FieldConfig, FieldError,
    FieldParams, ForwardCache, LrSchedule, SceneNormalization,
};
use crate::geom::{pixel_ray, GeomError, Ray};
use crate::pointcloud::PointCloud;
use crate::render::{composite, composite_backward, psnr, RenderConfig, RenderError};
use crate::sampling::{
    full_range_stratified, inverse_cdf_resample, near_surface_samples, ray_rng,
    FullRangeConfig, NearSurfaceConfig, SampleSet, SamplingError,
};
use crate::scalar::{sc, to_f64, Scalar};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("dataset problem: {0}")]
    Data(String),
    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(u64),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    DepthMap(#[from] DepthMapError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Ray sampling strategy used during training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Depth-guided window around the surface (full-range fallback where
    /// depth is missing).
    NearSurface,
    /// Stratified samples over the whole (optionally stretched) range.
    FullRange,
    /// Coarse full-range pass, then inverse-CDF resampling of the coarse
    /// weights; the loss sees only the merged set.
    HierarchicalBaseline,
}

impl std::str::FromStr for SamplerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "near_surface" => Ok(Self::NearSurface),
            "full_range" => Ok(Self::FullRange),
            "hierarchical_baseline" => Ok(Self::HierarchicalBaseline),
            other => Err(format!(
                "unknown sampler {other:?} (expected near_surface, full_range, \
                 or hierarchical_baseline)"
            )),
        }
    }
}

/// Everything a training run depends on. Serializable so runs can be hashed
/// and replayed; all fields are plain numbers, flags, or enum tags.
/// Unlisted JSON fields default; unknown fields are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_rays: usize,
    pub lr: f64,
    pub lr_dropped: f64,
    /// Fraction of `iterations` after which the rate drops.
    pub lr_drop_fraction: f64,
    pub sampler: SamplerKind,
    /// Near-surface half-window (world units).
    pub alpha: f64,
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub range_scale: f64,
    pub seed: u64,
    pub use_view_dirs: bool,
    /// Skip zero-depth pixels instead of falling back to full-range rays.
    pub skip_background_rays: bool,
    pub white_background: bool,
    pub sigma_scale: f64,
    pub l_pos: u32,
    pub l_dir: u32,
    pub hidden_width: usize,
    pub view_width: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 3000,
            batch_rays: 512,
            lr: 5e-4,
            lr_dropped: 5e-5,
            lr_drop_fraction: 0.625,
            sampler: SamplerKind::NearSurface,
            alpha: 0.5,
            n_samples: 32,
            t_near: 0.5,
            t_far: 7.5,
            range_scale: 1.0,
            seed: 0,
            use_view_dirs: false,
            skip_background_rays: false,
            white_background: false,
            sigma_scale: 1.0,
            l_pos: 10,
            l_dir: 4,
            hidden_width: 64,
            view_width: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        if self.iterations < 1 {
            return Err(TrainerError::Config("iterations must be at least 1".into()));
        }
        if self.batch_rays < 1 {
            return Err(TrainerError::Config("batch_rays must be at least 1".into()));
        }
        if self.sampler == SamplerKind::NearSurface && !(self.alpha > 0.0) {
            return Err(TrainerError::Config(format!(
                "near_surface sampling needs alpha > 0, got {}",
                self.alpha
            )));
        }
        if !(self.lr > 0.0) || !(self.lr_dropped > 0.0) {
            return Err(TrainerError::Config("learning rates must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.lr_drop_fraction) {
            return Err(TrainerError::Config(format!(
                "lr_drop_fraction must lie in [0, 1], got {}",
                self.lr_drop_fraction
            )));
        }
        if self.n_samples < 1 {
            return Err(TrainerError::Config("n_samples must be at least 1".into()));
        }
        if !(self.t_near >= 0.0) || !(self.t_far > self.t_near) {
            return Err(TrainerError::Config(format!(
                "need 0 <= t_near < t_far, got [{}, {}]",
                self.t_near, self.t_far
            )));
        }
        if !(self.range_scale >= 1.0) {
            return Err(TrainerError::Config(format!(
                "range_scale must be at least 1, got {}",
                self.range_scale
            )));
        }
        if !(self.sigma_scale > 0.0) {
            return Err(TrainerError::Config("sigma_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.lr,
            drop_step: (self.iterations as f64 * self.lr_drop_fraction).floor() as u64,
            dropped: self.lr_dropped,
        }
    }

    fn field_config(&self, normalization: SceneNormalization) -> FieldConfig {
        FieldConfig {
            encoding: EncodingConfig {
                l_pos: self.l_pos,
                l_dir: self.l_dir,
                include_input: true,
            },
            use_view_dirs: self.use_view_dirs,
            hidden_width: self.hidden_width,
            view_width: self.view_width,
            normalization,
        }
    }

    fn render_config<T: Scalar>(&self) -> RenderConfig<T> {
        RenderConfig {
            background_color: [T::zero(); 3],
            white_background: self.white_background,
            sigma_scale: sc(self.sigma_scale),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogEntry {
    pub iteration: u64,
    pub loss: f64,
}

pub type TrainLog = Vec<TrainLogEntry>;

/// Writes the `iteration, loss` table emitted during training.
pub fn write_metrics_csv(log: &TrainLog, path: &Path) -> Result<(), TrainerError> {
    let mut text = String::from("iteration,loss\n");
    for e in log {
        text.push_str(&format!("{},{}\n", e.iteration, e.loss));
    }
    fs::write(path, text).map_err(|source| TrainerError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Per-ray sampler configs derived from one scalar config.
struct SamplerCtx<T: Scalar> {
    kind: SamplerKind,
    near: NearSurfaceConfig<T>,
    full: FullRangeConfig<T>,
}

impl<T: Scalar> SamplerCtx<T> {
    fn new(
        kind: SamplerKind,
        alpha: f64,
        n_samples: usize,
        t_near: f64,
        t_far: f64,
        range_scale: f64,
    ) -> Result<Self, TrainerError> {
        // The near-surface config is built even for full-range runs purely
        // to keep this struct uniform; alpha then has no effect.
        let near = NearSurfaceConfig::new(sc::<T>(alpha.max(f64::MIN_POSITIVE)), n_samples)?;
        let full = FullRangeConfig::new(sc::<T>(t_near), sc::<T>(t_far), n_samples)?
            .with_range_scale(sc(range_scale))?;
        Ok(Self { kind, near, full })
    }

    /// First-stage sample set for a ray whose (possibly estimated) depth is
    /// `depth`; zero depth falls back to the full range.
    fn primary_set(
        &self,
        depth: T,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampleSet<T>, SamplingError> {
        match self.kind {
            SamplerKind::NearSurface if depth > T::zero() => {
                near_surface_samples(depth, &self.near, rng)
            }
            _ => full_range_stratified(&self.full, rng),
        }
    }
}

/// Scene normalization from every nonzero training depth; falls back to the
/// camera frustum when the set has no depth at all.
fn normalization_from_dataset<T: Scalar>(dataset: &Dataset<T>, t_far: f64) -> SceneNormalization {
    let intr = &dataset.intrinsics;
    let mut points: Vec<Vector3<f64>> = Vec::new();
    for frame in &dataset.frames {
        for y in 0..intr.height {
            for x in 0..intr.width {
                let d = frame.depth.get(x, y);
                if d > T::zero() {
                    if let Ok(p) = crate::geom::back_project(intr, &frame.pose, x, y, d) {
                        points.push(Vector3::new(to_f64(p.x), to_f64(p.y), to_f64(p.z)));
                    }
                }
            }
        }
    }
    if points.is_empty() {
        for frame in &dataset.frames {
            let o = frame.pose.translation();
            let o = Vector3::new(to_f64(o.x), to_f64(o.y), to_f64(o.z));
            points.push(o);
            if let Ok(ray) = pixel_ray(intr, &frame.pose, intr.width / 2, intr.height / 2) {
                let p = ray.point_at(sc(t_far));
                points.push(Vector3::new(to_f64(p.x), to_f64(p.y), to_f64(p.z)));
            }
        }
    }
    SceneNormalization::from_points(points)
}

/// One flattened field evaluation over many rays; `spans[r]` is the
/// `(offset, len)` of ray `r` inside the sample axis.
fn forward_rays<T: Scalar>(
    params: &FieldParams<T>,
    rays: &[Ray<T>],
    sets: &[SampleSet<T>],
) -> Result<(ForwardCache<T>, Vec<(usize, usize)>), TrainerError> {
    let total: usize = sets.iter().map(SampleSet::len).sum();
    let mut positions = Vec::with_capacity(total);
    let mut dirs = params
        .config()
        .use_view_dirs
        .then(|| Vec::with_capacity(total));
    let mut spans = Vec::with_capacity(rays.len());
    for (ray, set) in rays.iter().zip(sets) {
        let offset = positions.len();
        for t in set.positions() {
            positions.push(ray.origin + ray.direction * *t);
            if let Some(d) = dirs.as_mut() {
                d.push(ray.direction);
            }
        }
        spans.push((offset, set.len()));
    }
    let cache = forward_batch(params, &positions, dirs.as_deref())?;
    Ok((cache, spans))
}

fn ray_slices<'a, T: Scalar>(
    cache: &'a ForwardCache<T>,
    span: (usize, usize),
    rgb_buf: &mut Vec<[T; 3]>,
) -> (&'a [T], Vec<[T; 3]>) {
    let (off, len) = span;
    let sigmas = &cache.sigma.as_slice().expect("contiguous")[off..off + len];
    rgb_buf.clear();
    rgb_buf.reserve(len);
    for i in off..off + len {
        rgb_buf.push([cache.rgb[(i, 0)], cache.rgb[(i, 1)], cache.rgb[(i, 2)]]);
    }
    (sigmas, std::mem::take(rgb_buf))
}

/// Composites every ray of a batch; returns per-ray pixels. For the
/// hierarchical sampler this runs the coarse pass, resamples with the same
/// per-ray stream, and replaces `sets` with the merged fine sets.
fn render_batch<T: Scalar>(
    params: &FieldParams<T>,
    rays: &[Ray<T>],
    sets: &mut Vec<SampleSet<T>>,
    rngs: &mut [ChaCha8Rng],
    ctx: &SamplerCtx<T>,
    render_cfg: &RenderConfig<T>,
    n_fine: usize,
) -> Result<(ForwardCache<T>, Vec<(usize, usize)>, Vec<[T; 3]>), TrainerError> {
    if ctx.kind == SamplerKind::HierarchicalBaseline {
        let (coarse_cache, coarse_spans) = forward_rays(params, rays, sets)?;
        let mut merged = Vec::with_capacity(sets.len());
        let mut rgb_buf = Vec::new();
        for (r, set) in sets.iter().enumerate() {
            let (sigmas, rgbs) = ray_slices(&coarse_cache, coarse_spans[r], &mut rgb_buf);
            let out = composite(sigmas, &rgbs, set.deltas(), render_cfg)?;
            rgb_buf = rgbs;
            merged.push(inverse_cdf_resample(set, &out.weights, n_fine, &mut rngs[r])?);
        }
        *sets = merged;
    }
    let (cache, spans) = forward_rays(params, rays, sets)?;
    let mut pixels = Vec::with_capacity(rays.len());
    let mut rgb_buf = Vec::new();
    for (r, set) in sets.iter().enumerate() {
        let (sigmas, rgbs) = ray_slices(&cache, spans[r], &mut rgb_buf);
        let out = composite(sigmas, &rgbs, set.deltas(), render_cfg)?;
        rgb_buf = rgbs;
        pixels.push(out.pixel);
    }
    Ok((cache, spans, pixels))
}

/// Trains a field on `dataset` and returns the parameters plus the loss log
/// (iterations 1, every 100th, and the last).
pub fn train<T: Scalar>(
    dataset: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(FieldParams<T>, TrainLog), TrainerError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainerError::Data("training set has no frames".into()));
    }
    let intr = &dataset.intrinsics;
    let any_depth = dataset
        .frames
        .iter()
        .any(|f| f.depth.count_nonzero() > 0);
    if cfg.sampler == SamplerKind::NearSurface && !any_depth {
        return Err(TrainerError::Config(
            "near_surface sampling requires training depth, but every depth pixel is zero".into(),
        ));
    }
    if cfg.skip_background_rays && !any_depth {
        return Err(TrainerError::Config(
            "skip_background_rays is set but every depth pixel is zero".into(),
        ));
    }

    let normalization = normalization_from_dataset(dataset, cfg.t_far);
    let mut params = FieldParams::<T>::init(cfg.field_config(normalization), cfg.seed)?;
    let mut adam = AdamState::new(params.len(), cfg.schedule());
    let ctx = SamplerCtx::<T>::new(
        cfg.sampler,
        cfg.alpha,
        cfg.n_samples,
        cfg.t_near,
        cfg.t_far,
        cfg.range_scale,
    )?;
    let render_cfg = cfg.render_config::<T>();
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::new();

    let n_frames = dataset.frames.len();
    let batch = cfg.batch_rays;
    for it in 0..cfg.iterations {
        // Draw the pixel batch from the master stream.
        let mut rays = Vec::with_capacity(batch);
        let mut gts = Vec::with_capacity(batch);
        let mut depths = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (f, x, y) = loop {
                let f = master.random_range(0..n_frames);
                let x = master.random_range(0..intr.width);
                let y = master.random_range(0..intr.height);
                if !cfg.skip_background_rays || dataset.frames[f].depth.get(x, y) > T::zero() {
                    break (f, x, y);
                }
            };
            let frame = &dataset.frames[f];
            rays.push(pixel_ray(intr, &frame.pose, x, y)?);
            gts.push(frame.color.get(x, y));
            depths.push(frame.depth.get(x, y));
        }

        // Per-ray streams and first-stage sample sets.
        let mut rngs: Vec<ChaCha8Rng> = (0..batch)
            .map(|s| ray_rng(cfg.seed, it * batch as u64 + s as u64))
            .collect();
        let mut sets = Vec::with_capacity(batch);
        for (s, d) in depths.iter().enumerate() {
            sets.push(ctx.primary_set(*d, &mut rngs[s])?);
        }

        let (cache, spans, pixels) = render_batch(
            &params,
            &rays,
            &mut sets,
            &mut rngs,
            &ctx,
            &render_cfg,
            cfg.n_samples,
        )?;

        // MSE over the batch in linear RGB, averaged over rays and channels.
        let inv = 1.0 / (3.0 * batch as f64);
        let mut loss = 0.0f64;
        let total: usize = spans.last().map_or(0, |s| s.0 + s.1);
        let mut d_sigma = Array1::<T>::zeros(total);
        let mut d_rgb = Array2::<T>::zeros((total, 3));
        let mut rgb_buf = Vec::new();
        for r in 0..batch {
            let mut d_pixel = [T::zero(); 3];
            for c in 0..3 {
                let e = to_f64(pixels[r][c]) - to_f64(gts[r][c]);
                loss += e * e * inv;
                d_pixel[c] = sc(2.0 * e * inv);
            }
            let (sigmas, rgbs) = ray_slices(&cache, spans[r], &mut rgb_buf);
            let (ds, dr) =
                composite_backward(sigmas, &rgbs, sets[r].deltas(), &render_cfg, &d_pixel)?;
            rgb_buf = rgbs;
            let (off, len) = spans[r];
            for i in 0..len {
                d_sigma[off + i] = ds[i];
                for c in 0..3 {
                    d_rgb[(off + i, c)] = dr[i][c];
                }
            }
        }
        if !loss.is_finite() {
            return Err(TrainerError::NonFiniteLoss(it + 1));
        }

        let grads = backward_batch(&params, &cache, &d_sigma, &d_rgb)?;
        adam_step(&mut adam, &mut params, &grads)?;

        let iteration = it + 1;
        if iteration == 1 || iteration % 100 == 0 || iteration == cfg.iterations {
            if log.last().map(|e| e.iteration) != Some(iteration) {
                log.push(TrainLogEntry { iteration, loss });
            }
        }
    }
    Ok((params, log))
}

/// Where the evaluation depth image comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthSource {
    GroundTruth,
    /// Projected from the fused point cloud, then hole-filled.
    Estimated,
}

impl std::str::FromStr for DepthSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gt" | "ground_truth" => Ok(Self::GroundTruth),
            "cloud" | "estimated" => Ok(Self::Estimated),
            other => Err(format!("unknown depth source {other:?} (expected gt or cloud)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub depth_source: DepthSource,
    pub sampler: SamplerKind,
    pub alpha: f64,
    pub n_samples: usize,
    pub t_near: f64,
    pub t_far: f64,
    pub range_scale: f64,
    /// Hole-filling knobs for the estimated-depth path.
    pub kappa: f64,
    pub window: u32,
    pub white_background: bool,
    pub sigma_scale: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            depth_source: DepthSource::GroundTruth,
            sampler: SamplerKind::NearSurface,
            alpha: 0.5,
            n_samples: 32,
            t_near: 0.5,
            t_far: 7.5,
            range_scale: 1.0,
            kappa: 2.0,
            window: 11,
            white_background: false,
            sigma_scale: 1.0,
            seed: 0,
        }
    }
}

impl EvalConfig {
    /// Evaluation counterpart of a training run: same sampler, window, and
    /// compositing, with the depth source chosen at call time.
    pub fn matching(train: &TrainConfig, depth_source: DepthSource) -> Self {
        Self {
            depth_source,
            sampler: train.sampler,
            alpha: train.alpha,
            n_samples: train.n_samples,
            t_near: train.t_near,
            t_far: train.t_far,
            range_scale: train.range_scale,
            white_background: train.white_background,
            sigma_scale: train.sigma_scale,
            seed: train.seed,
            ..Self::default()
        }
    }

    fn render_config<T: Scalar>(&self) -> RenderConfig<T> {
        RenderConfig {
            background_color: [T::zero(); 3],
            white_background: self.white_background,
            sigma_scale: sc(self.sigma_scale),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ViewEval<T: Scalar> {
    pub view: usize,
    pub psnr_db: f64,
    pub rendered: ColorImage<T>,
    /// Depth image the sampler saw (ground-truth or estimated).
    pub depth_used: DepthImage<T>,
}

#[derive(Debug, Clone)]
pub struct EvalOutput<T: Scalar> {
    pub views: Vec<ViewEval<T>>,
    pub mean_psnr: f64,
}

/// Renders one full test view with the configured sampler and depth image.
fn render_view<T: Scalar>(
    params: &FieldParams<T>,
    dataset: &Dataset<T>,
    view: usize,
    depth: &DepthImage<T>,
    ctx: &SamplerCtx<T>,
    render_cfg: &RenderConfig<T>,
    cfg: &EvalConfig,
) -> Result<ColorImage<T>, TrainerError> {
    let intr = &dataset.intrinsics;
    let frame = &dataset.frames[view];
    let (w, h) = (intr.width, intr.height);
    let mut image = ColorImage::new(w, h);

    // Rays are flushed through the field in chunks to bound the size of the
    // intermediate activation matrices.
    let max_chunk_samples = 8192;
    let mut rays = Vec::new();
    let mut rngs = Vec::new();
    let mut coords = Vec::new();
    let mut pending_samples = 0usize;
    let flush = |rays: &mut Vec<Ray<T>>,
                     rngs: &mut Vec<ChaCha8Rng>,
                     coords: &mut Vec<(u32, u32)>,
                     image: &mut ColorImage<T>|
     -> Result<(), TrainerError> {
        if rays.is_empty() {
            return Ok(());
        }
        let mut sets = Vec::with_capacity(rays.len());
        for (i, rng) in rngs.iter_mut().enumerate() {
            let (x, y) = coords[i];
            sets.push(ctx.primary_set(depth.get(x, y), rng)?);
        }
        let (_, _, pixels) = render_batch(
            params,
            rays,
            &mut sets,
            rngs,
            ctx,
            render_cfg,
            cfg.n_samples,
        )?;
        for (i, px) in pixels.iter().enumerate() {
            let clamped = std::array::from_fn(|c| px[c].max(T::zero()).min(T::one()));
            image.set(coords[i].0, coords[i].1, clamped);
        }
        rays.clear();
        rngs.clear();
        coords.clear();
        Ok(())
    };

    for y in 0..h {
        for x in 0..w {
            rays.push(pixel_ray(intr, &frame.pose, x, y)?);
            let ray_index = (view as u64) * (w as u64) * (h as u64) + (y as u64) * w as u64 + x as u64;
            rngs.push(ray_rng(cfg.seed, ray_index));
            coords.push((x, y));
            pending_samples += 2 * cfg.n_samples; // upper bound incl. merged sets
            if pending_samples >= max_chunk_samples {
                flush(&mut rays, &mut rngs, &mut coords, &mut image)?;
                pending_samples = 0;
            }
        }
    }
    flush(&mut rays, &mut rngs, &mut coords, &mut image)?;
    Ok(image)
}

/// Scores `params` on every test view: renders with the configured sampler
/// and depth source, then reports masked PSNR per view and the mean.
pub fn evaluate<T: Scalar>(
    params: &FieldParams<T>,
    test: &Dataset<T>,
    cloud: Option<&PointCloud<T>>,
    cfg: &EvalConfig,
) -> Result<EvalOutput<T>, TrainerError> {
    if test.is_empty() {
        return Err(TrainerError::Data("test set has no frames".into()));
    }
    if cfg.depth_source == DepthSource::Estimated && cloud.is_none() {
        return Err(TrainerError::Config(
            "estimated depth requested but no point cloud given".into(),
        ));
    }
    let ctx = SamplerCtx::<T>::new(
        cfg.sampler,
        cfg.alpha,
        cfg.n_samples,
        cfg.t_near,
        cfg.t_far,
        cfg.range_scale,
    )?;
    let render_cfg = cfg.render_config::<T>();
    let fill_cfg = HoleFillConfig::new(sc::<T>(cfg.kappa), cfg.window)?;

    let views: Result<Vec<ViewEval<T>>, TrainerError> = (0..test.frames.len())
        .into_par_iter()
        .map(|view| {
            let frame = &test.frames[view];
            let depth = match cfg.depth_source {
                DepthSource::GroundTruth => frame.depth.clone(),
                DepthSource::Estimated => {
                    let cloud = cloud.expect("checked above");
                    let projected = project_cloud_depth(cloud, &test.intrinsics, &frame.pose);
                    fill_holes(&projected, &fill_cfg).into_depth()
                }
            };
            let rendered = render_view(params, test, view, &depth, &ctx, &render_cfg, cfg)?;
            let mask = frame.background_mask();
            let psnr_db = to_f64(psnr(&rendered, &frame.color, Some(&mask))?);
            Ok(ViewEval {
                view,
                psnr_db,
                rendered,
                depth_used: depth,
            })
        })
        .collect();
    let views = views?;
    let mean_psnr = views.iter().map(|v| v.psnr_db).sum::<f64>() / views.len() as f64;
    Ok(EvalOutput { views, mean_psnr })
}

/// One line of an [`ExperimentReport`]: a named configuration and its
/// per-view scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub config_id: String,
    pub per_view_psnr: Vec<f64>,
    pub mean_psnr: f64,
}

/// Results table for one experiment plus the hashes that pin its inputs.
/// `wall_seconds` is informational and deliberately left out of the
/// serialized form so equal-seed runs emit identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ExperimentReport {
    pub entries: Vec<ReportEntry>,
    pub config_hash: String,
    pub dataset_hash: String,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl ExperimentReport {
    pub fn push<T: Scalar>(&mut self, config_id: impl Into<String>, eval: &EvalOutput<T>) {
        self.entries.push(ReportEntry {
            config_id: config_id.into(),
            per_view_psnr: eval.views.iter().map(|v| v.psnr_db).collect(),
            mean_psnr: eval.mean_psnr,
        });
    }

    pub fn write_json(&self, path: &Path) -> Result<(), TrainerError> {
        let text = serde_json::to_string_pretty(self).expect("report serializes");
        fs::write(path, text).map_err(|source| TrainerError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Hex SHA-256 of the canonical JSON encoding of any config value.
pub fn config_hash<S: Serialize>(value: &S) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex(&Sha256::digest(json.as_bytes()))
}

/// Content hash of a dataset: intrinsics, poses, colors, and depths, all
/// canonicalized through f64 little-endian bytes.
pub fn dataset_hash<T: Scalar>(dataset: &Dataset<T>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(b"nsnerf-dataset-v1");
    let intr = &dataset.intrinsics;
    hasher.update(intr.width.to_le_bytes());
    hasher.update(intr.height.to_le_bytes());
    for v in [intr.fx, intr.fy, intr.cx, intr.cy] {
        hasher.update(to_f64(v).to_le_bytes());
    }
    hasher.update(dataset.depth_scale.to_le_bytes());
    hasher.update((dataset.frames.len() as u64).to_le_bytes());
    for frame in &dataset.frames {
        for v in frame.pose.to_matrix().iter() {
            hasher.update(to_f64(*v).to_le_bytes());
        }
        for px in frame.color.pixels() {
            for c in px {
                hasher.update(to_f64(*c).to_le_bytes());
            }
        }
        for v in frame.depth.values() {
            hasher.update(to_f64(*v).to_le_bytes());
        }
    }
    hex(&hasher.finalize())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
