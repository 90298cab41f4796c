//! `nsnerf` — dataset synthesis, point-cloud fusion, depth projection,
//! training, and evaluation as shell one-liners.
//!
//! Every subcommand validates its configuration before touching outputs,
//! logs to stderr only, and writes machine-readable results to files. Paths
//! are resolved against `--out` unless absolute. Exit codes: 0 success,
//! 2 configuration error, 3 data error, 4 numeric failure.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use nsnerf::dataio::synthetic::{build_dataset, ring_poses};
use nsnerf::dataio::{
    load_dataset, read_ply, save_color_png, save_dataset, save_depth_png, write_ply, DataError,
    SyntheticSceneSpec,
};
use nsnerf::depthmap::{fill_holes, project_cloud_depth, DepthMapError, HoleFillConfig};
use nsnerf::field::{load_checkpoint, save_checkpoint, FieldError};
use nsnerf::geom::CameraIntrinsics;
use nsnerf::nalgebra::Vector3;
use nsnerf::pointcloud::{generate_refined_cloud, CloudError, RefineConfig};
use nsnerf::render::RenderError;
use nsnerf::sampling::SamplingError;
use nsnerf::trainer::{
    config_hash, dataset_hash, evaluate, train, write_metrics_csv, DepthSource, EvalConfig,
    ExperimentReport, SamplerKind, TrainConfig, TrainerError,
};
use nsnerf::{Dataset, Real};

const EXIT_CONFIG: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

struct Failure {
    code: i32,
    message: String,
}

fn fail(code: i32, message: impl Display) -> Failure {
    Failure {
        code,
        message: message.to_string(),
    }
}

trait Classify {
    fn exit_code(&self) -> i32;
}

impl Classify for DataError {
    fn exit_code(&self) -> i32 {
        EXIT_DATA
    }
}

impl Classify for CloudError {
    fn exit_code(&self) -> i32 {
        match self {
            CloudError::InvalidConfig(_) => EXIT_CONFIG,
            _ => EXIT_DATA,
        }
    }
}

impl Classify for DepthMapError {
    fn exit_code(&self) -> i32 {
        match self {
            DepthMapError::BadWindow(_) | DepthMapError::BadKappa(_) => EXIT_CONFIG,
            DepthMapError::Invalid(_) => EXIT_DATA,
        }
    }
}

impl Classify for FieldError {
    fn exit_code(&self) -> i32 {
        match self {
            FieldError::InvalidConfig(_) | FieldError::ShapeMismatch { .. } => EXIT_CONFIG,
            FieldError::NonFiniteGradient { .. } => EXIT_NUMERIC,
            FieldError::Io { .. } | FieldError::Json { .. } | FieldError::BadCheckpoint(_) => {
                EXIT_DATA
            }
        }
    }
}

impl Classify for RenderError {
    fn exit_code(&self) -> i32 {
        match self {
            RenderError::InvalidConfig(_) | RenderError::LengthMismatch { .. } => EXIT_CONFIG,
            RenderError::Field(e) => e.exit_code(),
            RenderError::DimensionMismatch(..) => EXIT_DATA,
            RenderError::NegativeSigma { .. }
            | RenderError::NonFinite(_)
            | RenderError::EmptyForeground => EXIT_NUMERIC,
        }
    }
}

impl Classify for SamplingError {
    fn exit_code(&self) -> i32 {
        match self {
            SamplingError::InvalidConfig(_) | SamplingError::LengthMismatch { .. } => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        }
    }
}

impl Classify for TrainerError {
    fn exit_code(&self) -> i32 {
        match self {
            TrainerError::Config(_) => EXIT_CONFIG,
            TrainerError::Data(_) | TrainerError::Geom(_) | TrainerError::Io { .. } => EXIT_DATA,
            TrainerError::NonFiniteLoss(_) => EXIT_NUMERIC,
            TrainerError::Field(e) => e.exit_code(),
            TrainerError::Render(e) => e.exit_code(),
            TrainerError::Sampling(e) => e.exit_code(),
            TrainerError::DepthMap(e) => e.exit_code(),
        }
    }
}

fn classified<E: Classify + Display>(err: E) -> Failure {
    fail(err.exit_code(), err)
}

#[derive(Parser)]
#[command(
    name = "nsnerf",
    version,
    about = "Near-surface sampling NeRF pipeline",
    propagate_version = true
)]
struct Cli {
    /// Root directory; relative paths in arguments resolve against it.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the seed of every stochastic component.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Caps the worker thread count (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic RGB-D dataset (train/ and test/ splits).
    Synth(SynthArgs),
    /// Fuse training depth maps into a redundancy-filtered point cloud.
    Cloud(CloudArgs),
    /// Project a point cloud into one view and fill depth holes.
    Depth(DepthArgs),
    /// Train a radiance field.
    Train(TrainArgs),
    /// Score a checkpoint on test views.
    Eval(EvalArgs),
    /// Train or evaluate across a swept parameter axis.
    Sweep(SweepArgs),
    /// Render one test view from a checkpoint.
    Render(RenderArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in scene: sphere, cube, or desk.
    #[arg(long, default_value = "desk")]
    scene: String,
    /// JSON scene spec file (overrides --scene).
    #[arg(long)]
    scene_file: Option<PathBuf>,
    /// Dataset directory to create (train/ and test/ inside).
    #[arg(long, default_value = "data")]
    data: PathBuf,
    #[arg(long, default_value_t = 20)]
    views: usize,
    #[arg(long, default_value_t = 5)]
    test_views: usize,
    #[arg(long, default_value_t = 64)]
    res: u32,
    /// Gaussian depth noise sigma in world units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 3.8)]
    radius: f64,
    #[arg(long, default_value_t = -1.2, allow_hyphen_values = true)]
    height: f64,
    #[arg(long, default_value_t = 1e-3)]
    depth_scale: f64,
}

#[derive(Args)]
struct CloudArgs {
    /// Dataset directory (a train/ split).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Use every stride-th frame for the redundancy subset.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Output PLY path.
    #[arg(long, default_value = "cloud.ply")]
    ply: PathBuf,
}

#[derive(Args)]
struct DepthArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long, default_value_t = 2.0)]
    kappa: f64,
    #[arg(long, default_value_t = 11)]
    window: u32,
    /// Emit the raw projection without hole filling.
    #[arg(long)]
    no_fill: bool,
    /// Output 16-bit depth PNG.
    #[arg(long, default_value = "depth.png")]
    png: PathBuf,
}

/// Training knobs; unset flags fall back to --config, then to defaults.
#[derive(Args, Clone)]
struct TrainOverrides {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
    #[arg(long)]
    batch_rays: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// near_surface, full_range, or hierarchical_baseline.
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    t_near: Option<f64>,
    #[arg(long)]
    t_far: Option<f64>,
    #[arg(long)]
    range_scale: Option<f64>,
    #[arg(long)]
    use_view_dirs: bool,
    #[arg(long)]
    skip_background_rays: bool,
    #[arg(long)]
    white_background: bool,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig, seed: Option<u64>) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(iterations);
        set!(batch_rays);
        set!(lr);
        set!(sampler);
        set!(alpha);
        set!(n_samples);
        set!(t_near);
        set!(t_far);
        set!(range_scale);
        if self.lr.is_some() {
            cfg.lr_dropped = cfg.lr / 10.0;
        }
        if self.use_view_dirs {
            cfg.use_view_dirs = true;
        }
        if self.skip_background_rays {
            cfg.skip_background_rays = true;
        }
        if self.white_background {
            cfg.white_background = true;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint stem; writes <stem>.bin and <stem>.json.
    #[arg(long, default_value = "ckpt")]
    ckpt: PathBuf,
    #[arg(long, default_value = "metrics.csv")]
    metrics: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Evaluation knobs; unset flags fall back to --config, then to defaults.
#[derive(Args, Clone)]
struct EvalOverrides {
    #[arg(long)]
    config: Option<PathBuf>,
    /// gt (ground-truth depth) or cloud (projected + hole-filled).
    #[arg(long)]
    depth_source: Option<DepthSource>,
    #[arg(long)]
    sampler: Option<SamplerKind>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    t_near: Option<f64>,
    #[arg(long)]
    t_far: Option<f64>,
    #[arg(long)]
    range_scale: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    white_background: bool,
}

impl EvalOverrides {
    fn apply(&self, cfg: &mut EvalConfig, seed: Option<u64>) {
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(depth_source);
        set!(sampler);
        set!(alpha);
        set!(n_samples);
        set!(t_near);
        set!(t_far);
        set!(range_scale);
        set!(kappa);
        set!(window);
        if self.white_background {
            cfg.white_background = true;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Test dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Point cloud (required with --depth-source cloud).
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    /// Directory for per-view rendered PNGs.
    #[arg(long)]
    renders: Option<PathBuf>,
    #[command(flatten)]
    overrides: EvalOverrides,
}

#[derive(Args)]
struct SweepArgs {
    /// Training dataset (ignored with --ckpt).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Test dataset scored for every row.
    #[arg(long)]
    test_data: PathBuf,
    /// alpha, range_scale, or n_samples.
    #[arg(long)]
    axis: String,
    /// Comma-separated values, e.g. 1,0.5,0.25,0.125.
    #[arg(long)]
    values: String,
    /// Evaluate this fixed checkpoint instead of retraining per value.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long, default_value = "report.json")]
    report: PathBuf,
    #[command(flatten)]
    overrides: TrainOverrides,
    /// Depth source for evaluation rows: gt or cloud.
    #[arg(long)]
    depth_source: Option<DepthSource>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    window: Option<u32>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, default_value_t = 0)]
    view: usize,
    #[arg(long)]
    cloud: Option<PathBuf>,
    #[arg(long, default_value = "render.png")]
    png: PathBuf,
    #[command(flatten)]
    overrides: EvalOverrides,
}

/// Optional JSON config file: `{"train": {...}, "eval": {...}}`, both
/// sections partial (missing fields default, unknown fields rejected).
#[derive(Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: Option<TrainConfig>,
    eval: Option<EvalConfig>,
}

fn resolve(out: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out.join(p)
    }
}

fn load_file_config(out: &Path, path: Option<&PathBuf>) -> Result<FileConfig, Failure> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let path = resolve(out, path);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| fail(EXIT_CONFIG, format!("{}: bad config: {e}", path.display())))
}

fn load_data(out: &Path, dir: &Path) -> Result<Dataset, Failure> {
    load_dataset::<Real>(&resolve(out, dir)).map_err(classified)
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

fn cmd_synth(out: &Path, seed: Option<u64>, args: &SynthArgs) -> Result<(), Failure> {
    let seed = seed.unwrap_or(0);
    if args.views == 0 || args.res == 0 {
        return Err(fail(EXIT_CONFIG, "synth needs views >= 1 and res >= 1"));
    }
    let spec = match &args.scene_file {
        Some(f) => {
            let path = resolve(out, f);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SyntheticSceneSpec>(&text)
                .map_err(|e| fail(EXIT_CONFIG, format!("{}: bad scene spec: {e}", path.display())))?
        }
        None => match args.scene.as_str() {
            "sphere" => SyntheticSceneSpec::sphere(),
            "cube" => SyntheticSceneSpec::cube(),
            "desk" => SyntheticSceneSpec::desk(),
            other => {
                return Err(fail(
                    EXIT_CONFIG,
                    format!("unknown scene {other:?} (expected sphere, cube, or desk)"),
                ))
            }
        },
    };
    spec.validate().map_err(|e| fail(EXIT_CONFIG, e))?;
    if !(args.noise >= 0.0) || !(args.depth_scale > 0.0) || !(args.radius > 0.0) {
        return Err(fail(EXIT_CONFIG, "noise, depth_scale, and radius must be valid"));
    }

    let f = 0.9 * args.res as f64;
    let intr = CameraIntrinsics::<Real>::new(
        f as Real,
        f as Real,
        args.res as Real / 2.0,
        args.res as Real / 2.0,
        args.res,
        args.res,
    )
    .map_err(|e| fail(EXIT_CONFIG, e))?;

    let target = orbit_target(&spec);
    let train_poses = ring_poses(args.views, args.radius, args.height, 0.0, target);
    let train_set = build_dataset(&spec, intr, &train_poses, args.noise, seed, args.depth_scale)
        .map_err(classified)?;
    let root = resolve(out, &args.data);
    save_dataset(&train_set, &root.join("train")).map_err(classified)?;
    eprintln!("synth: wrote {} train frames", train_set.len());

    if args.test_views > 0 {
        let test_poses = ring_poses(args.test_views, args.radius, args.height, 0.5, target);
        let test_seed = seed.wrapping_add(args.views as u64);
        let test_set = build_dataset(
            &spec,
            intr,
            &test_poses,
            args.noise,
            test_seed,
            args.depth_scale,
        )
        .map_err(classified)?;
        save_dataset(&test_set, &root.join("test")).map_err(classified)?;
        eprintln!("synth: wrote {} test frames", test_set.len());
    }
    Ok(())
}

/// Orbit target: center of the scene's bounding box, origin if empty.
fn orbit_target(spec: &SyntheticSceneSpec) -> Vector3<Real> {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    let mut grow = |p: [f64; 3]| {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    };
    for s in &spec.spheres {
        grow([s.center[0] - s.radius, s.center[1] - s.radius, s.center[2] - s.radius]);
        grow([s.center[0] + s.radius, s.center[1] + s.radius, s.center[2] + s.radius]);
    }
    for b in &spec.boxes {
        grow(b.min);
        grow(b.max);
    }
    if lo[0] > hi[0] {
        return Vector3::zeros();
    }
    Vector3::new(
        ((lo[0] + hi[0]) / 2.0) as Real,
        ((lo[1] + hi[1]) / 2.0) as Real,
        ((lo[2] + hi[2]) / 2.0) as Real,
    )
}

fn cmd_cloud(out: &Path, args: &CloudArgs) -> Result<(), Failure> {
    let cfg = RefineConfig::<Real>::new(args.tau as Real, args.stride).map_err(classified)?;
    let dataset = load_data(out, &args.data)?;
    let cloud = generate_refined_cloud(&dataset, &cfg).map_err(classified)?;
    let ply = resolve(out, &args.ply);
    ensure_parent(&ply)?;
    write_ply(&cloud, &ply).map_err(classified)?;
    eprintln!(
        "cloud: {} points from {} frames (tau={}, stride={}) -> {}",
        cloud.len(),
        dataset.len(),
        args.tau,
        args.stride,
        ply.display()
    );
    Ok(())
}

fn cmd_depth(out: &Path, args: &DepthArgs) -> Result<(), Failure> {
    let fill_cfg = HoleFillConfig::<Real>::new(args.kappa as Real, args.window).map_err(classified)?;
    let dataset = load_data(out, &args.data)?;
    if args.view >= dataset.len() {
        return Err(fail(
            EXIT_DATA,
            format!("view {} out of range (dataset has {} frames)", args.view, dataset.len()),
        ));
    }
    let cloud = read_ply::<Real>(&resolve(out, &args.cloud)).map_err(classified)?;
    let pose = &dataset.frames[args.view].pose;
    let projected = project_cloud_depth(&cloud, &dataset.intrinsics, pose);
    let total = projected.width() as usize * projected.height() as usize;
    let before = total - projected.depth().count_nonzero();
    let depth = if args.no_fill {
        projected.into_depth()
    } else {
        fill_holes(&projected, &fill_cfg).into_depth()
    };
    let after = total - depth.count_nonzero();
    let png = resolve(out, &args.png);
    ensure_parent(&png)?;
    save_depth_png(&depth, dataset.depth_scale, &png).map_err(classified)?;
    eprintln!(
        "depth: view {} zero pixels before {before}, after {after} -> {}",
        args.view,
        png.display()
    );
    Ok(())
}

fn train_config(
    out: &Path,
    overrides: &TrainOverrides,
    seed: Option<u64>,
) -> Result<TrainConfig, Failure> {
    let file = load_file_config(out, overrides.config.as_ref())?;
    let mut cfg = file.train.unwrap_or_default();
    overrides.apply(&mut cfg, seed);
    cfg.validate().map_err(classified)?;
    Ok(cfg)
}

fn eval_config(
    out: &Path,
    overrides: &EvalOverrides,
    seed: Option<u64>,
) -> Result<EvalConfig, Failure> {
    let file = load_file_config(out, overrides.config.as_ref())?;
    let mut cfg = file.eval.unwrap_or_default();
    overrides.apply(&mut cfg, seed);
    Ok(cfg)
}

fn cmd_train(out: &Path, seed: Option<u64>, args: &TrainArgs) -> Result<(), Failure> {
    let cfg = train_config(out, &args.overrides, seed)?;
    let dataset = load_data(out, &args.data)?;
    let started = Instant::now();
    let (params, log) = train(&dataset, &cfg).map_err(classified)?;
    let wall = started.elapsed().as_secs_f64();
    for e in &log {
        eprintln!("train: iter {:>6} loss {:.6e}", e.iteration, e.loss);
    }
    eprintln!("train: {} iterations in {wall:.1}s", cfg.iterations);

    let stem = resolve(out, &args.ckpt);
    ensure_parent(&stem)?;
    let final_lr = cfg.schedule().at(cfg.iterations);
    save_checkpoint(&params, cfg.iterations, final_lr, &stem).map_err(classified)?;
    let metrics = resolve(out, &args.metrics);
    ensure_parent(&metrics)?;
    write_metrics_csv(&log, &metrics).map_err(classified)?;
    eprintln!("train: checkpoint {} metrics {}", stem.display(), metrics.display());
    Ok(())
}

fn load_cloud(
    out: &Path,
    path: Option<&PathBuf>,
    cfg: &EvalConfig,
) -> Result<Option<nsnerf::PointCloud>, Failure> {
    match (cfg.depth_source, path) {
        (DepthSource::Estimated, None) => Err(fail(
            EXIT_CONFIG,
            "--depth-source cloud requires --cloud <file.ply>",
        )),
        (_, Some(p)) => Ok(Some(read_ply(&resolve(out, p)).map_err(classified)?)),
        (_, None) => Ok(None),
    }
}

fn cmd_eval(out: &Path, seed: Option<u64>, args: &EvalArgs) -> Result<(), Failure> {
    let cfg = eval_config(out, &args.overrides, seed)?;
    let (params, _meta) =
        load_checkpoint::<Real>(&resolve(out, &args.ckpt)).map_err(classified)?;
    let dataset = load_data(out, &args.data)?;
    let cloud = load_cloud(out, args.cloud.as_ref(), &cfg)?;

    let started = Instant::now();
    let output = evaluate(&params, &dataset, cloud.as_ref(), &cfg).map_err(classified)?;
    let label = match cfg.depth_source {
        DepthSource::GroundTruth => "gt",
        DepthSource::Estimated => "cloud",
    };
    let mut report = ExperimentReport {
        config_hash: config_hash(&cfg),
        dataset_hash: dataset_hash(&dataset),
        wall_seconds: started.elapsed().as_secs_f64(),
        ..ExperimentReport::default()
    };
    report.push(format!("depth={label}"), &output);

    let report_path = resolve(out, &args.report);
    ensure_parent(&report_path)?;
    report.write_json(&report_path).map_err(classified)?;
    if let Some(renders) = &args.renders {
        let dir = resolve(out, renders);
        std::fs::create_dir_all(&dir)
            .map_err(|e| fail(EXIT_DATA, format!("{}: {e}", dir.display())))?;
        for view in &output.views {
            save_color_png(&view.rendered, &dir.join(format!("view_{:04}.png", view.view)))
                .map_err(classified)?;
        }
    }
    for v in &output.views {
        eprintln!("eval: view {} psnr {:.2} dB", v.view, v.psnr_db);
    }
    eprintln!(
        "eval: depth={label} mean psnr {:.2} dB over {} views in {:.1}s -> {}",
        output.mean_psnr,
        output.views.len(),
        report.wall_seconds,
        report_path.display()
    );
    Ok(())
}

enum SweepAxis {
    Alpha,
    RangeScale,
    NSamples,
}

impl SweepAxis {
    fn parse(s: &str) -> Result<Self, Failure> {
        match s {
            "alpha" => Ok(Self::Alpha),
            "range_scale" => Ok(Self::RangeScale),
            "n_samples" => Ok(Self::NSamples),
            other => Err(fail(
                EXIT_CONFIG,
                format!("unknown sweep axis {other:?} (expected alpha, range_scale, or n_samples)"),
            )),
        }
    }

    fn set_train(&self, cfg: &mut TrainConfig, v: f64) -> Result<(), Failure> {
        match self {
            Self::Alpha => cfg.alpha = v,
            Self::RangeScale => cfg.range_scale = v,
            Self::NSamples => cfg.n_samples = as_count(v)?,
        }
        Ok(())
    }

    fn set_eval(&self, cfg: &mut EvalConfig, v: f64) -> Result<(), Failure> {
        match self {
            Self::Alpha => cfg.alpha = v,
            Self::RangeScale => cfg.range_scale = v,
            Self::NSamples => cfg.n_samples = as_count(v)?,
        }
        Ok(())
    }

    fn name(&self) -> &'static str {
        match self {
            Self::Alpha => "alpha",
            Self::RangeScale => "range_scale",
            Self::NSamples => "n_samples",
        }
    }
}

fn as_count(v: f64) -> Result<usize, Failure> {
    if v.fract() == 0.0 && v >= 1.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(fail(EXIT_CONFIG, format!("{v} is not a valid sample count")))
    }
}

fn parse_values(s: &str) -> Result<Vec<f64>, Failure> {
    let values: Result<Vec<f64>, _> = s.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let values = values.map_err(|e| fail(EXIT_CONFIG, format!("bad --values: {e}")))?;
    if values.is_empty() {
        return Err(fail(EXIT_CONFIG, "--values must list at least one number"));
    }
    Ok(values)
}

fn cmd_sweep(out: &Path, seed: Option<u64>, args: &SweepArgs) -> Result<(), Failure> {
    let axis = SweepAxis::parse(&args.axis)?;
    let values = parse_values(&args.values)?;
    let base_train = train_config(out, &args.overrides, seed)?;
    let depth_source = args.depth_source.unwrap_or(DepthSource::GroundTruth);
    let mut base_eval = EvalConfig::matching(&base_train, depth_source);
    if let Some(k) = args.kappa {
        base_eval.kappa = k;
    }
    if let Some(w) = args.window {
        base_eval.window = w;
    }
    let test_set = load_data(out, &args.test_data)?;
    let cloud = load_cloud(out, args.cloud.as_ref(), &base_eval)?;

    let started = Instant::now();
    let mut report = ExperimentReport {
        dataset_hash: dataset_hash(&test_set),
        ..ExperimentReport::default()
    };

    if let Some(ckpt) = &args.ckpt {
        // Fixed checkpoint: the axis sweeps the evaluation sampler only.
        let (params, _) = load_checkpoint::<Real>(&resolve(out, ckpt)).map_err(classified)?;
        report.config_hash = config_hash(&(&base_eval, axis.name(), &values));
        for &v in &values {
            let mut cfg = base_eval.clone();
            axis.set_eval(&mut cfg, v)?;
            let output = evaluate(&params, &test_set, cloud.as_ref(), &cfg).map_err(classified)?;
            eprintln!("sweep: {}={v} mean psnr {:.2} dB", axis.name(), output.mean_psnr);
            report.push(format!("{}={v}", axis.name()), &output);
        }
    } else {
        // Retrain per value, then score with the matching eval config.
        let Some(data) = &args.data else {
            return Err(fail(EXIT_CONFIG, "sweep needs --data unless --ckpt is given"));
        };
        let train_set = load_data(out, data)?;
        report.config_hash = config_hash(&(&base_train, axis.name(), &values));
        for &v in &values {
            let mut cfg = base_train.clone();
            axis.set_train(&mut cfg, v)?;
            cfg.validate().map_err(classified)?;
            let (params, _) = train(&train_set, &cfg).map_err(classified)?;
            let mut eval_cfg = EvalConfig::matching(&cfg, depth_source);
            eval_cfg.kappa = base_eval.kappa;
            eval_cfg.window = base_eval.window;
            let output =
                evaluate(&params, &test_set, cloud.as_ref(), &eval_cfg).map_err(classified)?;
            eprintln!("sweep: {}={v} mean psnr {:.2} dB", axis.name(), output.mean_psnr);
            report.push(format!("{}={v}", axis.name()), &output);
        }
    }
    report.wall_seconds = started.elapsed().as_secs_f64();
    let report_path = resolve(out, &args.report);
    ensure_parent(&report_path)?;
    report.write_json(&report_path).map_err(classified)?;
    eprintln!(
        "sweep: {} rows in {:.1}s -> {}",
        report.entries.len(),
        report.wall_seconds,
        report_path.display()
    );
    Ok(())
}

fn cmd_render(out: &Path, seed: Option<u64>, args: &RenderArgs) -> Result<(), Failure> {
    let cfg = eval_config(out, &args.overrides, seed)?;
    let (params, _) = load_checkpoint::<Real>(&resolve(out, &args.ckpt)).map_err(classified)?;
    let dataset = load_data(out, &args.data)?;
    if args.view >= dataset.len() {
        return Err(fail(
            EXIT_DATA,
            format!("view {} out of range (dataset has {} frames)", args.view, dataset.len()),
        ));
    }
    let cloud = load_cloud(out, args.cloud.as_ref(), &cfg)?;
    let single = Dataset::new(
        dataset.intrinsics,
        vec![dataset.frames[args.view].clone()],
        dataset.depth_scale,
    )
    .map_err(classified)?;
    let output = evaluate(&params, &single, cloud.as_ref(), &cfg).map_err(classified)?;
    let png = resolve(out, &args.png);
    ensure_parent(&png)?;
    save_color_png(&output.views[0].rendered, &png).map_err(classified)?;
    eprintln!(
        "render: view {} psnr {:.2} dB -> {}",
        args.view,
        output.views[0].psnr_db,
        png.display()
    );
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(fail(EXIT_CONFIG, "--threads must be at least 1"));
        }
        // Ignore the error when a global pool already exists (tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let out = &cli.out;
    match &cli.command {
        Command::Synth(args) => cmd_synth(out, cli.seed, args),
        Command::Cloud(args) => cmd_cloud(out, args),
        Command::Depth(args) => cmd_depth(out, args),
        Command::Train(args) => cmd_train(out, cli.seed, args),
        Command::Eval(args) => cmd_eval(out, cli.seed, args),
        Command::Sweep(args) => cmd_sweep(out, cli.seed, args),
        Command::Render(args) => cmd_render(out, cli.seed, args),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(f) = run(&cli) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}
