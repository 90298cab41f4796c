//! Dataset directory format, image and point-cloud file IO, and the
//! procedural synthetic scene generator.
//!
//! A dataset directory holds `manifest.json` plus `color/` (8-bit RGB PNG)
//! and `depth/` (16-bit grayscale PNG) subdirectories. Depth PNGs store
//! `round(value / depth_scale)` with 0 reserved for hole-or-background;
//! `depth_scale` is declared in the manifest.

mod ply;
pub mod synthetic;

pub use ply::{read_ply, write_ply};
pub use synthetic::{render_synthetic, SyntheticSceneSpec};

use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{CameraIntrinsics, GeomError, Pose};
use crate::scalar::{sc, to_f64, Scalar};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("{path}: expected {expected}, found {found}")]
    BadImageFormat {
        path: PathBuf,
        expected: &'static str,
        found: &'static str,
    },
    #[error("{path}: image is {got_w}x{got_h}, manifest intrinsics say {want_w}x{want_h}")]
    DimensionMismatch {
        path: PathBuf,
        want_w: u32,
        want_h: u32,
        got_w: u32,
        got_h: u32,
    },
    #[error("depth value {value} exceeds the 16-bit range at scale {scale}")]
    DepthOverflow { value: f64, scale: f64 },
    #[error("invalid geometry in manifest: {0}")]
    Geom(#[from] GeomError),
    #[error("{0}")]
    Invalid(String),
    #[error("{path}: PLY parse error at byte {offset}: {message}")]
    Ply {
        path: PathBuf,
        offset: usize,
        message: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorImage<T: Scalar> {
    width: u32,
    height: u32,
    pixels: Vec<[T; 3]>,
}

impl<T: Scalar> ColorImage<T> {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            pixels: vec![[T::zero(); 3]; (width * height) as usize],
        }
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<[T; 3]>) -> Result<Self, DataError> {
        if pixels.len() != (width * height) as usize {
            return Err(DataError::Invalid(format!(
                "color buffer has {} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        for p in &pixels {
            for c in p {
                if !c.is_finite() || *c < T::zero() || *c > T::one() {
                    return Err(DataError::Invalid(format!(
                        "color channel {c} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [T; 3] {
        self.pixels[self.idx(x, y)]
    }

    /// Stores a pixel, clamping each channel into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: u32, y: u32, rgb: [T; 3]) {
        let i = self.idx(x, y);
        self.pixels[i] = rgb.map(|c| c.clamp(T::zero(), T::one()));
    }

    pub fn pixels(&self) -> &[[T; 3]] {
        &self.pixels
    }
}

/// Row-major map of Euclidean ray distances; zero encodes hole-or-background.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage<T: Scalar> {
    width: u32,
    height: u32,
    values: Vec<T>,
}

impl<T: Scalar> DepthImage<T> {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            values: vec![T::zero(); (width * height) as usize],
        }
    }

    pub fn from_values(width: u32, height: u32, values: Vec<T>) -> Result<Self, DataError> {
        if values.len() != (width * height) as usize {
            return Err(DataError::Invalid(format!(
                "depth buffer has {} values for a {width}x{height} image",
                values.len()
            )));
        }
        for v in &values {
            if !v.is_finite() || *v < T::zero() {
                return Err(DataError::Invalid(format!(
                    "depth value {v} is negative or not finite"
                )));
            }
        }
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> T {
        self.values[self.idx(x, y)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: T) {
        debug_assert!(v >= T::zero() && v.is_finite());
        let i = self.idx(x, y);
        self.values[i] = v;
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn count_nonzero(&self) -> usize {
        self.values.iter().filter(|v| **v > T::zero()).count()
    }
}

/// One posed RGB-D frame.
///
/// The background mask is not stored: it is by definition the set of pixels
/// with zero depth, see [`Frame::is_background`].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T: Scalar> {
    pub pose: Pose<T>,
    pub color: ColorImage<T>,
    pub depth: DepthImage<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(
        pose: Pose<T>,
        color: ColorImage<T>,
        depth: DepthImage<T>,
    ) -> Result<Self, DataError> {
        if color.width() != depth.width() || color.height() != depth.height() {
            return Err(DataError::Invalid(format!(
                "color image is {}x{} but depth image is {}x{}",
                color.width(),
                color.height(),
                depth.width(),
                depth.height()
            )));
        }
        Ok(Self { pose, color, depth })
    }

    #[inline]
    pub fn is_background(&self, x: u32, y: u32) -> bool {
        self.depth.get(x, y) == T::zero()
    }

    pub fn background_mask(&self) -> Vec<bool> {
        self.depth.values().iter().map(|v| *v == T::zero()).collect()
    }
}

/// Posed frames sharing one set of intrinsics.
///
/// `depth_scale` is the on-disk quantization step (world units per 16-bit
/// level); it is carried so that save/load round trips keep the manifest
/// stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub intrinsics: CameraIntrinsics<T>,
    pub frames: Vec<Frame<T>>,
    pub depth_scale: f64,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(
        intrinsics: CameraIntrinsics<T>,
        frames: Vec<Frame<T>>,
        depth_scale: f64,
    ) -> Result<Self, DataError> {
        if !(depth_scale > 0.0) || !depth_scale.is_finite() {
            return Err(DataError::Invalid(format!(
                "depth_scale must be positive and finite, got {depth_scale}"
            )));
        }
        for (i, f) in frames.iter().enumerate() {
            if f.color.width() != intrinsics.width || f.color.height() != intrinsics.height {
                return Err(DataError::Invalid(format!(
                    "frame {i} is {}x{}, intrinsics say {}x{}",
                    f.color.width(),
                    f.color.height(),
                    intrinsics.width,
                    intrinsics.height
                )));
            }
        }
        Ok(Self { intrinsics, frames, depth_scale })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestIntrinsics {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFrame {
    pose: Vec<f64>,
    color: String,
    depth: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    intrinsics: ManifestIntrinsics,
    depth_scale: f64,
    frames: Vec<ManifestFrame>,
}

/// Writes an 8-bit RGB PNG (channels quantized as `round(255 c)`).
pub fn save_color_png<T: Scalar>(img: &ColorImage<T>, path: &Path) -> Result<(), DataError> {
    let (w, h) = (img.width(), img.height());
    let mut rgb = image::RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = img.get(x, y);
            let quant = px.map(|c| (to_f64(c).clamp(0.0, 1.0) * 255.0).round() as u8);
            rgb.put_pixel(x, y, image::Rgb(quant));
        }
    }
    rgb.save(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes a 16-bit grayscale PNG storing `round(value / depth_scale)`; zero
/// stays zero (hole-or-background) and nonzero depth never quantizes to 0.
pub fn save_depth_png<T: Scalar>(
    img: &DepthImage<T>,
    depth_scale: f64,
    path: &Path,
) -> Result<(), DataError> {
    let (w, h) = (img.width(), img.height());
    let mut gray = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = to_f64(img.get(x, y));
            let level = if v == 0.0 {
                0u16
            } else {
                let q = (v / depth_scale).round();
                if q > u16::MAX as f64 {
                    return Err(DataError::DepthOverflow {
                        value: v,
                        scale: depth_scale,
                    });
                }
                // Nonzero depth must stay nonzero on disk: 0 encodes holes.
                (q as u16).max(1)
            };
            gray.put_pixel(x, y, image::Luma([level]));
        }
    }
    gray.save(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `manifest.json`, `color/NNNN.png`, and `depth/NNNN.png`.
pub fn save_dataset<T: Scalar>(dataset: &Dataset<T>, dir: &Path) -> Result<(), DataError> {
    let color_dir = dir.join("color");
    let depth_dir = dir.join("depth");
    fs::create_dir_all(&color_dir).map_err(io_err(&color_dir))?;
    fs::create_dir_all(&depth_dir).map_err(io_err(&depth_dir))?;

    let scale = dataset.depth_scale;
    let mut manifest_frames = Vec::with_capacity(dataset.frames.len());
    for (i, frame) in dataset.frames.iter().enumerate() {
        let color_rel = format!("color/{i:04}.png");
        let depth_rel = format!("depth/{i:04}.png");
        save_color_png(&frame.color, &dir.join(&color_rel))?;
        save_depth_png(&frame.depth, scale, &dir.join(&depth_rel))?;

        let m = frame.pose.to_matrix();
        let pose_row_major: Vec<f64> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| to_f64(m[(r, c)]))
            .collect();
        manifest_frames.push(ManifestFrame {
            pose: pose_row_major,
            color: color_rel,
            depth: depth_rel,
        });
    }

    let manifest = Manifest {
        intrinsics: ManifestIntrinsics {
            fx: to_f64(dataset.intrinsics.fx),
            fy: to_f64(dataset.intrinsics.fy),
            cx: to_f64(dataset.intrinsics.cx),
            cy: to_f64(dataset.intrinsics.cy),
            width: dataset.intrinsics.width,
            height: dataset.intrinsics.height,
        },
        depth_scale: scale,
        frames: manifest_frames,
    };
    let manifest_path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&manifest_path, json).map_err(io_err(&manifest_path))
}

/// Loads a dataset directory written by [`save_dataset`].
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Dataset<T>, DataError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|source| DataError::Json {
        path: manifest_path.clone(),
        source,
    })?;

    let mi = &manifest.intrinsics;
    let intrinsics = CameraIntrinsics::<T>::new(
        sc(mi.fx),
        sc(mi.fy),
        sc(mi.cx),
        sc(mi.cy),
        mi.width,
        mi.height,
    )?;

    let mut frames = Vec::with_capacity(manifest.frames.len());
    for (i, mf) in manifest.frames.iter().enumerate() {
        if mf.pose.len() != 16 {
            return Err(DataError::Invalid(format!(
                "frame {i} pose has {} entries, expected 16",
                mf.pose.len()
            )));
        }
        let m64 = Matrix4::from_row_slice(&mf.pose);
        let pose = Pose::<T>::from_matrix(&m64.map(sc))?;

        let color_path = dir.join(&mf.color);
        let color = load_color_png(&color_path, mi.width, mi.height)?;
        let depth_path = dir.join(&mf.depth);
        let depth = load_depth_png(&depth_path, mi.width, mi.height, manifest.depth_scale)?;
        frames.push(Frame::new(pose, color, depth)?);
    }

    Dataset::new(intrinsics, frames, manifest.depth_scale)
}

fn load_color_png<T: Scalar>(path: &Path, w: u32, h: u32) -> Result<ColorImage<T>, DataError> {
    let img = image::open(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let rgb = match img {
        DynamicImage::ImageRgb8(b) => b,
        other => {
            return Err(DataError::BadImageFormat {
                path: path.to_path_buf(),
                expected: "8-bit RGB PNG",
                found: format_name(&other),
            })
        }
    };
    if rgb.width() != w || rgb.height() != h {
        return Err(DataError::DimensionMismatch {
            path: path.to_path_buf(),
            want_w: w,
            want_h: h,
            got_w: rgb.width(),
            got_h: rgb.height(),
        });
    }
    let mut out = ColorImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = rgb.get_pixel(x, y).0;
            out.set(x, y, p.map(|c| sc(c as f64 / 255.0)));
        }
    }
    Ok(out)
}

fn load_depth_png<T: Scalar>(
    path: &Path,
    w: u32,
    h: u32,
    scale: f64,
) -> Result<DepthImage<T>, DataError> {
    let img = image::open(path).map_err(|source| DataError::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let gray = match img {
        DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(DataError::BadImageFormat {
                path: path.to_path_buf(),
                expected: "16-bit grayscale PNG",
                found: format_name(&other),
            })
        }
    };
    if gray.width() != w || gray.height() != h {
        return Err(DataError::DimensionMismatch {
            path: path.to_path_buf(),
            want_w: w,
            want_h: h,
            got_w: gray.width(),
            got_h: gray.height(),
        });
    }
    let mut out = DepthImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let level = gray.get_pixel(x, y).0[0];
            out.set(x, y, sc(level as f64 * scale));
        }
    }
    Ok(out)
}

fn format_name(img: &DynamicImage) -> &'static str {
    match img {
        DynamicImage::ImageLuma8(_) => "8-bit grayscale",
        DynamicImage::ImageLumaA8(_) => "8-bit grayscale+alpha",
        DynamicImage::ImageRgb8(_) => "8-bit RGB",
        DynamicImage::ImageRgba8(_) => "8-bit RGBA",
        DynamicImage::ImageLuma16(_) => "16-bit grayscale",
        DynamicImage::ImageLumaA16(_) => "16-bit grayscale+alpha",
        DynamicImage::ImageRgb16(_) => "16-bit RGB",
        DynamicImage::ImageRgba16(_) => "16-bit RGBA",
        DynamicImage::ImageRgb32F(_) => "32-bit float RGB",
        DynamicImage::ImageRgba32F(_) => "32-bit float RGBA",
        _ => "unknown format",
    }
}
