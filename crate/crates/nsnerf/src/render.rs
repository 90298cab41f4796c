//! Classical volume rendering: alpha compositing along a ray, its exact
//! gradient, and the masked PSNR metric.
//!
//! With opacities `alpha_i = 1 - exp(-sigma_i * delta_i)` and transmittance
//! `T_i = prod_{j<i} (1 - alpha_j)`, a ray composites to
//! `sum_i T_i alpha_i c_i + T_{N+1} * background`. The backward pass runs
//! back to front, carrying the color composited behind each sample, so it
//! never divides by `1 - alpha` (which is zero for saturated samples).

use thiserror::Error;

use crate::dataio::ColorImage;
use crate::field::{forward_batch, FieldError, FieldParams};
use crate::geom::Ray;
use crate::sampling::SampleSet;
use crate::scalar::{sc, to_f64, Scalar};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("invalid render config: {0}")]
    InvalidConfig(String),
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("negative density {value} at sample {index}")]
    NegativeSigma { index: usize, value: f64 },
    #[error("non-finite {0} in compositor input")]
    NonFinite(&'static str),
    #[error("PSNR undefined: every pixel is masked as background")]
    EmptyForeground,
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Background handling and the density scale applied before compositing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderConfig<T: Scalar> {
    pub background_color: [T; 3],
    /// Overrides `background_color` with white when set.
    pub white_background: bool,
    pub sigma_scale: T,
}

impl<T: Scalar> Default for RenderConfig<T> {
    fn default() -> Self {
        Self {
            background_color: [T::zero(); 3],
            white_background: false,
            sigma_scale: T::one(),
        }
    }
}

impl<T: Scalar> RenderConfig<T> {
    pub fn validate(&self) -> Result<(), RenderError> {
        if !(self.sigma_scale > T::zero()) || !self.sigma_scale.is_finite() {
            return Err(RenderError::InvalidConfig(format!(
                "sigma_scale must be positive, got {}",
                to_f64(self.sigma_scale)
            )));
        }
        for (c, v) in self.background_color.iter().enumerate() {
            if !(*v >= T::zero() && *v <= T::one()) {
                return Err(RenderError::InvalidConfig(format!(
                    "background_color[{c}] = {} outside [0, 1]",
                    to_f64(*v)
                )));
            }
        }
        Ok(())
    }

    pub fn effective_background(&self) -> [T; 3] {
        if self.white_background {
            [T::one(); 3]
        } else {
            self.background_color
        }
    }
}

/// Result of compositing one ray.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutput<T: Scalar> {
    pub pixel: [T; 3],
    /// Per-sample contribution weights `T_i alpha_i`.
    pub weights: Vec<T>,
    /// Total foreground weight `sum_i w_i`.
    pub acc: T,
    /// Residual transmittance `T_{N+1}` hitting the background.
    pub transmittance: T,
}

fn check_inputs<T: Scalar>(
    sigmas: &[T],
    rgbs: &[[T; 3]],
    deltas: &[T],
    config: &RenderConfig<T>,
) -> Result<(), RenderError> {
    config.validate()?;
    if rgbs.len() != sigmas.len() {
        return Err(RenderError::LengthMismatch {
            what: "rgbs",
            expected: sigmas.len(),
            got: rgbs.len(),
        });
    }
    if deltas.len() != sigmas.len() {
        return Err(RenderError::LengthMismatch {
            what: "deltas",
            expected: sigmas.len(),
            got: deltas.len(),
        });
    }
    for (i, s) in sigmas.iter().enumerate() {
        if !s.is_finite() {
            return Err(RenderError::NonFinite("sigma"));
        }
        if *s < T::zero() {
            return Err(RenderError::NegativeSigma {
                index: i,
                value: to_f64(*s),
            });
        }
    }
    if deltas.iter().any(|d| !(*d >= T::zero())) {
        return Err(RenderError::NonFinite("delta"));
    }
    if rgbs.iter().flatten().any(|c| !c.is_finite()) {
        return Err(RenderError::NonFinite("rgb"));
    }
    Ok(())
}

/// Composites samples front to back over the configured background.
pub fn composite<T: Scalar>(
    sigmas: &[T],
    rgbs: &[[T; 3]],
    deltas: &[T],
    config: &RenderConfig<T>,
) -> Result<CompositeOutput<T>, RenderError> {
    check_inputs(sigmas, rgbs, deltas, config)?;
    let bg = config.effective_background();
    let mut pixel = [T::zero(); 3];
    let mut weights = Vec::with_capacity(sigmas.len());
    let mut acc = T::zero();
    let mut trans = T::one();
    for i in 0..sigmas.len() {
        let alpha = T::one() - (-sigmas[i] * config.sigma_scale * deltas[i]).exp();
        let w = trans * alpha;
        for c in 0..3 {
            pixel[c] += w * rgbs[i][c];
        }
        weights.push(w);
        acc += w;
        trans *= T::one() - alpha;
    }
    for c in 0..3 {
        pixel[c] += trans * bg[c];
    }
    Ok(CompositeOutput {
        pixel,
        weights,
        acc,
        transmittance: trans,
    })
}

/// Exact gradient of the composited pixel with respect to every sample
/// density and color, contracted with the upstream `d_pixel`.
///
/// Runs back to front, carrying `u` = the color composited behind the
/// current sample (background-initialized), which gives
/// `dC/d alpha_k = T_k (c_k - u)` without any division.
pub fn composite_backward<T: Scalar>(
    sigmas: &[T],
    rgbs: &[[T; 3]],
    deltas: &[T],
    config: &RenderConfig<T>,
    d_pixel: &[T; 3],
) -> Result<(Vec<T>, Vec<[T; 3]>), RenderError> {
    check_inputs(sigmas, rgbs, deltas, config)?;
    let n = sigmas.len();
    let mut alphas = vec![T::zero(); n];
    let mut trans = vec![T::one(); n];
    let mut t = T::one();
    for i in 0..n {
        alphas[i] = T::one() - (-sigmas[i] * config.sigma_scale * deltas[i]).exp();
        trans[i] = t;
        t *= T::one() - alphas[i];
    }

    let mut d_sigmas = vec![T::zero(); n];
    let mut d_rgbs = vec![[T::zero(); 3]; n];
    let mut u = config.effective_background();
    for k in (0..n).rev() {
        let w = trans[k] * alphas[k];
        let mut d_alpha = T::zero();
        for c in 0..3 {
            d_rgbs[k][c] = w * d_pixel[c];
            d_alpha += d_pixel[c] * trans[k] * (rgbs[k][c] - u[c]);
        }
        // d alpha / d sigma = delta * scale * exp(-sigma scale delta).
        d_sigmas[k] =
            d_alpha * deltas[k] * config.sigma_scale * (T::one() - alphas[k]);
        for c in 0..3 {
            u[c] = alphas[k] * rgbs[k][c] + (T::one() - alphas[k]) * u[c];
        }
    }
    Ok((d_sigmas, d_rgbs))
}

/// One rendered ray: the composited color plus the compositor diagnostics.
pub type RayRender<T> = CompositeOutput<T>;

/// Evaluates the field at each sample along `ray` and composites. An empty
/// sample set renders pure background.
pub fn render_ray<T: Scalar>(
    params: &FieldParams<T>,
    ray: &Ray<T>,
    samples: &SampleSet<T>,
    config: &RenderConfig<T>,
) -> Result<RayRender<T>, RenderError> {
    config.validate()?;
    if samples.is_empty() {
        return Ok(CompositeOutput {
            pixel: config.effective_background(),
            weights: Vec::new(),
            acc: T::zero(),
            transmittance: T::one(),
        });
    }
    let positions: Vec<_> = samples
        .positions()
        .iter()
        .map(|t| ray.origin + ray.direction * *t)
        .collect();
    let dirs_vec;
    let dirs = if params.config().use_view_dirs {
        dirs_vec = vec![ray.direction; positions.len()];
        Some(&dirs_vec[..])
    } else {
        None
    };
    let cache = forward_batch(params, &positions, dirs)?;
    let sigmas: Vec<T> = cache.sigma.to_vec();
    let rgbs: Vec<[T; 3]> = (0..positions.len())
        .map(|i| [cache.rgb[(i, 0)], cache.rgb[(i, 1)], cache.rgb[(i, 2)]])
        .collect();
    composite(&sigmas, &rgbs, samples.deltas(), config)
}

/// Peak signal-to-noise ratio in dB over the non-masked pixels; `mask` marks
/// background pixels to exclude (`true` = skip). Identical images return
/// positive infinity.
pub fn psnr<T: Scalar>(
    rendered: &ColorImage<T>,
    gt: &ColorImage<T>,
    mask: Option<&[bool]>,
) -> Result<T, RenderError> {
    if rendered.width() != gt.width() || rendered.height() != gt.height() {
        return Err(RenderError::DimensionMismatch(
            rendered.width(),
            rendered.height(),
            gt.width(),
            gt.height(),
        ));
    }
    let n_pixels = (rendered.width() * rendered.height()) as usize;
    if let Some(m) = mask {
        if m.len() != n_pixels {
            return Err(RenderError::LengthMismatch {
                what: "mask",
                expected: n_pixels,
                got: m.len(),
            });
        }
    }
    let mut sum_sq = 0.0f64;
    let mut count = 0usize;
    for idx in 0..n_pixels {
        if mask.is_some_and(|m| m[idx]) {
            continue;
        }
        let x = (idx as u32) % rendered.width();
        let y = (idx as u32) / rendered.width();
        let a = rendered.get(x, y);
        let b = gt.get(x, y);
        for c in 0..3 {
            let d = to_f64(a[c]) - to_f64(b[c]);
            sum_sq += d * d;
        }
        count += 1;
    }
    if count == 0 {
        return Err(RenderError::EmptyForeground);
    }
    let mse = sum_sq / (3.0 * count as f64);
    if mse == 0.0 {
        return Ok(sc(f64::INFINITY));
    }
    Ok(sc(10.0 * (1.0 / mse).log10()))
}
