//! Ray-sample position generators: the near-surface sampler driven by a
//! per-ray depth estimate, the stratified full-range baseline, and the
//! inverse-CDF hierarchical resampler.
//!
//! All jitter is drawn as `f64` and converted afterwards, so `f32` and `f64`
//! instantiations consume identical RNG streams. Per-ray reproducibility
//! under any parallel schedule comes from [`ray_rng`], which derives an
//! independent stream per `(seed, ray index)` pair.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::{sc, to_f64, Scalar};

/// Stand-in length of the interval after the last sample, so an opaque last
/// sample can absorb all remaining transmittance.
pub const FAR_DELTA: f64 = 1e10;

/// Two sample positions closer than this are merged after resampling.
pub const DEDUP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("near-surface sampling needs a positive surface depth, got {0}; route this ray to the full-range fallback")]
    NonPositiveDepth(f64),
    #[error("sampling window [{lo}, {hi}] is empty after the near clip")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("{weights} weights for {positions} coarse positions")]
    LengthMismatch { positions: usize, weights: usize },
    #[error("invalid sampling config: {0}")]
    InvalidConfig(String),
    #[error("sample positions must be finite, nonnegative, and strictly ascending: {0}")]
    BadPositions(String),
}

/// Ascending ray distances plus the interval lengths between them.
///
/// The final interval gets the [`FAR_DELTA`] cap. Positions may start at
/// exactly zero (a surface at `d = alpha` with no near clip samples from the
/// camera origin outward).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet<T: Scalar> {
    positions: Vec<T>,
    deltas: Vec<T>,
}

impl<T: Scalar> SampleSet<T> {
    pub fn new(positions: Vec<T>) -> Result<Self, SamplingError> {
        for (i, p) in positions.iter().enumerate() {
            if !p.is_finite() || *p < T::zero() {
                return Err(SamplingError::BadPositions(format!(
                    "position {i} is {p}"
                )));
            }
            if i > 0 && !(positions[i - 1] < *p) {
                return Err(SamplingError::BadPositions(format!(
                    "position {i} ({p}) does not exceed its predecessor ({})",
                    positions[i - 1]
                )));
            }
        }
        let mut deltas = Vec::with_capacity(positions.len());
        for i in 0..positions.len() {
            deltas.push(match positions.get(i + 1) {
                Some(next) => *next - positions[i],
                None => sc(FAR_DELTA),
            });
        }
        Ok(Self { positions, deltas })
    }

    pub fn empty() -> Self {
        Self {
            positions: Vec::new(),
            deltas: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[T] {
        &self.positions
    }

    pub fn deltas(&self) -> &[T] {
        &self.deltas
    }
}

/// Near-surface sampler parameters: half-range `alpha`, samples per ray, and
/// the floor that keeps sample distances positive when `d < alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearSurfaceConfig<T: Scalar> {
    pub alpha: T,
    pub n_samples: usize,
    pub near_clip: T,
    /// Reuse one jitter draw for every sample of a ray instead of one per
    /// sample (the literal reading of Eq. (2)'s single gamma).
    pub shared_jitter: bool,
}

impl<T: Scalar> NearSurfaceConfig<T> {
    pub fn new(alpha: T, n_samples: usize) -> Result<Self, SamplingError> {
        if !(alpha > T::zero()) || !alpha.is_finite() {
            return Err(SamplingError::InvalidConfig(format!(
                "alpha must be positive and finite, got {alpha}"
            )));
        }
        if n_samples == 0 {
            return Err(SamplingError::InvalidConfig(
                "n_samples must be at least 1".into(),
            ));
        }
        Ok(Self {
            alpha,
            n_samples,
            near_clip: sc(1e-3),
            shared_jitter: false,
        })
    }

    pub fn with_near_clip(mut self, near_clip: T) -> Result<Self, SamplingError> {
        if !(near_clip >= T::zero()) || !near_clip.is_finite() {
            return Err(SamplingError::InvalidConfig(format!(
                "near_clip must be nonnegative and finite, got {near_clip}"
            )));
        }
        self.near_clip = near_clip;
        Ok(self)
    }

    pub fn with_shared_jitter(mut self, shared: bool) -> Self {
        self.shared_jitter = shared;
        self
    }
}

/// Full-range stratified sampler parameters. `range_scale` stretches the far
/// bound: the sampled interval is `[t_near, t_near + (t_far - t_near) * s]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullRangeConfig<T: Scalar> {
    pub t_near: T,
    pub t_far: T,
    pub n_samples: usize,
    pub range_scale: T,
}

impl<T: Scalar> FullRangeConfig<T> {
    pub fn new(t_near: T, t_far: T, n_samples: usize) -> Result<Self, SamplingError> {
        if !(t_near >= T::zero()) || !t_near.is_finite() || !t_far.is_finite() || !(t_near < t_far)
        {
            return Err(SamplingError::InvalidConfig(format!(
                "need 0 <= t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        if n_samples == 0 {
            return Err(SamplingError::InvalidConfig(
                "n_samples must be at least 1".into(),
            ));
        }
        Ok(Self {
            t_near,
            t_far,
            n_samples,
            range_scale: T::one(),
        })
    }

    pub fn with_range_scale(mut self, scale: T) -> Result<Self, SamplingError> {
        if !(scale >= T::one()) || !scale.is_finite() {
            return Err(SamplingError::InvalidConfig(format!(
                "range_scale must be >= 1, got {scale}"
            )));
        }
        self.range_scale = scale;
        Ok(self)
    }
}

/// Eq. (1)-(2) sampling window around the surface depth `d`.
///
/// The first sample sits at `S_0 = max(d - alpha, near_clip)`; sample `n`
/// at `S_0 + (n-1) * bin + gamma_n` with `gamma_n` uniform on `[0, bin)`.
/// The bin length is `(d + alpha - S_0) / N`, which is Eq. (2)'s `2 alpha / N`
/// whenever the near clip is inactive and shrinks with the window otherwise,
/// keeping every sample at or below `d + alpha`.
pub fn near_surface_samples<T: Scalar, R: Rng + ?Sized>(
    d: T,
    cfg: &NearSurfaceConfig<T>,
    rng: &mut R,
) -> Result<SampleSet<T>, SamplingError> {
    if cfg.shared_jitter {
        let u: f64 = rng.random_range(0.0..1.0);
        near_surface_samples_with(d, cfg, |_| sc(u))
    } else {
        let mut draws: Vec<f64> = Vec::with_capacity(cfg.n_samples);
        for _ in 0..cfg.n_samples {
            draws.push(rng.random_range(0.0..1.0));
        }
        near_surface_samples_with(d, cfg, |i| sc(draws[i]))
    }
}

/// Deterministic core of [`near_surface_samples`]: `jitter(n)` must return
/// the unit jitter in `[0, 1)` for sample index `n`.
pub fn near_surface_samples_with<T: Scalar>(
    d: T,
    cfg: &NearSurfaceConfig<T>,
    mut jitter: impl FnMut(usize) -> T,
) -> Result<SampleSet<T>, SamplingError> {
    if !(d > T::zero()) || !d.is_finite() {
        return Err(SamplingError::NonPositiveDepth(to_f64(d)));
    }
    let lo = (d - cfg.alpha).max(cfg.near_clip);
    let hi = d + cfg.alpha;
    if !(lo < hi) {
        return Err(SamplingError::EmptyWindow {
            lo: to_f64(lo),
            hi: to_f64(hi),
        });
    }
    let bin = (hi - lo) / sc(cfg.n_samples as f64);
    let mut positions = Vec::with_capacity(cfg.n_samples);
    for n in 0..cfg.n_samples {
        positions.push(lo + sc::<T>(n as f64) * bin + jitter(n) * bin);
    }
    SampleSet::new(positions)
}

/// Stratified baseline: the scaled range is split into `N` equal bins and one
/// sample is drawn uniformly inside each.
pub fn full_range_stratified<T: Scalar, R: Rng + ?Sized>(
    cfg: &FullRangeConfig<T>,
    rng: &mut R,
) -> Result<SampleSet<T>, SamplingError> {
    let mut draws: Vec<f64> = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        draws.push(rng.random_range(0.0..1.0));
    }
    full_range_stratified_with(cfg, |i| sc(draws[i]))
}

/// Deterministic core of [`full_range_stratified`]: `uniform(i)` must return
/// the in-bin coordinate in `[0, 1)` for bin `i`.
pub fn full_range_stratified_with<T: Scalar>(
    cfg: &FullRangeConfig<T>,
    mut uniform: impl FnMut(usize) -> T,
) -> Result<SampleSet<T>, SamplingError> {
    let span = (cfg.t_far - cfg.t_near) * cfg.range_scale;
    let width = span / sc(cfg.n_samples as f64);
    let mut positions = Vec::with_capacity(cfg.n_samples);
    for i in 0..cfg.n_samples {
        positions.push(cfg.t_near + (sc::<T>(i as f64) + uniform(i)) * width);
    }
    SampleSet::new(positions)
}

/// Hierarchical resampling: treats `weights` as a piecewise-constant PDF over
/// the coarse bins, draws `n_fine` stratified uniforms, inverts the CDF
/// piecewise-linearly, and returns the sorted union of coarse and fine
/// positions (deduplicated at [`DEDUP_EPS`]).
///
/// Bin `i` spans `[t_i, t_i + gap_i)` with `gap_i = t_{i+1} - t_i`; the last
/// bin reuses the previous gap (unit width when there is a single coarse
/// sample). All-zero weights fall back to the uniform PDF.
pub fn inverse_cdf_resample<T: Scalar, R: Rng + ?Sized>(
    coarse: &SampleSet<T>,
    weights: &[T],
    n_fine: usize,
    rng: &mut R,
) -> Result<SampleSet<T>, SamplingError> {
    if weights.len() != coarse.len() {
        return Err(SamplingError::LengthMismatch {
            positions: coarse.len(),
            weights: weights.len(),
        });
    }
    if coarse.is_empty() {
        return Err(SamplingError::InvalidConfig(
            "cannot resample an empty coarse set".into(),
        ));
    }
    if n_fine == 0 {
        return Err(SamplingError::InvalidConfig(
            "n_fine must be at least 1".into(),
        ));
    }
    for (i, w) in weights.iter().enumerate() {
        if !w.is_finite() || *w < T::zero() {
            return Err(SamplingError::InvalidConfig(format!(
                "weight {i} is {w}, expected a nonnegative finite value"
            )));
        }
    }

    let n_c = coarse.len();
    let positions = coarse.positions();
    let mut gaps = Vec::with_capacity(n_c);
    for i in 0..n_c {
        gaps.push(if i + 1 < n_c {
            positions[i + 1] - positions[i]
        } else if n_c >= 2 {
            positions[n_c - 1] - positions[n_c - 2]
        } else {
            T::one()
        });
    }

    let total: T = weights.iter().fold(T::zero(), |a, w| a + *w);
    let uniform = T::one();
    let effective = |i: usize| if total > T::zero() { weights[i] } else { uniform };
    let norm = if total > T::zero() {
        total
    } else {
        sc(n_c as f64)
    };

    // Compact CDF over the positive-mass bins; they tile [0, 1] contiguously.
    struct Segment<T> {
        c_lo: T,
        c_hi: T,
        t_lo: T,
        gap: T,
    }
    let mut segments: Vec<Segment<T>> = Vec::new();
    let mut cum = T::zero();
    for i in 0..n_c {
        let p = effective(i) / norm;
        if p > T::zero() {
            segments.push(Segment {
                c_lo: cum,
                c_hi: cum + p,
                t_lo: positions[i],
                gap: gaps[i],
            });
            cum += p;
        }
    }
    debug_assert!(!segments.is_empty());
    segments.last_mut().expect("at least one positive bin").c_hi = T::one();

    let mut merged: Vec<T> = positions.to_vec();
    let mut seg = 0usize;
    for i in 0..n_fine {
        let u: T = (sc::<T>(i as f64) + sc::<T>(rng.random_range(0.0..1.0)))
            / sc(n_fine as f64);
        while seg + 1 < segments.len() && u >= segments[seg].c_hi {
            seg += 1;
        }
        let s = &segments[seg];
        merged.push(s.t_lo + (u - s.c_lo) / (s.c_hi - s.c_lo) * s.gap);
    }

    merged.sort_by(|a, b| a.partial_cmp(b).expect("finite positions"));
    merged.dedup_by(|a, b| *a - *b <= sc(DEDUP_EPS));
    SampleSet::new(merged)
}

/// RNG stream for one ray: `seed` selects the experiment, `ray_index` the
/// stream, so any parallel evaluation order reproduces the same draws.
pub fn ray_rng(seed: u64, ray_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ray_index);
    rng
}
