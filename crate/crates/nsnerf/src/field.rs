//! The radiance field: positional encoding, a small fully-connected network
//! mapping encoded position (and optionally view direction) to density and
//! color, exact reverse-mode gradients, and an ADAM optimizer.
//!
//! Architecture: four ReLU hidden layers of `hidden_width` (default 64), a
//! skip connection feeding the encoded position into the third hidden layer,
//! a softplus density head, and a sigmoid RGB head. With view directions
//! enabled, the encoded direction joins the last hidden activation in one
//! ReLU layer of `view_width` (default 32) before the RGB head.
//!
//! # Checkpoint byte layout
//!
//! `<stem>.bin` is the flat parameter vector as little-endian `f32`, in block
//! order `w1, b1, w2, b2, w3, b3, w4, b4, w_sigma, b_sigma,
//! [w_view, b_view,] w_rgb, b_rgb`; weight matrices are row-major with one
//! row per output unit. `<stem>.json` is the sidecar: the architecture
//! config (including the scene normalization), the training step, the
//! learning rate at save time, and the parameter count.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{sc, to_f64, Scalar};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid field config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in parameter block {block} (flat index {index})")]
    NonFiniteGradient { block: &'static str, index: usize },
    #[error("{what}: expected {expected}, got {got}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
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
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
}

/// Frequency counts for the positional encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub l_pos: u32,
    pub l_dir: u32,
    pub include_input: bool,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            l_pos: 10,
            l_dir: 4,
            include_input: true,
        }
    }
}

/// Maps world coordinates into the `[-1, 1]^3 `cube the encoding expects:
/// `(p - center) / scale` with one isotropic scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneNormalization {
    pub center: [f64; 3],
    pub scale: f64,
}

impl Default for SceneNormalization {
    fn default() -> Self {
        Self {
            center: [0.0; 3],
            scale: 1.0,
        }
    }
}

impl SceneNormalization {
    /// Bounding box of the given points, padded so nothing sits exactly on
    /// the cube boundary.
    pub fn from_points<T: Scalar>(points: impl IntoIterator<Item = Vector3<T>>) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for p in points {
            any = true;
            for c in 0..3 {
                let v = to_f64(p[c]);
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        if !any {
            return Self::default();
        }
        let center = [
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        ];
        let half = (0..3).map(|c| 0.5 * (hi[c] - lo[c])).fold(0.0f64, f64::max);
        Self {
            center,
            scale: (1.05 * half).max(1e-6),
        }
    }

    #[inline]
    pub fn apply<T: Scalar>(&self, p: &Vector3<T>) -> Vector3<T> {
        Vector3::new(
            (p.x - sc(self.center[0])) / sc(self.scale),
            (p.y - sc(self.center[1])) / sc(self.scale),
            (p.z - sc(self.center[2])) / sc(self.scale),
        )
    }
}

/// Network shape and input handling; serialized into checkpoint sidecars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub use_view_dirs: bool,
    pub hidden_width: usize,
    pub view_width: usize,
    pub normalization: SceneNormalization,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            encoding: EncodingConfig::default(),
            use_view_dirs: false,
            hidden_width: 64,
            view_width: 32,
            normalization: SceneNormalization::default(),
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        if self.hidden_width == 0 || self.view_width == 0 {
            return Err(FieldError::InvalidConfig("zero layer width".into()));
        }
        if self.encoding.l_pos > 30 || self.encoding.l_dir > 30 {
            return Err(FieldError::InvalidConfig(
                "encoding frequency count above 30".into(),
            ));
        }
        if encoded_dim(self.encoding.l_pos, self.encoding.include_input) == 0 {
            return Err(FieldError::InvalidConfig(
                "position encoding has dimension 0".into(),
            ));
        }
        Ok(())
    }

    pub fn pos_dim(&self) -> usize {
        encoded_dim(self.encoding.l_pos, self.encoding.include_input)
    }

    pub fn dir_dim(&self) -> usize {
        if self.use_view_dirs {
            encoded_dim(self.encoding.l_dir, self.encoding.include_input)
        } else {
            0
        }
    }
}

/// `3 * (include_input + 2 L)`.
pub fn encoded_dim(l: u32, include_input: bool) -> usize {
    3 * (include_input as usize + 2 * l as usize)
}

/// Writes the encoding of `x` into `out`: the raw components (when
/// configured), then per frequency `k` the three `sin(2^k pi x_c)` followed
/// by the three `cos(2^k pi x_c)`.
pub fn encode_into<T: Scalar>(x: &Vector3<T>, l: u32, include_input: bool, out: &mut [T]) {
    debug_assert_eq!(out.len(), encoded_dim(l, include_input));
    let mut i = 0;
    if include_input {
        for c in 0..3 {
            out[i] = x[c];
            i += 1;
        }
    }
    for k in 0..l {
        let freq: T = sc::<T>((1u64 << k) as f64) * T::pi();
        for c in 0..3 {
            out[i] = (freq * x[c]).sin();
            i += 1;
        }
        for c in 0..3 {
            out[i] = (freq * x[c]).cos();
            i += 1;
        }
    }
}

pub fn encode<T: Scalar>(x: &Vector3<T>, l: u32, include_input: bool) -> Vec<T> {
    let mut out = vec![T::zero(); encoded_dim(l, include_input)];
    encode_into(x, l, include_input, &mut out);
    out
}

/// One named parameter block inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn layout(cfg: &FieldConfig) -> Vec<BlockSpec> {
    let h = cfg.hidden_width;
    let e = cfg.pos_dim();
    let mut blocks = Vec::new();
    let mut offset = 0;
    let mut push = |name, rows, cols| {
        let b = BlockSpec {
            name,
            rows,
            cols,
            offset,
        };
        offset += rows * cols;
        blocks.push(b);
    };
    push("w1", h, e);
    push("b1", h, 1);
    push("w2", h, h);
    push("b2", h, 1);
    push("w3", h, h + e);
    push("b3", h, 1);
    push("w4", h, h);
    push("b4", h, 1);
    push("w_sigma", 1, h);
    push("b_sigma", 1, 1);
    if cfg.use_view_dirs {
        push("w_view", cfg.view_width, h + cfg.dir_dim());
        push("b_view", cfg.view_width, 1);
        push("w_rgb", 3, cfg.view_width);
    } else {
        push("w_rgb", 3, h);
    }
    push("b_rgb", 3, 1);
    blocks
}

/// All network parameters as one flat vector plus the block table.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldParams<T: Scalar> {
    config: FieldConfig,
    blocks: Vec<BlockSpec>,
    data: Vec<T>,
}

impl<T: Scalar> FieldParams<T> {
    pub fn zeros(config: FieldConfig) -> Result<Self, FieldError> {
        config.validate()?;
        let blocks = layout(&config);
        let len = blocks.iter().map(BlockSpec::len).sum();
        Ok(Self {
            config,
            blocks,
            data: vec![T::zero(); len],
        })
    }

    /// Glorot-uniform weights (`+- sqrt(6 / (fan_in + fan_out))`), zero
    /// biases; all draws come from one seeded stream in block order.
    pub fn init(config: FieldConfig, seed: u64) -> Result<Self, FieldError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for b in params.blocks.clone() {
            if b.cols == 1 {
                continue; // bias
            }
            let bound = (6.0 / (b.rows + b.cols) as f64).sqrt();
            for v in &mut params.data[b.offset..b.offset + b.len()] {
                *v = sc(rng.random_range(-bound..bound));
            }
        }
        Ok(params)
    }

    pub fn config(&self) -> &FieldConfig {
        &self.config
    }

    pub fn set_normalization(&mut self, norm: SceneNormalization) {
        self.config.normalization = norm;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn blocks(&self) -> &[BlockSpec] {
        &self.blocks
    }

    /// Name of the block containing flat index `i`.
    pub fn block_name_at(&self, i: usize) -> &'static str {
        self.blocks
            .iter()
            .rev()
            .find(|b| i >= b.offset)
            .map(|b| b.name)
            .unwrap_or("?")
    }

    fn weight(&self, name: &str) -> ArrayView2<'_, T> {
        let b = self
            .blocks
            .iter()
            .find(|b| b.name == name)
            .expect("block exists");
        ArrayView2::from_shape((b.rows, b.cols), &self.data[b.offset..b.offset + b.len()])
            .expect("contiguous block")
    }

    fn bias(&self, name: &str) -> ArrayView1<'_, T> {
        let b = self
            .blocks
            .iter()
            .find(|b| b.name == name)
            .expect("block exists");
        ArrayView1::from_shape(b.rows, &self.data[b.offset..b.offset + b.len()])
            .expect("contiguous block")
    }
}

fn affine<T: Scalar>(x: &ArrayView2<T>, w: &ArrayView2<T>, b: &ArrayView1<T>) -> Array2<T> {
    let mut z = x.dot(&w.t());
    for mut row in z.rows_mut() {
        Zip::from(&mut row).and(b).for_each(|z, b| *z += *b);
    }
    z
}

fn relu<T: Scalar>(z: &Array2<T>) -> Array2<T> {
    z.mapv(|v| v.max(T::zero()))
}

/// Zeroes `d` where the pre-activation was not positive.
fn relu_backward<T: Scalar>(d: &mut Array2<T>, z: &Array2<T>) {
    Zip::from(d).and(z).for_each(|d, z| {
        if !(*z > T::zero()) {
            *d = T::zero();
        }
    });
}

/// Numerically stable `ln(1 + exp(x))`.
fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache<T: Scalar> {
    x_enc: Array2<T>,
    z1: Array2<T>,
    a1: Array2<T>,
    z2: Array2<T>,
    x3: Array2<T>,
    z3: Array2<T>,
    a3: Array2<T>,
    z4: Array2<T>,
    a4: Array2<T>,
    x_view: Option<Array2<T>>,
    z_view: Option<Array2<T>>,
    a_view: Option<Array2<T>>,
    /// sigma = softplus(z_sigma); d sigma / d z = 1 - exp(-sigma).
    pub sigma: Array1<T>,
    /// rgb = sigmoid(z_rgb); d rgb / d z = rgb (1 - rgb).
    pub rgb: Array2<T>,
}

/// Batch evaluation of the field at world-space `positions` (rows), with
/// optional unit view directions. Returns the cache consumed by
/// [`backward_batch`].
pub fn forward_batch<T: Scalar>(
    params: &FieldParams<T>,
    positions: &[Vector3<T>],
    dirs: Option<&[Vector3<T>]>,
) -> Result<ForwardCache<T>, FieldError> {
    let cfg = &params.config;
    match (cfg.use_view_dirs, dirs) {
        (true, None) => {
            return Err(FieldError::ShapeMismatch {
                what: "view directions (config expects them)",
                expected: positions.len(),
                got: 0,
            })
        }
        (false, Some(_)) => {
            return Err(FieldError::ShapeMismatch {
                what: "view directions (config has no view branch)",
                expected: 0,
                got: dirs.map_or(0, <[Vector3<T>]>::len),
            })
        }
        (true, Some(d)) if d.len() != positions.len() => {
            return Err(FieldError::ShapeMismatch {
                what: "view directions",
                expected: positions.len(),
                got: d.len(),
            })
        }
        _ => {}
    }

    let b = positions.len();
    let e = cfg.pos_dim();
    let enc = &cfg.encoding;
    let mut x_enc = Array2::zeros((b, e));
    for (i, p) in positions.iter().enumerate() {
        let n = cfg.normalization.apply(p);
        encode_into(
            &n,
            enc.l_pos,
            enc.include_input,
            x_enc.row_mut(i).as_slice_mut().expect("row-major"),
        );
    }

    let z1 = affine(&x_enc.view(), &params.weight("w1"), &params.bias("b1"));
    let a1 = relu(&z1);
    let z2 = affine(&a1.view(), &params.weight("w2"), &params.bias("b2"));
    let a2 = relu(&z2);

    let h = cfg.hidden_width;
    let mut x3 = Array2::zeros((b, h + e));
    x3.slice_mut(ndarray::s![.., ..h]).assign(&a2);
    x3.slice_mut(ndarray::s![.., h..]).assign(&x_enc);
    let z3 = affine(&x3.view(), &params.weight("w3"), &params.bias("b3"));
    let a3 = relu(&z3);
    let z4 = affine(&a3.view(), &params.weight("w4"), &params.bias("b4"));
    let a4 = relu(&z4);

    let z_sigma = affine(&a4.view(), &params.weight("w_sigma"), &params.bias("b_sigma"));
    let sigma = z_sigma.column(0).mapv(softplus);

    let (x_view, z_view, a_view, z_rgb) = if cfg.use_view_dirs {
        let dirs = dirs.expect("checked above");
        let dd = cfg.dir_dim();
        let mut xv = Array2::zeros((b, h + dd));
        xv.slice_mut(ndarray::s![.., ..h]).assign(&a4);
        for (i, d) in dirs.iter().enumerate() {
            encode_into(
                d,
                enc.l_dir,
                enc.include_input,
                xv.slice_mut(ndarray::s![i, h..])
                    .into_slice()
                    .expect("row-major"),
            );
        }
        let zv = affine(&xv.view(), &params.weight("w_view"), &params.bias("b_view"));
        let av = relu(&zv);
        let z_rgb = affine(&av.view(), &params.weight("w_rgb"), &params.bias("b_rgb"));
        (Some(xv), Some(zv), Some(av), z_rgb)
    } else {
        let z_rgb = affine(&a4.view(), &params.weight("w_rgb"), &params.bias("b_rgb"));
        (None, None, None, z_rgb)
    };
    let rgb = z_rgb.mapv(sigmoid);

    Ok(ForwardCache {
        x_enc,
        z1,
        a1,
        z2,
        x3,
        z3,
        a3,
        z4,
        a4,
        x_view,
        z_view,
        a_view,
        sigma,
        rgb,
    })
}

/// Single-point convenience wrapper over [`forward_batch`].
pub fn field_forward<T: Scalar>(
    params: &FieldParams<T>,
    pos: &Vector3<T>,
    dir: Option<&Vector3<T>>,
) -> Result<(T, [T; 3]), FieldError> {
    let dirs_buf;
    let dirs = match dir {
        Some(d) => {
            dirs_buf = [*d];
            Some(&dirs_buf[..])
        }
        None => None,
    };
    let cache = forward_batch(params, &[*pos], dirs)?;
    Ok((
        cache.sigma[0],
        [cache.rgb[(0, 0)], cache.rgb[(0, 1)], cache.rgb[(0, 2)]],
    ))
}

fn scatter<T: Scalar>(grads: &mut [T], blocks: &[BlockSpec], name: &str, values: &Array2<T>) {
    let b = blocks.iter().find(|b| b.name == name).expect("block exists");
    debug_assert_eq!(values.len(), b.len());
    let dst = &mut grads[b.offset..b.offset + b.len()];
    for (d, v) in dst.iter_mut().zip(values.iter()) {
        *d = *v;
    }
}

fn scatter1<T: Scalar>(grads: &mut [T], blocks: &[BlockSpec], name: &str, values: &Array1<T>) {
    let b = blocks.iter().find(|b| b.name == name).expect("block exists");
    debug_assert_eq!(values.len(), b.len());
    let dst = &mut grads[b.offset..b.offset + b.len()];
    for (d, v) in dst.iter_mut().zip(values.iter()) {
        *d = *v;
    }
}

/// Exact gradient of `sum_i d_sigma[i] * sigma_i + sum_ic d_rgb[i][c] *
/// rgb_ic` with respect to every parameter, as a flat vector in block order.
pub fn backward_batch<T: Scalar>(
    params: &FieldParams<T>,
    cache: &ForwardCache<T>,
    d_sigma: &Array1<T>,
    d_rgb: &Array2<T>,
) -> Result<Vec<T>, FieldError> {
    let b = cache.sigma.len();
    if d_sigma.len() != b {
        return Err(FieldError::ShapeMismatch {
            what: "d_sigma",
            expected: b,
            got: d_sigma.len(),
        });
    }
    if d_rgb.dim() != (b, 3) {
        return Err(FieldError::ShapeMismatch {
            what: "d_rgb rows",
            expected: b,
            got: d_rgb.dim().0,
        });
    }

    let cfg = &params.config;
    let h = cfg.hidden_width;
    let mut grads = vec![T::zero(); params.len()];
    let blocks = &params.blocks;

    // Heads.
    let mut dz_rgb = d_rgb.clone();
    Zip::from(&mut dz_rgb).and(&cache.rgb).for_each(|d, s| {
        *d *= *s * (T::one() - *s);
    });
    let dz_sigma = Zip::from(d_sigma)
        .and(&cache.sigma)
        .map_collect(|d, s| *d * (T::one() - (-*s).exp()));

    let mut da4 = {
        // Density head contribution to a4.
        let w_sigma = params.weight("w_sigma");
        let dz = dz_sigma.view().insert_axis(Axis(1));
        let dz2: ArrayView2<T> = dz.view();
        scatter(&mut grads, blocks, "w_sigma", &dz2.t().dot(&cache.a4));
        scatter1(
            &mut grads,
            blocks,
            "b_sigma",
            &Array1::from_elem(1, dz_sigma.sum()),
        );
        dz2.dot(&w_sigma)
    };

    if cfg.use_view_dirs {
        let a_view = cache.a_view.as_ref().expect("view cache");
        let x_view = cache.x_view.as_ref().expect("view cache");
        let z_view = cache.z_view.as_ref().expect("view cache");
        scatter(&mut grads, blocks, "w_rgb", &dz_rgb.t().dot(a_view));
        scatter1(&mut grads, blocks, "b_rgb", &dz_rgb.sum_axis(Axis(0)));
        let mut dz_view = dz_rgb.dot(&params.weight("w_rgb"));
        relu_backward(&mut dz_view, z_view);
        scatter(&mut grads, blocks, "w_view", &dz_view.t().dot(x_view));
        scatter1(&mut grads, blocks, "b_view", &dz_view.sum_axis(Axis(0)));
        let dx_view = dz_view.dot(&params.weight("w_view"));
        da4 += &dx_view.slice(ndarray::s![.., ..h]);
    } else {
        scatter(&mut grads, blocks, "w_rgb", &dz_rgb.t().dot(&cache.a4));
        scatter1(&mut grads, blocks, "b_rgb", &dz_rgb.sum_axis(Axis(0)));
        da4 += &dz_rgb.dot(&params.weight("w_rgb"));
    }

    let mut dz4 = da4;
    relu_backward(&mut dz4, &cache.z4);
    scatter(&mut grads, blocks, "w4", &dz4.t().dot(&cache.a3));
    scatter1(&mut grads, blocks, "b4", &dz4.sum_axis(Axis(0)));

    let mut dz3 = dz4.dot(&params.weight("w4"));
    relu_backward(&mut dz3, &cache.z3);
    scatter(&mut grads, blocks, "w3", &dz3.t().dot(&cache.x3));
    scatter1(&mut grads, blocks, "b3", &dz3.sum_axis(Axis(0)));

    let dx3 = dz3.dot(&params.weight("w3"));
    let mut dz2 = dx3.slice(ndarray::s![.., ..h]).to_owned();
    relu_backward(&mut dz2, &cache.z2);
    scatter(&mut grads, blocks, "w2", &dz2.t().dot(&cache.a1));
    scatter1(&mut grads, blocks, "b2", &dz2.sum_axis(Axis(0)));

    let mut dz1 = dz2.dot(&params.weight("w2"));
    relu_backward(&mut dz1, &cache.z1);
    scatter(&mut grads, blocks, "w1", &dz1.t().dot(&cache.x_enc));
    scatter1(&mut grads, blocks, "b1", &dz1.sum_axis(Axis(0)));

    Ok(grads)
}

/// Base rate until `drop_step` training steps are done, the dropped rate
/// afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    pub drop_step: u64,
    pub dropped: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        Self {
            base: lr,
            drop_step: u64::MAX,
            dropped: lr,
        }
    }

    /// Rate applied at training step `step` (1-based).
    pub fn at(&self, step: u64) -> f64 {
        if step > self.drop_step {
            self.dropped
        } else {
            self.base
        }
    }
}

/// ADAM accumulators (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    m: Vec<T>,
    v: Vec<T>,
    step: u64,
    pub schedule: LrSchedule,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl<T: Scalar> AdamState<T> {
    pub fn new(param_count: usize, schedule: LrSchedule) -> Self {
        Self {
            m: vec![T::zero(); param_count],
            v: vec![T::zero(); param_count],
            step: 0,
            schedule,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn current_lr(&self) -> f64 {
        self.schedule.at(self.step.max(1))
    }
}

/// In-place ADAM update over a raw parameter slice. Returns the index of the
/// first non-finite gradient, if any (the slice is untouched then).
pub fn adam_update<T: Scalar>(
    state: &mut AdamState<T>,
    data: &mut [T],
    grads: &[T],
) -> Result<(), usize> {
    assert_eq!(data.len(), grads.len());
    assert_eq!(data.len(), state.m.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(bad);
    }
    let t = state.step + 1;
    let lr: T = sc(state.schedule.at(t));
    let b1: T = sc(ADAM_BETA1);
    let b2: T = sc(ADAM_BETA2);
    let eps: T = sc(ADAM_EPS);
    let corr1: T = sc(1.0 - ADAM_BETA1.powi(t as i32));
    let corr2: T = sc(1.0 - ADAM_BETA2.powi(t as i32));
    for i in 0..data.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
        state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
        let m_hat = state.m[i] / corr1;
        let v_hat = state.v[i] / corr2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    state.step = t;
    Ok(())
}

/// ADAM step over the field parameters; a non-finite gradient aborts with
/// the offending parameter block named.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut FieldParams<T>,
    grads: &[T],
) -> Result<(), FieldError> {
    if grads.len() != params.len() {
        return Err(FieldError::ShapeMismatch {
            what: "gradient vector",
            expected: params.len(),
            got: grads.len(),
        });
    }
    let mut data = std::mem::take(&mut params.data);
    let result = adam_update(state, &mut data, grads);
    params.data = data;
    result.map_err(|index| FieldError::NonFiniteGradient {
        block: params.block_name_at(index),
        index,
    })
}

/// Checkpoint sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: FieldConfig,
    pub step: u64,
    pub lr: f64,
    pub param_count: usize,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> FieldError + '_ {
    move |source| FieldError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `<stem>.bin` and `<stem>.json`; see the module docs for the byte
/// layout.
pub fn save_checkpoint<T: Scalar>(
    params: &FieldParams<T>,
    step: u64,
    lr: f64,
    stem: &Path,
) -> Result<(), FieldError> {
    let bin_path = stem.with_extension("bin");
    let mut bytes = Vec::with_capacity(params.len() * 4);
    for v in &params.data {
        bytes.extend_from_slice(&(to_f64(*v) as f32).to_le_bytes());
    }
    fs::write(&bin_path, bytes).map_err(io_err(&bin_path))?;

    let meta = CheckpointMeta {
        config: params.config.clone(),
        step,
        lr,
        param_count: params.len(),
    };
    let json_path = stem.with_extension("json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&json_path, text).map_err(io_err(&json_path))
}

/// Loads a checkpoint pair written by [`save_checkpoint`].
pub fn load_checkpoint<T: Scalar>(stem: &Path) -> Result<(FieldParams<T>, CheckpointMeta), FieldError> {
    let json_path = stem.with_extension("json");
    let text = fs::read_to_string(&json_path).map_err(io_err(&json_path))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|source| FieldError::Json {
        path: json_path.clone(),
        source,
    })?;

    let mut params = FieldParams::zeros(meta.config.clone())?;
    if params.len() != meta.param_count {
        return Err(FieldError::BadCheckpoint(format!(
            "sidecar says {} parameters but the architecture needs {}",
            meta.param_count,
            params.len()
        )));
    }
    let bin_path = stem.with_extension("bin");
    let bytes = fs::read(&bin_path).map_err(io_err(&bin_path))?;
    if bytes.len() != 4 * meta.param_count {
        return Err(FieldError::BadCheckpoint(format!(
            "{} holds {} bytes, expected {}",
            bin_path.display(),
            bytes.len(),
            4 * meta.param_count
        )));
    }
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
        if !v.is_finite() {
            return Err(FieldError::BadCheckpoint(format!(
                "non-finite parameter at index {i}"
            )));
        }
        params.data[i] = sc(v as f64);
    }
    Ok((params, meta))
}
