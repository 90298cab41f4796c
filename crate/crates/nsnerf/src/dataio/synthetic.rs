//! Analytic test scenes: ray-traced spheres and boxes with Lambertian
//! shading and exact ground-truth depth.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ColorImage, DataError, Dataset, DepthImage, Frame};
use crate::geom::{pixel_ray, CameraIntrinsics, Pose, Ray};
use crate::scalar::{sc, Scalar};

/// Smallest depth a noisy measurement can take; keeps hits distinct from
/// the zero hole/background encoding.
const MIN_POSITIVE_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SphereSpec {
    pub center: [f64; 3],
    pub radius: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub albedo: [f64; 3],
}

/// Scene description for [`render_synthetic`].
///
/// `light_dir` points from the surface toward the light; with the +y-down
/// world convention an overhead light has a negative y component.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneSpec {
    #[serde(default)]
    pub spheres: Vec<SphereSpec>,
    #[serde(default)]
    pub boxes: Vec<BoxSpec>,
    pub light_dir: [f64; 3],
    pub ambient: f64,
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.spheres.is_empty() && self.boxes.is_empty() {
            return Err(DataError::Invalid("scene has no primitives".into()));
        }
        for s in &self.spheres {
            if !(s.radius > 0.0) {
                return Err(DataError::Invalid(format!(
                    "sphere radius must be positive, got {}",
                    s.radius
                )));
            }
        }
        for b in &self.boxes {
            for a in 0..3 {
                if !(b.min[a] < b.max[a]) {
                    return Err(DataError::Invalid(format!(
                        "box min {:?} not strictly below max {:?}",
                        b.min, b.max
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(DataError::Invalid(format!(
                "ambient {} outside [0, 1]",
                self.ambient
            )));
        }
        let l = Vector3::from(self.light_dir).norm();
        if !(l > 1e-9) || !l.is_finite() {
            return Err(DataError::Invalid("light direction has no usable norm".into()));
        }
        Ok(())
    }

    /// Single unit sphere at the origin.
    pub fn sphere() -> Self {
        Self {
            spheres: vec![SphereSpec {
                center: [0.0, 0.0, 0.0],
                radius: 1.0,
                albedo: [0.8, 0.3, 0.25],
            }],
            boxes: vec![],
            light_dir: [-0.3, -0.8, -0.53],
            ambient: 0.25,
        }
    }

    /// Single axis-aligned cube, side 1.6, centered at the origin.
    pub fn cube() -> Self {
        Self {
            spheres: vec![],
            boxes: vec![BoxSpec {
                min: [-0.8, -0.8, -0.8],
                max: [0.8, 0.8, 0.8],
                albedo: [0.3, 0.55, 0.8],
            }],
            light_dir: [-0.3, -0.8, -0.53],
            ambient: 0.25,
        }
    }

    /// Two spheres resting near a floor slab; the default experiment scene.
    pub fn desk() -> Self {
        Self {
            spheres: vec![
                SphereSpec {
                    center: [0.0, 0.0, 0.0],
                    radius: 1.0,
                    albedo: [0.85, 0.3, 0.25],
                },
                SphereSpec {
                    center: [1.4, 0.55, 0.7],
                    radius: 0.45,
                    albedo: [0.2, 0.45, 0.9],
                },
            ],
            boxes: vec![BoxSpec {
                min: [-2.2, 1.0, -2.2],
                max: [2.2, 1.4, 2.2],
                albedo: [0.55, 0.55, 0.5],
            }],
            light_dir: [-0.3, -0.8, -0.53],
            ambient: 0.25,
        }
    }
}

struct Hit<T: Scalar> {
    t: T,
    normal: Vector3<T>,
    albedo: [T; 3],
}

fn intersect_sphere<T: Scalar>(ray: &Ray<T>, s: &SphereSpec) -> Option<(T, Vector3<T>)> {
    let center = Vector3::from(s.center).map(sc::<T>);
    let radius = sc::<T>(s.radius);
    let oc = ray.origin - center;
    let b = ray.direction.dot(&oc);
    let disc = b * b - (oc.norm_squared() - radius * radius);
    if disc < T::zero() {
        return None;
    }
    let sqrt_disc = disc.sqrt();
    let eps = sc::<T>(1e-9);
    let t = if -b - sqrt_disc > eps {
        -b - sqrt_disc
    } else if -b + sqrt_disc > eps {
        -b + sqrt_disc
    } else {
        return None;
    };
    let normal = (ray.point_at(t) - center) / radius;
    Some((t, normal))
}

fn intersect_box<T: Scalar>(ray: &Ray<T>, b: &BoxSpec) -> Option<(T, Vector3<T>)> {
    let mut t_enter = sc::<T>(f64::NEG_INFINITY);
    let mut t_exit = sc::<T>(f64::INFINITY);
    let mut enter_axis = 0usize;
    for a in 0..3 {
        let lo = (sc::<T>(b.min[a]) - ray.origin[a]) / ray.direction[a];
        let hi = (sc::<T>(b.max[a]) - ray.origin[a]) / ray.direction[a];
        let (near, far) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        if near > t_enter {
            t_enter = near;
            enter_axis = a;
        }
        t_exit = t_exit.min(far);
        if t_enter > t_exit {
            return None;
        }
    }
    if !(t_enter > sc(1e-9)) {
        return None;
    }
    let mut normal = Vector3::zeros();
    normal[enter_axis] = if ray.direction[enter_axis] > T::zero() {
        -T::one()
    } else {
        T::one()
    };
    Some((t_enter, normal))
}

fn trace<T: Scalar>(spec: &SyntheticSceneSpec, ray: &Ray<T>) -> Option<Hit<T>> {
    let mut best: Option<Hit<T>> = None;
    let mut consider = |t: T, normal: Vector3<T>, albedo: [f64; 3]| {
        if best.as_ref().map_or(true, |h| t < h.t) {
            best = Some(Hit {
                t,
                normal,
                albedo: albedo.map(sc::<T>),
            });
        }
    };
    for s in &spec.spheres {
        if let Some((t, n)) = intersect_sphere(ray, s) {
            consider(t, n, s.albedo);
        }
    }
    for b in &spec.boxes {
        if let Some((t, n)) = intersect_box(ray, b) {
            consider(t, n, b.albedo);
        }
    }
    best
}

/// Ray-traces the scene from one pose.
///
/// Color is Lambertian with an ambient floor; depth is the exact first-hit
/// ray distance, optionally perturbed by clamped Gaussian noise (drawn in
/// row-major order over hit pixels only). Background pixels get color
/// `(0,0,0)`, depth `0`, and a `true` mask entry.
pub fn render_synthetic<T: Scalar>(
    spec: &SyntheticSceneSpec,
    intr: &CameraIntrinsics<T>,
    pose: &Pose<T>,
    depth_noise_sigma: f64,
    rng_seed: u64,
) -> Result<(ColorImage<T>, DepthImage<T>, Vec<bool>), DataError> {
    spec.validate()?;
    if !(depth_noise_sigma >= 0.0) {
        return Err(DataError::Invalid(format!(
            "depth noise sigma must be nonnegative, got {depth_noise_sigma}"
        )));
    }
    let light = Vector3::from(spec.light_dir).normalize().map(sc::<T>);
    let ambient = sc::<T>(spec.ambient);
    let noise = if depth_noise_sigma > 0.0 {
        Some(Normal::new(0.0, depth_noise_sigma).expect("validated sigma"))
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    let (w, h) = (intr.width, intr.height);
    let mut color = ColorImage::new(w, h);
    let mut depth = DepthImage::new(w, h);
    let mut mask = vec![true; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let ray = pixel_ray(intr, pose, x, y).expect("pixel in bounds");
            let Some(hit) = trace(spec, &ray) else {
                continue;
            };
            let diffuse = hit.normal.dot(&light).max(T::zero());
            let shade = ambient + (T::one() - ambient) * diffuse;
            color.set(x, y, hit.albedo.map(|a| a * shade));
            let measured = match &noise {
                Some(n) => (hit.t + sc(n.sample(&mut rng))).max(sc(MIN_POSITIVE_DEPTH)),
                None => hit.t,
            };
            depth.set(x, y, measured);
            mask[(y * w + x) as usize] = false;
        }
    }
    Ok((color, depth, mask))
}

/// Pose on a horizontal ring of the given radius and world-y height,
/// looking at `target`.
pub fn orbit_pose<T: Scalar>(
    radius: f64,
    y: f64,
    angle: f64,
    target: Vector3<T>,
) -> Result<Pose<T>, crate::geom::GeomError> {
    let eye = target
        + Vector3::new(
            sc::<T>(radius * angle.cos()),
            sc::<T>(y),
            sc::<T>(radius * angle.sin()),
        );
    Pose::look_at(eye, target, Vector3::new(T::zero(), T::one(), T::zero()))
}

/// Evenly spaced ring poses; `phase` in `[0, 1)` rotates the whole ring by
/// that fraction of one angular step (used to interleave test views between
/// training views).
pub fn ring_poses<T: Scalar>(
    n: usize,
    radius: f64,
    y: f64,
    phase: f64,
    target: Vector3<T>,
) -> Vec<Pose<T>> {
    (0..n)
        .map(|k| {
            let angle = std::f64::consts::TAU * (k as f64 + phase) / n as f64;
            orbit_pose(radius, y, angle, target).expect("ring pose is always valid")
        })
        .collect()
}

/// Renders a dataset from a pose list; frame `i` uses `rng_seed + i`.
pub fn build_dataset<T: Scalar>(
    spec: &SyntheticSceneSpec,
    intr: CameraIntrinsics<T>,
    poses: &[Pose<T>],
    depth_noise_sigma: f64,
    rng_seed: u64,
    depth_scale: f64,
) -> Result<Dataset<T>, DataError> {
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let (color, depth, _mask) = render_synthetic(
            spec,
            &intr,
            pose,
            depth_noise_sigma,
            rng_seed.wrapping_add(i as u64),
        )?;
        frames.push(Frame::new(pose.clone(), color, depth)?);
    }
    Dataset::new(intr, frames, depth_scale)
}
