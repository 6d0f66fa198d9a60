//! Pinhole rendering of depth, semantic and alpha maps.
//!
//! [`splat_render`] rasterizes a [`GaussianCloud`] with tile-binned,
//! front-to-back alpha compositing. [`raymarch_render`] integrates the true
//! superquadric density along each pixel ray and serves as its oracle.
//!
//! Camera frame: x right, y down, z forward. Pixel `(i, j)` is sampled at
//! `(i + 0.5, j + 0.5)`. Depth is camera-space z.

use nalgebra::{Isometry3, Matrix2, Matrix2x3, Matrix3, Rotation3, Translation3, Vector2};
use rayon::prelude::*;

use crate::sq::{inside_outside_unit, ratio_bound};
use crate::{Error, Gaussian3D, GaussianCloud, Quat, Result, Scene, SuperQuadric, Vec3};

pub const TILE_SIZE: usize = 16;
/// Added to the diagonal of every projected covariance, in px^2.
pub const COV2D_FLOOR: f64 = 0.3;
pub const MAX_ALPHA: f64 = 0.999;
pub const MIN_TRANSMITTANCE: f64 = 1e-4;
/// Splat footprint half-width in standard deviations.
const FOOTPRINT_SIGMAS: f64 = 3.0;
/// Margin around the image, as a fraction of its size, beyond which splat
/// centres are culled.
const GUARD_BAND: f64 = 0.3;
/// Inside-outside value beyond which the ray marcher ignores a primitive.
/// The skipped density is at most `opacity * exp(-16)` per metre.
const MARCH_F_CUTOFF: f64 = 16.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub world_to_camera: Isometry3<f64>,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        world_to_camera: Isometry3<f64>,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy, width, height, world_to_camera, near, far };
        cam.validate()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`, `up` roughly opposite to image y.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3,
        target: Vec3,
        up: Vec3,
        fx: f64,
        fy: f64,
        width: usize,
        height: usize,
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let forward = target - eye;
        let right = forward.cross(&up);
        if forward.norm() < 1e-12 || right.norm() < 1e-12 {
            return Err(Error::InvalidConfig("degenerate look-at frame".into()));
        }
        let z = forward.normalize();
        let x = right.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = Quat::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        let t = -(rot * eye);
        Self::new(
            fx,
            fy,
            width as f64 / 2.0,
            height as f64 / 2.0,
            width,
            height,
            Isometry3::from_parts(Translation3::from(t), rot),
            near,
            far,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far].iter().all(|v| v.is_finite());
        if !finite || !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig("camera focal lengths must be positive and finite".into()));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::InvalidConfig(format!(
                "camera clip range must satisfy 0 < near < far, got ({}, {})",
                self.near, self.far
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig("camera image must be non-empty".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// World position of the optical centre.
    pub fn center(&self) -> Vec3 {
        self.world_to_camera.inverse_transform_point(&Vec3::zeros().into()).coords
    }

    /// Same view at `factor` times the pixel density.
    pub fn scaled(&self, factor: usize) -> Self {
        let f = factor as f64;
        Self {
            fx: self.fx * f,
            fy: self.fy * f,
            cx: self.cx * f,
            cy: self.cy * f,
            width: self.width * factor,
            height: self.height * factor,
            ..self.clone()
        }
    }

    /// Camera-space ray direction through a pixel centre, with unit z.
    fn pixel_dir(&self, px: usize, py: usize) -> Vec3 {
        Vec3::new((px as f64 + 0.5 - self.cx) / self.fx, (py as f64 + 0.5 - self.cy) / self.fy, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    /// Minimum accumulated alpha for a pixel to receive a class.
    pub alpha_threshold: f64,
    pub keep_class_weights: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { alpha_threshold: 0.5, keep_class_weights: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// Expected camera-space depth; 0 where nothing was composited.
    pub depth: Vec<f32>,
    pub semantic: Vec<u16>,
    pub alpha: Vec<f32>,
    /// `num_classes` weights per pixel, row-major, when requested.
    pub class_weights: Option<Vec<f32>>,
    pub num_classes: usize,
    pub free_index: u16,
}

impl RenderOutput {
    fn blank(cam: &Camera, num_classes: usize, free_index: u16, keep: bool) -> Self {
        let n = cam.pixel_count();
        Self {
            width: cam.width,
            height: cam.height,
            depth: vec![0.0; n],
            semantic: vec![free_index; n],
            alpha: vec![0.0; n],
            class_weights: keep.then(|| vec![0.0; n * num_classes]),
            num_classes,
            free_index,
        }
    }

    fn store(&mut self, pixel: usize, acc: &PixelAccum, threshold: f64) {
        self.alpha[pixel] = acc.alpha as f32;
        self.depth[pixel] = acc.expected_depth() as f32;
        if acc.alpha >= threshold && !acc.class_weights.is_empty() {
            self.semantic[pixel] = argmax(&acc.class_weights) as u16;
        }
        if let Some(cw) = &mut self.class_weights {
            let c = self.num_classes;
            for (dst, src) in cw[pixel * c..(pixel + 1) * c].iter_mut().zip(&acc.class_weights) {
                *dst = *src as f32;
            }
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Front-to-back compositing state of one pixel.
#[derive(Debug, Clone)]
pub(crate) struct PixelAccum {
    pub transmittance: f64,
    /// Sum of compositing weights `T_i * alpha_i`.
    pub alpha: f64,
    pub depth_sum: f64,
    pub class_weights: Vec<f64>,
}

impl PixelAccum {
    fn new(num_classes: usize) -> Self {
        Self { transmittance: 1.0, alpha: 0.0, depth_sum: 0.0, class_weights: vec![0.0; num_classes] }
    }

    /// Composites one sample; returns `false` once the pixel is saturated.
    #[inline]
    fn push(&mut self, alpha: f64, depth: f64, classes: &[f64]) -> bool {
        let w = self.transmittance * alpha;
        self.alpha += w;
        self.depth_sum += w * depth;
        for (acc, c) in self.class_weights.iter_mut().zip(classes) {
            *acc += w * c;
        }
        self.transmittance *= 1.0 - alpha;
        self.transmittance >= MIN_TRANSMITTANCE
    }

    fn expected_depth(&self) -> f64 {
        if self.alpha > 1e-6 {
            self.depth_sum / self.alpha
        } else {
            0.0
        }
    }
}

/// A Gaussian projected to the image plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat2D {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    /// Inverse of `cov`.
    pub conic: Matrix2<f64>,
    pub depth: f64,
    /// Footprint half-width in pixels.
    pub radius: f64,
}

/// Perspective projection of a Gaussian; `None` when culled.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera) -> Option<Splat2D> {
    let p = cam.world_to_camera.transform_point(&g.mean.into());
    let z = p.z;
    if !(z > cam.near && z < cam.far) {
        return None;
    }
    let u = cam.fx * p.x / z + cam.cx;
    let v = cam.fy * p.y / z + cam.cy;
    let (w, h) = (cam.width as f64, cam.height as f64);
    if u < -GUARD_BAND * w || u > (1.0 + GUARD_BAND) * w || v < -GUARD_BAND * h || v > (1.0 + GUARD_BAND) * h {
        return None;
    }
    let rot = cam.world_to_camera.rotation.to_rotation_matrix().into_inner();
    let cov_cam = rot * g.covariance() * rot.transpose();
    let jac = Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * p.x / (z * z), 0.0, cam.fy / z, -cam.fy * p.y / (z * z));
    let cov = jac * cov_cam * jac.transpose() + Matrix2::identity() * COV2D_FLOOR;
    let conic = cov.try_inverse()?;
    let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
    let det = cov.determinant();
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    let radius = FOOTPRINT_SIGMAS * lambda_max.sqrt();
    if u + radius < 0.0 || u - radius > w || v + radius < 0.0 || v - radius > h {
        return None;
    }
    Some(Splat2D { mean: Vector2::new(u, v), cov, conic, depth: z, radius })
}

/// Tile-binned splat rasterization of a Gaussian cloud.
pub fn splat_render(cloud: &GaussianCloud, cam: &Camera, opts: &RenderOptions) -> Result<RenderOutput> {
    cam.validate()?;
    let c = cloud.classes.len();
    let mut out = RenderOutput::blank(cam, c, cloud.classes.free_index(), opts.keep_class_weights);

    let mut splats: Vec<(usize, Splat2D)> =
        cloud.gaussians.par_iter().enumerate().filter_map(|(i, g)| project_gaussian(g, cam).map(|s| (i, s))).collect();
    splats.sort_by(|a, b| a.1.depth.total_cmp(&b.1.depth).then(a.0.cmp(&b.0)));

    let tiles_x = cam.width.div_ceil(TILE_SIZE);
    let tiles_y = cam.height.div_ceil(TILE_SIZE);
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    let ts = TILE_SIZE as f64;
    for (k, (_, s)) in splats.iter().enumerate() {
        let tx0 = ((s.mean.x - s.radius) / ts).floor().max(0.0) as usize;
        let ty0 = ((s.mean.y - s.radius) / ts).floor().max(0.0) as usize;
        let tx1 = (((s.mean.x + s.radius) / ts).floor() as usize).min(tiles_x - 1);
        let ty1 = (((s.mean.y + s.radius) / ts).floor() as usize).min(tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(k as u32);
            }
        }
    }

    let tiles: Vec<Vec<(usize, PixelAccum)>> = bins
        .par_iter()
        .enumerate()
        .map(|(tile, bin)| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let mut pixels = Vec::with_capacity(TILE_SIZE * TILE_SIZE);
            for py in ty * TILE_SIZE..((ty + 1) * TILE_SIZE).min(cam.height) {
                for px in tx * TILE_SIZE..((tx + 1) * TILE_SIZE).min(cam.width) {
                    let centre = Vector2::new(px as f64 + 0.5, py as f64 + 0.5);
                    let mut acc = PixelAccum::new(c);
                    for &k in bin {
                        let (gi, s) = &splats[k as usize];
                        let d = centre - s.mean;
                        let power = -0.5 * (d.transpose() * s.conic * d)[0];
                        let g = &cloud.gaussians[*gi];
                        let alpha = (g.opacity * power.exp()).min(MAX_ALPHA);
                        if !(alpha > 0.0) {
                            continue;
                        }
                        if !acc.push(alpha, s.depth, &g.logits) {
                            break;
                        }
                    }
                    pixels.push((py * cam.width + px, acc));
                }
            }
            pixels
        })
        .collect();

    for (pixel, acc) in tiles.iter().flatten() {
        out.store(*pixel, acc, opts.alpha_threshold);
    }
    Ok(out)
}

/// Ray-marched rendering of the true superquadric density
/// `D(x) = sum_i sigma_i exp(-f_i(x))`, with per-step alpha `1 - exp(-D step)`
/// and class weights `sum_i exp(-f_i(x)) c_i`.
pub fn raymarch_render(scene: &Scene, cam: &Camera, step: f64, opts: &RenderOptions) -> Result<RenderOutput> {
    cam.validate()?;
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidConfig(format!("ray-march step must be positive, got {step}")));
    }
    let c = scene.classes.len();
    let mut out = RenderOutput::blank(cam, c, scene.classes.free_index(), opts.keep_class_weights);

    struct Bounded<'a> {
        sq: &'a SuperQuadric,
        to_local: Matrix3<f64>,
        inv_scale: Vec3,
        half_width: f64,
    }
    let prims: Vec<Bounded> = scene
        .primitives
        .iter()
        .filter(|sq| sq.opacity > 0.0)
        .map(|sq| Bounded {
            sq,
            to_local: sq.world_to_local(),
            inv_scale: sq.scale.map(|s| 1.0 / s),
            half_width: ratio_bound(MARCH_F_CUTOFF, sq.eps1),
        })
        .collect();

    let origin = cam.center();
    let cam_to_world = cam.world_to_camera.rotation.inverse();

    let rows: Vec<Vec<PixelAccum>> = (0..cam.height)
        .into_par_iter()
        .map(|py| {
            let mut row = Vec::with_capacity(cam.width);
            let mut active: Vec<(usize, f64, f64)> = Vec::new();
            let mut spans: Vec<(f64, f64)> = Vec::new();
            let mut classes = vec![0.0; c];
            for px in 0..cam.width {
                let mut acc = PixelAccum::new(c);
                let dir_cam = cam.pixel_dir(px, py);
                let len = dir_cam.norm();
                let dir = cam_to_world * (dir_cam / len);
                let (t0, t1) = (cam.near * len, cam.far * len);

                active.clear();
                for (i, b) in prims.iter().enumerate() {
                    let o = (b.to_local * (origin - b.sq.mu)).component_mul(&b.inv_scale);
                    let d = (b.to_local * dir).component_mul(&b.inv_scale);
                    let Some((lo, hi)) = slab_interval(&o, &d, b.half_width, t0, t1) else {
                        continue;
                    };
                    if let Some((enter, exit)) = level_interval(b.sq, &o, &d, b.half_width, lo, hi) {
                        active.push((i, enter, exit));
                    }
                }
                spans.clear();
                spans.extend(active.iter().map(|a| (a.1, a.2)));
                spans.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut merged = 0;
                for j in 0..spans.len() {
                    if merged > 0 && spans[j].0 <= spans[merged - 1].1 {
                        spans[merged - 1].1 = spans[merged - 1].1.max(spans[j].1);
                    } else {
                        spans[merged] = spans[j];
                        merged += 1;
                    }
                }
                spans.truncate(merged);

                let mut k = 0usize;
                'spans: for &(start, end) in &spans {
                    k = k.max(((start - t0) / step).floor().max(0.0) as usize);
                    loop {
                        let t = t0 + (k as f64 + 0.5) * step;
                        if t > end {
                            break;
                        }
                        k += 1;
                        let x = origin + dir * t;
                        let mut density = 0.0;
                        let mut unweighted = 0.0;
                        classes.iter_mut().for_each(|v| *v = 0.0);
                        for &(i, enter, exit) in &active {
                            if t < enter || t > exit {
                                continue;
                            }
                            let sq = prims[i].sq;
                            let d = sq.density(&x);
                            if d == 0.0 {
                                continue;
                            }
                            density += sq.opacity * d;
                            unweighted += d;
                            for (acc_c, l) in classes.iter_mut().zip(sq.logits.iter()) {
                                *acc_c += d * l;
                            }
                        }
                        if unweighted == 0.0 {
                            continue;
                        }
                        let alpha = 1.0 - (-density * step).exp();
                        if alpha <= 0.0 {
                            continue;
                        }
                        if !acc.push(alpha, t / len, &classes) {
                            break 'spans;
                        }
                    }
                }
                row.push(acc);
            }
            row
        })
        .collect();

    for (py, row) in rows.iter().enumerate() {
        for (px, acc) in row.iter().enumerate() {
            out.store(py * cam.width + px, acc, opts.alpha_threshold);
        }
    }
    Ok(out)
}

/// Agreement between two renders of the same view, over pixels where both
/// alphas reach the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderComparison {
    pub both_covered: usize,
    /// Fraction of those pixels with the same class; 1 when there are none.
    pub semantic_agreement: f64,
    /// Median of `|depth_a - depth_b| / depth_b`; 0 when there are none.
    pub median_depth_error: f64,
}

pub fn compare_renders(a: &RenderOutput, b: &RenderOutput, alpha_threshold: f64) -> Result<RenderComparison> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Mismatch(format!("{}x{} render vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    let threshold = alpha_threshold as f32;
    let mut same = 0;
    let mut rel = Vec::new();
    for i in 0..a.alpha.len() {
        if a.alpha[i] >= threshold && b.alpha[i] >= threshold {
            same += usize::from(a.semantic[i] == b.semantic[i]);
            rel.push(((a.depth[i] as f64 - b.depth[i] as f64) / b.depth[i] as f64).abs());
        }
    }
    rel.sort_by(f64::total_cmp);
    let both_covered = rel.len();
    Ok(RenderComparison {
        both_covered,
        semantic_agreement: if both_covered == 0 { 1.0 } else { same as f64 / both_covered as f64 },
        median_depth_error: if both_covered == 0 { 0.0 } else { rel[both_covered / 2] },
    })
}

/// Ray parameter interval inside the box `|u_j| <= half_width`, for the ray
/// `o + t d` in unit coordinates, clipped to `[t0, t1]`.
fn slab_interval(o: &Vec3, d: &Vec3, half_width: f64, t0: f64, t1: f64) -> Option<(f64, f64)> {
    let (mut lo, mut hi) = (t0, t1);
    for j in 0..3 {
        if d[j] == 0.0 {
            if o[j].abs() > half_width {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[j];
        let (a, b) = ((-half_width - o[j]) * inv, (half_width - o[j]) * inv);
        lo = lo.max(a.min(b));
        hi = hi.min(a.max(b));
    }
    (lo < hi).then_some((lo, hi))
}

/// Golden-section and bisection iterations; each shrinks a bracket by at
/// least 0.618.
const INTERVAL_ITERATIONS: usize = 48;

/// Sub-interval of `[lo, hi]` on which `f(o + t d) <= cutoff`, with
/// `half_width = cutoff^(eps1/2)`. Level sets are convex for exponents up to
/// 2, so `f^(eps1/2)` is convex along the ray and the set is one interval.
fn level_interval(sq: &SuperQuadric, o: &Vec3, d: &Vec3, half_width: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    let gauge = |t: f64| {
        let u = o + d * t;
        inside_outside_unit(u.x.abs(), u.y.abs(), u.z.abs(), sq.eps1, sq.eps2).powf(sq.eps1 / 2.0)
    };
    const PHI: f64 = 0.618_033_988_749_895;
    let (mut a, mut b) = (lo, hi);
    let (mut x1, mut x2) = (b - PHI * (b - a), a + PHI * (b - a));
    let (mut g1, mut g2) = (gauge(x1), gauge(x2));
    for _ in 0..INTERVAL_ITERATIONS {
        if g1.min(g2) <= half_width {
            break;
        }
        if g1 < g2 {
            b = x2;
            (x2, g2) = (x1, g1);
            x1 = b - PHI * (b - a);
            g1 = gauge(x1);
        } else {
            a = x1;
            (x1, g1) = (x2, g2);
            x2 = a + PHI * (b - a);
            g2 = gauge(x2);
        }
    }
    let inside = if g1 <= g2 { x1 } else { x2 };
    if gauge(inside) > half_width {
        return None;
    }
    let crossing = |mut out: f64, mut inn: f64| {
        for _ in 0..INTERVAL_ITERATIONS {
            let mid = 0.5 * (out + inn);
            if gauge(mid) <= half_width {
                inn = mid;
            } else {
                out = mid;
            }
        }
        out
    };
    let enter = if gauge(lo) <= half_width { lo } else { crossing(lo, inside) };
    let exit = if gauge(hi) <= half_width { hi } else { crossing(hi, inside) };
    Some((enter, exit))
}
