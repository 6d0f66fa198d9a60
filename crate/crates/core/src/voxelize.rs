//! Superquadric scene to semantic occupancy grid.
//!
//! Every primitive scatters `exp(-f(p)) * sigma` into the occupancy weight and
//! `exp(-f(p)) * c` into the class weights of the voxel centres `p` inside its
//! window. A voxel whose occupancy weight stays below `tau` is free; otherwise
//! it takes the argmax class.
//!
//! The fast path and the brute-force oracle share the per-primitive evaluator
//! and add contributions to each voxel in primitive order, so with the window
//! disabled they agree bit for bit.

use nalgebra::Matrix3;
use rayon::prelude::*;
use wide::f64x8;

use crate::sq::{ratio_bound, F_CAP, UNDERFLOW_F};
use crate::{ClassTable, Error, Result, Scene, SuperQuadric, Vec3};

pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_NEIGHBORHOOD: usize = 5;
pub const DEFAULT_RESOLUTION: f64 = 0.4;
/// Window growth per unit of primitive size: the outermost default layer scale.
pub const DEFAULT_EXTENT_FACTOR: f64 = 2.5;
/// With truncation on, voxels where a primitive's inside-outside value is
/// provably above this are skipped too (density below `exp(-40)`).
pub const TRUNCATION_F: f64 = 40.0;

/// Voxels evaluated per density kernel call.
const LANES: usize = 8;

/// Regular grid geometry. Voxel `(ix, iy, iz)` has linear index
/// `ix + nx * (iy + ny * iz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGridSpec {
    pub origin: Vec3,
    pub dims: [usize; 3],
    pub resolution: f64,
}

impl Default for VoxelGridSpec {
    fn default() -> Self {
        Self::occ3d()
    }
}

impl VoxelGridSpec {
    pub fn new(origin: Vec3, dims: [usize; 3], resolution: f64) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidConfig(format!("resolution must be positive, got {resolution}")));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidConfig(format!("grid dims must be >= 1, got {dims:?}")));
        }
        if !origin.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("grid origin must be finite".into()));
        }
        Ok(Self { origin, dims, resolution })
    }

    /// x, y in [-40, 40], z in [-1, 5.4] at 0.4 m.
    pub fn occ3d() -> Self {
        Self { origin: Vec3::new(-40.0, -40.0, -1.0), dims: [200, 200, 16], resolution: DEFAULT_RESOLUTION }
    }

    pub fn voxel_count(&self) -> usize {
        self.dims.iter().product()
    }

    #[inline]
    pub fn linear(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    pub fn unlinear(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    #[inline]
    pub fn center(&self, ix: usize, iy: usize, iz: usize) -> Vec3 {
        let r = self.resolution;
        Vec3::new(
            self.origin.x + (ix as f64 + 0.5) * r,
            self.origin.y + (iy as f64 + 0.5) * r,
            self.origin.z + (iz as f64 + 0.5) * r,
        )
    }

    pub fn center_of_linear(&self, i: usize) -> Vec3 {
        let [x, y, z] = self.unlinear(i);
        self.center(x, y, z)
    }

    /// Maximum corner.
    pub fn extent_max(&self) -> Vec3 {
        self.origin + Vec3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64) * self.resolution
    }

    /// Index of the (possibly out-of-grid) voxel containing `p`.
    pub fn voxel_of(&self, p: &Vec3) -> [i64; 3] {
        let q = (p - self.origin) / self.resolution;
        [q.x.floor() as i64, q.y.floor() as i64, q.z.floor() as i64]
    }
}

/// How class weights are aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemanticMode {
    /// Raw logits.
    #[default]
    LogitSum,
    /// Softmax probabilities.
    ProbSum,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelizeConfig {
    pub tau: f64,
    /// Base window half-width in voxels; `None` disables truncation.
    pub neighborhood_radius: Option<usize>,
    /// Window growth per metre of the primitive's largest semi-axis.
    pub extent_factor: f64,
    pub semantic_mode: SemanticMode,
}

impl Default for VoxelizeConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            neighborhood_radius: Some(DEFAULT_NEIGHBORHOOD),
            extent_factor: DEFAULT_EXTENT_FACTOR,
            semantic_mode: SemanticMode::LogitSum,
        }
    }
}

impl VoxelizeConfig {
    pub fn untruncated() -> Self {
        Self { neighborhood_radius: None, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be >= 0, got {}", self.tau)));
        }
        if !(self.extent_factor >= 0.0 && self.extent_factor.is_finite()) {
            return Err(Error::InvalidConfig("extent factor must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Window half-width, in voxels, for a primitive.
    pub fn window_radius(&self, sq: &SuperQuadric, resolution: f64) -> Option<usize> {
        self.neighborhood_radius.map(|r| r + (sq.max_scale() * self.extent_factor / resolution).ceil() as usize)
    }
}

/// Accumulated occupancy and class weights.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrids {
    pub spec: VoxelGridSpec,
    pub num_classes: usize,
    pub v_o: Vec<f64>,
    /// `num_classes` weights per voxel, voxel-major.
    pub v_c: Vec<f64>,
}

impl DenseGrids {
    pub fn zeros(spec: VoxelGridSpec, num_classes: usize) -> Self {
        let n = spec.voxel_count();
        Self { spec, num_classes, v_o: vec![0.0; n], v_c: vec![0.0; n * num_classes] }
    }

    pub fn class_weights(&self, voxel: usize) -> &[f64] {
        &self.v_c[voxel * self.num_classes..(voxel + 1) * self.num_classes]
    }

    /// Element-wise sum, for combining partial scenes.
    pub fn add(&mut self, other: &DenseGrids) -> Result<()> {
        if self.spec != other.spec || self.num_classes != other.num_classes {
            return Err(Error::Mismatch("dense grids differ in geometry or class count".into()));
        }
        self.v_o.iter_mut().zip(&other.v_o).for_each(|(a, b)| *a += b);
        self.v_c.iter_mut().zip(&other.v_c).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

/// Per-voxel class id, or the table's free index.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    pub labels: Vec<u16>,
    pub spec: VoxelGridSpec,
    pub classes: ClassTable,
}

impl SemanticGrid {
    pub fn all_free(spec: VoxelGridSpec, classes: ClassTable) -> Self {
        Self { labels: vec![classes.free_index(); spec.voxel_count()], spec, classes }
    }

    #[inline]
    pub fn is_occupied(&self, i: usize) -> bool {
        self.labels[i] != self.classes.free_index()
    }

    pub fn occupied_count(&self) -> usize {
        (0..self.labels.len()).filter(|&i| self.is_occupied(i)).count()
    }
}

/// A primitive with its world-to-unit transform and class vector resolved.
#[derive(Debug, Clone)]
struct PreparedPrimitive {
    mu: Vec3,
    /// World offset to axis ratios: `diag(1/s) R^-1`.
    to_unit: Matrix3<f64>,
    eps1: f64,
    /// `2/eps2`, `eps2/eps1`, `2/eps1`.
    pow_xy: f64,
    pow_outer: f64,
    pow_z: f64,
    opacity: f64,
    class_vec: Vec<f64>,
    /// Axis-ratio bound past which the density underflows to 0.
    zero_ratio: f64,
}

impl PreparedPrimitive {
    fn new(sq: &SuperQuadric, mode: SemanticMode) -> Self {
        let class_vec = match mode {
            SemanticMode::LogitSum => sq.logits.to_vec(),
            SemanticMode::ProbSum => softmax(&sq.logits),
        };
        let inv = Vec3::new(1.0 / sq.scale.x, 1.0 / sq.scale.y, 1.0 / sq.scale.z);
        Self {
            mu: sq.mu,
            to_unit: Matrix3::from_diagonal(&inv) * sq.world_to_local(),
            eps1: sq.eps1,
            pow_xy: 2.0 / sq.eps2,
            pow_outer: sq.eps2 / sq.eps1,
            pow_z: 2.0 / sq.eps1,
            opacity: sq.opacity,
            class_vec,
            zero_ratio: ratio_bound(UNDERFLOW_F, sq.eps1),
        }
    }

    #[inline]
    fn unit(&self, p: &Vec3) -> Vec3 {
        self.to_unit * (p - self.mu)
    }

    /// Unit coordinates of a row of voxel centres: `base + ix * step`.
    #[inline]
    fn row_frame(&self, row_origin: &Vec3, resolution: f64) -> (Vec3, Vec3) {
        (self.unit(row_origin), self.to_unit.column(0) * resolution)
    }

    /// `exp(-f)` lane by lane from absolute axis ratios. Each lane depends only
    /// on its own inputs.
    #[inline]
    fn density_lanes(&self, a: f64x8, b: f64x8, c: f64x8) -> f64x8 {
        // (a^p + b^p)^q = exp(2/eps1 * ln max(a, b) + q * ln(1 + (min/max)^p))
        let (la, lb) = (a.ln(), b.ln());
        let (hi, lo) = (la.max(lb), la.min(lb));
        let gap = lo - hi;
        let gap = gap.is_nan().select(f64x8::splat(f64::NEG_INFINITY), gap);
        let rest = ((gap * f64x8::splat(self.pow_xy)).exp() + f64x8::ONE).ln();
        let pz = f64x8::splat(self.pow_z);
        let f = (hi * pz + rest * f64x8::splat(self.pow_outer)).exp() + (c.ln() * pz).exp();
        (-f.min(f64x8::splat(F_CAP))).exp()
    }

    /// Densities at voxels `start..start + LANES` of a row.
    #[inline]
    fn density_row(&self, base: &Vec3, step: &Vec3, start: usize) -> [f64; LANES] {
        let ix = f64x8::new(std::array::from_fn(|k| (start + k) as f64));
        let axis = |b: f64, d: f64| (f64x8::splat(b) + f64x8::splat(d) * ix).abs();
        self.density_lanes(axis(base.x, step.x), axis(base.y, step.y), axis(base.z, step.z)).to_array()
    }

    /// Unweighted density at a world point.
    #[cfg(test)]
    fn density(&self, p: &Vec3) -> f64 {
        let u = self.unit(p).abs();
        if u.max() > self.zero_ratio {
            return 0.0;
        }
        self.density_lanes(f64x8::splat(u.x), f64x8::splat(u.y), f64x8::splat(u.z)).to_array()[0]
    }

    /// Voxels `lo..=hi` of a row (see [`Self::row_frame`]) whose axis ratios
    /// may all be within `ratio`. A superset: padded by one voxel each side.
    fn row_span(&self, a: &Vec3, b: &Vec3, ratio: f64, lo: usize, hi: usize) -> Option<(usize, usize)> {
        let (mut t0, mut t1) = (lo as f64, hi as f64);
        for j in 0..3 {
            let m = ratio + 1e-9 * (1.0 + ratio + a[j].abs());
            if b[j] == 0.0 {
                if a[j].abs() > m {
                    return None;
                }
                continue;
            }
            let (u, v) = ((-m - a[j]) / b[j], (m - a[j]) / b[j]);
            t0 = t0.max(u.min(v));
            t1 = t1.min(u.max(v));
        }
        let t0 = (t0.floor() - 1.0).max(lo as f64);
        let t1 = (t1.ceil() + 1.0).min(hi as f64);
        (t0 <= t1).then_some((t0 as usize, t1 as usize))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[inline]
fn accumulate(prim: &PreparedPrimitive, d: f64, vo: &mut f64, vc: &mut [f64]) {
    if d == 0.0 {
        // Adding exact zeros leaves every sum unchanged.
        return;
    }
    *vo += d * prim.opacity;
    for (acc, c) in vc.iter_mut().zip(&prim.class_vec) {
        *acc += d * c;
    }
}

/// Inclusive voxel index ranges of a primitive's window clipped to the grid.
#[derive(Debug, Clone, Copy)]
struct Window {
    lo: [usize; 3],
    hi: [usize; 3],
}

fn window(sq: &SuperQuadric, spec: &VoxelGridSpec, cfg: &VoxelizeConfig) -> Option<Window> {
    let Some(r) = cfg.window_radius(sq, spec.resolution) else {
        return Some(Window { lo: [0; 3], hi: [spec.dims[0] - 1, spec.dims[1] - 1, spec.dims[2] - 1] });
    };
    let c = spec.voxel_of(&sq.mu);
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    for a in 0..3 {
        let l = c[a].saturating_sub(r as i64).max(0);
        let h = c[a].saturating_add(r as i64).min(spec.dims[a] as i64 - 1);
        if l > h {
            return None;
        }
        lo[a] = l as usize;
        hi[a] = h as usize;
    }
    Some(Window { lo, hi })
}

fn check_inputs(scene: &Scene, cfg: &VoxelizeConfig) -> Result<()> {
    cfg.validate()?;
    if scene.primitives.iter().any(|p| p.num_classes() != scene.classes.len()) {
        return Err(Error::Mismatch("primitive logits do not match class table".into()));
    }
    Ok(())
}

/// Scatter pass only: windowed dense grids for a scene.
pub fn scatter(scene: &Scene, spec: &VoxelGridSpec, cfg: &VoxelizeConfig) -> Result<DenseGrids> {
    check_inputs(scene, cfg)?;
    let c = scene.classes.len();
    let mut dense = DenseGrids::zeros(*spec, c);

    // Skip zero-opacity primitives.
    let active: Vec<(PreparedPrimitive, Window)> = scene
        .primitives
        .iter()
        .filter(|sq| sq.opacity > 0.0)
        .filter_map(|sq| window(sq, spec, cfg).map(|w| (PreparedPrimitive::new(sq, cfg.semantic_mode), w)))
        .collect();

    // z-slab buckets, each in primitive order.
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); spec.dims[2]];
    for (i, (_, w)) in active.iter().enumerate() {
        for bucket in &mut buckets[w.lo[2]..=w.hi[2]] {
            bucket.push(i);
        }
    }

    let layer = spec.dims[0] * spec.dims[1];
    let nx = spec.dims[0];
    let truncated = cfg.neighborhood_radius.is_some();
    dense
        .v_o
        .par_chunks_mut(layer)
        .zip(dense.v_c.par_chunks_mut(layer * c))
        .zip(buckets.par_iter())
        .enumerate()
        .for_each(|(iz, ((vo, vc), bucket))| {
            // Row by row so the class accumulators of one row stay in cache;
            // within a voxel, contributions still arrive in primitive order.
            for iy in 0..spec.dims[1] {
                let row = spec.center(0, iy, iz);
                let vo = &mut vo[iy * nx..(iy + 1) * nx];
                let vc = &mut vc[iy * nx * c..(iy + 1) * nx * c];
                for &pi in bucket {
                    let (prim, w) = &active[pi];
                    if iy < w.lo[1] || iy > w.hi[1] {
                        continue;
                    }
                    let ratio = if truncated {
                        prim.zero_ratio.min(ratio_bound(TRUNCATION_F, prim.eps1))
                    } else {
                        prim.zero_ratio
                    };
                    let (base, step) = prim.row_frame(&row, spec.resolution);
                    let Some((x0, x1)) = prim.row_span(&base, &step, ratio, w.lo[0], w.hi[0]) else {
                        continue;
                    };
                    for start in (x0..=x1).step_by(LANES) {
                        let n = (x1 + 1 - start).min(LANES);
                        let d = prim.density_row(&base, &step, start);
                        for (k, &dk) in d.iter().enumerate().take(n) {
                            let v = start + k;
                            accumulate(prim, dk, &mut vo[v], &mut vc[v * c..(v + 1) * c]);
                        }
                    }
                }
            }
        });
    Ok(dense)
}

/// Full gather: every voxel against every primitive. O(voxels x primitives).
pub fn gather_bruteforce(scene: &Scene, spec: &VoxelGridSpec, cfg: &VoxelizeConfig) -> Result<DenseGrids> {
    check_inputs(scene, cfg)?;
    let c = scene.classes.len();
    let mut dense = DenseGrids::zeros(*spec, c);
    let prims: Vec<PreparedPrimitive> = scene
        .primitives
        .iter()
        .filter(|sq| sq.opacity > 0.0)
        .map(|sq| PreparedPrimitive::new(sq, cfg.semantic_mode))
        .collect();
    let layer = spec.dims[0] * spec.dims[1];
    let nx = spec.dims[0];
    dense.v_o.par_chunks_mut(layer).zip(dense.v_c.par_chunks_mut(layer * c)).enumerate().for_each(|(iz, (vo, vc))| {
        // LANES voxels of a row per kernel call; each voxel still sees the
        // primitives in scene order.
        for iy in 0..spec.dims[1] {
            let row = spec.center(0, iy, iz);
            let frames: Vec<(Vec3, Vec3)> = prims.iter().map(|p| p.row_frame(&row, spec.resolution)).collect();
            for start in (0..nx).step_by(LANES) {
                let n = (nx - start).min(LANES);
                for (prim, (base, step)) in prims.iter().zip(&frames) {
                    let d = prim.density_row(base, step, start);
                    for (k, &dk) in d.iter().enumerate().take(n) {
                        let v = start + k + nx * iy;
                        accumulate(prim, dk, &mut vo[v], &mut vc[v * c..(v + 1) * c]);
                    }
                }
            }
        }
    });
    Ok(dense)
}

/// Thresholds occupancy at `tau` and takes the class argmax (lowest index wins ties).
pub fn finalize(dense: &DenseGrids, tau: f64, classes: &ClassTable) -> Result<SemanticGrid> {
    if classes.len() != dense.num_classes {
        return Err(Error::Mismatch(format!(
            "class table has {} classes, dense grid {}",
            classes.len(),
            dense.num_classes
        )));
    }
    let free = classes.free_index();
    let c = dense.num_classes;
    let labels = dense
        .v_o
        .par_iter()
        .zip(dense.v_c.par_chunks(c.max(1)))
        .map(|(&vo, w)| {
            if !(vo >= tau) {
                return free;
            }
            let mut best = 0usize;
            for (k, &x) in w.iter().enumerate().skip(1) {
                if x > w[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    Ok(SemanticGrid { labels, spec: dense.spec, classes: classes.clone() })
}

/// Windowed voxelization.
pub fn voxelize(scene: &Scene, spec: &VoxelGridSpec, cfg: &VoxelizeConfig) -> Result<(SemanticGrid, DenseGrids)> {
    let dense = scatter(scene, spec, cfg)?;
    Ok((finalize(&dense, cfg.tau, &scene.classes)?, dense))
}

/// Oracle voxelization without any window truncation.
pub fn voxelize_bruteforce(
    scene: &Scene,
    spec: &VoxelGridSpec,
    cfg: &VoxelizeConfig,
) -> Result<(SemanticGrid, DenseGrids)> {
    let dense = gather_bruteforce(scene, spec, cfg)?;
    Ok((finalize(&dense, cfg.tau, &scene.classes)?, dense))
}

/// Upper bound on the opacity-weighted density a primitive can omit at any
/// voxel centre when truncation is on. Zero when truncation is disabled.
///
/// Centres outside the window lie at least `(r + 1/2) * res` from the primitive
/// centre, and `f(x) >= (|x|_inf / s_max)^(2/eps1) >= (|x|_2 / (sqrt(3) s_max))^(2/eps1)`.
/// Centres skipped inside the window have `f > TRUNCATION_F`.
pub fn window_tail_bound(sq: &SuperQuadric, spec: &VoxelGridSpec, cfg: &VoxelizeConfig) -> f64 {
    let Some(r) = cfg.window_radius(sq, spec.resolution) else {
        return 0.0;
    };
    let dist = (r as f64 + 0.5) * spec.resolution;
    let m = dist / (3.0f64.sqrt() * sq.max_scale());
    sq.opacity * (-m.powf(2.0 / sq.eps1)).exp().max((-TRUNCATION_F).exp())
}

/// Whether a voxel lies inside a primitive's (clipped) window.
pub fn window_contains(sq: &SuperQuadric, spec: &VoxelGridSpec, cfg: &VoxelizeConfig, voxel: [usize; 3]) -> bool {
    match window(sq, spec, cfg) {
        Some(w) => (0..3).all(|a| (w.lo[a]..=w.hi[a]).contains(&voxel[a])),
        None => false,
    }
}
