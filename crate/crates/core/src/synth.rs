//! Seeded synthetic scenes for fixtures and benchmarks.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sq::{EPS_MAX, EPS_MIN};
use crate::voxelize::VoxelGridSpec;
use crate::{ClassTable, Error, Result, Scene, SuperQuadric, Vec3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneGenConfig {
    /// Per-axis semi-axis range, metres.
    pub scale_range: (f64, f64),
    pub opacity_range: (f64, f64),
    pub logit_range: (f64, f64),
}

impl Default for SceneGenConfig {
    fn default() -> Self {
        Self { scale_range: (0.2, 4.0), opacity_range: (0.1, 1.0), logit_range: (-3.0, 3.0) }
    }
}

/// `n` pseudo-random primitives centred inside the grid bounds. The same seed
/// always yields the same scene.
pub fn gen_scene(
    seed: u64,
    n: usize,
    spec: &VoxelGridSpec,
    classes: &ClassTable,
    cfg: &SceneGenConfig,
) -> Result<Scene> {
    validate_ranges(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = spec.origin;
    let hi = spec.extent_max();
    let mut primitives = Vec::with_capacity(n);
    for _ in 0..n {
        let mu = Vec3::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y), rng.random_range(lo.z..=hi.z));
        primitives.push(random_primitive(&mut rng, mu, classes.len(), cfg)?);
    }
    Scene::new(primitives, classes.clone())
}

/// `n` pseudo-random primitives centred on the x axis, `spacing` metres apart
/// and symmetric about the origin.
pub fn row_scene(seed: u64, n: usize, spacing: f64, classes: &ClassTable, cfg: &SceneGenConfig) -> Result<Scene> {
    validate_ranges(cfg)?;
    if !(spacing >= 0.0 && spacing.is_finite()) {
        return Err(Error::InvalidConfig(format!("spacing must be finite and non-negative, got {spacing}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let primitives = (0..n)
        .map(|i| {
            let x = (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
            random_primitive(&mut rng, Vec3::new(x, 0.0, 0.0), classes.len(), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    Scene::new(primitives, classes.clone())
}

fn validate_ranges(cfg: &SceneGenConfig) -> Result<()> {
    let ranges = [cfg.scale_range, cfg.opacity_range, cfg.logit_range];
    if ranges.iter().any(|(lo, hi)| !(lo <= hi) || !lo.is_finite() || !hi.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid generator ranges {cfg:?}")));
    }
    if cfg.scale_range.0 <= 0.0 || cfg.opacity_range.0 < 0.0 || cfg.opacity_range.1 > 1.0 {
        return Err(Error::InvalidConfig(format!("generator ranges out of domain {cfg:?}")));
    }
    Ok(())
}

fn random_primitive(rng: &mut ChaCha8Rng, mu: Vec3, num_classes: usize, cfg: &SceneGenConfig) -> Result<SuperQuadric> {
    let (slo, shi) = cfg.scale_range;
    let scale = Vec3::new(rng.random_range(slo..=shi), rng.random_range(slo..=shi), rng.random_range(slo..=shi));
    // Uniform random rotation (Shoemake).
    let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let quat = [b * (TAU * u3).cos(), a * (TAU * u2).sin(), a * (TAU * u2).cos(), b * (TAU * u3).sin()];
    let opacity = rng.random_range(cfg.opacity_range.0..=cfg.opacity_range.1);
    let eps1 = rng.random_range(EPS_MIN..=EPS_MAX);
    let eps2 = rng.random_range(EPS_MIN..=EPS_MAX);
    let logits: Vec<f64> = (0..num_classes).map(|_| rng.random_range(cfg.logit_range.0..=cfg.logit_range.1)).collect();
    SuperQuadric::new(mu, scale, quat, opacity, logits, eps1, eps2)
}

/// The 17 Occ3D-nuScenes semantic classes (free space excluded).
pub fn occ3d_classes() -> ClassTable {
    let names = [
        "others",
        "barrier",
        "bicycle",
        "bus",
        "car",
        "construction_vehicle",
        "motorcycle",
        "pedestrian",
        "traffic_cone",
        "trailer",
        "truck",
        "driveable_surface",
        "other_flat",
        "sidewalk",
        "terrain",
        "manmade",
        "vegetation",
    ];
    ClassTable::new(names.iter().map(|s| s.to_string()).collect()).expect("static table is valid")
}

/// The layered-shell demonstration shape: semi-axes (1.0, 0.7, 0.5),
/// exponents (0.6, 0.7), at the origin, one class.
pub fn reference_shape() -> SuperQuadric {
    SuperQuadric::axis_aligned(Vec3::zeros(), Vec3::new(1.0, 0.7, 0.5), 0.6, 0.7, &[1.0]).expect("valid constants")
}

/// One-voxel-thick `size x size` slice through the `y = 0` plane covering
/// `[-half_extent, half_extent]` in x and z.
pub fn xz_slice(size: usize, half_extent: f64) -> Result<VoxelGridSpec> {
    let res = 2.0 * half_extent / size as f64;
    VoxelGridSpec::new(Vec3::new(-half_extent, -res / 2.0, -half_extent), [size, 1, size], res)
}
