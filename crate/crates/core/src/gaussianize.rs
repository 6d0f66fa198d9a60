//! Multi-layer Gaussian approximation of superquadric occupancy.
//!
//! Each primitive is expanded into a scaled family `S(k s, eps1, eps2)`; every
//! member's surface is tessellated by a deformed icosphere and one 3D Gaussian
//! is placed per face. A Gaussian's tangent-plane spread follows the face size,
//! its normal spread is half the distance to the matching face of the next
//! layer, and its opacity is the primitive's weighted density at the Gaussian
//! mean, so the mixture peaks agree with the superquadric field.

use std::sync::Arc;

use nalgebra::{Matrix3, Rotation3};
use rayon::prelude::*;

use crate::sq::validate_k_values;
use crate::tessellate::{deform_mesh, icosphere, IcosphereMesh, SurfaceFrame, MAX_LEVEL};
use crate::voxelize::VoxelGridSpec;
use crate::{ClassTable, Error, Quat, Result, Scene, SuperQuadric, Vec3};

/// Default layer scales.
pub const DEFAULT_K: [f64; 9] = [0.5, 0.6, 0.75, 0.9, 1.05, 1.2, 1.6, 2.0, 2.5];
pub const DEFAULT_LEVEL: u32 = 1;
pub const DEFAULT_XY_COVERAGE: f64 = 0.7;

/// Sign of the exponent in the per-layer opacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OpacitySign {
    /// `sigma * exp(-f(m))`: the Gaussian peak equals the weighted density at its mean.
    #[default]
    Aligned,
    /// `sigma * exp(+f(m))`, kept for ablation.
    Growing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianizeConfig {
    pub k_values: Vec<f64>,
    pub level: u32,
    pub xy_coverage: f64,
    pub opacity_sign: OpacitySign,
    /// Gaussians with opacity strictly below this are dropped.
    pub min_opacity_cull: f64,
}

impl Default for GaussianizeConfig {
    fn default() -> Self {
        Self {
            k_values: DEFAULT_K.to_vec(),
            level: DEFAULT_LEVEL,
            xy_coverage: DEFAULT_XY_COVERAGE,
            opacity_sign: OpacitySign::Aligned,
            min_opacity_cull: 0.0,
        }
    }
}

impl GaussianizeConfig {
    pub fn validate(&self) -> Result<()> {
        validate_k_values(&self.k_values)?;
        if self.level > MAX_LEVEL {
            return Err(Error::InvalidConfig(format!("icosphere level {} exceeds maximum {MAX_LEVEL}", self.level)));
        }
        if !(self.xy_coverage > 0.0 && self.xy_coverage.is_finite()) {
            return Err(Error::InvalidConfig(format!("xy coverage must be positive, got {}", self.xy_coverage)));
        }
        if !(self.min_opacity_cull >= 0.0) {
            return Err(Error::InvalidConfig("min opacity cull must be >= 0".into()));
        }
        Ok(())
    }

    /// Gaussians per primitive when nothing is skipped.
    pub fn gaussians_per_primitive(&self) -> usize {
        IcosphereMesh::face_count(self.level) * self.k_values.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian3D {
    pub mean: Vec3,
    /// Standard deviations along (tangent_u, tangent_v, normal).
    pub scales: Vec3,
    /// Local-to-world orientation; columns of its matrix are the local axes.
    pub rot: Quat,
    pub opacity: f64,
    pub logits: Arc<[f64]>,
    pub parent: usize,
    pub layer: usize,
}

impl Gaussian3D {
    /// Squared Mahalanobis distance of `x` from the mean.
    #[inline]
    pub fn mahalanobis_sq(&self, x: &Vec3) -> f64 {
        let l = self.rot.inverse_transform_vector(&(x - self.mean));
        (l.x / self.scales.x).powi(2) + (l.y / self.scales.y).powi(2) + (l.z / self.scales.z).powi(2)
    }

    /// Unnormalized density `opacity * exp(-d^2 / 2)`.
    #[inline]
    pub fn density_at(&self, x: &Vec3) -> f64 {
        self.opacity * (-0.5 * self.mahalanobis_sq(x)).exp()
    }

    /// World-space covariance `R diag(s^2) R^T`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rot.to_rotation_matrix().into_inner();
        r * Matrix3::from_diagonal(&self.scales.component_mul(&self.scales)) * r.transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub gaussians: Vec<Gaussian3D>,
    pub classes: ClassTable,
}

impl GaussianCloud {
    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// Mixture density at a world point.
    pub fn density_at(&self, x: &Vec3) -> f64 {
        self.gaussians.iter().map(|g| g.density_at(x)).sum()
    }
}

/// Per-primitive outcome of a build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrimitiveBuild {
    pub emitted: usize,
    pub degenerate_skipped: usize,
    pub culled: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub per_primitive: Vec<PrimitiveBuild>,
}

impl BuildReport {
    pub fn emitted(&self) -> usize {
        self.per_primitive.iter().map(|p| p.emitted).sum()
    }

    pub fn degenerate_skipped(&self) -> usize {
        self.per_primitive.iter().map(|p| p.degenerate_skipped).sum()
    }

    pub fn culled(&self) -> usize {
        self.per_primitive.iter().map(|p| p.culled).sum()
    }
}

/// Opacity of a Gaussian centred at world point `m`.
pub fn layer_opacity(sq: &SuperQuadric, m: &Vec3, sign: OpacitySign) -> f64 {
    let f = sq.inside_outside(&sq.to_local(m));
    match sign {
        OpacitySign::Aligned => sq.opacity * (-f).exp(),
        OpacitySign::Growing => sq.opacity * f.exp(),
    }
}

/// Normal-direction standard deviation for face `face`: half the distance
/// between its centroids on two consecutive layers.
pub fn pair_z_scale(frames_k: &[SurfaceFrame], frames_next: &[SurfaceFrame], face: usize) -> Result<f64> {
    if frames_k.len() != frames_next.len() {
        return Err(Error::Mismatch(format!(
            "layer frame lists differ in length ({} vs {})",
            frames_k.len(),
            frames_next.len()
        )));
    }
    let (a, b) = match (frames_k.get(face), frames_next.get(face)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Mismatch(format!("face {face} out of range for {} frames", frames_k.len()))),
    };
    Ok(0.5 * (b.centroid - a.centroid).norm())
}

/// Gaussianizes one primitive against a prebuilt icosphere.
pub fn gaussianize_primitive(
    sq: &SuperQuadric,
    parent: usize,
    mesh: &IcosphereMesh,
    cfg: &GaussianizeConfig,
) -> (Vec<Gaussian3D>, PrimitiveBuild) {
    let layers: Vec<Vec<SurfaceFrame>> =
        cfg.k_values.iter().map(|&k| deform_mesh(mesh, &(sq.scale * k), sq.eps1, sq.eps2)).collect();
    let n_layers = layers.len();
    let mut out = Vec::with_capacity(mesh.faces.len() * n_layers);
    let mut report = PrimitiveBuild::default();

    for (layer, frames) in layers.iter().enumerate() {
        // The outermost layer reuses the gap to its inner neighbour.
        let pair = match n_layers {
            1 => None,
            _ if layer + 1 < n_layers => Some((layer, layer + 1)),
            _ => Some((layer - 1, layer)),
        };
        for (face, frame) in frames.iter().enumerate() {
            if frame.degenerate {
                report.degenerate_skipped += 1;
                continue;
            }
            let sigma_xy = cfg.xy_coverage * frame.area.sqrt();
            let sigma_n = match pair {
                Some((a, b)) => pair_z_scale(&layers[a], &layers[b], face).expect("layers share one mesh"),
                None => sigma_xy,
            };
            let mean = sq.to_world(&frame.centroid);
            let opacity = layer_opacity(sq, &mean, cfg.opacity_sign);
            if opacity < cfg.min_opacity_cull {
                report.culled += 1;
                continue;
            }
            let frame_rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[
                frame.tangent_u,
                frame.tangent_v,
                frame.normal,
            ]));
            out.push(Gaussian3D {
                mean,
                scales: Vec3::new(sigma_xy, sigma_xy, sigma_n),
                rot: sq.rot * Quat::from_rotation_matrix(&frame_rot),
                opacity,
                logits: Arc::clone(&sq.logits),
                parent,
                layer,
            });
        }
    }
    report.emitted = out.len();
    (out, report)
}

/// Gaussian approximation of a single primitive.
pub fn gaussianize(sq: &SuperQuadric, cfg: &GaussianizeConfig) -> Result<(GaussianCloud, BuildReport)> {
    cfg.validate()?;
    let mesh = icosphere(cfg.level)?;
    let (gaussians, build) = gaussianize_primitive(sq, 0, &mesh, cfg);
    Ok((
        GaussianCloud { gaussians, classes: ClassTable::anonymous(sq.num_classes().max(1))? },
        BuildReport { per_primitive: vec![build] },
    ))
}

/// Gaussian approximation of a whole scene, concatenated in primitive order.
pub fn gaussianize_scene(scene: &Scene, cfg: &GaussianizeConfig) -> Result<(GaussianCloud, BuildReport)> {
    cfg.validate()?;
    let mesh = icosphere(cfg.level)?;
    let parts: Vec<(Vec<Gaussian3D>, PrimitiveBuild)> =
        scene.primitives.par_iter().enumerate().map(|(i, sq)| gaussianize_primitive(sq, i, &mesh, cfg)).collect();
    let mut gaussians = Vec::with_capacity(parts.iter().map(|p| p.0.len()).sum());
    let mut report = BuildReport::default();
    for (g, b) in parts {
        gaussians.extend(g);
        report.per_primitive.push(b);
    }
    Ok((GaussianCloud { gaussians, classes: scene.classes.clone() }, report))
}

/// True versus mixture density sampled at the voxel centres of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximationReport {
    pub mean_abs_error: f64,
    pub max_abs_error: f64,
    /// Mean absolute error over voxels where the true density exceeds 0.05.
    pub supported_mean_abs_error: f64,
    pub supported_voxels: usize,
    pub truth: Vec<f64>,
    pub mixture: Vec<f64>,
}

pub const SUPPORT_THRESHOLD: f64 = 0.05;

/// Compares `sigma * exp(-f)` of `sq` against the mixture density of `cloud`
/// at every voxel centre of `grid`. The grid should cover the outermost layer.
pub fn approximation_error(sq: &SuperQuadric, cloud: &GaussianCloud, grid: &VoxelGridSpec) -> ApproximationReport {
    let centers: Vec<Vec3> = (0..grid.voxel_count()).map(|i| grid.center_of_linear(i)).collect();
    let truth: Vec<f64> = centers.par_iter().map(|p| sq.opacity * sq.density(p)).collect();
    let mixture: Vec<f64> = centers.par_iter().map(|p| cloud.density_at(p)).collect();

    let n = truth.len().max(1) as f64;
    let mut sum = 0.0;
    let mut max: f64 = 0.0;
    let mut supported_sum = 0.0;
    let mut supported = 0usize;
    for (t, m) in truth.iter().zip(&mixture) {
        let e = (t - m).abs();
        sum += e;
        max = max.max(e);
        if *t > SUPPORT_THRESHOLD {
            supported_sum += e;
            supported += 1;
        }
    }
    ApproximationReport {
        mean_abs_error: sum / n,
        max_abs_error: max,
        supported_mean_abs_error: if supported > 0 { supported_sum / supported as f64 } else { 0.0 },
        supported_voxels: supported,
        truth,
        mixture,
    }
}
