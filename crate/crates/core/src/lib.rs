//! Superquadric occupancy kernels.
//!
//! A scene is a set of [`SuperQuadric`] primitives whose soft occupancy is
//! `exp(-f(x))`, `f` being the superquadric inside-outside function. The crate
//! turns such scenes into:
//!
//! - multi-layer Gaussian clouds for splat rendering ([`gaussianize`]),
//! - semantic occupancy grids ([`voxelize`]),
//! - depth / semantic / alpha images ([`render`]),
//!
//! and scores occupancy grids against each other ([`metrics`]). File formats
//! used by the command-line front end live in [`io`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gaussianize;
pub mod io;
pub mod metrics;
pub mod render;
pub mod sq;
pub mod synth;
pub mod tessellate;
pub mod voxelize;

pub use error::{Error, Result};
pub use gaussianize::{
    approximation_error, gaussianize, gaussianize_scene, layer_opacity, pair_z_scale, ApproximationReport, BuildReport,
    Gaussian3D, GaussianCloud, GaussianizeConfig, OpacitySign,
};
pub use metrics::{miou, ray_iou, voxel_iou, MetricReport, RaySet};
pub use render::{
    compare_renders, project_gaussian, raymarch_render, splat_render, Camera, RenderComparison, RenderOptions,
    RenderOutput,
};
pub use sq::{ClassTable, Scene, SuperQuadric};
pub use tessellate::{deform_mesh, icosphere, map_to_surface, spherical_coords, IcosphereMesh, SurfaceFrame};
pub use voxelize::{
    finalize, voxelize, voxelize_bruteforce, DenseGrids, SemanticGrid, SemanticMode, VoxelGridSpec, VoxelizeConfig,
};

/// Double precision 3-vector used throughout the geometry code.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Unit quaternion, stored `(w, x, y, z)`.
pub type Quat = nalgebra::UnitQuaternion<f64>;
