//! Occupancy evaluation: binary IoU, per-class IoU / mIoU and a ray-based IoU.

use std::fmt::Write;

use rayon::prelude::*;
use serde_json::{json, Map, Value};

use crate::voxelize::{SemanticGrid, VoxelGridSpec};
use crate::{Error, Result, Vec3};

pub const DEFAULT_RAY_THRESHOLDS: [f64; 3] = [1.0, 2.0, 4.0];
pub const DEFAULT_AZIMUTHS: usize = 360;
pub const DEFAULT_ELEVATIONS_DEG: [f64; 4] = [-15.0, -5.0, 5.0, 15.0];

fn check_compatible(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<()> {
    if pred.spec.dims != gt.spec.dims || pred.labels.len() != gt.labels.len() {
        return Err(Error::Mismatch(format!("grid dims differ: {:?} vs {:?}", pred.spec.dims, gt.spec.dims)));
    }
    if pred.classes.len() != gt.classes.len() || pred.classes.free_index() != gt.classes.free_index() {
        return Err(Error::Mismatch(format!(
            "class tables differ: {} classes (free {}) vs {} (free {})",
            pred.classes.len(),
            pred.classes.free_index(),
            gt.classes.len(),
            gt.classes.free_index()
        )));
    }
    let (c, free) = (gt.classes.len(), gt.classes.free_index());
    for g in [pred, gt] {
        if let Some(&bad) = g.labels.iter().find(|&&l| l as usize >= c && l != free) {
            return Err(Error::Mismatch(format!("label {bad} is neither a class id below {c} nor free ({free})")));
        }
    }
    Ok(())
}

/// Free-versus-occupied IoU; 1 when both grids are entirely free.
pub fn voxel_iou(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<f64> {
    check_compatible(pred, gt)?;
    let (inter, union) = (0..pred.labels.len())
        .into_par_iter()
        .map(|i| {
            let (p, g) = (pred.is_occupied(i), gt.is_occupied(i));
            ((p && g) as usize, (p || g) as usize)
        })
        .reduce(|| (0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Per-class IoU (`None` for classes absent from both grids) and their mean.
/// The mean is 1 when no class is present anywhere.
pub fn miou(pred: &SemanticGrid, gt: &SemanticGrid) -> Result<(Vec<Option<f64>>, f64)> {
    check_compatible(pred, gt)?;
    let c = pred.classes.len();
    let free = pred.classes.free_index();
    let mut inter = vec![0usize; c];
    let mut pred_count = vec![0usize; c];
    let mut gt_count = vec![0usize; c];
    for (&p, &g) in pred.labels.iter().zip(&gt.labels) {
        if p != free {
            pred_count[p as usize] += 1;
        }
        if g != free {
            gt_count[g as usize] += 1;
        }
        if p == g && p != free {
            inter[p as usize] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let union = pred_count[k] + gt_count[k] - inter[k];
            (union > 0).then(|| inter[k] as f64 / union as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = if present.is_empty() { 1.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok((per_class, mean))
}

/// Rays used by [`ray_iou`].
#[derive(Debug, Clone, PartialEq)]
pub struct RaySet {
    pub origins: Vec<Vec3>,
    /// Unit directions.
    pub dirs: Vec<Vec3>,
}

impl RaySet {
    pub fn new(origins: Vec<Vec3>, dirs: Vec<Vec3>) -> Result<Self> {
        if origins.len() != dirs.len() {
            return Err(Error::Mismatch("ray origins and directions differ in count".into()));
        }
        if dirs.iter().any(|d| (d.norm() - 1.0).abs() > 1e-6) {
            return Err(Error::InvalidConfig("ray directions must be unit length".into()));
        }
        Ok(Self { origins, dirs })
    }

    /// Fan from the grid centre: `azimuths` evenly spaced headings at each elevation.
    pub fn fan(spec: &VoxelGridSpec, azimuths: usize, elevations_deg: &[f64]) -> Self {
        let centre = (spec.origin + spec.extent_max()) * 0.5;
        let mut origins = Vec::with_capacity(azimuths * elevations_deg.len());
        let mut dirs = Vec::with_capacity(origins.capacity());
        for &el in elevations_deg {
            let el = el.to_radians();
            for a in 0..azimuths {
                let az = std::f64::consts::TAU * a as f64 / azimuths as f64;
                origins.push(centre);
                dirs.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        Self { origins, dirs }
    }

    pub fn default_fan(spec: &VoxelGridSpec) -> Self {
        Self::fan(spec, DEFAULT_AZIMUTHS, &DEFAULT_ELEVATIONS_DEG)
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

/// First occupied voxel along a ray, by 3D DDA. Returns the distance at which
/// the ray enters that voxel and its label.
pub fn first_hit(grid: &SemanticGrid, origin: &Vec3, dir: &Vec3) -> Option<(f64, u16)> {
    let spec = &grid.spec;
    let lo = spec.origin;
    let hi = spec.extent_max();
    let mut t_enter: f64 = 0.0;
    let mut t_exit = f64::INFINITY;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if origin[a] < lo[a] || origin[a] >= hi[a] {
                return None;
            }
        } else {
            let t1 = (lo[a] - origin[a]) / dir[a];
            let t2 = (hi[a] - origin[a]) / dir[a];
            t_enter = t_enter.max(t1.min(t2));
            t_exit = t_exit.min(t1.max(t2));
        }
    }
    if t_enter >= t_exit {
        return None;
    }

    let res = spec.resolution;
    let entry = origin + dir * t_enter;
    let mut cell = [0i64; 3];
    let mut step = [0i64; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    for a in 0..3 {
        let n = spec.dims[a] as i64;
        cell[a] = (((entry[a] - lo[a]) / res).floor() as i64).clamp(0, n - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (lo[a] + (cell[a] + 1) as f64 * res - origin[a]) / dir[a];
            t_delta[a] = res / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (lo[a] + cell[a] as f64 * res - origin[a]) / dir[a];
            t_delta[a] = -res / dir[a];
        }
    }

    let mut t = t_enter;
    loop {
        let i = spec.linear(cell[0] as usize, cell[1] as usize, cell[2] as usize);
        if grid.is_occupied(i) {
            return Some((t, grid.labels[i]));
        }
        let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
            0
        } else if t_max[1] <= t_max[2] {
            1
        } else {
            2
        };
        t = t_max[a];
        cell[a] += step[a];
        if cell[a] < 0 || cell[a] >= spec.dims[a] as i64 {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

/// RayIoU at each distance threshold, returned as `(threshold, value)` pairs.
///
/// Per ray, the first hits in both grids are compared: a true positive needs
/// both hits, matching classes and a distance gap within the threshold. Any
/// other predicted hit is a false positive, any other ground-truth hit a false
/// negative. `TP / (TP + FP + FN)`, or 1 when that denominator is zero.
pub fn ray_iou(pred: &SemanticGrid, gt: &SemanticGrid, rays: &RaySet, thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_compatible(pred, gt)?;
    if rays.is_empty() {
        return Err(Error::InvalidConfig("ray IoU needs at least one ray".into()));
    }
    if thresholds.iter().any(|t| !(*t >= 0.0)) {
        return Err(Error::InvalidConfig(format!("thresholds must be >= 0: {thresholds:?}")));
    }
    let hits: Vec<[Option<(f64, u16)>; 2]> =
        rays.origins.par_iter().zip(&rays.dirs).map(|(o, d)| [first_hit(pred, o, d), first_hit(gt, o, d)]).collect();
    Ok(thresholds
        .iter()
        .map(|&th| {
            let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
            for [p, g] in &hits {
                match (p, g) {
                    (Some((dp, cp)), Some((dg, cg))) if cp == cg && (dp - dg).abs() <= th => tp += 1,
                    _ => {
                        fp += p.is_some() as usize;
                        fn_ += g.is_some() as usize;
                    }
                }
            }
            let denom = tp + fp + fn_;
            (th, if denom == 0 { 1.0 } else { tp as f64 / denom as f64 })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub iou: f64,
    pub per_class_iou: Vec<Option<f64>>,
    pub class_names: Vec<String>,
    pub miou: f64,
    pub ray_iou: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn compute(pred: &SemanticGrid, gt: &SemanticGrid, rays: &RaySet, thresholds: &[f64]) -> Result<Self> {
        let iou = voxel_iou(pred, gt)?;
        let (per_class_iou, miou) = miou(pred, gt)?;
        Ok(Self {
            iou,
            per_class_iou,
            class_names: gt.classes.names().to_vec(),
            miou,
            ray_iou: ray_iou(pred, gt, rays, thresholds)?,
        })
    }

    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "iou={}", self.iou);
        let _ = writeln!(s, "miou={}", self.miou);
        for (name, v) in self.class_names.iter().zip(&self.per_class_iou) {
            match v {
                Some(v) => writeln!(s, "iou.{name}={v}"),
                None => writeln!(s, "iou.{name}=absent"),
            }
            .expect("writing to String");
        }
        for (t, v) in &self.ray_iou {
            let _ = writeln!(s, "rayiou@{t}={v}");
        }
        s
    }

    pub fn to_json(&self) -> Value {
        let per_class: Map<String, Value> = self
            .class_names
            .iter()
            .zip(&self.per_class_iou)
            .map(|(n, v)| (n.clone(), v.map_or(Value::Null, Value::from)))
            .collect();
        let rays: Map<String, Value> = self.ray_iou.iter().map(|(t, v)| (format!("{t}"), Value::from(*v))).collect();
        json!({
            "iou": self.iou,
            "miou": self.miou,
            "per_class_iou": per_class,
            "ray_iou": rays,
        })
    }
}
