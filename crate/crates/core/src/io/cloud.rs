use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::Quaternion;
use serde::{Deserialize, Serialize};

use crate::{ClassTable, Error, Gaussian3D, GaussianCloud, Quat, Result, Vec3};

/// Field names match [`Gaussian3D`].
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRecord {
    mean: [f64; 3],
    scales: [f64; 3],
    rot: [f64; 4],
    opacity: f64,
    logits: Vec<f64>,
    parent: usize,
    layer: usize,
}

pub fn write_cloud<W: Write + ?Sized>(out: &mut W, cloud: &GaussianCloud) -> Result<()> {
    for g in &cloud.gaussians {
        let q = g.rot.quaternion();
        let rec = GaussianRecord {
            mean: g.mean.into(),
            scales: g.scales.into(),
            rot: [q.w, q.i, q.j, q.k],
            opacity: g.opacity,
            logits: g.logits.to_vec(),
            parent: g.parent,
            layer: g.layer,
        };
        serde_json::to_writer(&mut *out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a cloud dump. Class names are not stored, so the table is anonymous
/// with as many classes as the records carry logits (one for an empty file).
pub fn read_cloud<R: BufRead>(reader: R, path: &Path) -> Result<GaussianCloud> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut gaussians = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: GaussianRecord =
            serde_json::from_str(&line).map_err(|e| err(i + 1, format!("bad Gaussian record: {e}")))?;
        let finite = r.mean.iter().chain(&r.scales).chain(&r.rot).chain(&r.logits).all(|v| v.is_finite())
            && r.opacity.is_finite();
        if !finite || r.scales.iter().any(|&s| s <= 0.0) || r.opacity < 0.0 {
            return Err(err(i + 1, "non-finite or out-of-range Gaussian parameter".into()));
        }
        if *width.get_or_insert(r.logits.len()) != r.logits.len() {
            return Err(err(i + 1, "inconsistent logits length".into()));
        }
        let [w, x, y, z] = r.rot;
        let q = Quaternion::new(w, x, y, z);
        if q.norm() < 1e-12 {
            return Err(err(i + 1, "zero-length quaternion".into()));
        }
        gaussians.push(Gaussian3D {
            mean: Vec3::from(r.mean),
            scales: Vec3::from(r.scales),
            rot: Quat::from_quaternion(q),
            opacity: r.opacity,
            logits: Arc::from(r.logits),
            parent: r.parent,
            layer: r.layer,
        });
    }
    Ok(GaussianCloud { gaussians, classes: ClassTable::anonymous(width.unwrap_or(1).max(1))? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{gaussianize, GaussianizeConfig, SuperQuadric};

    #[test]
    fn dump_and_reload() {
        let sq = SuperQuadric::new(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(1.0, 0.7, 0.5),
            [0.9, 0.1, 0.2, 0.3],
            0.8,
            vec![0.5, 1.5],
            0.6,
            0.7,
        )
        .unwrap();
        let (cloud, _) = gaussianize(&sq, &GaussianizeConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &cloud).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 720);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        for key in ["mean", "scales", "rot", "opacity", "logits", "parent", "layer"] {
            assert!(first.get(key).is_some(), "missing {key}");
        }
        let back = read_cloud(buf.as_slice(), Path::new("c.jsonl")).unwrap();
        assert_eq!(back.len(), 720);
        for (a, b) in cloud.gaussians.iter().zip(&back.gaussians) {
            assert_eq!(a.mean, b.mean);
            assert_eq!(a.opacity, b.opacity);
            assert!(a.rot.angle_to(&b.rot) < 1e-12);
        }
        assert!(read_cloud(&b"{\"mean\":1}\n"[..], Path::new("c")).is_err());
        assert!(read_cloud(&b""[..], Path::new("c")).unwrap().is_empty());
    }
}
