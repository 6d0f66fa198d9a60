use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{ClassTable, Error, Result, Scene, SuperQuadric, Vec3};

pub const SCENE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    classes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PrimitiveRecord {
    mu: [f64; 3],
    scale: [f64; 3],
    quat: [f64; 4],
    opacity: f64,
    eps: [f64; 2],
    logits: Vec<f64>,
}

pub fn write_scene<W: Write + ?Sized>(out: &mut W, scene: &Scene) -> Result<()> {
    let header = Header { version: SCENE_VERSION, classes: scene.classes.names().to_vec() };
    serde_json::to_writer(&mut *out, &header).map_err(std::io::Error::from)?;
    out.write_all(b"\n")?;
    for p in &scene.primitives {
        let rec = PrimitiveRecord {
            mu: p.mu.into(),
            scale: p.scale.into(),
            quat: p.quat_wxyz(),
            opacity: p.opacity,
            eps: [p.eps1, p.eps2],
            logits: p.logits.to_vec(),
        };
        serde_json::to_writer(&mut *out, &rec).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<Scene> {
    read_scene_from(BufReader::new(File::open(path)?), path)
}

/// Parses a scene; `path` is only used in error messages. Blank lines are skipped.
pub fn read_scene_from<R: BufRead>(reader: R, path: &Path) -> Result<Scene> {
    let err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), line, message };
    let mut classes: Option<ClassTable> = None;
    let mut primitives = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match &classes {
            None => {
                let h: Header = serde_json::from_str(&line).map_err(|e| err(line_no, format!("bad header: {e}")))?;
                if h.version != SCENE_VERSION {
                    return Err(err(line_no, format!("unsupported scene version {}", h.version)));
                }
                classes = Some(ClassTable::new(h.classes).map_err(|e| err(line_no, e.to_string()))?);
            }
            Some(table) => {
                let r: PrimitiveRecord =
                    serde_json::from_str(&line).map_err(|e| err(line_no, format!("bad primitive record: {e}")))?;
                if r.logits.len() != table.len() {
                    return Err(err(line_no, format!("expected {} logits, found {}", table.len(), r.logits.len())));
                }
                let sq = SuperQuadric::new(
                    Vec3::from(r.mu),
                    Vec3::from(r.scale),
                    r.quat,
                    r.opacity,
                    r.logits,
                    r.eps[0],
                    r.eps[1],
                )
                .map_err(|e| err(line_no, e.to_string()))?;
                primitives.push(sq);
            }
        }
    }
    let classes = classes.ok_or_else(|| err(0, "missing header record".into()))?;
    Scene::new(primitives, classes)
}
