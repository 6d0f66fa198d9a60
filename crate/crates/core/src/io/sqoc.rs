//! `SQOC` semantic grid files.
//!
//! ```text
//! "SQOC"            4 bytes
//! version           u32 (= 1)
//! nx, ny, nz        u32 x 3
//! origin            f32 x 3
//! resolution        f32
//! C                 u16
//! labels            u8 x nx*ny*nz, x fastest, 255 = free
//! has_occupancy     u8 (0 or 1)
//! occupancy         f32 x nx*ny*nz, present iff has_occupancy = 1
//! ```
//!
//! All values little-endian.

use std::io::{Read, Write};

use crate::voxelize::{SemanticGrid, VoxelGridSpec};
use crate::{ClassTable, Error, Result, Vec3};

pub const SQOC_MAGIC: &[u8; 4] = b"SQOC";
pub const SQOC_VERSION: u32 = 1;
const FREE_BYTE: u8 = 255;

/// Contents of an `SQOC` file.
#[derive(Debug, Clone, PartialEq)]
pub struct SqocGrid {
    pub grid: SemanticGrid,
    pub occupancy: Option<Vec<f32>>,
}

pub fn write_sqoc<W: Write + ?Sized>(out: &mut W, grid: &SemanticGrid, occupancy: Option<&[f64]>) -> Result<()> {
    let c = grid.classes.len();
    if c >= FREE_BYTE as usize {
        return Err(Error::Format(format!("SQOC stores at most 254 classes, grid has {c}")));
    }
    let n = grid.spec.voxel_count();
    if grid.labels.len() != n || occupancy.is_some_and(|o| o.len() != n) {
        return Err(Error::Mismatch("grid payload does not match its dims".into()));
    }
    let dims: Vec<u32> = grid
        .spec
        .dims
        .iter()
        .map(|&d| u32::try_from(d).map_err(|_| Error::Format("grid dimension exceeds u32".into())))
        .collect::<Result<_>>()?;

    let mut buf = Vec::with_capacity(32 + n * if occupancy.is_some() { 5 } else { 1 });
    buf.extend_from_slice(SQOC_MAGIC);
    buf.extend_from_slice(&SQOC_VERSION.to_le_bytes());
    for d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in grid.spec.origin.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    buf.extend_from_slice(&(grid.spec.resolution as f32).to_le_bytes());
    buf.extend_from_slice(&(c as u16).to_le_bytes());
    let free = grid.classes.free_index();
    for &l in &grid.labels {
        buf.push(if l == free { FREE_BYTE } else { l as u8 });
    }
    match occupancy {
        Some(o) => {
            buf.push(1);
            for v in o {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        None => buf.push(0),
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads an `SQOC` file. Class names are not stored; the table is anonymous.
pub fn read_sqoc<R: Read>(mut input: R) -> Result<SqocGrid> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };

    if cur.take(4)? != SQOC_MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = cur.u32()?;
    if version != SQOC_VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let dims = [cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize];
    let origin = Vec3::new(cur.f32()? as f64, cur.f32()? as f64, cur.f32()? as f64);
    let resolution = cur.f32()? as f64;
    let c = cur.u16()? as usize;
    if c == 0 || c >= FREE_BYTE as usize {
        return Err(Error::Format(format!("invalid class count {c}")));
    }
    let spec = VoxelGridSpec::new(origin, dims, resolution).map_err(|e| Error::Format(e.to_string()))?;
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Format("grid too large".into()))?;
    let classes = ClassTable::anonymous(c)?;
    let free = classes.free_index();
    let labels = cur
        .take(n)?
        .iter()
        .map(|&b| match b {
            FREE_BYTE => Ok(free),
            b if (b as usize) < c => Ok(b as u16),
            b => Err(Error::Format(format!("label {b} out of range for {c} classes"))),
        })
        .collect::<Result<Vec<u16>>>()?;
    let occupancy = match cur.take(1)?[0] {
        0 => None,
        1 => Some(
            cur.take(n.checked_mul(4).ok_or_else(|| Error::Format("grid too large".into()))?)?
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        ),
        other => return Err(Error::Format(format!("bad occupancy flag {other}"))),
    };
    if cur.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(SqocGrid { grid: SemanticGrid { labels, spec, classes }, occupancy })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn f32(&mut self) -> Result<f32> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}
