use std::io::Write;

use crate::{Error, Result};

/// Class id to RGB.
pub type Palette = Vec<[u8; 3]>;

/// Parses one `r g b` line per class, in class-id order. Blank lines and
/// lines starting with `#` are ignored.
pub fn parse_palette(text: &str) -> Result<Palette> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let vals: Vec<u8> = l
                .split_whitespace()
                .map(|t| t.parse::<u8>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("palette line {}: {e}", i + 1)))?;
            match vals.as_slice() {
                [r, g, b] => Ok([*r, *g, *b]),
                _ => Err(Error::Format(format!("palette line {}: expected `r g b`", i + 1))),
            }
        })
        .collect()
}

/// Deterministic, well-separated colours for `n` classes.
pub fn default_palette(n: usize) -> Palette {
    (0..n)
        .map(|i| {
            // Golden-angle hue walk at fixed saturation/value.
            let h = (i as f64 * 0.618_033_988_75).fract() * 6.0;
            let x = 1.0 - (h % 2.0 - 1.0).abs();
            let (r, g, b) = match h as u32 {
                0 => (1.0, x, 0.0),
                1 => (x, 1.0, 0.0),
                2 => (0.0, 1.0, x),
                3 => (0.0, x, 1.0),
                4 => (x, 0.0, 1.0),
                _ => (1.0, 0.0, x),
            };
            let v = |c: f64| (55.0 + 200.0 * c).round() as u8;
            [v(r), v(g), v(b)]
        })
        .collect()
}

fn check_len(width: usize, height: usize, len: usize) -> Result<()> {
    if width * height != len {
        return Err(Error::Mismatch(format!("{width}x{height} image with {len} pixels")));
    }
    Ok(())
}

/// Little-endian PFM (scale -1), rows stored bottom to top.
pub fn write_pfm<W: Write + ?Sized>(out: &mut W, width: usize, height: usize, data: &[f32]) -> Result<()> {
    check_len(width, height, data.len())?;
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    let mut row = Vec::with_capacity(width * 4);
    for y in (0..height).rev() {
        row.clear();
        for v in &data[y * width..(y + 1) * width] {
            row.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&row)?;
    }
    Ok(())
}

/// 8-bit P5 PGM of values in `[0, 1]`.
pub fn write_pgm<W: Write + ?Sized>(out: &mut W, width: usize, height: usize, data: &[f32]) -> Result<()> {
    check_len(width, height, data.len())?;
    write!(out, "P5\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// P6 PPM of class labels; labels without a palette entry (free) are black.
pub fn write_ppm<W: Write + ?Sized>(
    out: &mut W,
    width: usize,
    height: usize,
    labels: &[u16],
    palette: &[[u8; 3]],
) -> Result<()> {
    check_len(width, height, labels.len())?;
    write!(out, "P6\n{width} {height}\n255\n")?;
    let bytes: Vec<u8> = labels.iter().flat_map(|&l| palette.get(l as usize).copied().unwrap_or([0, 0, 0])).collect();
    out.write_all(&bytes)?;
    Ok(())
}
