//! Raster export: binary PGM images of cell masks and grid functions, for
//! planar windows. The top image row is the largest second coordinate.

use crate::error::{Error, Result};
use crate::grid::{CellMask, GridFunction, Window};

fn header(w: &Window, comment: Option<&str>) -> Result<Vec<u8>> {
    if w.dim != 2 {
        return Err(Error::InvalidParams(format!("PGM export needs a planar window, got d = {}", w.dim)));
    }
    let mut out = b"P5\n".to_vec();
    if let Some(c) = comment {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{} {}\n255\n", w.n[0], w.n[1]).as_bytes());
    Ok(out)
}

fn raster(w: &Window, mut pixel: impl FnMut(usize) -> u8) -> Vec<u8> {
    let mut out = Vec::with_capacity(w.n[0] * w.n[1]);
    for row in (0..w.n[1]).rev() {
        for col in 0..w.n[0] {
            out.push(pixel(row * w.n[0] + col));
        }
    }
    out
}

/// Inside cells white, the rest black.
pub fn pgm_mask(mask: &CellMask, comment: Option<&str>) -> Result<Vec<u8>> {
    let w = &mask.window;
    let mut out = header(w, comment)?;
    out.extend(raster(w, |i| if mask.cells[i] { 255 } else { 0 }));
    Ok(out)
}

/// Values mapped linearly to grey levels, zero at mid-grey and the largest
/// magnitude at black or white.
pub fn pgm_heatmap(f: &GridFunction, comment: Option<&str>) -> Result<Vec<u8>> {
    let w = f.window();
    let mut out = header(w, comment)?;
    let scale = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    out.extend(raster(w, |i| {
        let t = if scale > 0.0 { f.values()[i] / scale } else { 0.0 };
        (127.5 + 127.5 * t).round().clamp(0.0, 255.0) as u8
    }));
    Ok(out)
}
