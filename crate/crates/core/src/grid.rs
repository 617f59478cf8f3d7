//! Dyadic cell windows, rasterized region masks and grid functions.
//!
//! A [`GridFunction`] lives on a rectangular window of level-`L` cells. Its
//! carrier region is represented by the mask of cells whose centers classify
//! inside; outside the window the function is zero. Windows are chosen to
//! contain the support plus the unit kernel range, so every quadrature sum
//! sees all the cells it needs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, FractionalParams, Label, Point, Region};

/// Rectangle of level-`L` cells `lo + [0, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub dim: usize,
    pub level: u32,
    pub lo: [i64; 3],
    pub n: [usize; 3],
}

impl Window {
    /// Smallest window whose cells cover `b`.
    pub fn covering(b: &BBox, level: u32) -> Self {
        let scale = 2f64.powi(level as i32);
        let mut lo = [0i64; 3];
        let mut n = [1usize; 3];
        for a in 0..b.dim {
            let l = (b.lo[a] * scale).floor() as i64;
            let h = (b.hi[a] * scale).ceil() as i64;
            lo[a] = l;
            n[a] = (h - l).max(1) as usize;
        }
        Window { dim: b.dim, level, lo, n }
    }

    #[inline]
    pub fn h(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lattice coordinates of cell `i` (x fastest).
    #[inline]
    pub fn cell(&self, i: usize) -> [i64; 3] {
        let i0 = i % self.n[0];
        let r = i / self.n[0];
        let i1 = r % self.n[1];
        let i2 = r / self.n[1];
        [self.lo[0] + i0 as i64, self.lo[1] + i1 as i64, self.lo[2] + i2 as i64]
    }

    /// Window-relative coordinates of cell `i`.
    #[inline]
    pub fn local(&self, i: usize) -> [i64; 3] {
        let i0 = i % self.n[0];
        let r = i / self.n[0];
        [i0 as i64, (r % self.n[1]) as i64, (r / self.n[1]) as i64]
    }

    #[inline]
    pub fn center(&self, i: usize) -> Point {
        let c = self.cell(i);
        let h = self.h();
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = (c[a] as f64 + 0.5) * h;
        }
        p
    }

    /// Index of the lattice cell `c`, if inside the window.
    #[inline]
    pub fn index_of(&self, c: &[i64; 3]) -> Option<usize> {
        let mut idx = 0usize;
        let mut stride = 1usize;
        for a in 0..3 {
            let l = c[a] - self.lo[a];
            if l < 0 || l as usize >= self.n[a] {
                return None;
            }
            idx += l as usize * stride;
            stride *= self.n[a];
        }
        Some(idx)
    }

    /// Cell containing `x`, if inside the window.
    pub fn locate(&self, x: &Point) -> Option<usize> {
        let scale = 2f64.powi(self.level as i32);
        let mut c = [0i64; 3];
        for a in 0..self.dim {
            c[a] = (x[a] * scale).floor() as i64;
        }
        self.index_of(&c)
    }

    pub fn bbox(&self) -> BBox {
        let h = self.h();
        let mut b = BBox { dim: self.dim, lo: [0.0; 3], hi: [0.0; 3] };
        for a in 0..self.dim {
            b.lo[a] = self.lo[a] as f64 * h;
            b.hi[a] = (self.lo[a] + self.n[a] as i64) as f64 * h;
        }
        b
    }

    /// Indices of cells whose centers lie in the open ball `B(x, r)`.
    pub fn cells_in_ball(&self, x: &Point, r: f64) -> Vec<usize> {
        let h = self.h();
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..self.dim {
            lo[a] = (((x[a] - r) / h).floor() as i64).max(self.lo[a]);
            hi[a] = (((x[a] + r) / h).ceil() as i64).min(self.lo[a] + self.n[a] as i64 - 1);
        }
        let r2 = r * r;
        let mut out = Vec::new();
        for c2 in lo[2]..=hi[2] {
            for c1 in lo[1]..=hi[1] {
                for c0 in lo[0]..=hi[0] {
                    let c = [c0, c1, c2];
                    let mut d2 = 0.0;
                    for a in 0..self.dim {
                        let t = (c[a] as f64 + 0.5) * h - x[a];
                        d2 += t * t;
                    }
                    if d2 < r2 {
                        if let Some(i) = self.index_of(&c) {
                            out.push(i);
                        }
                    }
                }
            }
        }
        out
    }
}

/// Cells of a window whose centers classify inside a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMask {
    pub window: Window,
    pub cells: Vec<bool>,
}

impl CellMask {
    pub fn rasterize(region: &dyn Region, window: Window) -> Self {
        let cells = (0..window.len())
            .into_par_iter()
            .map(|i| region.label(&window.center(i)) == Label::InsideO)
            .collect();
        CellMask { window, cells }
    }

    pub fn full(window: Window) -> Self {
        CellMask { window, cells: vec![true; window.len()] }
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Cells inside `self` but not `other` (same window).
    pub fn minus(&self, other: &CellMask) -> Result<CellMask> {
        if self.window != other.window {
            return Err(Error::Contract("mask windows differ".into()));
        }
        let cells = self.cells.iter().zip(&other.cells).map(|(&a, &b)| a && !b).collect();
        Ok(CellMask { window: self.window, cells })
    }

    pub fn contains_mask(&self, other: &CellMask) -> bool {
        self.window == other.window && self.cells.iter().zip(&other.cells).all(|(&a, &b)| a || !b)
    }
}

/// A function sampled at the centers of the inside cells of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    region: String,
    params: FractionalParams,
    /// Bounding box of the carrier region; cells past it do not exist.
    bbox: BBox,
    mask: CellMask,
    values: Vec<f64>,
}

/// Metadata line of the CSV format.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct CsvHeader {
    region: String,
    level: u32,
    params: FractionalParams,
    bbox: BBox,
    window: Window,
}

impl GridFunction {
    /// Samples `f` at the centers of the inside cells; zero elsewhere.
    pub fn sample<F>(region: &dyn Region, mask: CellMask, params: FractionalParams, f: F) -> Result<Self>
    where
        F: Fn(&Point) -> f64 + Sync,
    {
        if params.d != region.dim() || mask.window.dim != region.dim() {
            return Err(Error::InvalidParams(format!(
                "dimension mismatch: params d = {}, region d = {}",
                params.d,
                region.dim()
            )));
        }
        let w = mask.window;
        let values = (0..w.len())
            .into_par_iter()
            .map(|i| if mask.cells[i] { f(&w.center(i)) } else { 0.0 })
            .collect();
        Ok(GridFunction { region: region.name().to_string(), params, bbox: *region.bbox(), mask, values })
    }

    pub fn from_parts(region: &str, params: FractionalParams, bbox: BBox, mask: CellMask, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.cells.len() {
            return Err(Error::Contract(format!("{} values for {} cells", values.len(), mask.cells.len())));
        }
        for (v, &m) in values.iter_mut().zip(&mask.cells) {
            if !m {
                *v = 0.0;
            }
        }
        Ok(GridFunction { region: region.to_string(), params, bbox, mask, values })
    }

    pub fn region_name(&self) -> &str {
        &self.region
    }

    pub fn params(&self) -> FractionalParams {
        self.params
    }

    pub fn with_params(mut self, params: FractionalParams) -> Self {
        self.params = params;
        self
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn window(&self) -> &Window {
        &self.mask.window
    }

    pub fn mask(&self) -> &CellMask {
        &self.mask
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn level(&self) -> u32 {
        self.mask.window.level
    }

    pub fn dim(&self) -> usize {
        self.mask.window.dim
    }

    pub fn h(&self) -> f64 {
        self.mask.window.h()
    }

    /// Number of inside cells.
    pub fn inside_count(&self) -> usize {
        self.mask.count()
    }

    /// Indices of cells with non-zero values, ascending.
    pub fn support(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.values[i] != 0.0).collect()
    }

    /// Box spanned by the support cells, if any.
    pub fn support_box(&self) -> Option<BBox> {
        let w = &self.mask.window;
        let h = w.h();
        let mut b = BBox { dim: w.dim, lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3] };
        let mut any = false;
        for i in self.support() {
            any = true;
            let c = w.cell(i);
            for a in 0..w.dim {
                b.lo[a] = b.lo[a].min(c[a] as f64 * h);
                b.hi[a] = b.hi[a].max((c[a] + 1) as f64 * h);
            }
        }
        any.then_some(b)
    }

    /// The same function on another window of the same level, carried by
    /// `region`. Every support cell must classify inside the new carrier.
    pub fn embed(&self, region: &dyn Region, window: Window) -> Result<GridFunction> {
        if window.level != self.level() || window.dim != self.dim() {
            return Err(Error::Contract("embedding needs a window of the same level and dimension".into()));
        }
        let mask = CellMask::rasterize(region, window);
        let mut values = vec![0.0; window.len()];
        let w = &self.mask.window;
        for i in self.support() {
            match window.index_of(&w.cell(i)) {
                Some(j) if mask.cells[j] => values[j] = self.values[i],
                _ => {
                    return Err(Error::Contract(format!(
                        "support cell {:?} is not an inside cell of the target window",
                        w.cell(i)
                    )))
                }
            }
        }
        Ok(GridFunction { region: region.name().to_string(), params: self.params, bbox: *region.bbox(), mask, values })
    }

    /// Value at lattice cell `c` (zero off the inside cells).
    pub fn value_at(&self, c: &[i64; 3]) -> f64 {
        self.mask.window.index_of(c).map_or(0.0, |i| self.values[i])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridFunction {
        let values = self.values.iter().zip(&self.mask.cells).map(|(&v, &m)| if m { f(v) } else { 0.0 }).collect();
        GridFunction { values, ..self.clone() }
    }

    pub fn scale(&self, alpha: f64) -> GridFunction {
        self.map(|v| alpha * v)
    }

    /// `Σ αₖ gₖ` over functions on the same cells.
    pub fn linear_combination(terms: &[(f64, &GridFunction)]) -> Result<GridFunction> {
        let (_, first) = terms.first().ok_or_else(|| Error::Contract("empty combination".into()))?;
        let mut values = vec![0.0; first.values.len()];
        for (alpha, g) in terms {
            if g.mask != first.mask {
                return Err(Error::Contract("combined functions live on different cells".into()));
            }
            for (acc, v) in values.iter_mut().zip(&g.values) {
                *acc += alpha * v;
            }
        }
        Ok(GridFunction { values, ..(*first).clone() })
    }

    /// Largest `|self − other|` over cells inside both.
    pub fn max_abs_diff(&self, other: &GridFunction) -> Result<f64> {
        if self.mask.window != other.mask.window {
            return Err(Error::Contract("windows differ".into()));
        }
        Ok((0..self.values.len())
            .filter(|&i| self.mask.cells[i] && other.mask.cells[i])
            .map(|i| (self.values[i] - other.values[i]).abs())
            .fold(0.0, f64::max))
    }

    /// CSV of the inside cells: a `# {json}` header line, then rows
    /// `i_1..i_d,value` with lattice cell indices.
    pub fn to_csv(&self) -> String {
        let w = &self.mask.window;
        let header = CsvHeader {
            region: self.region.clone(),
            level: w.level,
            params: self.params,
            bbox: self.bbox,
            window: *w,
        };
        let mut s = format!("# {}\n", serde_json::to_string(&header).expect("header serializes"));
        for a in 1..=w.dim {
            let _ = write!(s, "i_{a},");
        }
        s.push_str("value\n");
        for i in 0..w.len() {
            if !self.mask.cells[i] {
                continue;
            }
            let c = w.cell(i);
            for a in 0..w.dim {
                let _ = write!(s, "{},", c[a]);
            }
            let _ = writeln!(s, "{:e}", self.values[i]);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<GridFunction> {
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| Error::Config("empty grid CSV".into()))?;
        let json = first.strip_prefix("# ").ok_or_else(|| Error::Config("missing JSON header".into()))?;
        let header: CsvHeader = serde_json::from_str(json)?;
        let w = header.window;
        lines.next();
        let mut cells = vec![false; w.len()];
        let mut values = vec![0.0; w.len()];
        for (k, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != w.dim + 1 {
                return Err(Error::Config(format!("row {}: expected {} fields", k + 1, w.dim + 1)));
            }
            let mut c = [0i64; 3];
            for a in 0..w.dim {
                c[a] = fields[a].trim().parse().map_err(|e| Error::Config(format!("row {}: {e}", k + 1)))?;
            }
            c[w.dim..].copy_from_slice(&w.lo[w.dim..]);
            let i = w.index_of(&c).ok_or_else(|| Error::Config(format!("row {}: cell outside window", k + 1)))?;
            cells[i] = true;
            values[i] = fields[w.dim].trim().parse().map_err(|e| Error::Config(format!("row {}: {e}", k + 1)))?;
        }
        Ok(GridFunction { region: header.region, params: header.params, bbox: header.bbox, mask: CellMask { window: w, cells }, values })
    }
}
