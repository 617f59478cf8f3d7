//! Midpoint-rule quadrature of the truncated Gagliardo seminorm, L^p norms
//! and the fractional Hardy term on grid functions.
//!
//! With `S = {f ≠ 0}` and `A` the inside cells, the ordered double sum over
//! `A × A` splits exactly as
//!
//! ```text
//! [f]^p = Σ_{x∈S} Σ_{y∈S} K |f(x) − f(y)|^p  +  2 Σ_{x∈S} |f(x)|^p (Φ_A(x) − Φ_S(x))
//! ```
//!
//! where `Φ_B(x) = Σ_{y∈B, 0<|x−y|<1} K(x, y)`. Only pairs touching the
//! support are enumerated; `Φ_A` is a row-wise dot product of the kernel
//! with the mask. Per-cell partial sums are combined with compensated
//! summation in index order, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use rustc_hash::FxHashMap;

use crate::geometry::{BBox, FractionalParams, Point, PointCloud};
use crate::grid::{CellMask, GridFunction, Window};
use crate::numeric::{stable_sum, unit_sphere_area, NeumaierSum};

/// Largest squared radius (in cells) tabulated; beyond it weights are
/// computed on the fly.
const MAX_TABULATED_R2: usize = 1 << 23;

/// Kernel weights `h^{2d} (|o| h)^{-(sp+d)}` for lattice offsets with
/// `0 < |o| h < 1`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    dim: usize,
    h: f64,
    exponent: f64,
    /// Kernel range in cells, `2^L`.
    m: i64,
    by_r2: Vec<f64>,
    /// Rows `(o₁, o₂, o₀_max)`: offsets `(-o₀_max..=o₀_max, o₁, o₂)`.
    rows: Vec<(i64, i64, i64)>,
    /// Row weights, concatenated in row order.
    row_weights: Vec<f64>,
    /// Per-row prefix sums (one leading zero per row), for full masks.
    row_prefix: Vec<f64>,
    total: f64,
}

impl KernelTable {
    pub fn new(params: &FractionalParams, level: u32) -> Self {
        let dim = params.d;
        let h = 0.5f64.powi(level as i32);
        let exponent = params.kernel_exponent();
        let m = 1i64 << level;
        let m2 = (m * m) as usize;
        let hd2 = h.powi(2 * dim as i32);
        let weight = |r2: i64| hd2 * ((r2 as f64).sqrt() * h).powf(-exponent);
        let by_r2 = if m2 <= MAX_TABULATED_R2 {
            (0..m2).map(|r2| if r2 == 0 { 0.0 } else { weight(r2 as i64) }).collect()
        } else {
            Vec::new()
        };
        let mut rows = Vec::new();
        let mut row_weights = Vec::new();
        let r1 = if dim > 1 { m - 1 } else { 0 };
        let r2max = if dim > 2 { m - 1 } else { 0 };
        for o2 in -r2max..=r2max {
            for o1 in -r1..=r1 {
                let rest = o1 * o1 + o2 * o2;
                if rest >= m * m {
                    continue;
                }
                // largest o₀ with o₀² + rest < m²
                let mut w0 = ((m * m - rest) as f64).sqrt() as i64;
                while w0 * w0 + rest >= m * m {
                    w0 -= 1;
                }
                while (w0 + 1) * (w0 + 1) + rest < m * m {
                    w0 += 1;
                }
                rows.push((o1, o2, w0));
                for o0 in -w0..=w0 {
                    let r2 = o0 * o0 + rest;
                    row_weights.push(if r2 == 0 { 0.0 } else { weight(r2) });
                }
            }
        }
        let mut row_prefix = Vec::with_capacity(row_weights.len() + rows.len());
        let mut off = 0;
        for &(_, _, w0) in &rows {
            let len = (2 * w0 + 1) as usize;
            let mut acc = 0.0;
            row_prefix.push(0.0);
            for &v in &row_weights[off..off + len] {
                acc += v;
                row_prefix.push(acc);
            }
            off += len;
        }
        let total = stable_sum(&row_weights);
        KernelTable { dim, h, exponent, m, by_r2, rows, row_weights, row_prefix, total }
    }

    #[inline]
    fn weight_r2(&self, r2: i64) -> f64 {
        if r2 <= 0 || r2 >= self.m * self.m {
            0.0
        } else if let Some(&w) = self.by_r2.get(r2 as usize) {
            w
        } else {
            self.h.powi(2 * self.dim as i32) * ((r2 as f64).sqrt() * self.h).powf(-self.exponent)
        }
    }

    /// `Σ_o K(o)`, the value of `Φ` for a fully inside unit ball.
    pub fn total(&self) -> f64 {
        self.total
    }

    /// `Φ_B(x)` for cell `i`, with `B` given as a 0/1 vector on the window
    /// (`None`: every window cell). The flag reports whether the kernel
    /// range leaves the window.
    fn phi(&self, w: &Window, mask: Option<&[f64]>, i: usize) -> (f64, bool) {
        let c = w.local(i);
        let n = [w.n[0] as i64, w.n[1] as i64, w.n[2] as i64];
        let mut clipped = false;
        let mut acc = NeumaierSum::default();
        let mut off = 0usize;
        let mut poff = 0usize;
        for &(o1, o2, w0) in &self.rows {
            let len = (2 * w0 + 1) as usize;
            let y = c[1] + o1;
            let z = c[2] + o2;
            if y < 0 || y >= n[1] || z < 0 || z >= n[2] {
                clipped = true;
            } else {
                let x0 = c[0] - w0;
                let x1 = c[0] + w0;
                let lo = x0.max(0);
                let hi = x1.min(n[0] - 1);
                if lo != x0 || hi != x1 {
                    clipped = true;
                }
                if lo <= hi {
                    let (a, b) = ((lo - x0) as usize, (hi - x0) as usize + 1);
                    match mask {
                        None => acc.add(self.row_prefix[poff + b] - self.row_prefix[poff + a]),
                        Some(mask) => {
                            let base = ((z * n[1] + y) * n[0]) as usize;
                            let ws = &self.row_weights[off + a..off + b];
                            let ms = &mask[base + lo as usize..base + hi as usize + 1];
                            acc.add(ws.iter().zip(ms).map(|(u, v)| u * v).sum());
                        }
                    }
                }
            }
            off += len;
            poff += len + 1;
        }
        (acc.value(), clipped)
    }

    /// Whether the unit ball around cell `i` stays inside the window.
    fn ball_inside(&self, w: &Window, i: usize) -> bool {
        let c = w.local(i);
        (0..self.dim).all(|a| c[a] - (self.m - 1) >= 0 && c[a] + (self.m - 1) < w.n[a] as i64)
    }
}

/// Whether the kernel range around cell `i` leaving the window is harmless:
/// only allowed where the window edge is the carrier's bounding box.
fn clipped_at_bbox(w: &Window, b: &BBox, i: usize) -> bool {
    let wb = w.bbox();
    let x = w.center(i);
    (0..w.dim).all(|a| (x[a] - 1.0 >= wb.lo[a] || wb.lo[a] <= b.lo[a]) && (x[a] + 1.0 <= wb.hi[a] || wb.hi[a] >= b.hi[a]))
}

#[inline]
fn abs_pow(v: f64, p: f64) -> f64 {
    let a = v.abs();
    if p == 2.0 {
        a * a
    } else if p == 1.0 {
        a
    } else if p == 0.5 {
        a.sqrt()
    } else {
        a.powf(p)
    }
}

/// `[f]^p`, the p-th power of the truncated seminorm.
pub fn seminorm_p(f: &GridFunction) -> Result<f64> {
    Quadrature::new(f.params(), f.mask().clone(), *f.bbox()).seminorm_p(f)
}

/// `[f]_{W^{s,p}}` over the carrier of `f`.
pub fn seminorm_wsp(f: &GridFunction) -> Result<f64> {
    Ok(seminorm_p(f)?.powf(1.0 / f.params().p))
}

/// Kernel table plus a set `B` of cells, with memoized `Φ_B` values.
/// Reusing one quadrature across functions on the same cells avoids
/// recomputing the row-wise kernel sums.
#[derive(Debug, Clone)]
pub struct Quadrature {
    params: FractionalParams,
    table: KernelTable,
    mask: CellMask,
    weights: Option<Vec<f64>>,
    carrier: BBox,
    cache: FxHashMap<usize, f64>,
}

impl Quadrature {
    /// `carrier` is the bounding box of the region the cells belong to;
    /// kernel ranges may only leave the window across its faces.
    pub fn new(params: FractionalParams, mask: CellMask, carrier: BBox) -> Self {
        let table = KernelTable::new(&params, mask.window.level);
        let weights = if mask.cells.iter().all(|&c| c) {
            None
        } else {
            Some(mask.cells.iter().map(|&c| if c { 1.0 } else { 0.0 }).collect())
        };
        Quadrature { params, table, mask, weights, carrier, cache: FxHashMap::default() }
    }

    pub fn params(&self) -> FractionalParams {
        self.params
    }

    pub fn mask(&self) -> &CellMask {
        &self.mask
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    fn compute_phi(&self, i: usize) -> Result<f64> {
        let w = &self.mask.window;
        if self.weights.is_none() && self.table.ball_inside(w, i) {
            return Ok(self.table.total());
        }
        let (v, clipped) = self.table.phi(w, self.weights.as_deref(), i);
        if clipped && !clipped_at_bbox(w, &self.carrier, i) {
            return Err(Error::WindowTooSmall(format!("kernel range of cell {:?} leaves the window", w.cell(i))));
        }
        Ok(v)
    }

    /// `Φ_B` at cell `i`.
    pub fn phi(&self, i: usize) -> Result<f64> {
        match self.cache.get(&i) {
            Some(&v) => Ok(v),
            None => self.compute_phi(i),
        }
    }

    /// Memoize `Φ_B` for `cells`.
    pub fn precompute(&mut self, cells: &[usize]) -> Result<()> {
        let todo: Vec<usize> = cells.iter().copied().filter(|i| !self.cache.contains_key(i)).collect();
        let vals: Vec<f64> = todo.par_iter().map(|&i| self.compute_phi(i)).collect::<Result<_>>()?;
        self.cache.extend(todo.into_iter().zip(vals));
        Ok(())
    }

    fn check(&self, f: &GridFunction) -> Result<()> {
        if f.window() != &self.mask.window || f.params() != self.params {
            return Err(Error::Contract("function and quadrature live on different grids".into()));
        }
        Ok(())
    }

    /// Per support cell: `|f(x)|^p Φ_B(x)`.
    fn phi_terms(&self, f: &GridFunction) -> Result<Vec<f64>> {
        self.check(f)?;
        let p = self.params.p;
        f.support().par_iter().map(|&i| Ok(abs_pow(f.values()[i], p) * self.phi(i)?)).collect()
    }

    /// `Σ_{x∈S} |f(x)|^p Φ_B(x)`.
    pub fn weighted_phi(&self, f: &GridFunction) -> Result<f64> {
        Ok(stable_sum(&self.phi_terms(f)?))
    }

    /// `[f]^p` over `B`; `f` must vanish off `B`.
    pub fn seminorm_p(&self, f: &GridFunction) -> Result<f64> {
        self.check(f)?;
        if f.mask() != &self.mask {
            return Err(Error::Contract("seminorm cells differ from the function's carrier cells".into()));
        }
        let pairs = support_pair_sums(f, &self.table, self.params.p);
        let phi = self.phi_terms(f)?;
        let mut total = NeumaierSum::default();
        for (a, b) in pairs.iter().zip(&phi) {
            total.add(*a);
            total.add(2.0 * b);
        }
        Ok(total.value().max(0.0))
    }
}

/// Per support cell `x`: `Σ_{y∈S, y>x} 2K (|fx − fy|^p − |fx|^p − |fy|^p)`.
fn support_pair_sums(f: &GridFunction, table: &KernelTable, p: f64) -> Vec<f64> {
    let w = f.window();
    let support = f.support();
    let vals = f.values();
    let m = table.m;
    let coords: Vec<[i64; 3]> = support.iter().map(|&i| w.cell(i)).collect();
    let powv: Vec<f64> = support.iter().map(|&i| abs_pow(vals[i], p)).collect();
    let fv: Vec<f64> = support.iter().map(|&i| vals[i]).collect();

    // buckets of unit side, keyed by lattice cell / m
    let mut keys: Vec<([i64; 3], usize)> =
        coords.iter().enumerate().map(|(k, c)| ([c[0].div_euclid(m), c[1].div_euclid(m), c[2].div_euclid(m)], k)).collect();
    keys.sort();
    let mut bucket_keys: Vec<[i64; 3]> = Vec::new();
    let mut bucket_members: Vec<Vec<usize>> = Vec::new();
    for (key, k) in keys {
        if bucket_keys.last() != Some(&key) {
            bucket_keys.push(key);
            bucket_members.push(Vec::new());
        }
        bucket_members.last_mut().unwrap().push(k);
    }
    let bucket_of = |key: &[i64; 3]| bucket_keys.binary_search(key).ok();
    let dim = w.dim;
    let r1 = if dim > 1 { 1 } else { 0 };
    let r2 = if dim > 2 { 1 } else { 0 };

    (0..support.len())
        .into_par_iter()
        .map(|k| {
            let c = coords[k];
            let key = [c[0].div_euclid(m), c[1].div_euclid(m), c[2].div_euclid(m)];
            let mut acc = NeumaierSum::default();
            for d2 in -r2..=r2 {
                for d1 in -r1..=r1 {
                    for d0 in -1..=1 {
                        let nk = [key[0] + d0, key[1] + d1, key[2] + d2];
                        let Some(b) = bucket_of(&nk) else { continue };
                        let mut row = 0.0;
                        for &j in &bucket_members[b] {
                            if j <= k {
                                continue;
                            }
                            let cj = coords[j];
                            let dx = c[0] - cj[0];
                            let dy = c[1] - cj[1];
                            let dz = c[2] - cj[2];
                            let kw = table.weight_r2(dx * dx + dy * dy + dz * dz);
                            if kw != 0.0 {
                                row += kw * (abs_pow(fv[k] - fv[j], p) - powv[k] - powv[j]);
                            }
                        }
                        acc.add(2.0 * row);
                    }
                }
            }
            acc.value()
        })
        .collect()
}

/// Cross term `Σ_{x∈S} |f(x)|^p Φ_{𝑶∖O}(x)` of the zero-extension splitting.
pub fn cross_term(f: &GridFunction, added: &CellMask) -> Result<f64> {
    Quadrature::new(f.params(), added.clone(), *f.bbox()).weighted_phi(f)
}

/// `‖f‖_{L^p}` by the midpoint rule.
pub fn lp_norm(f: &GridFunction) -> f64 {
    lp_norm_p(f).powf(1.0 / f.params().p)
}

/// `‖f‖_{L^p}^p`; summands over the support in index order.
pub fn lp_norm_p(f: &GridFunction) -> f64 {
    let p = f.params().p;
    let hd = f.h().powi(f.dim() as i32);
    let terms: Vec<f64> = f.support().iter().map(|&i| abs_pow(f.values()[i], p) * hd).collect();
    stable_sum(&terms)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardyReport {
    /// `(Σ |f|^p dist_D^{-sp} h^d)^{1/p}`.
    pub norm: f64,
    pub power_sum: f64,
    /// Support cells closer to D than `2^-L`.
    pub flagged_cells: usize,
    /// Contributions of the dyadic distance shells `[2^{-j-1}, 2^{-j})`,
    /// `j = 0..L`; the last entry collects everything closer than `2^-L`.
    pub shells: Vec<f64>,
    /// The finest shells do not decay: the sum grows without bound under
    /// refinement.
    pub divergence_suspected: bool,
}

/// Shell-to-shell ratio above which the Hardy sum counts as non-decaying.
pub const DIVERGENCE_RATIO: f64 = 0.840_896_415_253_714_6; // 2^{-1/4}

/// Fractional Hardy term with weight `dist_D^{-sp}`; `D = ∅` gives zero.
pub fn hardy_norm(f: &GridFunction, d: &PointCloud) -> HardyReport {
    let level = f.level() as usize;
    let mut shells = vec![0.0; level + 1];
    if d.is_empty() {
        return HardyReport { norm: 0.0, power_sum: 0.0, flagged_cells: 0, shells, divergence_suspected: false };
    }
    let params = f.params();
    let w = f.window();
    let h = w.h();
    let hd = h.powi(w.dim as i32);
    let support = f.support();
    let terms: Vec<(f64, f64)> = support
        .par_iter()
        .map(|&i| {
            let dist = d.dist_or_inf(&w.center(i));
            (abs_pow(f.values()[i], params.p) * dist.powf(-params.sp()) * hd, dist)
        })
        .collect();
    let mut total = NeumaierSum::default();
    let mut flagged = 0;
    let mut shell_sums = vec![NeumaierSum::default(); level + 1];
    for &(t, dist) in &terms {
        total.add(t);
        if dist < h {
            flagged += 1;
        }
        let j = if dist >= 1.0 { 0 } else { ((-dist.log2()).floor() as usize).min(level) };
        shell_sums[j].add(t);
    }
    for (s, acc) in shells.iter_mut().zip(&shell_sums) {
        *s = acc.value();
    }
    let power_sum = total.value();
    HardyReport {
        norm: power_sum.powf(1.0 / params.p),
        power_sum,
        flagged_cells: flagged,
        divergence_suspected: divergence_suspected(&shells[..level]),
        shells,
    }
}

/// The three finest resolved shells are all non-zero and each is at least
/// `2^{-1/4}` of its coarser neighbour.
fn divergence_suspected(shells: &[f64]) -> bool {
    if shells.len() < 3 {
        return false;
    }
    let t = &shells[shells.len() - 3..];
    t.iter().all(|&v| v > 0.0) && t[1] >= DIVERGENCE_RATIO * t[0] && t[2] >= DIVERGENCE_RATIO * t[1]
}

/// `C_kernel = σ_{d−1} 2^{sp} / (sp)`: the polar-coordinate bound of
/// `∫_{|z| > δ/2} |z|^{-sp-d} dz` by `C_kernel δ^{-sp}`.
pub fn kernel_constant(params: &FractionalParams) -> f64 {
    unit_sphere_area(params.d) * 2f64.powf(params.sp()) / params.sp()
}

/// Closed form of `∫_{a < |z| < 1} |z|^{-sp-d} dz`.
pub fn annulus_integral(params: &FractionalParams, a: f64) -> f64 {
    unit_sphere_area(params.d) * (a.powf(-params.sp()) - 1.0) / params.sp()
}

/// Midpoint quadrature of `∫_{y ∈ B, |x−y| < 1} |x−y|^{-sp-d} dy` over the
/// cells of `mask`.
pub fn hardy_kernel_integral(x: &Point, mask: &CellMask, params: &FractionalParams) -> f64 {
    let w = &mask.window;
    let hd = w.h().powi(w.dim as i32);
    let e = params.kernel_exponent();
    let cells = w.cells_in_ball(x, 1.0);
    let terms: Vec<f64> = cells
        .iter()
        .filter(|&&i| mask.cells[i])
        .filter_map(|&i| {
            let r = crate::geometry::dist(x, &w.center(i));
            (r > 0.0).then(|| hd * r.powf(-e))
        })
        .collect();
    stable_sum(&terms)
}
