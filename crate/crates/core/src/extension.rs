//! Zero extension `E₀` from O to 𝑶, Whitney-average (p ≥ 1) or
//! Whitney-median (p < 1) extension `E_W` from 𝑶 to the bounding box, and
//! their composition.
//!
//! `E_W` assigns every exterior Whitney cube `Q` of `∂𝑶` a value `a(Q)`
//! computed from the function on the reflection set `B(c_Q, 6 diam Q) ∩ 𝑶`
//! and blends the values with a partition of unity of dilated cubes. Cubes
//! larger than the far-field cutoff get zero.

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fattening::FattenedDomain;
use crate::geometry::{BBox, FractionalParams, Point, Region};
use crate::grid::{CellMask, GridFunction, Window};
use crate::norms::{hardy_norm, lp_norm_p, Quadrature};
use crate::numeric::{stable_sum, NeumaierSum};
use crate::whitney::{whitney_decompose_shared, DyadicCube, WhitneyDecomposition};

/// Constants of the Whitney extension. The construction leaves them free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtensionOptions {
    /// Reflection ball radius in units of the cube diameter.
    pub reflection_factor: f64,
    /// Dilation of the partition-of-unity supports.
    pub dilation: f64,
    /// Cubes with a larger diameter get value zero.
    pub far_field_diam: f64,
}

impl Default for ExtensionOptions {
    fn default() -> Self {
        ExtensionOptions { reflection_factor: 6.0, dilation: 1.1, far_field_diam: 0.0625 }
    }
}

impl ExtensionOptions {
    /// Largest distance from the support at which the extension can be
    /// non-zero.
    pub fn reach(&self) -> f64 {
        self.far_field_diam * (self.reflection_factor + 0.5 * self.dilation)
    }
}

/// `E₀ f`: `f` on the O-cells, zero on the cells of 𝑶 \ O.
pub fn zero_extend(f: &GridFunction, fat: &FattenedDomain) -> Result<GridFunction> {
    let base = fat.base().name();
    if f.region_name() != base {
        return Err(Error::RegionMismatch { expected: base.to_string(), found: f.region_name().to_string() });
    }
    let mask = CellMask::rasterize(fat, *f.window());
    if !mask.contains_mask(f.mask()) {
        return Err(Error::Contract("O-cells missing from the fattened raster".into()));
    }
    GridFunction::from_parts(fat.name(), f.params(), *fat.bbox(), mask, f.values().to_vec())
}

/// Minimizer of `c ↦ Σ |v − c|^p` over the samples `v`.
///
/// For `p < 1` the objective is concave between samples, so the minimum is
/// attained at a sample; it is found exactly by branch and bound, ties going
/// to the smaller value. For `p ≥ 1` the objective is convex and its
/// continuous minimizer is returned: the mean for `p = 2`, the lower weighted
/// median for `p = 1`.
pub fn p_median(values: &[f64], p: f64) -> f64 {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.is_empty() {
        return 0.0;
    }
    sorted.sort_by(f64::total_cmp);
    let mut uniq: Vec<(f64, f64)> = Vec::new();
    for v in sorted {
        match uniq.last_mut() {
            Some((u, m)) if *u == v => *m += 1.0,
            _ => uniq.push((v, 1.0)),
        }
    }
    weighted_p_median(&uniq, p)
}

/// [`p_median`] over sorted distinct values with multiplicities.
fn weighted_p_median(uniq: &[(f64, f64)], p: f64) -> f64 {
    if uniq.len() == 1 {
        return uniq[0].0;
    }
    if p == 2.0 {
        let mut s = NeumaierSum::default();
        let mut n = 0.0;
        for &(v, m) in uniq {
            s.add(v * m);
            n += m;
        }
        return s.value() / n;
    }
    if p == 1.0 {
        let total: f64 = uniq.iter().map(|&(_, m)| m).sum();
        let mut acc = 0.0;
        for &(v, m) in uniq {
            acc += m;
            if 2.0 * acc >= total {
                return v;
            }
        }
        return uniq[uniq.len() - 1].0;
    }
    if p > 1.0 {
        // the derivative Σ m p |c − v|^{p−1} sgn(c − v) is increasing
        let slope = |c: f64| -> f64 {
            uniq.iter().map(|&(v, m)| m * (c - v).abs().powf(p - 1.0) * (c - v).signum()).sum()
        };
        let (mut lo, mut hi) = (uniq[0].0, uniq[uniq.len() - 1].0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return 0.5 * (lo + hi);
    }
    discrete_p_median(uniq, p)
}

fn objective(uniq: &[(f64, f64)], c: f64, p: f64) -> f64 {
    let mut s = 0.0;
    for &(v, m) in uniq {
        s += m * (v - c).abs().powf(p);
    }
    s
}

/// Exact minimization over the samples for `p < 1`. Candidates are grouped
/// into blocks of consecutive values; a block is skipped when
/// `Σ m dist(v, block)^p`, a lower bound of the objective on it, cannot beat
/// the incumbent.
fn discrete_p_median(uniq: &[(f64, f64)], p: f64) -> f64 {
    let u = uniq.len();
    let block = ((u as f64).sqrt().ceil() as usize).max(1);
    let mut bounds: Vec<(f64, usize)> = (0..u)
        .step_by(block)
        .map(|start| {
            let end = (start + block).min(u) - 1;
            let (lo, hi) = (uniq[start].0, uniq[end].0);
            let mut s = 0.0;
            for &(v, m) in uniq {
                let d = if v < lo { lo - v } else if v > hi { v - hi } else { 0.0 };
                s += m * d.powf(p);
            }
            (s, start)
        })
        .collect();
    bounds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut best = f64::INFINITY;
    let mut best_v = uniq[0].0;
    for (bound, start) in bounds {
        if bound > best || (bound == best && uniq[start].0 > best_v) {
            continue;
        }
        for &(c, _) in &uniq[start..(start + block).min(u)] {
            let val = objective(uniq, c, p);
            if val < best || (val == best && c < best_v) {
                best = val;
                best_v = c;
            }
        }
    }
    best_v
}

/// Smooth bump of the dilated cube: `Π (1 − t²)²` with `t` the offset from
/// the center in units of the dilated half-side.
fn bump(q: &DyadicCube, x: &Point, dilation: f64) -> f64 {
    let c = q.center();
    let half = 0.5 * dilation * q.side();
    let mut w = 1.0;
    for a in 0..q.dim() {
        let t = (x[a] - c[a]) / half;
        if t.abs() >= 1.0 {
            return 0.0;
        }
        let u = 1.0 - t * t;
        w *= u * u;
    }
    w
}

/// Reflection data of one exterior cube.
#[derive(Debug, Clone)]
struct ExteriorCube {
    cube: DyadicCube,
    /// Cells of the reflection set; empty beyond the far-field cutoff.
    reflection: Vec<u32>,
    far: bool,
}

/// Exterior cell with its normalized partition-of-unity weights.
#[derive(Debug, Clone)]
struct Blend {
    cell: u32,
    weights: Vec<(u32, f64)>,
}

/// Precomputed geometry of `E_W` on a window: 𝑶 and O rasters, the
/// exterior Whitney decomposition, the partition of unity and the
/// reflection sets, plus memoized quadratures for the norms.
pub struct ExtensionEngine<'a> {
    fat: &'a FattenedDomain,
    opts: ExtensionOptions,
    window: Window,
    support: BBox,
    o_mask: CellMask,
    fat_mask: CellMask,
    exterior: WhitneyDecomposition,
    cubes: Vec<ExteriorCube>,
    blends: Vec<Blend>,
    quadratures: FxHashMap<(u64, u64, u8), Quadrature>,
}

/// Integer-aligned box `b ⊕ margin`, clipped to `bbox`.
fn aligned_window_box(b: &BBox, margin: f64, bbox: &BBox) -> BBox {
    let mut out = *b;
    for a in 0..b.dim {
        out.lo[a] = (b.lo[a] - margin).floor().max(bbox.lo[a]);
        out.hi[a] = (b.hi[a] + margin).ceil().min(bbox.hi[a]);
    }
    out
}

impl<'a> ExtensionEngine<'a> {
    /// Engine for functions supported in `support` at the resolution of
    /// the base region.
    pub fn new(fat: &'a FattenedDomain, support: &BBox, opts: ExtensionOptions) -> Result<Self> {
        let bbox = *fat.bbox();
        let level = fat.level();
        let active = support.expand(opts.reach()).intersect(&bbox);
        let wbox = aligned_window_box(support, 1.0 + opts.reach(), &bbox);
        let window = Window::covering(&wbox, level);
        let o_mask = CellMask::rasterize(fat.base(), window);
        let fat_mask = CellMask::rasterize(fat, window);
        let exterior = whitney_decompose_shared(std::sync::Arc::new(fat.boundary_cloud().clone()), &wbox, level as i32 + 1)?;

        let cells: Vec<usize> = (0..window.len())
            .filter(|&i| !fat_mask.cells[i] && active.dist_to(&window.center(i)) == 0.0)
            .collect();
        let covers: Vec<Vec<(DyadicCube, f64)>> = cells
            .par_iter()
            .map(|&i| {
                let x = window.center(i);
                let mut cover: Vec<(DyadicCube, f64)> = exterior
                    .dilated_cover(&x, opts.dilation)
                    .into_iter()
                    .filter(|q| !fat.inside(&q.center()))
                    .map(|q| (q, bump(&q, &x, opts.dilation)))
                    .filter(|&(_, w)| w > 0.0)
                    .collect();
                if cover.is_empty() {
                    // unresolved collar: the cell itself stands in for a cube
                    cover.push((DyadicCube::containing(window.dim, level as i32, &x), 1.0));
                }
                let total: f64 = cover.iter().map(|&(_, w)| w).sum();
                cover.iter_mut().for_each(|(_, w)| *w /= total);
                cover
            })
            .collect();

        let mut slot: FxHashMap<DyadicCube, u32> = FxHashMap::default();
        let mut order: Vec<DyadicCube> = Vec::new();
        let mut blends = Vec::with_capacity(cells.len());
        for (&i, cover) in cells.iter().zip(&covers) {
            let weights = cover
                .iter()
                .map(|&(q, w)| {
                    let k = *slot.entry(q).or_insert_with(|| {
                        order.push(q);
                        (order.len() - 1) as u32
                    });
                    (k, w)
                })
                .collect();
            blends.push(Blend { cell: i as u32, weights });
        }
        let cubes: Vec<ExteriorCube> = order
            .par_iter()
            .map(|&q| {
                if q.diam() > opts.far_field_diam {
                    return Ok(ExteriorCube { cube: q, reflection: Vec::new(), far: true });
                }
                let reflection: Vec<u32> = window
                    .cells_in_ball(&q.center(), opts.reflection_factor * q.diam())
                    .into_iter()
                    .filter(|&j| fat_mask.cells[j])
                    .map(|j| j as u32)
                    .collect();
                if reflection.is_empty() {
                    return Err(Error::EmptyReflection(q));
                }
                Ok(ExteriorCube { cube: q, reflection, far: false })
            })
            .collect::<Result<_>>()?;
        Ok(ExtensionEngine {
            fat,
            opts,
            window,
            support: *support,
            o_mask,
            fat_mask,
            exterior,
            cubes,
            blends,
            quadratures: FxHashMap::default(),
        })
    }

    /// Engine sized for a single function.
    pub fn for_function(fat: &'a FattenedDomain, f: &GridFunction, opts: ExtensionOptions) -> Result<Self> {
        let support = f.support_box().ok_or_else(|| Error::Contract("function vanishes identically".into()))?;
        Self::new(fat, &support, opts)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn options(&self) -> &ExtensionOptions {
        &self.opts
    }

    pub fn o_mask(&self) -> &CellMask {
        &self.o_mask
    }

    pub fn fat_mask(&self) -> &CellMask {
        &self.fat_mask
    }

    /// Exterior Whitney decomposition of `∂𝑶` over the window.
    pub fn exterior_decomposition(&self) -> &WhitneyDecomposition {
        &self.exterior
    }

    /// Number of exterior cubes in the partition of unity.
    pub fn exterior_cube_count(&self) -> usize {
        self.cubes.len()
    }

    /// `f` moved onto the engine window and carried by O.
    pub fn embed(&self, f: &GridFunction) -> Result<GridFunction> {
        f.embed(self.fat.base(), self.window)
    }

    /// `a(Q)` for every exterior cube.
    fn cube_values(&self, g: &GridFunction) -> Vec<f64> {
        let p = g.params().p;
        let support = g.support_box();
        let vals = g.values();
        self.cubes
            .par_iter()
            .map(|e| {
                let Some(sb) = &support else { return 0.0 };
                if e.far || sb.dist_to(&e.cube.center()) >= self.opts.reflection_factor * e.cube.diam() {
                    return 0.0;
                }
                if p >= 1.0 {
                    let mut s = NeumaierSum::default();
                    for &j in &e.reflection {
                        s.add(vals[j as usize]);
                    }
                    s.value() / e.reflection.len() as f64
                } else {
                    let mut nonzero: Vec<f64> = e.reflection.iter().map(|&j| vals[j as usize]).filter(|&v| v != 0.0).collect();
                    nonzero.sort_by(f64::total_cmp);
                    let zeros = (e.reflection.len() - nonzero.len()) as f64;
                    let mut uniq: Vec<(f64, f64)> = Vec::new();
                    let mut zero_done = zeros == 0.0;
                    for v in nonzero {
                        if !zero_done && v > 0.0 {
                            uniq.push((0.0, zeros));
                            zero_done = true;
                        }
                        match uniq.last_mut() {
                            Some((u, m)) if *u == v => *m += 1.0,
                            _ => uniq.push((v, 1.0)),
                        }
                    }
                    if !zero_done {
                        uniq.push((0.0, zeros));
                    }
                    weighted_p_median(&uniq, p)
                }
            })
            .collect()
    }

    /// `E_W g` for `g` on the 𝑶-cells of the engine window.
    pub fn whitney_extend(&self, g: &GridFunction) -> Result<GridFunction> {
        if g.window() != &self.window || g.mask() != &self.fat_mask {
            return Err(Error::Contract("function is not carried by the engine's 𝑶 raster".into()));
        }
        if let Some(sb) = g.support_box() {
            let slack = self.window.h();
            let s = &self.support;
            if (0..sb.dim).any(|a| sb.lo[a] < s.lo[a] - slack || sb.hi[a] > s.hi[a] + slack) {
                return Err(Error::Contract("support leaves the engine's active zone".into()));
            }
        }
        let a = self.cube_values(g);
        let mut values = g.values().to_vec();
        let ext: Vec<f64> = self
            .blends
            .par_iter()
            .map(|b| {
                let mut s = 0.0;
                for &(k, w) in &b.weights {
                    s += w * a[k as usize];
                }
                s
            })
            .collect();
        for (b, v) in self.blends.iter().zip(ext) {
            values[b.cell as usize] = v;
        }
        GridFunction::from_parts("bbox", g.params(), *self.fat.bbox(), CellMask::full(self.window), values)
    }

    fn quadrature(&mut self, params: FractionalParams, which: u8) -> &mut Quadrature {
        let key = (params.s.to_bits(), params.p.to_bits(), which);
        let (o, fat_mask, bbox) = (&self.o_mask, &self.fat_mask, *self.fat.bbox());
        self.quadratures.entry(key).or_insert_with(|| {
            let mask = match which {
                0 => o.clone(),
                1 => fat_mask.clone(),
                _ => fat_mask.minus(o).expect("same window"),
            };
            Quadrature::new(params, mask, bbox)
        })
    }

    fn seminorm_cached(&mut self, f: &GridFunction, which: u8) -> Result<f64> {
        let q = self.quadrature(f.params(), which);
        q.precompute(&f.support())?;
        q.seminorm_p(f)
    }

    fn cross_cached(&mut self, f: &GridFunction) -> Result<f64> {
        let q = self.quadrature(f.params(), 2);
        q.precompute(&f.support())?;
        q.weighted_phi(f)
    }

    /// `Ext f = E_W E₀ f` with all norms.
    pub fn extend_full(&mut self, f: &GridFunction) -> Result<ExtensionResult> {
        let base = self.fat.base().name();
        if f.region_name() != base {
            return Err(Error::RegionMismatch { expected: base.to_string(), found: f.region_name().to_string() });
        }
        let f = self.embed(f)?;
        let params = f.params();
        let p = params.p;
        let hardy = hardy_norm(&f, self.fat.base().d_cloud());
        let sem_p = self.seminorm_cached(&f, 0)?;
        let lp_p = lp_norm_p(&f);
        let e0 = zero_extend(&f, self.fat)?;
        let e0_sem_p = self.seminorm_cached(&e0, 1)?;
        let cross = self.cross_cached(&f)?;
        let out = self.whitney_extend(&e0)?;
        let out_sem_p = Quadrature::new(params, out.mask().clone(), *out.bbox()).seminorm_p(&out)?;
        let out_lp_p = lp_norm_p(&out);

        let input = (sem_p + lp_p + hardy.power_sum).powf(1.0 / p);
        let output = (out_sem_p + out_lp_p).powf(1.0 / p);
        let status = if input == 0.0 && output == 0.0 {
            RatioStatus::Trivial
        } else if input.is_finite() && output.is_finite() && input > 0.0 {
            RatioStatus::Finite
        } else {
            RatioStatus::NonFinite
        };
        let ratio = (status == RatioStatus::Finite).then(|| output / input);
        let splitting = SplittingCheck::new(e0_sem_p, sem_p, cross);
        let restriction = restriction_deviation(&out, &f);
        let report = ExtensionReport {
            params,
            input_norms: InputNorms {
                seminorm: sem_p.powf(1.0 / p),
                lp: lp_p.powf(1.0 / p),
                hardy: hardy.norm,
                hardy_divergence_suspected: hardy.divergence_suspected,
                hardy_flagged_cells: hardy.flagged_cells,
            },
            zero_extension: ZeroExtensionNorms {
                seminorm: e0_sem_p.powf(1.0 / p),
                lp: lp_norm_p(&e0).powf(1.0 / p),
                lp_isometric: lp_norm_p(&e0) == lp_p,
            },
            splitting,
            output_norms: OutputNorms { seminorm: out_sem_p.powf(1.0 / p), lp: out_lp_p.powf(1.0 / p) },
            ratio,
            status,
            restriction_deviation: restriction,
        };
        Ok(ExtensionResult { report, input: f, zero_extended: e0, output: out })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioStatus {
    Finite,
    /// `f ≡ 0`: both norms vanish.
    Trivial,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputNorms {
    pub seminorm: f64,
    pub lp: f64,
    pub hardy: f64,
    pub hardy_divergence_suspected: bool,
    pub hardy_flagged_cells: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroExtensionNorms {
    /// Seminorm over 𝑶.
    pub seminorm: f64,
    pub lp: f64,
    /// `‖E₀f‖_p^p` and `‖f‖_p^p` agree bit for bit.
    pub lp_isometric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputNorms {
    /// Seminorm over the bounding box.
    pub seminorm: f64,
    pub lp: f64,
}

/// `[E₀f]^p_𝑶 ≤ [f]^p_O + 2 Σ |f|^p Φ_{𝑶∖O}`; the two sides agree up to
/// rounding since the pair sets partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplittingCheck {
    pub lhs: f64,
    pub seminorm_o_p: f64,
    pub cross: f64,
    pub holds: bool,
}

/// Relative slack for rounding in the splitting comparison.
pub const SPLITTING_RTOL: f64 = 1e-12;

impl SplittingCheck {
    pub fn new(lhs: f64, seminorm_o_p: f64, cross: f64) -> Self {
        let rhs = seminorm_o_p + 2.0 * cross;
        SplittingCheck { lhs, seminorm_o_p, cross, holds: lhs <= rhs + SPLITTING_RTOL * rhs.abs() }
    }
}

/// Norms and contract checks of `Ext = E_W ∘ E₀` on one function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub params: FractionalParams,
    pub input_norms: InputNorms,
    pub zero_extension: ZeroExtensionNorms,
    pub splitting: SplittingCheck,
    pub output_norms: OutputNorms,
    /// `(out_sem^p + out_lp^p)^{1/p} / (sem^p + lp^p + hardy^p)^{1/p}`.
    pub ratio: Option<f64>,
    pub status: RatioStatus,
    pub restriction_deviation: f64,
}

/// Outcome of `Ext = E_W ∘ E₀` on one function.
#[derive(Debug, Clone)]
pub struct ExtensionResult {
    pub report: ExtensionReport,
    /// `f` on the engine window.
    pub input: GridFunction,
    pub zero_extended: GridFunction,
    pub output: GridFunction,
}

impl std::ops::Deref for ExtensionResult {
    type Target = ExtensionReport;

    fn deref(&self) -> &ExtensionReport {
        &self.report
    }
}

fn restriction_deviation(out: &GridFunction, f: &GridFunction) -> f64 {
    let w = f.window();
    (0..w.len())
        .filter(|&i| f.mask().cells[i])
        .map(|i| (out.value_at(&w.cell(i)) - f.values()[i]).abs())
        .fold(0.0, f64::max)
}

/// Largest `|Ext f − f|` over the O-cells of `f`.
pub fn restriction_check(res: &ExtensionResult, f: &GridFunction) -> f64 {
    restriction_deviation(&res.output, f)
}

/// `E_W g` for `g` on 𝑶 (as produced by [`zero_extend`]).
pub fn whitney_extend(g: &GridFunction, fat: &FattenedDomain, opts: ExtensionOptions) -> Result<GridFunction> {
    let engine = ExtensionEngine::for_function(fat, g, opts)?;
    let g = g.embed(fat, engine.window)?;
    engine.whitney_extend(&g)
}

/// `Ext f = E_W E₀ f` with its norm report. `f ≡ 0` is reported as trivial.
pub fn extend_full(f: &GridFunction, fat: &FattenedDomain, opts: ExtensionOptions) -> Result<ExtensionResult> {
    if f.support().is_empty() {
        return trivial_result(f, fat);
    }
    ExtensionEngine::for_function(fat, f, opts)?.extend_full(f)
}

fn trivial_result(f: &GridFunction, fat: &FattenedDomain) -> Result<ExtensionResult> {
    let e0 = zero_extend(f, fat)?;
    let out = GridFunction::from_parts("bbox", f.params(), *fat.bbox(), CellMask::full(*f.window()), vec![0.0; f.window().len()])?;
    let report = ExtensionReport {
        params: f.params(),
        input_norms: InputNorms { seminorm: 0.0, lp: 0.0, hardy: 0.0, hardy_divergence_suspected: false, hardy_flagged_cells: 0 },
        zero_extension: ZeroExtensionNorms { seminorm: 0.0, lp: 0.0, lp_isometric: true },
        splitting: SplittingCheck::new(0.0, 0.0, 0.0),
        output_norms: OutputNorms { seminorm: 0.0, lp: 0.0 },
        ratio: None,
        status: RatioStatus::Trivial,
        restriction_deviation: 0.0,
    };
    Ok(ExtensionResult { report, input: f.clone(), zero_extended: e0, output: out })
}

/// Largest relative deviation of `Ext(Σ αₖ fₖ)` from `Σ αₖ Ext fₖ` over all
/// cells, relative to the largest output magnitude.
pub fn linearity_defect(engine: &ExtensionEngine<'_>, terms: &[(f64, &GridFunction)]) -> Result<f64> {
    let mut outs = Vec::with_capacity(terms.len());
    let mut zeros = Vec::with_capacity(terms.len());
    for (_, f) in terms {
        let e0 = zero_extend(&engine.embed(f)?, engine.fat)?;
        outs.push(engine.whitney_extend(&e0)?);
        zeros.push(e0);
    }
    let combo_in: Vec<(f64, &GridFunction)> = terms.iter().zip(&zeros).map(|((a, _), g)| (*a, g)).collect();
    let combined = engine.whitney_extend(&GridFunction::linear_combination(&combo_in)?)?;
    let combo_out: Vec<(f64, &GridFunction)> = terms.iter().zip(&outs).map(|((a, _), g)| (*a, g)).collect();
    let expected = GridFunction::linear_combination(&combo_out)?;
    let scale = expected.values().iter().chain(combined.values()).fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = combined.max_abs_diff(&expected)?;
    Ok(if scale == 0.0 { 0.0 } else { diff / scale })
}

/// Exterior cells where `Ext(g + h)` and `Ext g + Ext h` differ by more than
/// `tol`, as `(cell center, Ext(g + h), Ext g + Ext h)`.
pub fn nonlinearity_witnesses(
    engine: &ExtensionEngine<'_>,
    g: &GridFunction,
    h: &GridFunction,
    tol: f64,
) -> Result<Vec<(Point, f64, f64)>> {
    let eg = zero_extend(&engine.embed(g)?, engine.fat)?;
    let eh = zero_extend(&engine.embed(h)?, engine.fat)?;
    let sum = GridFunction::linear_combination(&[(1.0, &eg), (1.0, &eh)])?;
    let (og, oh, os) = (engine.whitney_extend(&eg)?, engine.whitney_extend(&eh)?, engine.whitney_extend(&sum)?);
    let w = engine.window;
    Ok((0..w.len())
        .filter(|&i| !engine.fat_mask.cells[i])
        .filter_map(|i| {
            let split = og.values()[i] + oh.values()[i];
            let joint = os.values()[i];
            ((joint - split).abs() > tol).then(|| (w.center(i), joint, split))
        })
        .collect())
}

/// Mean of the sample values, the `p = 2` branch of [`p_median`] in closed
/// form; used to couple the two branches in tests.
pub fn sample_mean(values: &[f64]) -> f64 {
    stable_sum(values) / values.len() as f64
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::fattening::fatten;
    use crate::geometry::{builtin_geometry, AnalyticRegion};
    use crate::whitney::whitney_decompose;

    fn fattened(name: &str, level: u32) -> FattenedDomain {
        let g = builtin_geometry(name, level).unwrap();
        let w = whitney_decompose(g.n_cloud(), g.bbox(), level as i32).unwrap();
        fatten(&g, Arc::new(w)).unwrap()
    }

    fn local(g: &AnalyticRegion, center: [f64; 2], r: f64, s: f64, p: f64, f: impl Fn(&Point) -> f64 + Sync) -> GridFunction {
        let b = BBox::new(2, &[center[0] - r, center[1] - r], &[center[0] + r, center[1] + r]).unwrap();
        let w = Window::covering(&b, g.level());
        let params = FractionalParams::new(s, p, 2).unwrap();
        GridFunction::sample(g, CellMask::rasterize(g, w), params, |x| {
            let d2 = (x[0] - center[0]).powi(2) + (x[1] - center[1]).powi(2);
            if d2 < r * r {
                f(x) * (1.0 - d2 / (r * r)).powi(2)
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn p_median_examples() {
        assert_eq!(p_median(&[0.0, 0.0, 1.0], 0.5), 0.0);
        assert_eq!(p_median(&[0.0, 1.0], 0.5), 0.0);
        assert_eq!(p_median(&[3.0, 1.0, 2.0], 1.0), 2.0);
        assert_eq!(p_median(&[1.0, 1.0, 5.0, 9.0], 0.5), 1.0);
        assert!((p_median(&[0.0, 1.0, 5.0], 2.0) - 2.0).abs() < 1e-15);
        let p15 = p_median(&[0.0, 1.0, 5.0], 1.5);
        assert!(p15 > 1.0 && p15 < 2.0);
    }

    #[test]
    fn branch_and_bound_matches_exhaustive_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for trial in 0..40 {
            let n = 1 + trial * 7;
            let vals: Vec<f64> = (0..n).map(|_| (rng.gen_range(-5.0f64..5.0) * 4.0).round() / 4.0).collect();
            for p in [0.25, 0.5, 0.9] {
                let got = p_median(&vals, p);
                let mut uniq = vals.clone();
                uniq.sort_by(f64::total_cmp);
                uniq.dedup();
                let f = |c: f64| vals.iter().map(|v| (v - c).abs().powf(p)).sum::<f64>();
                let best = uniq.iter().copied().fold(f64::INFINITY, |m, c| m.min(f(c)));
                assert!((f(got) - best).abs() <= 1e-12 * best.max(1.0), "trial {trial}, p {p}");
            }
        }
    }

    #[test]
    fn median_and_mean_agree_on_symmetric_two_value_samples() {
        for (a, b, k) in [(0.0, 1.0, 3usize), (-2.0, 5.0, 10), (1.5, 1.5, 4)] {
            let mut vals = vec![a; k];
            vals.extend(vec![b; k]);
            assert!((p_median(&vals, 2.0) - sample_mean(&vals)).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_extension_checks_region_and_is_isometric() {
        let fat = fattened("cusp_touching_halfplane", 6);
        let f = local(fat.base(), [0.0, 0.0], 0.25, 0.5, 2.0, |x| x[0] + 2.0);
        let e0 = zero_extend(&f, &fat).unwrap();
        assert_eq!(lp_norm_p(&e0), lp_norm_p(&f));
        let other = builtin_geometry("halfplane", 6).unwrap();
        let g = local(&other, [0.5, 0.0], 0.25, 0.5, 2.0, |_| 1.0);
        assert!(matches!(zero_extend(&g, &fat), Err(Error::RegionMismatch { .. })));
    }

    #[test]
    fn constants_extend_to_constants() {
        let fat = fattened("halfplane", 6);
        let sb = BBox::new(2, &[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let engine = ExtensionEngine::new(&fat, &sb, ExtensionOptions::default()).unwrap();
        let w = *engine.window();
        let params = FractionalParams::new(0.5, 2.0, 2).unwrap();
        let vals = (0..w.len()).map(|i| if sb.contains(&w.center(i)) { 2.5 } else { 0.0 }).collect();
        let c = GridFunction::from_parts(fat.name(), params, *fat.bbox(), engine.fat_mask().clone(), vals).unwrap();
        let out = engine.whitney_extend(&c).unwrap();
        let mut checked = 0;
        for i in 0..w.len() {
            let x = w.center(i);
            if !engine.fat_mask().cells[i] && x[0] > -0.02 && x[1].abs() < 0.5 {
                assert!((out.values()[i] - 2.5).abs() < 1e-12, "{} at {x:?}", out.values()[i]);
                checked += 1;
            }
        }
        assert!(checked >= 64, "{checked}");
    }

    #[test]
    fn full_extension_restricts_and_is_linear_for_p_two() {
        let fat = fattened("cusp_touching_halfplane", 6);
        let g = fat.base();
        let f1 = local(g, [0.0, 0.0], 0.25, 0.5, 2.0, |x| x[0].hypot(x[1]).powf(0.6));
        let f2 = local(g, [0.0, 0.0], 0.25, 0.5, 2.0, |x| (5.0 * x[1]).sin() + 0.2);
        let res = extend_full(&f1, &fat, ExtensionOptions::default()).unwrap();
        assert_eq!(res.status, RatioStatus::Finite);
        assert_eq!(res.restriction_deviation, 0.0);
        assert_eq!(restriction_check(&res, &f1), 0.0);
        assert!(res.zero_extension.lp_isometric);
        assert!(res.splitting.holds);
        assert!(res.ratio.unwrap().is_finite());
        let engine = ExtensionEngine::for_function(&fat, &f1, ExtensionOptions::default()).unwrap();
        let defect = linearity_defect(&engine, &[(0.7, &f1), (-1.9, &f2)]).unwrap();
        assert!(defect < 1e-12, "{defect}");
    }

    #[test]
    fn zero_function_is_trivial() {
        let fat = fattened("cusp_touching_halfplane", 5);
        let f = local(fat.base(), [0.0, 0.0], 0.25, 0.5, 2.0, |_| 0.0);
        let res = extend_full(&f, &fat, ExtensionOptions::default()).unwrap();
        assert_eq!(res.status, RatioStatus::Trivial);
        assert!(res.ratio.is_none());
        assert!(res.output.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn half_power_median_is_not_additive() {
        let fat = fattened("halfplane", 6);
        let base = fat.base();
        let g = local(base, [0.25, 0.0], 0.5, 0.5, 0.5, |x| (x[1] > 0.05) as i32 as f64);
        let h = local(base, [0.25, 0.0], 0.5, 0.5, 0.5, |x| (x[1] < -0.05) as i32 as f64);
        let engine = ExtensionEngine::for_function(&fat, &local(base, [0.25, 0.0], 0.5, 0.5, 0.5, |_| 1.0), ExtensionOptions::default()).unwrap();
        let w = nonlinearity_witnesses(&engine, &g, &h, 1e-9).unwrap();
        assert!(!w.is_empty());
    }

    #[test]
    fn averages_are_linear_for_every_p_at_least_one() {
        let fat = fattened("cusp_touching_halfplane", 6);
        let g = fat.base();
        for p in [1.0, 1.5, 3.0] {
            let f1 = local(g, [0.0, 0.0], 0.25, 0.5, p, |x| x[0].hypot(x[1]).powf(0.6));
            let f2 = local(g, [0.0, 0.0], 0.25, 0.5, p, |x| (5.0 * x[1]).sin() + 0.2);
            let f3 = local(g, [0.0, 0.0], 0.25, 0.5, p, |x| x[0] * x[1]);
            let engine = ExtensionEngine::for_function(&fat, &f1, ExtensionOptions::default()).unwrap();
            let defect = linearity_defect(&engine, &[(0.7, &f1), (-1.9, &f2), (3.1, &f3)]).unwrap();
            assert!(defect < 1e-12, "p={p}: {defect}");
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn p_median_minimizes_the_objective(
            vals in proptest::collection::vec(-10.0f64..10.0, 1..30),
            p in 0.2f64..3.0,
            shift in -5.0f64..5.0,
        ) {
            let f = |c: f64| vals.iter().map(|v| (v - c).abs().powf(p)).sum::<f64>();
            let m = p_median(&vals, p);
            let tol = 1e-9 * (1.0 + f(m));
            for c in vals.iter().copied().chain([m - 0.01, m + 0.01, m + shift]) {
                proptest::prop_assert!(f(m) <= f(c) + tol, "p={} m={} c={}", p, m, c);
            }
            // translation equivariance
            let moved: Vec<f64> = vals.iter().map(|v| v + 0.5).collect();
            proptest::prop_assert!((p_median(&moved, p) - (m + 0.5)).abs() <= 1e-6 * (1.0 + m.abs()));
        }
    }
}
