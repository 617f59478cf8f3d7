//! Whitney decompositions of the complement of a closed set.
//!
//! Cubes are produced by canonical top-down dyadic refinement of the
//! bounding box: a cube is accepted once `diam(Q) ≤ dist(Q, N)`, otherwise
//! split. Because the parent of an accepted cube was rejected,
//! `dist(Q, N) ≤ dist(P, N) + diam(P) < 2·diam(P) = 4·diam(Q)`, which gives
//! the two-sided bound `1 ≤ dist/diam < 4` for every cube below the top
//! tiling. Cubes that still violate the rule at `finest` are truncated and
//! reported.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BBox, Point, PointCloud};
use crate::numeric::NeumaierSum;

/// The open cube `index·2^-level + (0, 2^-level)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub level: i32,
    pub index: [i64; 3],
    pub dim: u8,
}

impl DyadicCube {
    pub fn new(dim: usize, level: i32, index: &[i64]) -> Self {
        let mut idx = [0i64; 3];
        idx[..dim].copy_from_slice(&index[..dim]);
        DyadicCube { level, index: idx, dim: dim as u8 }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn side(&self) -> f64 {
        0.5f64.powi(self.level)
    }

    #[inline]
    pub fn diam(&self) -> f64 {
        (self.dim as f64).sqrt() * self.side()
    }

    pub fn volume(&self) -> f64 {
        self.side().powi(self.dim as i32)
    }

    pub fn lo(&self) -> Point {
        let s = self.side();
        let mut p = [0.0; 3];
        for a in 0..self.dim() {
            p[a] = self.index[a] as f64 * s;
        }
        p
    }

    pub fn hi(&self) -> Point {
        let s = self.side();
        let mut p = [0.0; 3];
        for a in 0..self.dim() {
            p[a] = (self.index[a] + 1) as f64 * s;
        }
        p
    }

    pub fn center(&self) -> Point {
        let s = self.side();
        let mut p = [0.0; 3];
        for a in 0..self.dim() {
            p[a] = (self.index[a] as f64 + 0.5) * s;
        }
        p
    }

    /// The level-`level` cube whose half-open extent `[lo, hi)` holds `x`.
    pub fn containing(dim: usize, level: i32, x: &Point) -> Self {
        let scale = 2f64.powi(level);
        let mut idx = [0i64; 3];
        for a in 0..dim {
            idx[a] = (x[a] * scale).floor() as i64;
        }
        DyadicCube { level, index: idx, dim: dim as u8 }
    }

    pub fn parent(&self) -> Self {
        let mut idx = self.index;
        for v in idx.iter_mut().take(self.dim()) {
            *v = v.div_euclid(2);
        }
        DyadicCube { level: self.level - 1, index: idx, dim: self.dim }
    }

    pub fn children(&self) -> Vec<Self> {
        let d = self.dim();
        (0..1usize << d)
            .map(|mask| {
                let mut idx = self.index;
                for (a, v) in idx.iter_mut().enumerate().take(d) {
                    *v = 2 * *v + ((mask >> a) & 1) as i64;
                }
                DyadicCube { level: self.level + 1, index: idx, dim: self.dim }
            })
            .collect()
    }

    /// Integer extent `[lo, hi]` per axis at the finer level `k ≥ self.level`.
    fn extent_at(&self, k: i32) -> [(i128, i128); 3] {
        let shift = (k - self.level) as u32;
        let mut e = [(0i128, 0i128); 3];
        for (a, slot) in e.iter_mut().enumerate().take(self.dim()) {
            let lo = (self.index[a] as i128) << shift;
            *slot = (lo, lo + (1i128 << shift));
        }
        e
    }

    /// Open cubes intersect. Exact integer arithmetic.
    pub fn overlaps(&self, other: &DyadicCube) -> bool {
        let k = self.level.max(other.level);
        let (a, b) = (self.extent_at(k), other.extent_at(k));
        (0..self.dim()).all(|i| a[i].0 < b[i].1 && b[i].0 < a[i].1)
    }

    /// Closed cubes intersect. Exact integer arithmetic.
    pub fn closure_touches(&self, other: &DyadicCube) -> bool {
        let k = self.level.max(other.level);
        let (a, b) = (self.extent_at(k), other.extent_at(k));
        (0..self.dim()).all(|i| a[i].0 <= b[i].1 && b[i].0 <= a[i].1)
    }

    /// `x` lies in the open cube.
    pub fn contains_open(&self, x: &Point) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        (0..self.dim()).all(|a| x[a] > lo[a] && x[a] < hi[a])
    }

    /// `x` lies in the closed cube.
    pub fn contains_closed(&self, x: &Point) -> bool {
        let (lo, hi) = (self.lo(), self.hi());
        (0..self.dim()).all(|a| x[a] >= lo[a] && x[a] <= hi[a])
    }

    /// The cube dilated by `factor` about its center contains `x`.
    pub fn dilated_contains(&self, x: &Point, factor: f64) -> bool {
        let c = self.center();
        let r = 0.5 * factor * self.side();
        (0..self.dim()).all(|a| (x[a] - c[a]).abs() < r)
    }
}

/// A family of disjoint dyadic cubes covering `bbox \ cl(N)` up to the
/// truncation collar.
#[derive(Debug, Clone)]
pub struct WhitneyDecomposition {
    dim: usize,
    cubes: Vec<DyadicCube>,
    truncated: Vec<DyadicCube>,
    generator: Arc<PointCloud>,
    bbox: BBox,
    coarsest_level: i32,
    finest_level: i32,
    index: HashMap<DyadicCube, usize>,
    levels: Vec<i32>,
}

/// Post-condition report of [`verify_whitney`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WhitneyReport {
    pub cube_count: usize,
    pub truncated_count: usize,
    pub disjointness: bool,
    pub cover_defect_volume: f64,
    pub truncated_volume: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Hausdorff bound of the generator cloud, the tolerance every distance
    /// above carries against the true set.
    pub distance_tolerance: f64,
}

/// Coarsest level whose lattice tiles `bbox` exactly.
fn top_level(bbox: &BBox) -> Result<i32> {
    let min_extent = (0..bbox.dim).map(|a| bbox.hi[a] - bbox.lo[a]).fold(f64::INFINITY, f64::min);
    let mut k = -(min_extent.log2().floor() as i32);
    while !bbox.is_dyadic(k) {
        k += 1;
        if k > 60 {
            return Err(Error::Config("bbox corners are not dyadic".into()));
        }
    }
    Ok(k)
}

fn top_tiles(bbox: &BBox, k: i32) -> Vec<DyadicCube> {
    let dim = bbox.dim;
    let scale = 2f64.powi(k);
    let mut lo = [0i64; 3];
    let mut hi = [1i64; 3];
    for a in 0..dim {
        lo[a] = (bbox.lo[a] * scale).round() as i64;
        hi[a] = (bbox.hi[a] * scale).round() as i64;
    }
    let mut out = Vec::new();
    for i2 in lo[2]..hi[2].max(lo[2] + 1) {
        for i1 in lo[1]..hi[1].max(lo[1] + 1) {
            for i0 in lo[0]..hi[0] {
                out.push(DyadicCube::new(dim, k, &[i0, i1, i2]));
            }
        }
    }
    out
}

fn refine(
    cube: DyadicCube,
    generator: &PointCloud,
    finest: i32,
    accepted: &mut Vec<DyadicCube>,
    truncated: &mut Vec<DyadicCube>,
) {
    let dist = generator.dist_to_box(&cube.lo(), &cube.hi()).expect("non-empty generator");
    if cube.diam() <= dist {
        accepted.push(cube);
    } else if cube.level >= finest {
        truncated.push(cube);
    } else {
        for child in cube.children() {
            refine(child, generator, finest, accepted, truncated);
        }
    }
}

/// Whitney decomposition of `bbox \ cl(N)` down to level `finest`.
pub fn whitney_decompose(generator: &PointCloud, bbox: &BBox, finest: i32) -> Result<WhitneyDecomposition> {
    whitney_decompose_shared(Arc::new(generator.clone()), bbox, finest)
}

/// As [`whitney_decompose`], sharing the generator instead of copying it.
pub fn whitney_decompose_shared(
    generator: Arc<PointCloud>,
    bbox: &BBox,
    finest: i32,
) -> Result<WhitneyDecomposition> {
    if generator.is_empty() {
        return Err(Error::EmptySet);
    }
    let top = top_level(bbox)?;
    if finest < top {
        return Err(Error::TooCoarse { finest });
    }
    let parts: Vec<(Vec<DyadicCube>, Vec<DyadicCube>)> = top_tiles(bbox, top)
        .into_par_iter()
        .map(|tile| {
            let mut acc = Vec::new();
            let mut tr = Vec::new();
            refine(tile, &generator, finest, &mut acc, &mut tr);
            (acc, tr)
        })
        .collect();
    let mut cubes = Vec::new();
    let mut truncated = Vec::new();
    for (a, t) in parts {
        cubes.extend(a);
        truncated.extend(t);
    }
    if cubes.is_empty() {
        return Err(Error::TooCoarse { finest });
    }
    Ok(WhitneyDecomposition::from_parts(bbox.dim, cubes, truncated, generator, *bbox, top, finest))
}

impl WhitneyDecomposition {
    /// Assemble a decomposition from explicit cube lists. Used for fixtures;
    /// no post-conditions are checked here (see [`verify_whitney`]).
    pub fn from_parts(
        dim: usize,
        mut cubes: Vec<DyadicCube>,
        mut truncated: Vec<DyadicCube>,
        generator: Arc<PointCloud>,
        bbox: BBox,
        coarsest_level: i32,
        finest_level: i32,
    ) -> Self {
        cubes.sort();
        truncated.sort();
        let index = cubes.iter().enumerate().map(|(i, q)| (*q, i)).collect();
        let mut levels: Vec<i32> = cubes.iter().map(|q| q.level).collect();
        levels.dedup();
        WhitneyDecomposition { dim, cubes, truncated, generator, bbox, coarsest_level, finest_level, index, levels }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cubes in canonical order: level-major, then lexicographic index.
    pub fn cubes(&self) -> &[DyadicCube] {
        &self.cubes
    }

    pub fn truncated(&self) -> &[DyadicCube] {
        &self.truncated
    }

    pub fn generator(&self) -> &PointCloud {
        &self.generator
    }

    pub fn shared_generator(&self) -> Arc<PointCloud> {
        self.generator.clone()
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn coarsest_level(&self) -> i32 {
        self.coarsest_level
    }

    pub fn finest_level(&self) -> i32 {
        self.finest_level
    }

    /// Distinct cube levels present, ascending.
    pub fn levels(&self) -> &[i32] {
        &self.levels
    }

    pub fn contains(&self, q: &DyadicCube) -> bool {
        self.index.contains_key(q)
    }

    pub fn position(&self, q: &DyadicCube) -> Option<usize> {
        self.index.get(q).copied()
    }

    /// The cube whose half-open extent holds `x`, if any.
    pub fn locate(&self, x: &Point) -> Option<DyadicCube> {
        self.levels
            .iter()
            .map(|&k| DyadicCube::containing(self.dim, k, x))
            .find(|q| self.index.contains_key(q))
    }

    /// Cubes whose `factor`-dilations contain `x`.
    pub fn dilated_cover(&self, x: &Point, factor: f64) -> Vec<DyadicCube> {
        let d = self.dim;
        let mut out = Vec::new();
        let half = 0.5 * (factor - 1.0);
        for &k in &self.levels {
            let scale = 2f64.powi(k);
            let mut lo = [0i64; 3];
            let mut hi = [0i64; 3];
            for a in 0..d {
                let t = x[a] * scale;
                lo[a] = (t - half).floor() as i64 - 1;
                hi[a] = (t + half).floor() as i64 + 1;
            }
            for i2 in lo[2]..=hi[2] {
                for i1 in lo[1]..=hi[1] {
                    for i0 in lo[0]..=hi[0] {
                        let q = DyadicCube::new(d, k, &[i0, i1, i2]);
                        if self.index.contains_key(&q) && q.dilated_contains(x, factor) {
                            out.push(q);
                        }
                    }
                }
            }
        }
        out
    }

    /// Cube list as CSV with columns `level,index_1..index_d`.
    pub fn to_csv(&self) -> String {
        cubes_to_csv(self.dim, &self.cubes)
    }
}

pub fn cubes_to_csv(dim: usize, cubes: &[DyadicCube]) -> String {
    let mut s = String::from("level");
    for a in 1..=dim {
        let _ = write!(s, ",index_{a}");
    }
    s.push('\n');
    for q in cubes {
        let _ = write!(s, "{}", q.level);
        for a in 0..dim {
            let _ = write!(s, ",{}", q.index[a]);
        }
        s.push('\n');
    }
    s
}

/// Check disjointness, property (ii) and coverage of a decomposition.
pub fn verify_whitney(w: &WhitneyDecomposition) -> WhitneyReport {
    // Dyadic cubes are nested or disjoint, so overlap means a duplicate or
    // an ancestor present in the family.
    let mut seen = HashSet::with_capacity(w.cubes.len());
    let mut disjoint = true;
    for q in &w.cubes {
        if !seen.insert(*q) {
            disjoint = false;
        }
    }
    if disjoint {
        let min_level = w.cubes.iter().map(|q| q.level).min().unwrap_or(0);
        disjoint = w.cubes.par_iter().all(|q| {
            let mut a = *q;
            while a.level > min_level {
                a = a.parent();
                if seen.contains(&a) {
                    return false;
                }
            }
            true
        });
    }

    let ratios: Vec<f64> = w
        .cubes
        .par_iter()
        .map(|q| w.generator.dist_to_box(&q.lo(), &q.hi()).unwrap_or(f64::INFINITY) / q.diam())
        .collect();
    let ratio_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    // Parts of the box covered by neither accepted cubes nor the collar
    // √d·2^-finest around N.
    let collar = (w.dim as f64).sqrt() * 0.5f64.powi(w.finest_level);
    let per_axis = 4usize;
    let defects: Vec<f64> = w
        .truncated
        .par_iter()
        .map(|q| {
            let lo = q.lo();
            let s = q.side();
            let mut outside = 0usize;
            let mut total = 0usize;
            let n2 = if w.dim > 2 { per_axis } else { 1 };
            let n1 = if w.dim > 1 { per_axis } else { 1 };
            for k in 0..n2 {
                for j in 0..n1 {
                    for i in 0..per_axis {
                        let idx = [i, j, k];
                        let mut x = [0.0; 3];
                        for a in 0..w.dim {
                            x[a] = lo[a] + s * (idx[a] as f64 + 0.5) / per_axis as f64;
                        }
                        total += 1;
                        if w.generator.dist_or_inf(&x) > collar {
                            outside += 1;
                        }
                    }
                }
            }
            q.volume() * outside as f64 / total as f64
        })
        .collect();
    let mut defect = NeumaierSum::default();
    defects.iter().for_each(|v| defect.add(*v));
    let mut covered = NeumaierSum::default();
    w.cubes.iter().for_each(|q| covered.add(q.volume()));
    let mut trunc = NeumaierSum::default();
    w.truncated.iter().for_each(|q| trunc.add(q.volume()));
    let hole = (w.bbox.volume() - covered.value() - trunc.value()).max(0.0);

    WhitneyReport {
        cube_count: w.cubes.len(),
        truncated_count: w.truncated.len(),
        disjointness: disjoint,
        cover_defect_volume: defect.value() + hole,
        truncated_volume: trunc.value(),
        ratio_min,
        ratio_max,
        distance_tolerance: w.generator.hausdorff_bound(),
    }
}

/// Cubes of `w` whose closures touch `cl(q)`, including `q` itself.
///
/// Neighbouring Whitney cubes differ by at most two levels (their
/// diameters are within a factor 4 of each other by property (ii)), so only
/// levels within four of `q` are scanned.
pub fn cube_neighbors(w: &WhitneyDecomposition, q: &DyadicCube) -> Result<Vec<DyadicCube>> {
    if !w.contains(q) {
        return Err(Error::CubeNotFound(*q));
    }
    let d = w.dim;
    let mut out = Vec::new();
    for &k in w.levels() {
        if (k - q.level).abs() > 4 {
            continue;
        }
        let kk = k.max(q.level);
        let qe = q.extent_at(kk);
        let step = 1i128 << (kk - k);
        let mut lo = [0i64; 3];
        let mut hi = [0i64; 3];
        for a in 0..d {
            lo[a] = (qe[a].0.div_euclid(step) - 1) as i64;
            hi[a] = qe[a].1.div_euclid(step) as i64;
        }
        for i2 in lo[2]..=hi[2] {
            for i1 in lo[1]..=hi[1] {
                for i0 in lo[0]..=hi[0] {
                    let c = DyadicCube::new(d, k, &[i0, i1, i2]);
                    if w.contains(&c) && c.closure_touches(q) {
                        out.push(c);
                    }
                }
            }
        }
    }
    out.sort();
    Ok(out)
}
