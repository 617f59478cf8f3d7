//! The fattened domain 𝑶 = O ∪ ⋃_{Q∈Σ} (Q \ D), where Σ collects the
//! Whitney cubes of the complement of `cl(N)` whose closures meet `cl(O)`.
//!
//! Shared faces of neighbouring Σ cubes are not slits: a point outside
//! `cl(O)` belongs to 𝑶 when it lies in the interior of the union of the
//! closed Σ cubes, decided per orthant with exact dyadic lookups.

use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist, AnalyticRegion, BBox, Label, Point, PointCloud, Region};
use crate::numeric::mix_seed;
use crate::thickness::{check_itc, ItcOptions, ThicknessReport};
use crate::whitney::{cubes_to_csv, DyadicCube, WhitneyDecomposition};

#[derive(Debug)]
pub struct FattenedDomain {
    name: String,
    base: AnalyticRegion,
    whitney: Arc<WhitneyDecomposition>,
    sigma: Vec<DyadicCube>,
    lookup: FxHashSet<DyadicCube>,
    levels: Vec<i32>,
    finest: i32,
    hull: BBox,
    boundary: OnceLock<PointCloud>,
}

/// Select Σ and assemble 𝑶.
///
/// A cube joins Σ when some point of a `(2^{max(L−k,0)}+1)^d` subgrid of its
/// closure is within `2^-L` of `cl(O)`; borderline cubes are included.
pub fn fatten(region: &AnalyticRegion, w: Arc<WhitneyDecomposition>) -> Result<FattenedDomain> {
    if w.generator().fingerprint() != region.n_cloud().fingerprint() {
        return Err(Error::GeneratorMismatch);
    }
    let level = region.level() as i32;
    let tol = region.resolution();
    let sigma: Vec<DyadicCube> = w
        .cubes()
        .par_iter()
        .filter(|q| {
            let n = 1usize << (level - q.level).max(0);
            region.closure_hits_box(&q.lo(), &q.hi(), n, tol)
        })
        .copied()
        .collect();
    Ok(FattenedDomain::from_parts(region.clone(), w, sigma))
}

impl FattenedDomain {
    /// Assemble 𝑶 from an explicit Σ without checking it. Fixture
    /// constructor for negative controls.
    pub fn from_parts(base: AnalyticRegion, whitney: Arc<WhitneyDecomposition>, mut sigma: Vec<DyadicCube>) -> Self {
        sigma.sort();
        sigma.dedup();
        let mut levels: Vec<i32> = sigma.iter().map(|q| q.level).collect();
        levels.dedup();
        let dim = base.dim();
        let mut hull = BBox { dim, lo: [f64::INFINITY; 3], hi: [f64::NEG_INFINITY; 3] };
        for q in &sigma {
            let (lo, hi) = (q.lo(), q.hi());
            for a in 0..dim {
                hull.lo[a] = hull.lo[a].min(lo[a]);
                hull.hi[a] = hull.hi[a].max(hi[a]);
            }
        }
        FattenedDomain {
            name: format!("fattened_{}", base.name()),
            finest: levels.last().copied().unwrap_or(0),
            lookup: sigma.iter().copied().collect(),
            sigma,
            levels,
            base,
            whitney,
            hull,
            boundary: OnceLock::new(),
        }
    }

    pub fn base(&self) -> &AnalyticRegion {
        &self.base
    }

    pub fn whitney(&self) -> &WhitneyDecomposition {
        &self.whitney
    }

    /// Σ in canonical order.
    pub fn sigma(&self) -> &[DyadicCube] {
        &self.sigma
    }

    /// Σ cubes not contained in O; these make up 𝑶 \ O.
    pub fn added_cubes(&self) -> Vec<DyadicCube> {
        self.sigma.iter().filter(|q| !self.base.inside(&q.center())).copied().collect()
    }

    /// Number of Σ cubes containing the neighbourhood of `x` in each
    /// orthant, as `(covered orthants, total orthants)`.
    fn orthant_cover(&self, x: &Point, stop_on_miss: bool) -> (usize, usize) {
        let d = self.base.dim();
        let total = 1usize << d;
        if !self.hull.contains(x) {
            return (0, total);
        }
        let scale = 2f64.powi(self.finest);
        let on_face = (0..d).any(|a| {
            let t = x[a] * scale;
            t == t.floor()
        });
        if !on_face {
            let hit = self
                .levels
                .iter()
                .any(|&k| self.lookup.contains(&DyadicCube::containing(d, k, x)));
            return (if hit { total } else { 0 }, total);
        }
        let mut covered = 0;
        for mask in 0..total {
            let hit = self.levels.iter().any(|&k| {
                let s = 2f64.powi(k);
                let mut idx = [0i64; 3];
                for (a, slot) in idx.iter_mut().enumerate().take(d) {
                    let t = x[a] * s;
                    let f = t.floor();
                    *slot = if t == f && (mask >> a) & 1 == 0 { f as i64 - 1 } else { f as i64 };
                }
                self.lookup.contains(&DyadicCube::new(d, k, &idx))
            });
            if hit {
                covered += 1;
            } else if stop_on_miss {
                return (covered, total);
            }
        }
        (covered, total)
    }

    /// `x` lies in the interior of `⋃_{Q∈Σ} cl(Q)`.
    pub fn in_sigma_interior(&self, x: &Point) -> bool {
        let (c, t) = self.orthant_cover(x, true);
        c == t
    }

    fn in_sigma_closure(&self, x: &Point) -> bool {
        self.orthant_cover(x, false).0 > 0
    }

    /// Samples of ∂𝑶: D, N and the exposed faces of the added cubes.
    pub fn boundary_cloud(&self) -> &PointCloud {
        self.boundary.get_or_init(|| {
            let faces = PointCloud::new(self.base.dim(), self.base.level(), self.exposed_face_samples());
            self.base.boundary_cloud().union(&faces)
        })
    }

    fn exposed_face_samples(&self) -> Vec<Point> {
        let d = self.base.dim();
        let h = self.base.resolution();
        let rows: Vec<Vec<Point>> = self
            .added_cubes()
            .par_iter()
            .map(|q| {
                let side = q.side();
                let m = ((side / h).round() as usize).max(1);
                let eps = 0.25 * side.min(h);
                let (lo, hi) = (q.lo(), q.hi());
                let mut out = Vec::new();
                for axis in 0..d {
                    for (face, sign) in [(lo[axis], -1.0), (hi[axis], 1.0)] {
                        let others: Vec<usize> = (0..d).filter(|&a| a != axis).collect();
                        let count = m.pow(others.len() as u32);
                        for c in 0..count {
                            let mut p = [0.0; 3];
                            p[axis] = face;
                            let mut rem = c;
                            for &a in &others {
                                p[a] = lo[a] + side * ((rem % m) as f64 + 0.5) / m as f64;
                                rem /= m;
                            }
                            let mut outer = p;
                            let mut inner = p;
                            outer[axis] += sign * eps;
                            inner[axis] -= sign * eps;
                            if !self.inside(&outer) && self.inside(&inner) {
                                out.push(p);
                            }
                        }
                    }
                }
                out
            })
            .collect();
        rows.into_iter().flatten().collect()
    }

    /// Σ as cube CSV.
    pub fn sigma_csv(&self) -> String {
        cubes_to_csv(self.base.dim(), &self.sigma)
    }

    /// Box holding `cl(𝑶)`: the hull of Σ and the boundary samples, clipped
    /// to the bounding box.
    pub fn extent(&self) -> BBox {
        let dim = self.base.dim();
        let mut b = self.hull;
        for p in self.base.boundary_cloud().points() {
            for a in 0..dim {
                b.lo[a] = b.lo[a].min(p[a]);
                b.hi[a] = b.hi[a].max(p[a]);
            }
        }
        b.intersect(self.base.bbox())
    }
}

impl Region for FattenedDomain {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn bbox(&self) -> &BBox {
        self.base.bbox()
    }

    fn level(&self) -> u32 {
        self.base.level()
    }

    /// D stays D; the rest of ∂𝑶 is labelled N.
    fn label(&self, x: &Point) -> Label {
        match self.base.label(x) {
            Label::InsideO => Label::InsideO,
            Label::InD => Label::InD,
            other => {
                if self.in_sigma_interior(x) {
                    Label::InsideO
                } else if other == Label::InN || self.in_sigma_closure(x) {
                    Label::InN
                } else {
                    Label::Outside
                }
            }
        }
    }

    fn inside(&self, x: &Point) -> bool {
        match self.base.label_tol(x, 0.0) {
            Label::InsideO => true,
            Label::InD => false,
            _ => self.in_sigma_interior(x),
        }
    }
}

/// Minimum of `|x − y| / dist_D(x)` over sampled pairs `x ∈ O`, `y ∈ 𝑶 \ O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub min_ratio: Option<f64>,
    pub argmin: Option<([f64; 3], [f64; 3])>,
    pub pairs: usize,
    pub attempts: usize,
    /// Smallest `dist_D(x)` admitted; closer points are below the cloud's
    /// resolution.
    pub dist_floor: f64,
    /// 𝑶 \ O or D is empty: the bound holds trivially.
    pub vacuous: bool,
}

/// Samples pairs concentrated where the bound is tight: `x` near D, `y` at
/// distance comparable to `dist_D(x)`.
pub fn separation_ratio(f: &FattenedDomain, n_pairs: usize, seed: u64) -> Result<SeparationReport> {
    let base = &f.base;
    let dcloud = base.d_cloud();
    let dist_floor = 0.5f64.powi(base.level() as i32 - 2);
    let vacuous = SeparationReport { min_ratio: None, argmin: None, pairs: 0, attempts: 0, dist_floor, vacuous: true };
    if dcloud.is_empty() || f.added_cubes().is_empty() || n_pairs == 0 {
        return Ok(vacuous);
    }
    let dim = base.dim();
    let mut anchors: Vec<Point> = dcloud.points().to_vec();
    anchors.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let tip = base.tip();
    if let Some(t) = tip {
        anchors.sort_by(|p, q| dist(p, &t).total_cmp(&dist(q, &t)).then(p.partial_cmp(q).unwrap()));
    }
    let n = anchors.len();

    let attempt = |i: u64| -> Option<(f64, Point, Point)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i, 0x3131));
        let k = if tip.is_some() && rng.gen::<bool>() {
            ((n as f64).powf(rng.gen::<f64>()).floor() as usize).clamp(1, n) - 1
        } else {
            rng.gen_range(0..n)
        };
        let rho = dist_floor * (1.0 / dist_floor).powf(rng.gen::<f64>());
        let x = offset(&mut rng, dim, &anchors[k], rho);
        if !base.inside(&x) {
            return None;
        }
        let dx = dcloud.dist_or_inf(&x);
        if dx < dist_floor {
            return None;
        }
        let sigma = dx * 2f64.powf(rng.gen_range(-3.0..3.0));
        let y = offset(&mut rng, dim, &x, sigma);
        if !f.inside(&y) || base.inside(&y) {
            return None;
        }
        Some((dist(&x, &y) / dx, x, y))
    };

    let mut best: Option<(f64, Point, Point)> = None;
    let mut pairs = 0usize;
    let mut next = 0u64;
    let round = (4 * n_pairs).max(1024) as u64;
    let max_attempts = 400 * n_pairs as u64;
    while pairs < n_pairs && next < max_attempts {
        let hits: Vec<(f64, Point, Point)> =
            (next..next + round).into_par_iter().filter_map(attempt).collect();
        next += round;
        for h in hits.into_iter().take(n_pairs - pairs) {
            pairs += 1;
            if best.as_ref().map_or(true, |b| h.0 < b.0) {
                best = Some(h);
            }
        }
    }
    Ok(SeparationReport {
        min_ratio: best.map(|b| b.0),
        argmin: best.map(|b| (b.1, b.2)),
        pairs,
        attempts: next as usize,
        dist_floor,
        vacuous: pairs == 0,
    })
}

fn offset(rng: &mut ChaCha8Rng, dim: usize, x: &Point, r: f64) -> Point {
    loop {
        let mut v = [0.0; 3];
        let mut n2 = 0.0;
        for c in v.iter_mut().take(dim) {
            *c = 2.0 * rng.gen::<f64>() - 1.0;
            n2 += *c * *c;
        }
        if n2 < 1.0 {
            let mut p = *x;
            for a in 0..dim {
                p[a] += r * v[a];
            }
            return p;
        }
    }
}

/// Interior-centered thickness of 𝑶, with centers near ∂𝑶 and biased toward
/// the base geometry's tip.
pub fn verify_fattened_itc(f: &FattenedDomain, opts: &ItcOptions) -> Result<ThicknessReport> {
    let opts = opts.clone().with_bias(opts.bias.or(f.base.tip()));
    let mut r = check_itc(f, f.boundary_cloud(), &opts)?;
    r.kind = "fattened_itc".into();
    Ok(r)
}

/// Summary of a fattening, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FattenSummary {
    pub region: String,
    pub whitney_cubes: usize,
    pub sigma_cubes: usize,
    pub added_cubes: usize,
    pub added_volume: f64,
    pub boundary_samples: usize,
}

impl FattenedDomain {
    pub fn summary(&self) -> FattenSummary {
        let added = self.added_cubes();
        FattenSummary {
            region: self.base.name().to_string(),
            whitney_cubes: self.whitney.cubes().len(),
            sigma_cubes: self.sigma.len(),
            added_cubes: added.len(),
            added_volume: crate::numeric::stable_sum(&added.iter().map(|q| q.volume()).collect::<Vec<_>>()),
            boundary_samples: self.boundary_cloud().len(),
        }
    }

    /// Added cubes (𝑶 \ O) as cube CSV.
    pub fn added_csv(&self) -> String {
        cubes_to_csv(self.base.dim(), &self.added_cubes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_geometry;
    use crate::whitney::whitney_decompose_shared;

    fn fattened(name: &str, level: u32) -> FattenedDomain {
        let g = builtin_geometry(name, level).unwrap();
        let w = whitney_decompose_shared(Arc::new(g.n_cloud().clone()), g.bbox(), level as i32).unwrap();
        fatten(&g, Arc::new(w)).unwrap()
    }

    #[test]
    fn halfplane_fattening_is_idle() {
        let f = fattened("halfplane", 7);
        assert!(f.added_cubes().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20_000 {
            let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), 0.0];
            assert_eq!(f.inside(&x), f.base().inside(&x), "{x:?}");
        }
        let r = separation_ratio(&f, 100, 0).unwrap();
        assert!(r.vacuous);
    }

    #[test]
    fn cusp_exterior_near_d_is_filled() {
        let f = fattened("cusp_touching_halfplane", 8);
        let y = [-0.5, 0.3, 0.0];
        assert!(!f.base().inside(&y));
        assert!(f.inside(&y));
        assert_eq!(f.label(&y), Label::InsideO);
        // D stays on the boundary
        assert_eq!(f.label(&[-0.5, 0.25, 0.0]), Label::InD);
        assert!(!f.inside(&[-0.5, 0.25, 0.0]));
        // far from the cusp nothing is added
        assert!(!f.inside(&[-0.3, 3.0, 0.0]));
    }

    #[test]
    fn o_is_contained_in_fattening() {
        for name in ["cusp_touching_halfplane", "exp_whitney_cusp", "disk"] {
            let f = fattened(name, 7);
            let b = *f.bbox();
            let mut rng = ChaCha8Rng::seed_from_u64(2);
            for _ in 0..20_000 {
                let x = [rng.gen_range(b.lo[0]..b.hi[0]), rng.gen_range(b.lo[1]..b.hi[1]), 0.0];
                if f.base().inside(&x) {
                    assert!(f.inside(&x), "{name} {x:?}");
                }
            }
        }
    }

    #[test]
    fn shared_faces_are_interior() {
        let f = fattened("cusp_touching_halfplane", 8);
        let added = f.added_cubes();
        let q = added.iter().find(|q| q.level == 4).expect("a level-4 added cube");
        // midpoint of a face shared with another Σ cube or O is inside 𝑶
        let c = q.center();
        let mut hits = 0;
        for (a, s) in [(0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0)] {
            let mut p = c;
            p[a] += s * 0.5 * q.side();
            if f.inside(&p) {
                hits += 1;
            }
        }
        assert!(hits >= 1);
    }

    #[test]
    fn generator_identity_is_checked() {
        let g = builtin_geometry("cusp_touching_halfplane", 7).unwrap();
        let other = builtin_geometry("halfplane", 7).unwrap();
        let w = whitney_decompose_shared(Arc::new(other.n_cloud().clone()), g.bbox(), 7).unwrap();
        assert!(matches!(fatten(&g, Arc::new(w)), Err(Error::GeneratorMismatch)));
    }

    #[test]
    fn sigma_cubes_touch_closure_of_o() {
        let f = fattened("exp_whitney_cusp", 7);
        let g = f.base();
        for q in f.sigma() {
            assert!(g.closure_hits_box(&q.lo(), &q.hi(), 1 << (7 - q.level).max(0), g.resolution()));
        }
    }

    #[test]
    fn exp_fattening_adds_one_layer() {
        use crate::geometry::builtin::column_height;
        let f = fattened("exp_whitney_cusp", 9);
        let mut checked = 0;
        for i in 0..40 {
            let x = -6.0 + 0.125 * i as f64 + 0.01;
            let h = column_height(x, -8.0);
            // stay inside a run of constant column height
            if column_height(x - 2.0 * h, -8.0) != h || column_height(x + 2.0 * h, -8.0) != h {
                continue;
            }
            checked += 1;
            assert!(f.inside(&[x, 1.25 * h, 0.0]) && !f.base().inside(&[x, 1.25 * h, 0.0]), "x={x}");
            assert!(!f.inside(&[x, 2.5 * h, 0.0]), "x={x}");
        }
        assert!(checked > 10, "{checked}");
    }

    #[test]
    fn separation_on_cusp() {
        let f = fattened("cusp_touching_halfplane", 8);
        let r = separation_ratio(&f, 5000, 7).unwrap();
        assert!(!r.vacuous);
        assert_eq!(r.pairs, 5000);
        assert!(r.min_ratio.unwrap() >= 0.45, "{r:?}");
    }

    #[test]
    fn boundary_cloud_lies_on_boundary() {
        let f = fattened("cusp_touching_halfplane", 7);
        let cloud = f.boundary_cloud();
        assert!(cloud.len() > f.base().boundary_cloud().len());
        let h = f.base().resolution();
        for p in cloud.points().iter().step_by(7) {
            // a point of ∂𝑶 has 𝑶 and its complement within one cell
            let near_in = (0..16).any(|k| {
                let t = k as f64 * std::f64::consts::TAU / 16.0;
                f.inside(&[p[0] + h * t.cos(), p[1] + h * t.sin(), 0.0])
            });
            assert!(near_in, "{p:?}");
        }
    }

    #[test]
    fn sigma_survives_a_finer_collar() {
        for name in ["cusp_touching_halfplane", "exp_whitney_cusp"] {
            let g = builtin_geometry(name, 7).unwrap();
            let gen = Arc::new(g.n_cloud().clone());
            let coarse = fatten(&g, Arc::new(whitney_decompose_shared(gen.clone(), g.bbox(), 7).unwrap())).unwrap();
            let fine_w = Arc::new(whitney_decompose_shared(gen, g.bbox(), 8).unwrap());
            let fine = fatten(&g, fine_w.clone()).unwrap();
            let kept: std::collections::HashSet<_> = fine.sigma().iter().collect();
            for q in coarse.sigma() {
                if fine_w.contains(q) {
                    assert!(kept.contains(q), "{name}: {q:?} dropped");
                }
            }
        }
    }
}
