//! Monte-Carlo certification of measure-density (interior thickness)
//! conditions.
//!
//! Every `(center, radius)` sample draws its points from a ChaCha8 stream
//! seeded by `(seed, center index, radius index)`, so reports are
//! bit-reproducible and two checks sharing a seed use common random numbers:
//! the degenerate check sees exactly a subset of the plain check's samples.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{dist2, Point, PointCloud, Region};
use crate::numeric::mix_seed;

/// Smallest admissible number of Monte-Carlo points per ball.
pub const MIN_MC_SAMPLES: usize = 1000;

/// Tries per interior center before it is given up and counted as skipped.
const INTERIOR_TRIES: usize = 256;

/// Sampling protocol shared by all checkers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItcOptions {
    pub centers: usize,
    pub radii: usize,
    pub n_mc: usize,
    pub seed: u64,
    /// Verdict threshold on `inf_density`.
    pub threshold: f64,
    /// Accumulation point to concentrate centers around (cusp tips).
    pub bias: Option<[f64; 3]>,
    /// Smallest radius; radii are log-uniform in `[r_min, r_max]`.
    pub r_min: f64,
    pub r_max: f64,
}

impl ItcOptions {
    /// Defaults for a region at level `L`: 200 centers × 20 radii, 10⁴ points
    /// per ball, radii in `[2^{-L+2}, 1]`.
    pub fn for_level(level: u32) -> Self {
        ItcOptions {
            centers: 200,
            radii: 20,
            n_mc: 10_000,
            seed: 0,
            threshold: 0.05,
            bias: None,
            r_min: 0.5f64.powi(level as i32 - 2).min(1.0),
            r_max: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_bias(mut self, bias: Option<Point>) -> Self {
        self.bias = bias;
        self
    }

    /// Acceptance tolerance for comparing two MC inf-estimates: twice the
    /// worst-case standard error `1/(2√n)`.
    pub fn mc_tolerance(&self) -> f64 {
        1.0 / (self.n_mc as f64).sqrt()
    }

    fn validate(&self) -> Result<()> {
        if self.n_mc < MIN_MC_SAMPLES {
            return Err(Error::InvalidParams(format!("n_mc = {} < {MIN_MC_SAMPLES}", self.n_mc)));
        }
        if self.centers == 0 || self.radii == 0 {
            return Err(Error::InvalidParams("need at least one center and one radius".into()));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max <= 1.0) {
            return Err(Error::InvalidParams(format!(
                "radius range [{}, {}] not inside (0, 1]",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }

    /// Stratified log-uniform radius `j` of center `i`.
    fn radius(&self, i: usize, j: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0x5EED_0AD1, i as u64, j as u64));
        let u: f64 = rng.gen();
        let t = (j as f64 + u) / self.radii as f64;
        self.r_min * (self.r_max / self.r_min).powf(t)
    }

    fn density_seed(&self, i: usize, j: usize) -> u64 {
        mix_seed(self.seed, i as u64, j as u64)
    }

    fn center_rng(&self, i: usize) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix_seed(self.seed ^ 0xCE47_E125, i as u64, u64::MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensitySample {
    pub center: [f64; 3],
    pub radius: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }
}

/// Per-sample densities and their infimum, the empirical thickness constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessReport {
    pub kind: String,
    pub region: String,
    pub dim: usize,
    pub samples: Vec<DensitySample>,
    /// `+∞` (serialized as `null`) when no sample was taken.
    pub inf_density: f64,
    pub argmin: Option<usize>,
    pub skipped_centers: usize,
    pub protocol: ItcOptions,
    pub verdict: Verdict,
}

/// The report without its sample table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSummary {
    pub kind: String,
    pub region: String,
    pub inf_density: Option<f64>,
    pub argmin: Option<DensitySample>,
    pub sample_count: usize,
    pub skipped_centers: usize,
    pub protocol: ItcOptions,
    pub verdict: Verdict,
}

impl ThicknessReport {
    fn assemble(kind: &str, region: &dyn Region, rows: Vec<Vec<DensitySample>>, skipped: usize, opts: &ItcOptions) -> Self {
        let samples: Vec<DensitySample> = rows.into_iter().flatten().collect();
        let mut inf = f64::INFINITY;
        let mut argmin = None;
        for (k, s) in samples.iter().enumerate() {
            if s.density < inf {
                inf = s.density;
                argmin = Some(k);
            }
        }
        ThicknessReport {
            kind: kind.to_string(),
            region: region.name().to_string(),
            dim: region.dim(),
            samples,
            inf_density: inf,
            argmin,
            skipped_centers: skipped,
            protocol: opts.clone(),
            verdict: Verdict::from_bool(inf >= opts.threshold),
        }
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.inf_density >= threshold
    }

    pub fn summary(&self) -> ThicknessSummary {
        ThicknessSummary {
            kind: self.kind.clone(),
            region: self.region.clone(),
            inf_density: self.inf_density.is_finite().then_some(self.inf_density),
            argmin: self.argmin.map(|k| self.samples[k].clone()),
            sample_count: self.samples.len(),
            skipped_centers: self.skipped_centers,
            protocol: self.protocol.clone(),
            verdict: self.verdict,
        }
    }

    /// Sample table with columns `x_1..x_d,radius,density`.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for a in 1..=self.dim {
            let _ = write!(s, "x_{a},");
        }
        s.push_str("radius,density\n");
        for r in &self.samples {
            for a in 0..self.dim {
                let _ = write!(s, "{},", r.center[a]);
            }
            let _ = writeln!(s, "{},{}", r.radius, r.density);
        }
        s
    }
}

/// Uniform point in the ball `B(x, r)` of dimension `dim`.
fn ball_point(rng: &mut ChaCha8Rng, dim: usize, x: &Point, r: f64) -> Point {
    let mut p = *x;
    match dim {
        1 => p[0] += r * (2.0 * rng.gen::<f64>() - 1.0),
        2 => {
            let rho = r * rng.gen::<f64>().sqrt();
            let t = std::f64::consts::TAU * rng.gen::<f64>();
            p[0] += rho * t.cos();
            p[1] += rho * t.sin();
        }
        _ => loop {
            let v = [2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0, 2.0 * rng.gen::<f64>() - 1.0];
            if v[0] * v[0] + v[1] * v[1] + v[2] * v[2] < 1.0 {
                for a in 0..3 {
                    p[a] += r * v[a];
                }
                break;
            }
        },
    }
    p
}

/// Monte-Carlo estimate of `|B(x, r) ∩ E| / |B(x, r)|`; standard error at
/// most `1/(2√n_mc)`.
pub fn measure_density(e: &dyn Region, x: &Point, r: f64, n_mc: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = e.dim();
    let hits = (0..n_mc).filter(|_| e.inside(&ball_point(&mut rng, dim, x, r))).count();
    hits as f64 / n_mc.max(1) as f64
}

/// Draws center points from a cloud, uniformly or biased toward a point.
struct CenterSampler<'a> {
    points: Vec<&'a Point>,
    biased: bool,
}

impl<'a> CenterSampler<'a> {
    fn new(cloud: &'a PointCloud, bias: Option<Point>) -> Self {
        let mut points: Vec<&Point> = cloud.points().iter().collect();
        match bias {
            Some(b) => {
                points.sort_by(|p, q| dist2(p, &b).total_cmp(&dist2(q, &b)).then(p.partial_cmp(q).unwrap()));
            }
            None => points.sort_by(|p, q| p.partial_cmp(q).unwrap()),
        }
        CenterSampler { points, biased: bias.is_some() }
    }

    /// Biased draws pick index `⌊n^u⌋ - 1`, so the distance rank to the bias
    /// point is log-uniform.
    fn draw(&self, rng: &mut ChaCha8Rng) -> Point {
        let n = self.points.len();
        let k = if self.biased {
            let u: f64 = rng.gen();
            ((n as f64).powf(u).floor() as usize).clamp(1, n) - 1
        } else {
            rng.gen_range(0..n)
        };
        *self.points[k]
    }
}

fn sample_center(e: &dyn Region, opts: &ItcOptions, i: usize, sampler: &CenterSampler) -> Vec<DensitySample> {
    let mut rng = opts.center_rng(i);
    let x = sampler.draw(&mut rng);
    densities_at(e, opts, i, &x, f64::INFINITY)
}

/// Densities at every radius of center `i` not exceeding `cap`.
fn densities_at(e: &dyn Region, opts: &ItcOptions, i: usize, x: &Point, cap: f64) -> Vec<DensitySample> {
    (0..opts.radii)
        .filter_map(|j| {
            let r = opts.radius(i, j);
            (r <= cap).then(|| DensitySample {
                center: *x,
                radius: r,
                density: measure_density(e, x, r, opts.n_mc, opts.density_seed(i, j)),
            })
        })
        .collect()
}

/// Thickness of `E` in `F`: balls centered on samples of `F ⊆ ∂E`.
pub fn check_itc_in(e: &dyn Region, f: &PointCloud, opts: &ItcOptions) -> Result<ThicknessReport> {
    opts.validate()?;
    if f.is_empty() {
        return Err(Error::EmptySet);
    }
    let sampler = CenterSampler::new(f, opts.bias);
    let rows: Vec<Vec<DensitySample>> =
        (0..opts.centers).into_par_iter().map(|i| sample_center(e, opts, i, &sampler)).collect();
    Ok(ThicknessReport::assemble("itc_in", e, rows, 0, opts))
}

/// Thickness of `E` with interior centers.
///
/// Centers are drawn near the boundary, where thickness can fail: a
/// boundary sample `b` is picked (honouring the bias), then a point of `E`
/// uniformly within `ρ/2` of `b`, with `ρ` log-uniform over the radius range.
/// Centers for which no point of `E` is found are skipped and counted.
pub fn check_itc(e: &dyn Region, boundary: &PointCloud, opts: &ItcOptions) -> Result<ThicknessReport> {
    opts.validate()?;
    if boundary.is_empty() {
        return Err(Error::EmptySet);
    }
    let sampler = CenterSampler::new(boundary, opts.bias);
    let dim = e.dim();
    let rows: Vec<Option<Vec<DensitySample>>> = (0..opts.centers)
        .into_par_iter()
        .map(|i| {
            let mut rng = opts.center_rng(i);
            let b = sampler.draw(&mut rng);
            let mut rho = opts.r_min * (opts.r_max / opts.r_min).powf(rng.gen::<f64>());
            for t in 0..INTERIOR_TRIES {
                if t > 0 && t % 32 == 0 {
                    rho *= 0.5;
                }
                let x = ball_point(&mut rng, dim, &b, 0.5 * rho);
                if e.inside(&x) {
                    return Some(densities_at(e, opts, i, &x, f64::INFINITY));
                }
            }
            None
        })
        .collect();
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    Ok(ThicknessReport::assemble("itc", e, rows.into_iter().flatten().collect(), skipped, opts))
}

/// Degenerate thickness in `N`: centers on `N`, radii capped by
/// `min(1, dist_D(x))`. With the same options this is a sample-wise subset of
/// [`check_itc_in`] on `N`, so its infimum is never smaller.
///
/// Centers admitting no radius (`dist_D` below the smallest radius) are
/// skipped and counted. `D = ∅` caps nothing.
pub fn check_degenerate_itc(o: &dyn Region, n: &PointCloud, d: &PointCloud, opts: &ItcOptions) -> Result<ThicknessReport> {
    opts.validate()?;
    if n.is_empty() {
        return Err(Error::EmptySet);
    }
    let sampler = CenterSampler::new(n, opts.bias);
    let rows: Vec<Vec<DensitySample>> = (0..opts.centers)
        .into_par_iter()
        .map(|i| {
            let mut rng = opts.center_rng(i);
            let x = sampler.draw(&mut rng);
            let cap = d.dist_or_inf(&x).min(1.0);
            densities_at(o, opts, i, &x, cap)
        })
        .collect();
    let skipped = rows.iter().filter(|r| r.is_empty()).count();
    Ok(ThicknessReport::assemble("degenerate_itc", o, rows, skipped, opts))
}

/// One threshold of the two-sided consistency test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub tau: f64,
    pub scaled_tau: f64,
    pub boundary_pass: bool,
    pub interior_pass: bool,
    /// boundary PASS at τ ⇒ interior PASS at τ/2^{d+1} − tol.
    pub forward: bool,
    /// interior PASS at τ ⇒ boundary PASS at τ/2^{d+1} − tol.
    pub backward: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub boundary_inf: f64,
    pub interior_inf: f64,
    pub tolerance: f64,
    pub checks: Vec<ConsistencyCheck>,
    pub consistent: bool,
}

/// Default threshold grid for [`boundary_interior_consistency`].
pub fn default_taus() -> Vec<f64> {
    (1..=10).map(|k| 0.05 * k as f64).collect()
}

/// Runs the boundary-centered and interior-centered checks and tests that
/// their verdicts agree at every threshold pair `(τ, τ/2^{d+1})`, both ways.
pub fn boundary_interior_consistency(e: &dyn Region, boundary: &PointCloud, opts: &ItcOptions, taus: &[f64]) -> Result<ConsistencyReport> {
    let b = check_itc_in(e, boundary, opts)?;
    let i = check_itc(e, boundary, opts)?;
    Ok(consistency_of(&b, &i, e.dim(), opts.mc_tolerance(), taus))
}

/// Consistency of two precomputed reports.
pub fn consistency_of(boundary: &ThicknessReport, interior: &ThicknessReport, dim: usize, tol: f64, taus: &[f64]) -> ConsistencyReport {
    let scale = 0.5f64.powi(dim as i32 + 1);
    let checks: Vec<ConsistencyCheck> = taus
        .iter()
        .map(|&tau| {
            let scaled = tau * scale;
            let boundary_pass = boundary.passes(tau);
            let interior_pass = interior.passes(tau);
            ConsistencyCheck {
                tau,
                scaled_tau: scaled,
                boundary_pass,
                interior_pass,
                forward: !boundary_pass || interior.passes(scaled - tol),
                backward: !interior_pass || boundary.passes(scaled - tol),
            }
        })
        .collect();
    ConsistencyReport {
        boundary_inf: boundary.inf_density,
        interior_inf: interior.inf_density,
        tolerance: tol,
        consistent: checks.iter().all(|c| c.forward && c.backward),
        checks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::builtin_geometry;

    #[test]
    fn halfplane_boundary_density_is_half() {
        let g = builtin_geometry("halfplane", 8).unwrap();
        for (k, r) in [0.01, 0.1, 1.0].iter().enumerate() {
            let v = measure_density(&g, &[0.0, 0.3, 0.0], *r, 10_000, k as u64);
            assert!((v - 0.5).abs() < 0.02, "{v}");
        }
    }

    #[test]
    fn ball_inside_region_has_density_one() {
        let g = builtin_geometry("disk", 8).unwrap();
        assert_eq!(measure_density(&g, &[0.1, 0.0, 0.0], 0.5, 2000, 1), 1.0);
    }

    #[test]
    fn cusp_axis_density_vanishes_at_tip() {
        // B((-t,0), t/2) ∩ {|y| < x²}: the slab has width ≈ 2t² across a
        // ball of radius t/2, so the density is ≈ 2t²·t/(π t²/4) = 8t/π.
        let g = builtin_geometry("cusp_touching_halfplane", 12).unwrap();
        let mut prev = 1.0;
        for t in [0.4, 0.1, 0.025] {
            let v = measure_density(&g, &[-t, 0.0, 0.0], t / 2.0, 20_000, 3);
            let oracle = slab_area_oracle(t) / (std::f64::consts::PI * t * t / 4.0);
            assert!((v - oracle).abs() < 0.02, "t={t}: {v} vs {oracle}");
            assert!(v < prev);
            prev = v;
        }
        assert!(prev < 0.1);
    }

    /// Area of `{|y| < x²} ∩ B((-t,0), t/2)` by a fine midpoint rule in x.
    fn slab_area_oracle(t: f64) -> f64 {
        let r = t / 2.0;
        let n = 20_000;
        let dx = 2.0 * r / n as f64;
        (0..n)
            .map(|k| {
                let x = -t - r + (k as f64 + 0.5) * dx;
                let half_chord = (r * r - (x + t) * (x + t)).max(0.0).sqrt();
                2.0 * half_chord.min(x * x) * dx
            })
            .sum()
    }

    #[test]
    fn seeded_determinism() {
        let g = builtin_geometry("disk", 7).unwrap();
        let opts = ItcOptions { centers: 10, radii: 4, n_mc: 1000, ..ItcOptions::for_level(7) }.with_seed(42);
        let a = check_itc_in(&g, g.n_cloud(), &opts).unwrap();
        let b = check_itc_in(&g, g.n_cloud(), &opts).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_csv(), b.to_csv());
    }

    #[test]
    fn protocol_validation() {
        let g = builtin_geometry("disk", 7).unwrap();
        let opts = ItcOptions { n_mc: 10, ..ItcOptions::for_level(7) };
        assert!(matches!(check_itc_in(&g, g.n_cloud(), &opts), Err(Error::InvalidParams(_))));
        let opts = ItcOptions::for_level(7);
        assert!(matches!(check_itc_in(&g, g.d_cloud(), &opts), Err(Error::EmptySet)));
    }

    #[test]
    fn degenerate_with_empty_d_matches_plain() {
        let g = builtin_geometry("halfplane", 7).unwrap();
        let opts = ItcOptions { centers: 20, radii: 5, n_mc: 1000, ..ItcOptions::for_level(7) };
        let plain = check_itc_in(&g, g.n_cloud(), &opts).unwrap();
        let deg = check_degenerate_itc(&g, g.n_cloud(), g.d_cloud(), &opts).unwrap();
        assert_eq!(plain.samples, deg.samples);
    }

    #[test]
    fn biased_sampler_prefers_the_tip() {
        let g = builtin_geometry("cusp_touching_halfplane", 9).unwrap();
        let s = CenterSampler::new(g.d_cloud(), Some([0.0; 3]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let near = (0..1000).filter(|_| dist2(&s.draw(&mut rng), &[0.0; 3]) < 0.01).count();
        assert!(near > 300, "{near}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]

        #[test]
        fn density_is_monotone_in_the_set(
            r_small in 0.2f64..1.0, grow in 0.0f64..1.0, cx in -1.5f64..1.5, cy in -1.5f64..1.5, r in 0.05f64..1.0, seed in 0u64..100,
        ) {
            use crate::geometry::{AnalyticRegion, BBox, Shape};
            let bbox = BBox::new(2, &[-4.0, -4.0], &[4.0, 4.0]).unwrap();
            let inner = AnalyticRegion::new("disk", Shape::Disk { radius: r_small }, bbox, 8);
            let outer = AnalyticRegion::new("disk", Shape::Disk { radius: r_small + grow }, bbox, 8);
            let x = [cx, cy, 0.0];
            proptest::prop_assert!(measure_density(&inner, &x, r, 1000, seed) <= measure_density(&outer, &x, r, 1000, seed));
        }
    }

    #[test]
    fn radius_cap_never_lowers_the_infimum() {
        for name in ["cusp_touching_halfplane", "exp_whitney_cusp"] {
            let g = builtin_geometry(name, 8).unwrap();
            let opts = ItcOptions { centers: 40, radii: 8, n_mc: 1000, ..ItcOptions::for_level(8) }.with_seed(4);
            let plain = check_itc_in(&g, g.n_cloud(), &opts).unwrap();
            let deg = check_degenerate_itc(&g, g.n_cloud(), g.d_cloud(), &opts).unwrap();
            assert!(deg.inf_density >= plain.inf_density, "{name}: {} < {}", deg.inf_density, plain.inf_density);
        }
    }
}
