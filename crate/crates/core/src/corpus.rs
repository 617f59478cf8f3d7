//! Test functions in `W^{s,p}(O) ∩ L^p(O, dist_D^{-sp})` and negative
//! controls outside it.
//!
//! Every function is localized by the cutoff `(1 − |x − a|²/R²)²` around a
//! per-geometry anchor `a`, which keeps supports (and so quadrature costs)
//! small.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{builtin_geometry, AnalyticRegion, BBox, FractionalParams, Point, Region, Shape};
use crate::grid::{CellMask, GridFunction, Window};
use crate::numeric::mix_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `dist_D^α` times the cutoff.
    HardyPower { alpha: f64 },
    /// `(1 − |x − c|²/r²)²`, supported away from D.
    SmoothBump { center: [f64; 3], radius: f64 },
    /// Seeded trigonometric polynomial times the `hardy_power(s + 0.1)`
    /// envelope.
    RandomTrig { seed: u64, modes: usize },
    /// Indicator of the half `{x_d ≥ a_d}` of O near the anchor.
    IndicatorNegativeControl,
}

impl Family {
    /// Parse a family name with default parameters (`s` fixes the envelope
    /// exponent).
    pub fn from_name(name: &str, s: f64) -> Result<Family> {
        match name {
            "hardy_power" => Ok(Family::HardyPower { alpha: s + ENVELOPE_OFFSET }),
            "smooth_bump" => Ok(Family::SmoothBump { center: [0.0; 3], radius: 0.0 }),
            "random_trig" => Ok(Family::RandomTrig { seed: 0, modes: 3 }),
            "indicator_negative_control" => Ok(Family::IndicatorNegativeControl),
            _ => Err(Error::Config(format!("unknown corpus family `{name}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Family::HardyPower { .. } => "hardy_power",
            Family::SmoothBump { .. } => "smooth_bump",
            Family::RandomTrig { .. } => "random_trig",
            Family::IndicatorNegativeControl => "indicator_negative_control",
        }
    }
}

/// Default envelope exponent offset: `α = s + 0.1`.
pub const ENVELOPE_OFFSET: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub label: String,
    #[serde(flatten)]
    pub family: Family,
    pub params: FractionalParams,
    pub region: String,
}

impl CorpusSpec {
    /// Hardy term expected to diverge: powers with `α ≤ s − 1/p` (the
    /// integrability threshold of `dist^{(α−s)p}` across a boundary curve)
    /// and indicators touching D.
    pub fn intended_divergent(&self) -> bool {
        match self.family {
            Family::HardyPower { alpha } => alpha <= self.params.s - 1.0 / self.params.p,
            Family::IndicatorNegativeControl => true,
            _ => false,
        }
    }

    pub fn is_control(&self) -> bool {
        matches!(self.family, Family::IndicatorNegativeControl) || self.intended_divergent()
    }
}

/// Anchor point and cutoff radius of the corpus on a geometry.
pub fn anchor(region: &AnalyticRegion) -> (Point, f64) {
    match region.shape() {
        Shape::CuspTouchingHalfplane => ([0.0; 3], 0.125),
        Shape::ExpWhitneyCusp { .. } => ([-0.5, 0.0, 0.0], 0.25),
        Shape::IntervalWithEndpointD => ([0.0; 3], 0.5),
        Shape::HalfPlane => ([0.0; 3], 0.25),
        Shape::Disk { radius } => ([radius, 0.0, 0.0], 0.25),
    }
}

fn cutoff(x: &Point, a: &Point, r: f64, dim: usize) -> f64 {
    let d2: f64 = (0..dim).map(|k| (x[k] - a[k]).powi(2)).sum();
    if d2 >= r * r {
        0.0
    } else {
        let t = 1.0 - d2 / (r * r);
        t * t
    }
}

/// `dist_D^α`, with `1` when D is empty.
fn dist_power(region: &AnalyticRegion, x: &Point, alpha: f64) -> f64 {
    let d = region.d_cloud().dist_or_inf(x);
    if d.is_finite() {
        d.powf(alpha)
    } else {
        1.0
    }
}

/// Box holding every corpus support: the cutoff ball grown by one cell,
/// clipped to the bounding box.
pub fn support_box(region: &AnalyticRegion) -> BBox {
    let (a, r) = anchor(region);
    let mut b = BBox { dim: region.dim(), lo: [0.0; 3], hi: [0.0; 3] };
    for k in 0..region.dim() {
        b.lo[k] = a[k] - r;
        b.hi[k] = a[k] + r;
    }
    b.expand(region.resolution()).intersect(region.bbox())
}

/// Window covering the cutoff ball plus the unit kernel range, clipped to
/// the bounding box.
pub fn corpus_window(region: &AnalyticRegion) -> Window {
    let (a, r) = anchor(region);
    let dim = region.dim();
    let h = region.resolution();
    let mut b = BBox { dim, lo: [0.0; 3], hi: [0.0; 3] };
    for k in 0..dim {
        b.lo[k] = a[k] - r - 1.0 - h;
        b.hi[k] = a[k] + r + 1.0 + h;
    }
    Window::covering(&b.intersect(region.bbox()), region.level())
}

/// Sample the corpus function on `region` at its resolution.
pub fn generate(spec: &CorpusSpec, region: &AnalyticRegion) -> Result<GridFunction> {
    if spec.region != region.name() {
        return Err(Error::RegionMismatch { expected: region.name().to_string(), found: spec.region.clone() });
    }
    let (a, r) = anchor(region);
    let dim = region.dim();
    let s = spec.params.s;
    let mask = CellMask::rasterize(region, corpus_window(region));
    match &spec.family {
        Family::HardyPower { alpha } => {
            let alpha = *alpha;
            GridFunction::sample(region, mask, spec.params, |x| dist_power(region, x, alpha) * cutoff(x, &a, r, dim))
        }
        Family::SmoothBump { center, radius } => {
            if !(*radius > 0.0) {
                return Err(Error::Config("smooth_bump needs a positive radius".into()));
            }
            GridFunction::sample(region, mask, spec.params, |x| cutoff(x, center, *radius, dim))
        }
        Family::RandomTrig { seed, modes } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let terms: Vec<(f64, [f64; 3], f64)> = (0..*modes)
                .map(|_| {
                    let amp = rng.gen_range(-1.0..1.0);
                    let mut freq = [0.0; 3];
                    for f in freq.iter_mut().take(dim) {
                        *f = rng.gen_range(-12.0..12.0);
                    }
                    (amp, freq, rng.gen_range(0.0..std::f64::consts::TAU))
                })
                .collect();
            let alpha = s + ENVELOPE_OFFSET;
            GridFunction::sample(region, mask, spec.params, |x| {
                let trig: f64 = terms
                    .iter()
                    .map(|(amp, freq, phase)| amp * ((0..dim).map(|k| freq[k] * x[k]).sum::<f64>() + phase).cos())
                    .sum();
                (1.0 + trig) * dist_power(region, x, alpha) * cutoff(x, &a, r, dim)
            })
        }
        Family::IndicatorNegativeControl => {
            let axis = dim - 1;
            GridFunction::sample(region, mask, spec.params, |x| {
                let d2: f64 = (0..dim).map(|k| (x[k] - a[k]).powi(2)).sum();
                if d2 < r * r && x[axis] >= a[axis] {
                    1.0
                } else {
                    0.0
                }
            })
        }
    }
}

/// [`generate`] on a built-in geometry resolved at `level`.
pub fn generate_builtin(spec: &CorpusSpec, level: u32) -> Result<GridFunction> {
    generate(spec, &builtin_geometry(&spec.region, level)?)
}

/// The standard corpus of a geometry: five Hardy powers, five bumps away
/// from D, ten random trigonometric polynomials and one negative control.
/// Bump placement is seeded and independent of the resolution.
pub fn default_corpus(region: &AnalyticRegion, params: FractionalParams, seed: u64) -> Vec<CorpusSpec> {
    let name = region.name().to_string();
    let spec = |label: String, family: Family| CorpusSpec { label, family, params, region: name.clone() };
    let s = params.s;
    let mut out = Vec::new();
    for (k, alpha) in [s + ENVELOPE_OFFSET, s + 0.3, s + 0.6, 1.0, 1.5].into_iter().enumerate() {
        out.push(spec(format!("hardy_power_{k}"), Family::HardyPower { alpha }));
    }
    let (a, r) = anchor(region);
    let dim = region.dim();
    // a reference resolution makes the placement level-independent
    let coarse = region.at_level(10);
    let mut k = 0u64;
    let mut placed = 0;
    while placed < 5 && k < 10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 1, k));
        k += 1;
        let mut c = [0.0; 3];
        for (i, ci) in c.iter_mut().enumerate().take(dim) {
            *ci = a[i] + rng.gen_range(-r..r);
        }
        if !coarse.inside(&c) || cutoff(&c, &a, r, dim) == 0.0 {
            continue;
        }
        let dd = coarse.d_cloud().dist_or_inf(&c);
        let from_anchor = (0..dim).map(|i| (c[i] - a[i]).powi(2)).sum::<f64>().sqrt();
        // the bump stays inside the cutoff ball, so all supports share one box
        let radius = (0.5 * dd).min(r / 3.0).min(r - from_anchor);
        if radius < r / 16.0 {
            continue;
        }
        out.push(spec(format!("smooth_bump_{placed}"), Family::SmoothBump { center: c, radius }));
        placed += 1;
    }
    for j in 0..10u64 {
        out.push(spec(format!("random_trig_{j}"), Family::RandomTrig { seed: mix_seed(seed, 2, j), modes: 3 }));
    }
    out.push(spec("indicator_negative_control".into(), Family::IndicatorNegativeControl));
    out
}
