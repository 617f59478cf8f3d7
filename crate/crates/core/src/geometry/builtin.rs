//! Built-in example geometries with analytic membership predicates.

use std::sync::OnceLock;

use super::{BBox, Label, Point, PointCloud, Region};
use crate::error::{Error, Result};

pub const BUILTIN_NAMES: [&str; 5] = [
    "halfplane",
    "disk",
    "cusp_touching_halfplane",
    "exp_whitney_cusp",
    "interval_with_endpoint_D",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// `{x₁ > 0}` in ℝ², all of the boundary is N.
    HalfPlane,
    /// Open disk around the origin, all of the boundary is N.
    Disk { radius: f64 },
    /// `{|y| < x², x < 0} ∪ {x > 0}`; D is the cusp boundary, N the y-axis
    /// without the origin.
    CuspTouchingHalfplane,
    /// Union of the layered Whitney cubes of the upper half-plane over
    /// `[x_min, 0]` whose closures meet `{y ≤ eˣ}`; N is the segment on the
    /// real line, D the rest of the boundary.
    ExpWhitneyCusp { x_min: f64 },
    /// `(0, 1) ⊂ ℝ` with D = {0} and N = {1}.
    IntervalWithEndpointD,
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::IntervalWithEndpointD => 1,
            _ => 2,
        }
    }

    fn default_bbox(&self) -> BBox {
        match self {
            Shape::IntervalWithEndpointD => BBox::new(1, &[-4.0], &[4.0]).unwrap(),
            Shape::ExpWhitneyCusp { .. } => BBox::new(2, &[-12.0, -8.0], &[4.0, 8.0]).unwrap(),
            _ => BBox::new(2, &[-4.0, -4.0], &[4.0, 4.0]).unwrap(),
        }
    }
}

/// Exact predicate region resolved at dyadic level `L`.
pub struct AnalyticRegion {
    name: String,
    shape: Shape,
    bbox: BBox,
    level: u32,
    tol: f64,
    d_cloud: OnceLock<PointCloud>,
    n_cloud: OnceLock<PointCloud>,
    boundary: OnceLock<PointCloud>,
}

impl std::fmt::Debug for AnalyticRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnalyticRegion")
            .field("name", &self.name)
            .field("shape", &self.shape)
            .field("bbox", &self.bbox)
            .field("level", &self.level)
            .finish()
    }
}

impl Clone for AnalyticRegion {
    fn clone(&self) -> Self {
        AnalyticRegion::new(&self.name, self.shape, self.bbox, self.level)
    }
}

/// Look up one of the five built-in geometries.
pub fn builtin_geometry(name: &str, level: u32) -> Result<AnalyticRegion> {
    let shape = match name {
        "halfplane" => Shape::HalfPlane,
        "disk" => Shape::Disk { radius: 1.0 },
        "cusp_touching_halfplane" => Shape::CuspTouchingHalfplane,
        "exp_whitney_cusp" => Shape::ExpWhitneyCusp { x_min: -8.0 },
        "interval_with_endpoint_D" => Shape::IntervalWithEndpointD,
        _ => return Err(Error::Config(format!("unknown geometry `{name}`"))),
    };
    Ok(AnalyticRegion::new(name, shape, shape.default_bbox(), level))
}

impl AnalyticRegion {
    pub fn new(name: &str, shape: Shape, bbox: BBox, level: u32) -> Self {
        AnalyticRegion {
            name: name.to_string(),
            shape,
            bbox,
            level,
            tol: 0.5f64.powi(level as i32 + 2),
            d_cloud: OnceLock::new(),
            n_cloud: OnceLock::new(),
            boundary: OnceLock::new(),
        }
    }

    /// Same geometry resolved at another level.
    pub fn at_level(&self, level: u32) -> AnalyticRegion {
        AnalyticRegion::new(&self.name, self.shape, self.bbox, level)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    /// Boundary-classification tolerance `2^-L-2`.
    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Accumulation point where thickness degenerates, if the geometry has one.
    pub fn tip(&self) -> Option<Point> {
        match self.shape {
            Shape::CuspTouchingHalfplane => Some([0.0; 3]),
            Shape::ExpWhitneyCusp { x_min } => Some([x_min, 0.0, 0.0]),
            _ => None,
        }
    }

    /// Membership with an explicit boundary tolerance.
    pub fn label_tol(&self, x: &Point, tol: f64) -> Label {
        match self.shape {
            Shape::HalfPlane => {
                if x[0].abs() <= tol {
                    Label::InN
                } else if x[0] > 0.0 {
                    Label::InsideO
                } else {
                    Label::Outside
                }
            }
            Shape::Disk { radius } => {
                let r = (x[0] * x[0] + x[1] * x[1]).sqrt();
                if (r - radius).abs() <= tol {
                    Label::InN
                } else if r < radius {
                    Label::InsideO
                } else {
                    Label::Outside
                }
            }
            Shape::CuspTouchingHalfplane => {
                if x[0].abs() <= tol {
                    if x[1].abs() <= tol {
                        Label::InD
                    } else {
                        Label::InN
                    }
                } else if x[0] > 0.0 {
                    Label::InsideO
                } else {
                    let r = x[1].abs() - x[0] * x[0];
                    if r.abs() <= tol {
                        Label::InD
                    } else if r < 0.0 {
                        Label::InsideO
                    } else {
                        Label::Outside
                    }
                }
            }
            Shape::IntervalWithEndpointD => {
                if x[0].abs() <= tol {
                    Label::InD
                } else if (x[0] - 1.0).abs() <= tol {
                    Label::InN
                } else if x[0] > 0.0 && x[0] < 1.0 {
                    Label::InsideO
                } else {
                    Label::Outside
                }
            }
            Shape::ExpWhitneyCusp { x_min } => exp_label(x[0], x[1], x_min, tol),
        }
    }

    /// Samples of D (empty when D = ∅).
    pub fn d_cloud(&self) -> &PointCloud {
        self.d_cloud.get_or_init(|| self.sample_d())
    }

    /// Samples of cl(N).
    pub fn n_cloud(&self) -> &PointCloud {
        self.n_cloud.get_or_init(|| self.sample_n())
    }

    /// Samples of the whole boundary ∂O = D ∪ N.
    pub fn boundary_cloud(&self) -> &PointCloud {
        self.boundary.get_or_init(|| self.d_cloud().union(self.n_cloud()))
    }

    /// Whether the closed box `[lo, hi]` meets cl(O), decided on a
    /// `(n+1)^d` sample grid with boundary tolerance `tol`. Borderline boxes
    /// count as hits.
    pub fn closure_hits_box(&self, lo: &Point, hi: &Point, n: usize, tol: f64) -> bool {
        let dim = self.dim();
        let n = n.max(1);
        let counts = [n + 1, if dim > 1 { n + 1 } else { 1 }, if dim > 2 { n + 1 } else { 1 }];
        for k in 0..counts[2] {
            for j in 0..counts[1] {
                for i in 0..counts[0] {
                    let idx = [i, j, k];
                    let mut x = [0.0; 3];
                    for a in 0..dim {
                        x[a] = lo[a] + (hi[a] - lo[a]) * idx[a] as f64 / n as f64;
                    }
                    if self.label_tol(&x, tol).in_closure() {
                        return true;
                    }
                }
            }
        }
        false
    }

    fn cloud_spacing(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    fn sample_d(&self) -> PointCloud {
        let h = self.cloud_spacing();
        let b = &self.bbox;
        let mut pts = Vec::new();
        match self.shape {
            Shape::HalfPlane | Shape::Disk { .. } => {}
            Shape::CuspTouchingHalfplane => {
                let ymax = b.hi[1].min(-b.lo[1]);
                let x_lo = (-ymax.sqrt()).max(b.lo[0]);
                pts.push([0.0; 3]);
                let mut x = 0.0f64;
                loop {
                    x -= h / (1.0 + 4.0 * x * x).sqrt();
                    if x < x_lo {
                        break;
                    }
                    pts.push([x, x * x, 0.0]);
                    pts.push([x, -x * x, 0.0]);
                }
            }
            Shape::IntervalWithEndpointD => pts.push([0.0; 3]),
            Shape::ExpWhitneyCusp { x_min } => {
                let n = ((-x_min) / h).round() as usize;
                let mut prev: Option<f64> = None;
                for j in 0..n {
                    let a = x_min + j as f64 * h;
                    let hj = column_height(a + 0.5 * h, x_min);
                    pts.push([a, hj, 0.0]);
                    pts.push([a + 0.5 * h, hj, 0.0]);
                    let lower = match prev {
                        None => 0.0,
                        Some(hp) => hp.min(hj),
                    };
                    let upper = match prev {
                        None => hj,
                        Some(hp) => hp.max(hj),
                    };
                    let mut y = lower;
                    while y < upper {
                        pts.push([a, y, 0.0]);
                        y += h;
                    }
                    prev = Some(hj);
                }
                let hl = prev.unwrap_or(0.0);
                pts.push([0.0, hl, 0.0]);
                let mut y = 0.0;
                while y < hl {
                    pts.push([0.0, y, 0.0]);
                    y += h;
                }
            }
        }
        pts.retain(|p| b.contains(p));
        PointCloud::new(self.dim(), self.level, pts)
    }

    fn sample_n(&self) -> PointCloud {
        let h = self.cloud_spacing();
        let b = &self.bbox;
        let mut pts = Vec::new();
        match self.shape {
            Shape::HalfPlane => {
                let n = ((b.hi[1] - b.lo[1]) / h).round() as i64;
                for j in 0..=n {
                    pts.push([0.0, b.lo[1] + j as f64 * h, 0.0]);
                }
            }
            Shape::Disk { radius } => {
                let n = ((2.0 * std::f64::consts::PI * radius) / h).ceil() as usize;
                for j in 0..n {
                    let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    pts.push([radius * t.cos(), radius * t.sin(), 0.0]);
                }
            }
            Shape::CuspTouchingHalfplane => {
                let n = (b.hi[1].max(-b.lo[1]) / h).round() as i64;
                for j in 1..=n {
                    pts.push([0.0, j as f64 * h, 0.0]);
                    pts.push([0.0, -(j as f64) * h, 0.0]);
                }
            }
            Shape::IntervalWithEndpointD => pts.push([1.0, 0.0, 0.0]),
            Shape::ExpWhitneyCusp { x_min } => {
                let n = ((-x_min) / h).round() as i64;
                for j in 0..=n {
                    pts.push([x_min + j as f64 * h, 0.0, 0.0]);
                }
            }
        }
        pts.retain(|p| b.contains(p));
        PointCloud::new(self.dim(), self.level, pts)
    }
}

impl Region for AnalyticRegion {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.shape.dim()
    }

    fn bbox(&self) -> &BBox {
        &self.bbox
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn label(&self, x: &Point) -> Label {
        self.label_tol(x, self.tol)
    }

    fn inside(&self, x: &Point) -> bool {
        self.label_tol(x, 0.0).is_inside()
    }
}

/// Whether the layered Whitney cube of level `k` containing abscissa `x` is
/// kept: it must lie over `[x_min, 0]` and its closure must meet `{y ≤ eˣ}`.
fn exp_cube_kept(x: f64, k: i32, x_min: f64) -> bool {
    let side = 0.5f64.powi(k);
    let i = (x / side).floor();
    let left = i * side;
    let right = (i + 1.0) * side;
    left >= x_min && right <= 0.0 && side <= right.exp()
}

/// Height of the column of kept cubes over `x ∈ (x_min, 0)`; zero outside.
///
/// Kept cubes are nested downward: if the level-`k` cube over `x` is kept,
/// so is every finer one below it, so the column is `(0, 2^{1-k₀})` with
/// `k₀` the coarsest kept level.
pub(crate) fn column_height(x: f64, x_min: f64) -> f64 {
    if !(x > x_min && x < 0.0) {
        return 0.0;
    }
    let start = (-(x + 1.0) * std::f64::consts::LOG2_E).floor().max(0.0) as i32;
    for k in start..1074 {
        if exp_cube_kept(x, k, x_min) {
            return 0.5f64.powi(k - 1);
        }
    }
    0.0
}

fn exp_label(x: f64, y: f64, x_min: f64, tol: f64) -> Label {
    if y.abs() <= tol {
        if (x - x_min).abs() <= tol || x.abs() <= tol {
            return Label::InD;
        }
        if x > x_min && x < 0.0 {
            return Label::InN;
        }
        return Label::Outside;
    }
    if y < 0.0 || x < x_min - tol || x > tol {
        return Label::Outside;
    }
    if (x - x_min).abs() <= tol {
        let h = column_height(x_min + tol, x_min);
        return if y <= h + tol { Label::InD } else { Label::Outside };
    }
    if x.abs() <= tol {
        let h = column_height(-tol, x_min);
        return if y <= h + tol { Label::InD } else { Label::Outside };
    }
    let hl = column_height(x - tol, x_min);
    let hr = column_height(x + tol, x_min);
    let (lo, hi) = (hl.min(hr), hl.max(hr));
    if y < lo - tol {
        Label::InsideO
    } else if y > hi + tol {
        Label::Outside
    } else {
        Label::InD
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> Point {
        [x, y, 0.0]
    }

    #[test]
    fn classify_examples() {
        let hp = builtin_geometry("halfplane", 8).unwrap();
        assert_eq!(hp.classify(&p(1.0, 0.0)).unwrap(), Label::InsideO);
        assert_eq!(hp.classify(&p(0.0, 0.3)).unwrap(), Label::InN);
        let cusp = builtin_geometry("cusp_touching_halfplane", 8).unwrap();
        assert_eq!(cusp.classify(&p(-0.5, 0.25)).unwrap(), Label::InD);
        assert_eq!(cusp.classify(&p(-0.5, 0.0)).unwrap(), Label::InsideO);
        assert_eq!(cusp.classify(&p(-0.5, 0.3)).unwrap(), Label::Outside);
        assert_eq!(cusp.classify(&p(0.0, 0.0)).unwrap(), Label::InD);
        assert_eq!(cusp.classify(&p(0.0, -0.7)).unwrap(), Label::InN);
    }

    #[test]
    fn out_of_bbox_is_domain_error() {
        let hp = builtin_geometry("halfplane", 8).unwrap();
        assert!(matches!(hp.classify(&p(5.0, 0.0)), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn unknown_name() {
        assert!(matches!(builtin_geometry("moebius", 4), Err(Error::Config(_))));
    }

    #[test]
    fn exp_column_heights() {
        // level-0 cube [-1,0]x[1,2] is kept, so the column over (-1, 0) reaches 2
        assert_eq!(column_height(-0.5, -8.0), 2.0);
        // over (-1.5, -1) the coarsest kept cubes have side 1/4: height 1/2
        assert_eq!(column_height(-1.2, -8.0), 0.5);
        assert_eq!(column_height(0.5, -8.0), 0.0);
        for i in 1..80 {
            let x = -8.0 + 0.1 * i as f64;
            let h = column_height(x, -8.0);
            assert!(h > x.exp() && h <= 2.0 * (x + 1.0).exp(), "x={x} h={h}");
        }
    }

    #[test]
    fn exp_labels() {
        let g = builtin_geometry("exp_whitney_cusp", 9).unwrap();
        assert_eq!(g.classify(&p(-0.5, 1.5)).unwrap(), Label::InsideO);
        assert_eq!(g.classify(&p(-0.5, 2.5)).unwrap(), Label::Outside);
        assert_eq!(g.classify(&p(-4.0, 0.0)).unwrap(), Label::InN);
        assert_eq!(g.classify(&p(-4.0, -0.1)).unwrap(), Label::Outside);
        assert_eq!(g.classify(&p(0.0, 0.5)).unwrap(), Label::InD);
        assert_eq!(g.classify(&p(-0.5, 2.0)).unwrap(), Label::InD);
        assert_eq!(g.classify(&p(-8.0, 0.0)).unwrap(), Label::InD);
    }

    #[test]
    fn clouds_lie_on_their_sets() {
        for name in BUILTIN_NAMES {
            let g = builtin_geometry(name, 7).unwrap();
            let tol = 0.5f64.powi(7);
            for q in g.d_cloud().points() {
                let l = g.label_tol(q, tol);
                // exp columns near x_min are thinner than the resolution,
                // so their tops fall within tolerance of N
                let sub_resolution = q[1].abs() <= tol && l == Label::InN;
                assert!(l == Label::InD || sub_resolution, "{name} D sample {q:?}: {l:?}");
            }
            for q in g.n_cloud().points() {
                let l = g.label_tol(q, tol);
                // the cusp origin and segment endpoints of N's closure are D-labelled
                assert!(l == Label::InN || l == Label::InD, "{name} N sample {q:?}: {l:?}");
            }
        }
    }

    #[test]
    fn d_points_stay_off_n_below_resolution() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for name in BUILTIN_NAMES {
            let g = builtin_geometry(name, 8).unwrap();
            let h = g.resolution();
            let mut probed = 0;
            for q in g.d_cloud().points() {
                // D and N share their junction points, where any perturbation reaches N
                if g.n_cloud().dist_to(q).unwrap() <= 4.0 * h || g.label(q) != Label::InD {
                    continue;
                }
                for _ in 0..8 {
                    let mut y = *q;
                    for c in y.iter_mut().take(g.dim()) {
                        *c += rng.gen_range(-0.25..0.25) * h;
                    }
                    assert_ne!(g.label(&y), Label::InN, "{name}: {q:?} -> {y:?}");
                    probed += 1;
                }
            }
            assert!(probed > 0 || g.d_cloud().is_empty() || name == "interval_with_endpoint_D", "{name}");
        }
    }

    #[test]
    fn cloud_distances_match_closed_forms() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        type Exact = fn(&Point) -> f64;
        let cases: [(&str, Exact); 3] = [
            ("halfplane", |x| x[0].abs()),
            ("disk", |x| (x[0].hypot(x[1]) - 1.0).abs()),
            ("interval_with_endpoint_D", |x| x[0].abs().min((x[0] - 1.0).abs())),
        ];
        for level in [6u32, 8] {
            for (name, exact) in cases {
                let g = builtin_geometry(name, level).unwrap();
                let fine = g.at_level(level + 1);
                let tol = (g.dim() as f64).sqrt() * g.resolution();
                for _ in 0..500 {
                    let mut x = [0.0; 3];
                    for c in x.iter_mut().take(g.dim()) {
                        *c = rng.gen_range(-3.0..3.0);
                    }
                    let d = g.boundary_cloud().dist_to(&x).unwrap();
                    assert!((d - exact(&x)).abs() <= tol, "{name} L={level} {x:?}: {d} vs {}", exact(&x));
                    let df = fine.boundary_cloud().dist_to(&x).unwrap();
                    assert!((d - df).abs() <= tol, "{name} refinement {x:?}: {d} vs {df}");
                }
            }
        }
    }
}
