//! Open sets in ℝ^d given by exact predicates, with a labelled boundary
//! partition ∂O = D ∪ N.
//!
//! Points are stored as `[f64; 3]`; coordinates beyond the region's
//! dimension are zero, so Euclidean distances can be taken over all three
//! slots regardless of `d`.

pub(crate) mod builtin;
mod cloud;
mod config;

pub use builtin::{builtin_geometry, AnalyticRegion, Shape, BUILTIN_NAMES};
pub use cloud::PointCloud;
pub use config::GeometryConfig;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Point = [f64; 3];

#[inline]
pub fn dist(a: &Point, b: &Point) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub fn dist2(a: &Point, b: &Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Membership label of a point with respect to a region and its boundary
/// partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    InsideO,
    InD,
    InN,
    Outside,
}

impl Label {
    #[inline]
    pub fn is_inside(self) -> bool {
        self == Label::InsideO
    }

    /// Inside or on the boundary.
    #[inline]
    pub fn in_closure(self) -> bool {
        self != Label::Outside
    }
}

/// Smoothness `s`, integrability `p` and dimension `d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalParams {
    pub s: f64,
    pub p: f64,
    pub d: usize,
}

impl FractionalParams {
    pub fn new(s: f64, p: f64, d: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::InvalidParams(format!("s = {s} not in (0, 1)")));
        }
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::InvalidParams(format!("p = {p} not in (0, ∞)")));
        }
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidParams(format!("d = {d} not in {{1, 2, 3}}")));
        }
        Ok(Self { s, p, d })
    }

    /// Exponent `sp + d` of the Gagliardo kernel.
    #[inline]
    pub fn kernel_exponent(&self) -> f64 {
        self.s * self.p + self.d as f64
    }

    #[inline]
    pub fn sp(&self) -> f64 {
        self.s * self.p
    }
}

/// Axis-aligned box; only the first `dim` axes are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub dim: usize,
    pub lo: Point,
    pub hi: Point,
}

impl BBox {
    pub fn new(dim: usize, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if !(1..=3).contains(&dim) || lo.len() != dim || hi.len() != dim {
            return Err(Error::Config(format!("bbox must have {dim} coordinates")));
        }
        let mut b = BBox { dim, lo: [0.0; 3], hi: [0.0; 3] };
        for a in 0..dim {
            if !(lo[a] < hi[a]) {
                return Err(Error::Config(format!("degenerate bbox axis {a}")));
            }
            b.lo[a] = lo[a];
            b.hi[a] = hi[a];
        }
        Ok(b)
    }

    pub fn contains(&self, x: &Point) -> bool {
        (0..self.dim).all(|a| x[a] >= self.lo[a] && x[a] <= self.hi[a])
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    /// Box shrunk by `m` on every side (may become empty).
    pub fn shrink(&self, m: f64) -> BBox {
        let mut b = *self;
        for a in 0..self.dim {
            b.lo[a] += m;
            b.hi[a] -= m;
        }
        b
    }

    pub fn expand(&self, m: f64) -> BBox {
        self.shrink(-m)
    }

    pub fn intersect(&self, other: &BBox) -> BBox {
        let mut b = *self;
        for a in 0..self.dim {
            b.lo[a] = b.lo[a].max(other.lo[a]);
            b.hi[a] = b.hi[a].min(other.hi[a]);
        }
        b
    }

    pub fn is_empty(&self) -> bool {
        (0..self.dim).any(|a| self.lo[a] >= self.hi[a])
    }

    /// Distance from `x` to the closed box.
    pub fn dist_to(&self, x: &Point) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let d = (self.lo[a] - x[a]).max(0.0).max(x[a] - self.hi[a]);
            s += d * d;
        }
        s.sqrt()
    }

    /// True when every corner coordinate is an integer multiple of `2^-level`.
    pub fn is_dyadic(&self, level: i32) -> bool {
        let scale = 2f64.powi(level);
        (0..self.dim).all(|a| {
            let l = self.lo[a] * scale;
            let h = self.hi[a] * scale;
            l == l.round() && h == h.round()
        })
    }
}

/// An open set with a labelled boundary, queried through its membership
/// predicate.
pub trait Region: Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn bbox(&self) -> &BBox;

    /// Finest dyadic level `L` the region is resolved at.
    fn level(&self) -> u32;

    /// Membership label without the bounding-box check. Valid for any point;
    /// Monte-Carlo samplers use it for balls reaching past the box.
    fn label(&self, x: &Point) -> Label;

    /// Membership in the open set with zero boundary tolerance. Boundaries
    /// are Lebesgue-null, so measure computations (densities, quadrature
    /// masks) use this instead of the tolerance band of [`label`](Self::label).
    fn inside(&self, x: &Point) -> bool {
        self.label(x).is_inside()
    }

    /// Membership label of a point inside the bounding box.
    fn classify(&self, x: &Point) -> Result<Label> {
        if !self.bbox().contains(x) {
            return Err(Error::OutOfBounds { point: x[..self.dim()].to_vec() });
        }
        Ok(self.label(x))
    }

    /// Grid spacing `2^-L`.
    fn resolution(&self) -> f64 {
        0.5f64.powi(self.level() as i32)
    }
}

/// The whole bounding box treated as an open set with empty boundary
/// inside it. Carrier of extension outputs.
#[derive(Debug, Clone)]
pub struct BoxRegion {
    bbox: BBox,
    level: u32,
}

impl BoxRegion {
    pub fn new(bbox: BBox, level: u32) -> Self {
        Self { bbox, level }
    }
}

impl Region for BoxRegion {
    fn name(&self) -> &str {
        "bbox"
    }

    fn dim(&self) -> usize {
        self.bbox.dim
    }

    fn bbox(&self) -> &BBox {
        &self.bbox
    }

    fn level(&self) -> u32 {
        self.level
    }

    fn label(&self, x: &Point) -> Label {
        if self.bbox.contains(x) {
            Label::InsideO
        } else {
            Label::Outside
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(FractionalParams::new(0.5, 2.0, 2).is_ok());
        assert!(FractionalParams::new(1.0, 2.0, 2).is_err());
        assert!(FractionalParams::new(0.5, 0.0, 2).is_err());
        assert!(FractionalParams::new(0.5, 2.0, 4).is_err());
    }

    #[test]
    fn bbox_ops() {
        let b = BBox::new(2, &[-4.0, -4.0], &[4.0, 4.0]).unwrap();
        assert_eq!(b.volume(), 64.0);
        assert!(b.is_dyadic(0));
        assert!(b.contains(&[4.0, -4.0, 0.0]));
        assert!(!b.contains(&[4.1, 0.0, 0.0]));
        assert_eq!(b.dist_to(&[5.0, 0.0, 0.0]), 1.0);
        assert!(b.shrink(4.0).is_empty());
    }
}
