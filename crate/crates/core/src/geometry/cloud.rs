//! Point-cloud stand-ins for closed sets, with a static kd-tree for
//! nearest-distance queries against points and boxes.

use std::hash::{Hash, Hasher};

use super::{dist2, Point};
use crate::error::{Error, Result};

const LEAF_SIZE: usize = 16;

#[derive(Debug, Clone)]
struct Node {
    lo: Point,
    hi: Point,
    start: usize,
    end: usize,
    // child indices; `usize::MAX` for leaves
    left: usize,
    right: usize,
}

/// Samples of a closed set at resolution `2^-level`. The generator of each
/// cloud guarantees a Hausdorff distance of at most `√d·2^-level` to the set
/// it stands for.
#[derive(Debug, Clone)]
pub struct PointCloud {
    dim: usize,
    level: u32,
    points: Vec<Point>,
    nodes: Vec<Node>,
    fingerprint: u64,
}

impl PointCloud {
    pub fn new(dim: usize, level: u32, mut points: Vec<Point>) -> Self {
        for p in points.iter_mut() {
            for c in p.iter_mut().skip(dim) {
                *c = 0.0;
            }
        }
        let fingerprint = {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            dim.hash(&mut h);
            level.hash(&mut h);
            points.len().hash(&mut h);
            for p in &points {
                for c in p {
                    c.to_bits().hash(&mut h);
                }
            }
            h.finish()
        };
        let mut cloud = PointCloud { dim, level, points, nodes: Vec::new(), fingerprint };
        if !cloud.points.is_empty() {
            let n = cloud.points.len();
            cloud.build(0, n);
        }
        cloud
    }

    pub fn empty(dim: usize, level: u32) -> Self {
        Self::new(dim, level, Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points in kd-tree order.
    pub fn points(&self) -> &[Point] {
        &self.points
    }

    /// Identity of the sampled set: equal clouds have equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Documented Hausdorff bound `√d·2^-L` between cloud and true set.
    pub fn hausdorff_bound(&self) -> f64 {
        (self.dim as f64).sqrt() * 0.5f64.powi(self.level as i32)
    }

    /// Union of two clouds at the finer of the two levels.
    pub fn union(&self, other: &PointCloud) -> PointCloud {
        let mut pts = self.points.clone();
        pts.extend_from_slice(&other.points);
        PointCloud::new(self.dim.max(other.dim), self.level.max(other.level), pts)
    }

    /// Sub-cloud of points satisfying `keep`.
    pub fn filter(&self, keep: impl Fn(&Point) -> bool) -> PointCloud {
        let pts = self.points.iter().filter(|p| keep(p)).copied().collect();
        PointCloud::new(self.dim, self.level, pts)
    }

    fn build(&mut self, start: usize, end: usize) -> usize {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &self.points[start..end] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(Node { lo, hi, start, end, left: usize::MAX, right: usize::MAX });
        if end - start > LEAF_SIZE {
            let axis = (0..3)
                .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
                .unwrap();
            let mid = start + (end - start) / 2;
            self.points[start..end]
                .select_nth_unstable_by(mid - start, |p, q| p[axis].total_cmp(&q[axis]));
            let l = self.build(start, mid);
            let r = self.build(mid, end);
            self.nodes[id].left = l;
            self.nodes[id].right = r;
        }
        id
    }

    /// Euclidean distance from `x` to the nearest cloud point.
    pub fn dist_to(&self, x: &Point) -> Result<f64> {
        if self.points.is_empty() {
            return Err(Error::EmptySet);
        }
        Ok(self.nearest(x).1)
    }

    /// Distance to the cloud, `+∞` for an empty cloud.
    pub fn dist_or_inf(&self, x: &Point) -> f64 {
        if self.points.is_empty() {
            f64::INFINITY
        } else {
            self.nearest(x).1
        }
    }

    /// Index (in [`points`](Self::points) order) and distance of the nearest
    /// point. Panics on an empty cloud.
    pub fn nearest(&self, x: &Point) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        self.nearest_rec(0, x, &mut best);
        (best.0, best.1.sqrt())
    }

    fn nearest_rec(&self, id: usize, x: &Point, best: &mut (usize, f64)) {
        let n = &self.nodes[id];
        if box_point_dist2(&n.lo, &n.hi, x) >= best.1 {
            return;
        }
        if n.left == usize::MAX {
            for (i, p) in self.points[n.start..n.end].iter().enumerate() {
                let d = dist2(p, x);
                if d < best.1 {
                    *best = (n.start + i, d);
                }
            }
            return;
        }
        let (a, b) = (n.left, n.right);
        let da = box_point_dist2(&self.nodes[a].lo, &self.nodes[a].hi, x);
        let db = box_point_dist2(&self.nodes[b].lo, &self.nodes[b].hi, x);
        if da <= db {
            self.nearest_rec(a, x, best);
            self.nearest_rec(b, x, best);
        } else {
            self.nearest_rec(b, x, best);
            self.nearest_rec(a, x, best);
        }
    }

    /// Distance from the closed box `[lo, hi]` to the nearest cloud point.
    pub fn dist_to_box(&self, lo: &Point, hi: &Point) -> Result<f64> {
        if self.points.is_empty() {
            return Err(Error::EmptySet);
        }
        let mut best = f64::INFINITY;
        self.box_rec(0, lo, hi, &mut best);
        Ok(best.sqrt())
    }

    fn box_rec(&self, id: usize, lo: &Point, hi: &Point, best: &mut f64) {
        let n = &self.nodes[id];
        if box_box_dist2(&n.lo, &n.hi, lo, hi) >= *best {
            return;
        }
        if n.left == usize::MAX {
            for p in &self.points[n.start..n.end] {
                let d = box_point_dist2(lo, hi, p);
                if d < *best {
                    *best = d;
                }
            }
            return;
        }
        let (a, b) = (n.left, n.right);
        let da = box_box_dist2(&self.nodes[a].lo, &self.nodes[a].hi, lo, hi);
        let db = box_box_dist2(&self.nodes[b].lo, &self.nodes[b].hi, lo, hi);
        if da <= db {
            self.box_rec(a, lo, hi, best);
            self.box_rec(b, lo, hi, best);
        } else {
            self.box_rec(b, lo, hi, best);
            self.box_rec(a, lo, hi, best);
        }
    }
}

#[inline]
fn box_point_dist2(lo: &Point, hi: &Point, x: &Point) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = (lo[a] - x[a]).max(0.0).max(x[a] - hi[a]);
        s += d * d;
    }
    s
}

#[inline]
fn box_box_dist2(alo: &Point, ahi: &Point, blo: &Point, bhi: &Point) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        let d = (alo[a] - bhi[a]).max(0.0).max(blo[a] - ahi[a]);
        s += d * d;
    }
    s
}
