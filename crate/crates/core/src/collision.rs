//! Oriented-rectangle overlap and separation distance.

use serde::{Deserialize, Serialize};

/// A vehicle body: center, heading, full length and width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub length: f64,
    pub width: f64,
}

impl Rect {
    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (c, s) = (self.psi.cos(), self.psi.sin());
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)].map(|(a, b)| (self.x + a * c - b * s, self.y + a * s + b * c))
    }

    fn circumradius(&self) -> f64 {
        0.5 * self.length.hypot(self.width)
    }
}

fn project(corners: &[(f64, f64); 4], axis: (f64, f64)) -> (f64, f64) {
    corners.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
        let d = p.0 * axis.0 + p.1 * axis.1;
        (lo.min(d), hi.max(d))
    })
}

/// Separating-axis overlap test (touching counts as overlap).
pub fn overlaps(a: &Rect, b: &Rect) -> bool {
    let (ca, cb) = (a.corners(), b.corners());
    [a.psi, a.psi + std::f64::consts::FRAC_PI_2, b.psi, b.psi + std::f64::consts::FRAC_PI_2].iter().all(|&t| {
        let axis = (t.cos(), t.sin());
        let (a0, a1) = project(&ca, axis);
        let (b0, b1) = project(&cb, axis);
        a1 >= b0 && b1 >= a0
    })
}

fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Euclidean distance between the two bodies; 0 when they overlap.
pub fn rect_distance(a: &Rect, b: &Rect) -> f64 {
    if overlaps(a, b) {
        return 0.0;
    }
    // disjoint convex polygons: the closest pair involves a vertex of one
    // and an edge of the other
    let (ca, cb) = (a.corners(), b.corners());
    let mut best = f64::INFINITY;
    for (p, q) in [(&ca, &cb), (&cb, &ca)] {
        for &v in p.iter() {
            for i in 0..4 {
                best = best.min(point_segment(v, q[i], q[(i + 1) % 4]));
            }
        }
    }
    best
}

/// Collision flag and the minimum distance `S_o` from `ego` to any of
/// `others` (`∞` when there are none).
pub fn collision_check(ego: &Rect, others: &[Rect]) -> (bool, f64) {
    let mut best = f64::INFINITY;
    for o in others {
        // center distance minus both circumradii bounds the body distance
        let lower = (ego.x - o.x).hypot(ego.y - o.y) - ego.circumradius() - o.circumradius();
        if lower >= best {
            continue;
        }
        best = best.min(rect_distance(ego, o));
    }
    (best <= 0.0, best)
}
