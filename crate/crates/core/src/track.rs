//! Closed reference loop with arc-length parameterization and Frenet
//! transforms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum TrackError {
    #[error("track geometry does not close: end is {gap:.3e} m / {heading_gap:.3e} rad from start")]
    OpenPath { gap: f64, heading_gap: f64 },
    #[error("segment {index} has curvature {kappa} beyond the bound {bound}")]
    CurvatureBound { index: usize, kappa: f64, bound: f64 },
    #[error("invalid segment {index}: {reason}")]
    InvalidSegment { index: usize, reason: String },
    #[error("lane width {lane_width} must exceed vehicle width {vehicle_width}")]
    LaneTooNarrow { lane_width: f64, vehicle_width: f64 },
    #[error("point is {distance:.2} m from the centerline (limit {limit:.2} m)")]
    TooFar { distance: f64, limit: f64 },
}

/// One piece of the centerline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Segment {
    Straight { length: f64 },
    /// Constant-curvature arc; positive `sweep` turns left.
    Arc { radius: f64, sweep: f64 },
}

impl Segment {
    fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, sweep } => radius * sweep.abs(),
        }
    }

    fn curvature(&self) -> f64 {
        match *self {
            Segment::Straight { .. } => 0.0,
            Segment::Arc { radius, sweep } => sweep.signum() / radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    pub segments: Vec<Segment>,
    pub lane_count: usize,
    pub lane_width: f64,
    pub max_sample_spacing: f64,
    pub max_curvature: f64,
}

impl Default for TrackConfig {
    /// Stadium loop: two 150 m straights joined by radius-10 m semicircles,
    /// driven counter-clockwise.
    fn default() -> Self {
        Self {
            segments: vec![
                Segment::Straight { length: 150.0 },
                Segment::Arc { radius: 10.0, sweep: PI },
                Segment::Straight { length: 150.0 },
                Segment::Arc { radius: 10.0, sweep: PI },
            ],
            lane_count: 3,
            lane_width: 4.0,
            max_sample_spacing: 0.5,
            max_curvature: 0.1,
        }
    }
}

/// Path-relative pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrenetPose {
    pub s: f64,
    pub e_y: f64,
    pub e_psi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub s: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    seg: Segment,
    s0: f64,
    x0: f64,
    y0: f64,
    h0: f64,
}

impl Placed {
    /// Pose at local arc length `ds` (may lie outside the segment).
    fn pose(&self, ds: f64) -> (f64, f64, f64) {
        match self.seg {
            Segment::Straight { .. } => (
                self.x0 + ds * self.h0.cos(),
                self.y0 + ds * self.h0.sin(),
                self.h0,
            ),
            Segment::Arc { radius, sweep } => {
                let k = sweep.signum() / radius;
                let h = self.h0 + k * ds;
                // center lies to the turning side
                let (cx, cy) = self.center(radius, sweep);
                let side = sweep.signum();
                (cx + side * radius * h.sin(), cy - side * radius * h.cos(), h)
            }
        }
    }

    fn center(&self, radius: f64, sweep: f64) -> (f64, f64) {
        let side = sweep.signum();
        (
            self.x0 - side * radius * self.h0.sin(),
            self.y0 + side * radius * self.h0.cos(),
        )
    }

    /// Local arc length of the point on this segment nearest to (x, y).
    fn project(&self, x: f64, y: f64) -> f64 {
        let len = self.seg.length();
        let ds = match self.seg {
            Segment::Straight { .. } => (x - self.x0) * self.h0.cos() + (y - self.y0) * self.h0.sin(),
            Segment::Arc { radius, sweep } => {
                let (cx, cy) = self.center(radius, sweep);
                let side = sweep.signum();
                // heading of the tangent at the nearest point
                let phi = (y - cy).atan2(x - cx);
                let h = phi + side * PI / 2.0;
                let dh = wrap_angle(h - self.h0 - side * len / radius / 2.0);
                (dh + side * len / radius / 2.0) * side * radius
            }
        };
        ds.clamp(0.0, len)
    }
}

/// Wraps an angle to (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Immutable closed track.
#[derive(Debug, Clone)]
pub struct TrackModel {
    placed: Vec<Placed>,
    length: f64,
    samples: Vec<Sample>,
    pub lane_count: usize,
    pub lane_width: f64,
}

impl TrackModel {
    pub fn build(cfg: &TrackConfig) -> Result<Self, TrackError> {
        Self::build_with_vehicle_width(cfg, 0.0)
    }

    pub fn build_with_vehicle_width(cfg: &TrackConfig, vehicle_width: f64) -> Result<Self, TrackError> {
        if cfg.lane_width <= vehicle_width {
            return Err(TrackError::LaneTooNarrow { lane_width: cfg.lane_width, vehicle_width });
        }
        if cfg.segments.is_empty() {
            return Err(TrackError::InvalidSegment { index: 0, reason: "no segments".into() });
        }
        let mut placed = Vec::with_capacity(cfg.segments.len());
        let (mut s, mut x, mut y, mut h) = (0.0, 0.0, 0.0, 0.0);
        for (index, seg) in cfg.segments.iter().enumerate() {
            let bad = |reason: &str| TrackError::InvalidSegment { index, reason: reason.into() };
            match *seg {
                Segment::Straight { length } => {
                    if !(length > 0.0 && length.is_finite()) {
                        return Err(bad("length must be positive"));
                    }
                }
                Segment::Arc { radius, sweep } => {
                    if !(radius > 0.0 && radius.is_finite()) || sweep == 0.0 || !sweep.is_finite() {
                        return Err(bad("radius and sweep must be positive and finite"));
                    }
                    if 1.0 / radius > cfg.max_curvature + 1e-12 {
                        return Err(TrackError::CurvatureBound { index, kappa: 1.0 / radius, bound: cfg.max_curvature });
                    }
                }
            }
            let p = Placed { seg: *seg, s0: s, x0: x, y0: y, h0: h };
            let (nx, ny, nh) = p.pose(seg.length());
            placed.push(p);
            s += seg.length();
            x = nx;
            y = ny;
            h = nh;
        }
        let gap = x.hypot(y);
        let heading_gap = wrap_angle(h).abs();
        if gap > 1e-6 || heading_gap > 1e-9 {
            return Err(TrackError::OpenPath { gap, heading_gap });
        }
        let length = s;
        let mut track = Self { placed, length, samples: Vec::new(), lane_count: cfg.lane_count, lane_width: cfg.lane_width };
        let n = (length / cfg.max_sample_spacing).ceil() as usize;
        track.samples = (0..n)
            .map(|i| {
                let s = length * i as f64 / n as f64;
                let (x, y, heading) = track.point_at(s);
                let kappa = track.placed[track.segment_index(s)].seg.curvature();
                Sample { s, x, y, heading, kappa }
            })
            .collect();
        Ok(track)
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn wrap_s(&self, s: f64) -> f64 {
        let r = s.rem_euclid(self.length);
        if r >= self.length {
            0.0
        } else {
            r
        }
    }

    /// Signed shortest along-track difference `a − b` in (−L/2, L/2].
    pub fn ds(&self, a: f64, b: f64) -> f64 {
        let d = (a - b).rem_euclid(self.length);
        if d > self.length / 2.0 {
            d - self.length
        } else {
            d
        }
    }

    fn segment_index(&self, s: f64) -> usize {
        let s = self.wrap_s(s);
        match self.placed.binary_search_by(|p| p.s0.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    /// Centerline point and tangent heading at arc length `s`.
    pub fn point_at(&self, s: f64) -> (f64, f64, f64) {
        let s = self.wrap_s(s);
        let p = &self.placed[self.segment_index(s)];
        let (x, y, h) = p.pose(s - p.s0);
        (x, y, wrap_angle(h))
    }

    /// Linear interpolation of the sampled curvature table.
    pub fn curvature_at(&self, s: f64) -> f64 {
        let n = self.samples.len();
        let step = self.length / n as f64;
        let u = self.wrap_s(s) / step;
        let i = (u.floor() as usize).min(n - 1);
        let t = u - i as f64;
        let k0 = self.samples[i].kappa;
        let k1 = self.samples[(i + 1) % n].kappa;
        k0 + t * (k1 - k0)
    }

    /// Accumulated tangent heading `∫κ ds` from 0 to `s`, unwrapped across
    /// laps.
    pub fn heading_integral(&self, s: f64) -> f64 {
        let laps = (s / self.length).floor();
        let p = &self.placed[self.segment_index(self.wrap_s(s))];
        let total = {
            let last = self.placed.last().expect("track has segments");
            last.h0 + last.seg.curvature() * last.seg.length()
        };
        laps * total + p.h0 + p.seg.curvature() * (self.wrap_s(s) - p.s0)
    }

    /// Signed distance from `from` to `to` measured along the curve offset
    /// laterally by `e_y` (the shorter way around the loop).
    pub fn lane_distance(&self, from: f64, to: f64, e_y: f64) -> f64 {
        let d = self.ds(to, from);
        let from = self.wrap_s(from);
        d - e_y * (self.heading_integral(from + d) - self.heading_integral(from))
    }

    /// Lateral offset of a lane's centerline; lane 0 is the leftmost.
    pub fn lane_offset(&self, lane: usize) -> f64 {
        ((self.lane_count as f64 - 1.0) / 2.0 - lane as f64) * self.lane_width
    }

    /// Lane whose centerline is nearest to `e_y`.
    pub fn lane_of(&self, e_y: f64) -> usize {
        let from_left = ((self.lane_count as f64 - 1.0) / 2.0 - e_y / self.lane_width).round();
        from_left.clamp(0.0, self.lane_count as f64 - 1.0) as usize
    }

    /// Half the total road width.
    pub fn half_width(&self) -> f64 {
        self.lane_count as f64 * self.lane_width / 2.0
    }

    pub fn frenet_to_global(&self, pose: &FrenetPose) -> (f64, f64, f64) {
        let (x, y, h) = self.point_at(pose.s);
        (x - pose.e_y * h.sin(), y + pose.e_y * h.cos(), wrap_angle(h + pose.e_psi))
    }

    /// Nearest-point projection over the whole loop.
    pub fn global_to_frenet(&self, x: f64, y: f64, psi: f64) -> Result<FrenetPose, TrackError> {
        let best = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (p.x - x).powi(2) + (p.y - y).powi(2)))
            .fold((0, f64::INFINITY), |acc, c| if c.1 < acc.1 { c } else { acc });
        self.refine(x, y, psi, self.samples[best.0].s)
    }

    /// Projection seeded from a previous arc length; only the hint's segment
    /// and its neighbors are examined.
    pub fn global_to_frenet_near(&self, x: f64, y: f64, psi: f64, s_hint: f64) -> Result<FrenetPose, TrackError> {
        self.refine(x, y, psi, s_hint)
    }

    fn refine(&self, x: f64, y: f64, psi: f64, s_seed: f64) -> Result<FrenetPose, TrackError> {
        let n = self.placed.len();
        let i0 = self.segment_index(s_seed);
        let mut best: Option<(f64, f64)> = None; // (dist², s)
        let span = if n <= 3 { n } else { 3 };
        for off in 0..span {
            for idx in [(i0 + off) % n, (i0 + n - off) % n] {
                let p = &self.placed[idx];
                let ds = p.project(x, y);
                let (px, py, _) = p.pose(ds);
                let d2 = (px - x).powi(2) + (py - y).powi(2);
                // ties resolve toward smaller s
                let s = self.wrap_s(p.s0 + ds);
                let better = match best {
                    None => true,
                    Some((bd, bs)) => d2 < bd - 1e-12 || ((d2 - bd).abs() <= 1e-12 && s < bs),
                };
                if better {
                    best = Some((d2, s));
                }
            }
        }
        let (d2, s) = best.expect("track has segments");
        let limit = self.lane_count as f64 * self.lane_width;
        if d2.sqrt() >= limit {
            return Err(TrackError::TooFar { distance: d2.sqrt(), limit });
        }
        let (cx, cy, h) = self.point_at(s);
        let e_y = -(x - cx) * h.sin() + (y - cy) * h.cos();
        Ok(FrenetPose { s, e_y, e_psi: wrap_angle(psi - h) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stadium() -> TrackModel {
        TrackModel::build(&TrackConfig::default()).unwrap()
    }

    #[test]
    fn stadium_perimeter_and_curvature_table() {
        let t = stadium();
        assert!((t.length() - (300.0 + 20.0 * PI)).abs() < 1e-9);
        let step = t.samples()[1].s - t.samples()[0].s;
        assert!(step <= 0.5);
        for smp in t.samples() {
            assert!(smp.kappa.abs() <= 0.1 + 1e-12);
            if smp.s > 1.0 && smp.s < 149.0 {
                assert_eq!(smp.kappa, 0.0);
            }
            if smp.s > 151.0 && smp.s < 150.0 + 10.0 * PI - 1.0 {
                assert!((smp.kappa - 0.1).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loop_closes_at_the_seam() {
        let t = stadium();
        let (x0, y0, h0) = t.point_at(0.0);
        let (x1, y1, h1) = t.point_at(t.length());
        assert!((x0 - x1).abs() < 1e-9 && (y0 - y1).abs() < 1e-9);
        assert!(wrap_angle(h0 - h1).abs() < 1e-9);
        let (xa, ya, _) = t.point_at(37.0);
        let (xb, yb, _) = t.point_at(37.0 + t.length());
        assert!((xa - xb).abs() < 1e-9 && (ya - yb).abs() < 1e-9);
    }

    #[test]
    fn rejects_open_and_too_curved_geometry() {
        let open = TrackConfig { segments: vec![Segment::Straight { length: 10.0 }], ..TrackConfig::default() };
        assert!(matches!(TrackModel::build(&open), Err(TrackError::OpenPath { .. })));
        let tight = TrackConfig {
            segments: vec![Segment::Arc { radius: 5.0, sweep: 2.0 * PI }],
            ..TrackConfig::default()
        };
        assert!(matches!(TrackModel::build(&tight), Err(TrackError::CurvatureBound { .. })));
    }

    #[test]
    fn straight_offset_projection() {
        let t = stadium();
        let (x, y, h) = t.point_at(40.0);
        let p = t.global_to_frenet(x - h.sin(), y + h.cos(), h).unwrap();
        assert!((p.s - 40.0).abs() < 1e-9);
        assert!((p.e_y - 1.0).abs() < 1e-9);
        assert!(p.e_psi.abs() < 1e-12);
    }

    #[test]
    fn far_point_is_rejected() {
        let t = stadium();
        assert!(matches!(t.global_to_frenet(75.0, -40.0, 0.0), Err(TrackError::TooFar { .. })));
    }

    #[test]
    fn lanes_are_indexed_left_to_right() {
        let t = stadium();
        assert_eq!(t.lane_offset(0), 4.0);
        assert_eq!(t.lane_offset(1), 0.0);
        assert_eq!(t.lane_offset(2), -4.0);
        assert_eq!(t.lane_of(3.1), 0);
        assert_eq!(t.lane_of(-1.9), 1);
        assert_eq!(t.lane_of(-9.0), 2);
    }

    #[test]
    fn lane_distance_scales_on_arcs() {
        let t = stadium();
        // along the first arc, the inner lane is 0.6 times as long
        let d = t.lane_distance(150.0, 150.0 + 10.0 * PI, 4.0);
        assert!((d - 6.0 * PI).abs() < 1e-9);
        assert!((t.lane_distance(10.0, 40.0, 4.0) - 30.0).abs() < 1e-12);
        let l = t.length();
        // across the seam: 5 m of arc on the outer lane, then 5 m of straight
        assert!((t.lane_distance(l - 5.0, 5.0, -4.0) - 12.0).abs() < 1e-9);
        assert!((t.lane_distance(40.0, 10.0, 4.0) + 30.0).abs() < 1e-12);
    }

    #[test]
    fn ds_wraps_to_half_loop() {
        let t = stadium();
        let l = t.length();
        assert!((t.ds(1.0, l - 1.0) - 2.0).abs() < 1e-9);
        assert!((t.ds(l - 1.0, 1.0) + 2.0).abs() < 1e-9);
    }
}
