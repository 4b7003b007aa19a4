//! MOBIL lane-change rule over IDM accelerations.

use serde::{Deserialize, Serialize};

use crate::track::TrackModel;
use crate::traffic::{idm_demand, IdmParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilParams {
    pub politeness: f64,
    /// Incentive threshold `Δa_th` [m/s²].
    pub threshold: f64,
    /// Largest deceleration the new follower may be forced into [m/s²].
    pub b_safe: f64,
    /// Car-following model the ego is evaluated with.
    pub ego_idm: IdmParams,
}

impl Default for MobilParams {
    fn default() -> Self {
        Self { politeness: 0.2, threshold: 0.1, b_safe: 3.0, ego_idm: IdmParams { v0: 18.0, ..IdmParams::default() } }
    }
}

/// A vehicle on the road as MOBIL sees it; `s` is unwrapped around the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilVehicle {
    pub lane: usize,
    pub s: f64,
    pub v: f64,
    pub idm: IdmParams,
}

/// Ego state for the decision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilEgo {
    pub lane: usize,
    pub s: f64,
    pub v: f64,
}

/// Per-lane evaluation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilEvaluation {
    pub lane: usize,
    pub incentive: f64,
    /// Acceleration imposed on the new follower.
    pub new_follower_accel: f64,
    pub safe: bool,
}

struct Road<'a> {
    track: &'a TrackModel,
    length: f64,
    vehicles: &'a [MobilVehicle],
}

impl Road<'_> {
    fn gap(&self, lane: usize, rear: f64, front: f64) -> f64 {
        self.track.lane_distance(rear, front, self.track.lane_offset(lane)) - self.length
    }

    /// Nearest vehicle strictly ahead of / behind `s` in `lane`.
    fn neighbor(&self, lane: usize, s: f64, ahead: bool, skip: Option<usize>) -> Option<usize> {
        self.vehicles
            .iter()
            .enumerate()
            .filter(|(i, v)| v.lane == lane && Some(*i) != skip && if ahead { v.s >= s } else { v.s < s })
            .min_by(|a, b| (a.1.s - s).abs().total_cmp(&(b.1.s - s).abs()))
            .map(|(i, _)| i)
    }

    /// Unclipped IDM demand, so the safety criterion sees decelerations
    /// beyond the actuator limit.
    fn accel(&self, lane: usize, s: f64, v: f64, p: &IdmParams, leader: Option<(f64, f64)>) -> f64 {
        match leader {
            Some((ls, lv)) => idm_demand(v, v - lv, self.gap(lane, s, ls), p),
            None => idm_demand(v, 0.0, f64::INFINITY, p),
        }
    }
}

/// Evaluates a move of the ego into `lane`.
#[allow(clippy::too_many_arguments)]
pub fn mobil_evaluate(
    ego: &MobilEgo,
    lane: usize,
    vehicles: &[MobilVehicle],
    track: &TrackModel,
    vehicle_length: f64,
    p: &MobilParams,
) -> MobilEvaluation {
    let road = Road { track, length: vehicle_length, vehicles };
    let at = |i: usize| (vehicles[i].s, vehicles[i].v);

    // ego now and after the move
    let old_leader = road.neighbor(ego.lane, ego.s, true, None);
    let a_ego = road.accel(ego.lane, ego.s, ego.v, &p.ego_idm, old_leader.map(at));
    let new_leader = road.neighbor(lane, ego.s, true, None);
    let a_ego_new = road.accel(lane, ego.s, ego.v, &p.ego_idm, new_leader.map(at));

    // new follower: behind ego in the target lane
    let (mut d_new, mut a_new_after, mut safe) = (0.0, 0.0, true);
    if let Some(n) = road.neighbor(lane, ego.s, false, None) {
        let f = &vehicles[n];
        let before = road.accel(lane, f.s, f.v, &f.idm, new_leader.map(at));
        a_new_after = road.accel(lane, f.s, f.v, &f.idm, Some((ego.s, ego.v)));
        safe = a_new_after >= -p.b_safe;
        d_new = a_new_after - before;
    }
    // bodies must not overlap the target lane's neighbours
    if let Some(l) = new_leader {
        safe &= road.gap(lane, ego.s, vehicles[l].s) > 0.0;
    }
    if let Some(n) = road.neighbor(lane, ego.s, false, None) {
        safe &= road.gap(lane, vehicles[n].s, ego.s) > 0.0;
    }

    // old follower: behind ego in the current lane
    let mut d_old = 0.0;
    if let Some(o) = road.neighbor(ego.lane, ego.s, false, None) {
        let f = &vehicles[o];
        let before = road.accel(ego.lane, f.s, f.v, &f.idm, Some((ego.s, ego.v)));
        let after = road.accel(ego.lane, f.s, f.v, &f.idm, old_leader.map(at));
        d_old = after - before;
    }

    let incentive = a_ego_new - a_ego + p.politeness * (d_new + d_old);
    MobilEvaluation { lane, incentive, new_follower_accel: a_new_after, safe }
}

/// Lane the ego should occupy: an adjacent lane passing both the safety and
/// the incentive criterion (largest incentive wins), else the current one.
pub fn mobil_decide(
    ego: &MobilEgo,
    vehicles: &[MobilVehicle],
    track: &TrackModel,
    vehicle_length: f64,
    p: &MobilParams,
) -> usize {
    let mut best: Option<MobilEvaluation> = None;
    let candidates = [ego.lane.checked_sub(1), Some(ego.lane + 1).filter(|l| *l < track.lane_count)];
    for lane in candidates.into_iter().flatten() {
        let e = mobil_evaluate(ego, lane, vehicles, track, vehicle_length, p);
        if e.safe && e.incentive > p.threshold && best.map_or(true, |b| e.incentive > b.incentive) {
            best = Some(e);
        }
    }
    best.map_or(ego.lane, |e| e.lane)
}
