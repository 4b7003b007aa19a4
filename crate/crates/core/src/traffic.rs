//! Surrounding traffic: IDM car following, PID lane tracking, seeded
//! spawning and constant-velocity prediction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::track::{FrenetPose, TrackModel};
use crate::vehicle::{kinematic_step, ChassisParams, SurroundingState};

/// Acceleration bounds shared by every vehicle.
pub const ACCEL_LIMIT: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum TrafficError {
    #[error("cannot place {count} vehicles with gap {min_gap} m (placed {placed})")]
    InfeasibleDensity { count: usize, min_gap: f64, placed: usize },
    #[error("invalid traffic configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    pub v0: f64,
    pub time_headway: f64,
    pub s0: f64,
    pub a_max: f64,
    pub b_comf: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v0: 12.0, time_headway: 1.5, s0: 2.0, a_max: 1.5, b_comf: 2.0, delta: 4.0 }
    }
}

/// IDM acceleration before actuator limits. `dv` is the approach rate
/// `v − v_leader`; a free road is `gap = ∞`, an overlapping one `−∞`.
pub fn idm_demand(v: f64, dv: f64, gap: f64, p: &IdmParams) -> f64 {
    if !(gap > 0.0) {
        return f64::NEG_INFINITY;
    }
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = if gap.is_finite() {
        let s_star = p.s0 + (v * p.time_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt())).max(0.0);
        (s_star / gap).powi(2)
    } else {
        0.0
    };
    p.a_max * (free - interaction)
}

/// IDM acceleration clipped to the actuator limits.
pub fn idm_acceleration(v: f64, dv: f64, gap: f64, p: &IdmParams) -> f64 {
    idm_demand(v, dv, gap, p).clamp(-ACCEL_LIMIT, ACCEL_LIMIT)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub k_psi: f64,
    pub integral_limit: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self { kp: 0.12, ki: 0.005, kd: 0.02, k_psi: 0.9, integral_limit: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_e_y: Option<f64>,
}

/// Lane-tracking steering `δ = −(k_p e_y + k_i ∫e_y + k_d ė_y + k_ψ e_ψ)`,
/// clamped to `±delta_max`.
pub fn pid_steering(e_y: f64, e_psi: f64, gains: &PidGains, state: &mut PidState, dt: f64, delta_max: f64) -> f64 {
    state.integral = (state.integral + e_y * dt).clamp(-gains.integral_limit, gains.integral_limit);
    let de = match state.prev_e_y {
        Some(prev) if dt > 0.0 => (e_y - prev) / dt,
        _ => 0.0,
    };
    state.prev_e_y = Some(e_y);
    let u = -(gains.kp * e_y + gains.ki * state.integral + gains.kd * de + gains.k_psi * e_psi);
    u.clamp(-delta_max, delta_max)
}

/// Steering that holds a steady circle of curvature `kappa` under the
/// kinematic model.
pub fn curvature_feedforward(kappa: f64, p: &ChassisParams) -> f64 {
    let sin_beta = (p.l_r * kappa).clamp(-1.0, 1.0);
    ((p.l_f + p.l_r) / p.l_r * sin_beta.asin().tan()).atan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub count: usize,
    /// Minimum bumper-to-bumper gap between same-lane vehicles at spawn.
    pub min_spawn_gap: f64,
    pub v0_min: f64,
    pub v0_max: f64,
    pub idm: IdmParams,
    pub pid: PidGains,
    /// Free space kept around the ego's spawn point, along-track.
    pub ego_clearance: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            count: 27,
            min_spawn_gap: 8.0,
            v0_min: 8.0,
            v0_max: 14.0,
            idm: IdmParams::default(),
            pid: PidGains::default(),
            ego_clearance: 12.0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self, chassis: &ChassisParams) -> Result<(), TrafficError> {
        if self.min_spawn_gap < self.idm.s0 {
            return Err(TrafficError::Invalid("spawn gap must be at least the IDM minimum gap".into()));
        }
        if !(self.v0_min > 0.0 && self.v0_min <= self.v0_max) {
            return Err(TrafficError::Invalid("desired-speed range must be positive and ordered".into()));
        }
        let i = &self.idm;
        if [i.time_headway, i.s0, i.a_max, i.b_comf, i.delta].iter().any(|v| !(*v > 0.0)) {
            return Err(TrafficError::Invalid("IDM parameters must be positive".into()));
        }
        if chassis.length <= 0.0 {
            return Err(TrafficError::Invalid("vehicle length must be positive".into()));
        }
        Ok(())
    }
}

/// A surrounding vehicle and its controllers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficVehicle {
    pub id: usize,
    pub state: SurroundingState,
    pub idm: IdmParams,
    pub pid: PidState,
}

/// Places vehicles by rejection sampling; the ego starts at `s = ego_s` in
/// lane `ego_lane`.
pub fn spawn_scenario(
    cfg: &TrafficConfig,
    track: &TrackModel,
    chassis: &ChassisParams,
    seed: u64,
    ego_s: f64,
    ego_lane: usize,
) -> Result<Vec<TrafficVehicle>, TrafficError> {
    cfg.validate(chassis)?;
    let pitch = cfg.min_spawn_gap + chassis.length;
    let capacity = track.lane_count * (track.length() / pitch).floor() as usize;
    if cfg.count > capacity {
        return Err(TrafficError::InfeasibleDensity { count: cfg.count, min_gap: cfg.min_spawn_gap, placed: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(usize, f64)> = Vec::with_capacity(cfg.count);
    let mut attempts = 0;
    while placed.len() < cfg.count {
        attempts += 1;
        if attempts > 20_000 {
            return Err(TrafficError::InfeasibleDensity { count: cfg.count, min_gap: cfg.min_spawn_gap, placed: placed.len() });
        }
        let lane = rng.gen_range(0..track.lane_count);
        let s = rng.gen_range(0.0..track.length());
        let clearance = if lane == ego_lane { cfg.ego_clearance } else { 0.5 * cfg.ego_clearance };
        if track.ds(s, ego_s).abs() < clearance + chassis.length {
            continue;
        }
        if placed.iter().any(|&(l, o)| l == lane && track.ds(s, o).abs() < pitch) {
            continue;
        }
        placed.push((lane, s));
    }
    // deterministic order: by lane, then by arc length
    placed.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap()));
    let vehicles = placed
        .into_iter()
        .enumerate()
        .map(|(id, (lane, s))| {
            let v0 = rng.gen_range(cfg.v0_min..=cfg.v0_max);
            let frenet = FrenetPose { s, e_y: track.lane_offset(lane), e_psi: 0.0 };
            let (x, y, psi) = track.frenet_to_global(&frenet);
            TrafficVehicle {
                id,
                state: SurroundingState { x, y, psi, v: v0, beta: 0.0, lane, frenet },
                idm: IdmParams { v0, ..cfg.idm },
                pid: PidState::default(),
            }
        })
        .collect();
    Ok(vehicles)
}

/// The ego as seen by traffic: along-track position, lateral offset, speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EgoBody {
    pub s: f64,
    pub e_y: f64,
    pub v: f64,
    pub width: f64,
    pub length: f64,
}

/// Gap to, and speed of, the nearest vehicle ahead in `lane` (ego included
/// when its body overlaps the lane).
pub fn leader_of(
    me: usize,
    vehicles: &[TrafficVehicle],
    ego: Option<&EgoBody>,
    track: &TrackModel,
    chassis: &ChassisParams,
) -> Option<(f64, f64)> {
    let own = &vehicles[me].state;
    let mut best: Option<(f64, f64, f64)> = None;
    for (j, other) in vehicles.iter().enumerate() {
        if j == me || other.state.lane != own.lane {
            continue;
        }
        let d = track.ds(other.state.frenet.s, own.frenet.s);
        if d > 0.0 && best.map_or(true, |(b, _, _)| d < b) {
            best = Some((d, other.state.frenet.s, other.state.v));
        }
    }
    if let Some(e) = ego {
        let overlap = (e.e_y - track.lane_offset(own.lane)).abs() < 0.5 * (track.lane_width + e.width);
        let d = track.ds(e.s, own.frenet.s);
        if overlap && d > 0.0 && best.map_or(true, |(b, _, _)| d < b) {
            best = Some((d, e.s, e.v));
        }
    }
    // bumper gap measured along the lane, not the centerline
    let offset = track.lane_offset(own.lane);
    best.map(|(_, s, v)| (track.lane_distance(own.frenet.s, s, offset) - chassis.length, v))
}

/// Advances every surrounding vehicle by one step. Accelerations are
/// computed from the pre-step snapshot so the update is order-independent.
pub fn step_traffic(
    vehicles: &mut [TrafficVehicle],
    ego: Option<&EgoBody>,
    track: &TrackModel,
    chassis: &ChassisParams,
    gains: &PidGains,
    dt: f64,
) {
    let accels: Vec<f64> = (0..vehicles.len())
        .map(|i| {
            let v = vehicles[i].state.v;
            match leader_of(i, vehicles, ego, track, chassis) {
                Some((gap, v_lead)) => idm_acceleration(v, v - v_lead, gap, &vehicles[i].idm),
                None => idm_acceleration(v, 0.0, f64::INFINITY, &vehicles[i].idm),
            }
        })
        .collect();
    for (veh, a) in vehicles.iter_mut().zip(accels) {
        let st = veh.state;
        let offset = track.lane_offset(st.lane);
        let kappa = track.curvature_at(st.frenet.s);
        let lane_kappa = kappa / (1.0 - kappa * offset);
        let delta = curvature_feedforward(lane_kappa, chassis)
            + pid_steering(st.frenet.e_y - offset, st.frenet.e_psi, gains, &mut veh.pid, dt, chassis.delta_max);
        let delta = delta.clamp(-chassis.delta_max, chassis.delta_max);
        let mut next = kinematic_step(&st, a, delta, chassis, dt);
        next.frenet = track
            .global_to_frenet_near(next.x, next.y, next.psi, st.frenet.s)
            .unwrap_or(st.frenet);
        veh.state = next;
    }
}

/// Constant-velocity along-track prediction: `s[i][k] = s_i + k·dt·v_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub s: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl PredictionTable {
    pub fn horizon(&self) -> usize {
        self.s.first().map_or(0, |r| r.len().saturating_sub(1))
    }
}

/// Predicts `(s, v)` pairs for `horizon_steps` steps (inclusive of k = 0).
pub fn predict_positions(vehicles: &[(f64, f64)], horizon_steps: usize, dt: f64) -> PredictionTable {
    let s = vehicles
        .iter()
        .map(|&(s0, v)| (0..=horizon_steps).map(|k| s0 + k as f64 * dt * v).collect())
        .collect();
    let v = vehicles.iter().map(|&(_, v)| vec![v; horizon_steps + 1]).collect();
    PredictionTable { s, v }
}
