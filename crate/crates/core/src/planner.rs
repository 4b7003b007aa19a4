//! Receding-horizon motion planner: picks a constraint state (lane keeping,
//! probing or changing), assembles the barrier-constrained QP around the
//! previous trajectory and applies the first input.

use ideam_qp::{CscMatrix, QpError, QpProblem, Settings, Solver, Status, WarmStart};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constraints::{
    actuator_rows, boundary_rows, dhocbf_rows, dynamics_rows, ellipse_project, h_lon, lat_dcbf_rows, lon_dcbf_rows,
    tangent_coeffs, ActuatorLimits, ConstraintError, DhocbfParams, EllipseObstacle, ExtraKind, Family, LatCbfParams,
    LatNeighbor, Layout, LonCbfParams, LonObstacle, OmegaMode, Role, RowSet, Side, Tangent, ACCEL, EPSI, EY,
    S, STEER, VX, YAW_RATE,
};
use crate::lsgm::{Bound, NodeId, VehicleGroup, NODE_COUNT};
use crate::track::TrackModel;
use crate::vehicle::{
    discretize_linearize, ChassisParams, ControlInput, EgoState, InputVec, LinearizedModel, StateVec, INPUT_DIM,
    STATE_DIM,
};

const STRIDE: usize = STATE_DIM + INPUT_DIM;

/// Distance at which a missing leader or follower is placed.
pub const VIRTUAL_DISTANCE: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Constraint(#[from] ConstraintError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("linearization failed: {0}")]
    Linearization(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintState {
    LaneKeeping,
    LaneProbing,
    LaneChanging,
}

impl ConstraintState {
    pub fn label(self) -> &'static str {
        match self {
            ConstraintState::LaneKeeping => "LK",
            ConstraintState::LaneProbing => "LP",
            ConstraintState::LaneChanging => "LC",
        }
    }
}

impl std::fmt::Display for ConstraintState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// `[lo, hi]` interpolated linearly over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightRange {
    pub lo: f64,
    pub hi: f64,
}

impl WeightRange {
    pub const fn constant(w: f64) -> Self {
        Self { lo: w, hi: w }
    }
}

/// Tracking weights per state, in state order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingWeights {
    pub v_x: WeightRange,
    pub v_y: WeightRange,
    pub w: WeightRange,
    pub s: WeightRange,
    pub e_y: WeightRange,
    pub e_psi: WeightRange,
}

impl TrackingWeights {
    fn ranges(&self) -> [WeightRange; STATE_DIM] {
        [self.v_x, self.v_y, self.w, self.s, self.e_y, self.e_psi]
    }
}

impl Default for TrackingWeights {
    fn default() -> Self {
        Self {
            v_x: WeightRange { lo: 0.2, hi: 0.35 },
            v_y: WeightRange::constant(4.0),
            w: WeightRange::constant(4.0),
            s: WeightRange::constant(0.0),
            e_y: WeightRange { lo: 6.0, hi: 10.0 },
            e_psi: WeightRange { lo: 7.0, hi: 24.0 },
        }
    }
}

/// Ellipse semi-axes around the current leader and the desired follower.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseAxes {
    pub a_leader: f64,
    pub b_leader: f64,
    pub a_follower: f64,
    pub b_follower: f64,
}

impl Default for EllipseAxes {
    fn default() -> Self {
        Self { a_leader: 1.5, b_leader: 2.2, a_follower: 1.5, b_follower: 2.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { eps_abs: 1e-4, eps_rel: 1e-4, max_iter: 4000, polish: true }
    }
}

impl SolverConfig {
    pub fn settings(&self) -> Settings {
        Settings {
            eps_abs: self.eps_abs,
            eps_rel: self.eps_rel,
            max_iter: self.max_iter,
            polish: self.polish,
            // the Hessian is a sum of weighted squares by construction
            verify_convexity: false,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub dt: f64,
    /// Input weights `[a_x, δ]`.
    pub q: [f64; INPUT_DIM],
    /// Input-rate weights `[ȧ_x, δ̇]`.
    pub p: [f64; INPUT_DIM],
    pub r: TrackingWeights,
    /// Terminal weight on `e_ψ(N)²`.
    pub terminal_e_psi: f64,
    pub v_desired: f64,
    /// Lateral acceleration used to cap the speed reference on curves.
    pub a_lat_max: f64,
    /// Deceleration used to slow down ahead of curves.
    pub a_decel: f64,
    pub slack_weight: f64,
    /// Linear slack penalty; large enough that a satisfiable row is never
    /// softened.
    pub slack_linear_weight: f64,
    pub omega_weight: f64,
    /// Half-width of the soft band around the reference lane.
    pub lambda_b: f64,
    pub lon: LonCbfParams,
    pub lat: LatCbfParams,
    pub dho: DhocbfParams,
    pub ellipse: EllipseAxes,
    pub actuator: ActuatorLimits,
    /// Consecutive steps a new target lane must persist before adoption.
    pub hysteresis_steps: usize,
    /// Along-track half-window in which the desired leader and follower
    /// keep lateral rows during a lane change [m].
    pub merge_overlap: f64,
    /// Enter lane probing when the spatial condition is unmet; otherwise
    /// keep the lane.
    pub probing: bool,
    /// Floor on the speed used as the linearization point.
    pub min_linearization_speed: f64,
    pub solver: SolverConfig,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            dt: 0.1,
            q: [0.1, 8.0],
            p: [0.0, 8.0],
            r: TrackingWeights::default(),
            terminal_e_psi: 60.0,
            v_desired: 18.0,
            a_lat_max: 7.0,
            a_decel: 2.0,
            slack_weight: 1e4,
            slack_linear_weight: 1e3,
            omega_weight: 10.0,
            lambda_b: 0.2,
            lon: LonCbfParams::default(),
            lat: LatCbfParams::default(),
            dho: DhocbfParams::default(),
            ellipse: EllipseAxes::default(),
            actuator: ActuatorLimits::default(),
            hysteresis_steps: 2,
            merge_overlap: 4.5,
            probing: true,
            min_linearization_speed: 1.0,
            solver: SolverConfig::default(),
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: String| Err(PlanError::Config(m));
        if self.horizon < 2 {
            return bad(format!("horizon must be at least 2, got {}", self.horizon));
        }
        if self.dho.n_dho > self.horizon || self.dho.n_dho < 2 {
            return bad(format!("n_dho must lie in [2, {}], got {}", self.horizon, self.dho.n_dho));
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let mut weights = vec![self.terminal_e_psi, self.slack_weight, self.slack_linear_weight, self.omega_weight];
        weights.extend(self.q.iter().chain(&self.p));
        for r in self.r.ranges() {
            if r.lo > r.hi {
                return bad(format!("weight range [{}, {}] is decreasing", r.lo, r.hi));
            }
            weights.extend([r.lo, r.hi]);
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("weights must be finite and non-negative".into());
        }
        if !(self.v_desired > 0.0 && self.a_lat_max > 0.0 && self.a_decel > 0.0) {
            return bad("v_desired, a_lat_max and a_decel must be positive".into());
        }
        let a = &self.actuator;
        if !(a.a_min < 0.0 && a.a_max > 0.0 && a.delta_max > 0.0 && a.jerk_min < 0.0 && a.jerk_max > 0.0) {
            return bad("actuator limits must bracket zero".into());
        }
        Ok(())
    }
}

/// `lo` at `k = 0` rising linearly to `hi` at `k = n − 1`.
pub fn time_increasing_weights(range: WeightRange, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![range.lo; n];
    }
    (0..n).map(|k| range.lo + (range.hi - range.lo) * k as f64 / (n - 1) as f64).collect()
}

/// Flat reference: `v_x = v_d`, everything else zero, for `k = 0..=N`.
pub fn build_reference(cfg: &PlannerConfig) -> Vec<StateVec> {
    let mut x = StateVec::zeros();
    x[VX] = cfg.v_desired;
    vec![x; cfg.horizon + 1]
}

/// Lane keeping when the target is in the ego's lane; otherwise lane changing
/// once `s_e − s_f^d ≥ advantage`, lane probing before. A virtual desired
/// follower (`None`) never blocks the change.
pub fn select_state(current: NodeId, target: NodeId, ego_s: f64, df_s: Option<f64>, advantage: f64) -> ConstraintState {
    if target.lane == current.lane {
        return ConstraintState::LaneKeeping;
    }
    match df_s {
        Some(s_f) if ego_s - s_f < advantage => ConstraintState::LaneProbing,
        _ => ConstraintState::LaneChanging,
    }
}

/// Speed cap along one lane: `min(v_d, √(a_lat/|κ|))`, lowered ahead of
/// curves so that it can be met decelerating at `a_decel`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedProfile {
    step: f64,
    length: f64,
    v: Vec<f64>,
}

impl SpeedProfile {
    pub fn build(track: &TrackModel, e_lane: f64, v_d: f64, a_lat: f64, a_decel: f64) -> Self {
        let length = track.length();
        let n = (length / 0.5).ceil() as usize;
        let step = length / n as f64;
        let mut v: Vec<f64> = (0..n)
            .map(|i| {
                let kappa = track.curvature_at(i as f64 * step);
                let lane_kappa = (kappa / (1.0 - kappa * e_lane)).abs();
                if lane_kappa > 1e-9 {
                    v_d.min((a_lat / lane_kappa).sqrt())
                } else {
                    v_d
                }
            })
            .collect();
        // two backward sweeps settle the wrap-around
        for _ in 0..2 {
            for i in (0..n).rev() {
                let next = v[(i + 1) % n];
                v[i] = v[i].min((next * next + 2.0 * a_decel * step).sqrt());
            }
        }
        Self { step, length, v }
    }

    pub fn at(&self, s: f64) -> f64 {
        let u = s.rem_euclid(self.length) / self.step;
        let i = (u.floor() as usize).min(self.v.len() - 1);
        let t = u - i as f64;
        self.v[i] + t * (self.v[(i + 1) % self.v.len()] - self.v[i])
    }
}

/// A surrounding vehicle as seen by the planner; `s` is unwrapped around the
/// ego's `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: usize,
    pub lane: usize,
    pub s: f64,
    pub e_y: f64,
    pub v: f64,
}

/// States `x_0..=x_N` and inputs `u_0..u_{N−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVec>,
    pub inputs: Vec<InputVec>,
}

impl Trajectory {
    /// Constant-velocity rollout of `x` with zero inputs.
    pub fn constant_velocity(x: &EgoState, n: usize, dt: f64) -> Self {
        let states = (0..=n)
            .map(|k| {
                let mut s = x.to_vec();
                s[S] += x.v_x * k as f64 * dt;
                s
            })
            .collect();
        Self { states, inputs: vec![InputVec::zeros(); n] }
    }

    /// Drops the first step and duplicates the last.
    pub fn shifted(&self) -> Self {
        let n = self.inputs.len();
        let states = (0..=n).map(|k| self.states[(k + 1).min(n)]).collect();
        let inputs = (0..n).map(|k| self.inputs[(k + 1).min(n - 1)]).collect();
        Self { states, inputs }
    }
}

/// Everything the QP needs about the world at one step.
#[derive(Debug, Clone, Copy)]
pub struct Scenario<'a> {
    pub track: &'a TrackModel,
    pub chassis: &'a ChassisParams,
    pub ego: EgoState,
    pub neighbors: &'a [Neighbor],
    pub groups: &'a [VehicleGroup; NODE_COUNT],
    pub current: NodeId,
    pub target: NodeId,
    /// Linearization trajectory with `states[0]` equal to the current state.
    pub guess: &'a Trajectory,
    pub prev_input: ControlInput,
    pub speed_profile: Option<&'a SpeedProfile>,
}

/// Assembled QP plus the tagged rows it came from. `rows` are stated on the
/// full stage-wise vector (dynamics included); `problem` is the condensed QP
/// over inputs and extras, with the dynamics eliminated.
#[derive(Debug, Clone)]
pub struct Assembled {
    pub problem: QpProblem,
    pub rows: RowSet,
    pub condensing: Condensing,
    pub reference: Vec<StateVec>,
}

impl Assembled {
    /// Distinct constraint families in order of first appearance.
    pub fn families(&self) -> Vec<Family> {
        let mut out: Vec<Family> = Vec::new();
        for r in &self.rows.rows {
            let f = match r.tag.family {
                Family::Initial { .. } => Family::Initial { state: 0 },
                Family::Dynamics { .. } => Family::Dynamics { state: 0 },
                f => f,
            };
            if !out.contains(&f) {
                out.push(f);
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
struct Body {
    id: Option<usize>,
    s: f64,
    e_y: f64,
    v: f64,
}

impl Body {
    fn at(&self, k: usize, dt: f64) -> f64 {
        self.s + self.v * k as f64 * dt
    }
}

fn resolve(bound: Bound, sc: &Scenario, lane: usize, ahead: bool) -> Body {
    match bound {
        Bound::Vehicle(i) => {
            let n = &sc.neighbors[i];
            Body { id: Some(n.id), s: n.s, e_y: n.e_y, v: n.v }
        }
        Bound::Virtual => {
            let d = if ahead { VIRTUAL_DISTANCE } else { -VIRTUAL_DISTANCE };
            Body { id: None, s: sc.ego.s + d, e_y: sc.track.lane_offset(lane), v: sc.ego.v_x }
        }
    }
}

/// Ratio of distance along the lane at `e_lane` to centerline distance.
fn lane_scale(track: &TrackModel, from: f64, to: f64, e_lane: f64) -> f64 {
    let d = to - from;
    if d.abs() > 0.5 * track.length() - 1.0 {
        return 1.0;
    }
    if d.abs() < 1e-3 {
        return 1.0 - track.curvature_at(from) * e_lane;
    }
    track.lane_distance(from, to, e_lane) / d
}

fn lon_obstacle(sc: &Scenario, body: &Body, side: Side, e_lane: f64, n: usize, dt: f64) -> LonObstacle {
    let s: Vec<f64> = (0..=n).map(|k| body.at(k, dt)).collect();
    let scale = (0..=n)
        .map(|k| if body.id.is_some() { lane_scale(sc.track, sc.guess.states[k][S], s[k], e_lane) } else { 1.0 })
        .collect();
    LonObstacle { vehicle: body.id, side, s, scale }
}

/// Tangent rows for an ellipse anchored at the facing edge of `body`,
/// pushed out by half the ego length. `ahead` for a leader.
fn ellipse_tangents(sc: &Scenario, body: &Body, ahead: bool, a: f64, b: f64, n_dho: usize, dt: f64) -> Result<(Vec<Tangent>, f64, f64), PlanError> {
    let sign = if ahead { -1.0 } else { 1.0 };
    // facing edge (half the body) plus half the ego length
    let offset = sign * sc.chassis.length;
    let tangents = (0..=n_dho)
        .map(|k| {
            let e = EllipseObstacle { s_o: body.at(k, dt) + offset, e_yo: body.e_y, a, b };
            let (qs, qe) = if k == 0 { (sc.ego.s, sc.ego.e_y) } else { (sc.guess.states[k][S], sc.guess.states[k][EY]) };
            let (ps, pe) = match ellipse_project(qs, qe, &e) {
                Ok(p) => p,
                Err(ConstraintError::CenterQuery) => ellipse_project(qs + sign * 1e-3 * a, qe, &e)?,
                Err(err) => return Err(err.into()),
            };
            Ok(tangent_coeffs(ps, pe, &e))
        })
        .collect::<Result<Vec<_>, PlanError>>()?;
    let psi_t0 = tangents[0].eval(sc.ego.s, sc.ego.e_y);
    let psi_t1 = tangents[1].eval(sc.guess.states[1][S], sc.guess.states[1][EY]);
    Ok((tangents, psi_t0, psi_t1))
}

fn linearize(sc: &Scenario, cfg: &PlannerConfig) -> Result<Vec<LinearizedModel>, PlanError> {
    (0..cfg.horizon)
        .map(|k| {
            let mut x = if k == 0 { sc.ego } else { EgoState::from_vec(&sc.guess.states[k]) };
            x.v_x = x.v_x.max(cfg.min_linearization_speed);
            let u = ControlInput::from_vec(&sc.guess.inputs[k]);
            let kappa = sc.track.curvature_at(x.s);
            discretize_linearize(&x, &u, kappa, sc.chassis, cfg.dt).map_err(|e| PlanError::Linearization(e.to_string()))
        })
        .collect()
}

/// Builds the QP for `state`.
pub fn assemble_qp(state: ConstraintState, sc: &Scenario, cfg: &PlannerConfig) -> Result<Assembled, PlanError> {
    let n = cfg.horizon;
    let dt = cfg.dt;
    if sc.guess.states.len() < n + 1 || sc.guess.inputs.len() < n {
        return Err(PlanError::Config(format!("linearization trajectory shorter than the horizon {n}")));
    }
    let layout = Layout::new(n);
    let mut set = RowSet::new(layout);
    let track = sc.track;

    let models = linearize(sc, cfg)?;
    dynamics_rows(&mut set, &sc.ego.to_vec(), &models)?;

    let cur = sc.groups[sc.current.index()];
    let des = sc.groups[sc.target.index()];
    let e_cur = track.lane_offset(sc.current.lane);
    let e_tgt = track.lane_offset(sc.target.lane);
    let cl = resolve(cur.leader, sc, sc.current.lane, true);
    let cf = resolve(cur.follower, sc, sc.current.lane, false);
    let dl = resolve(des.leader, sc, sc.target.lane, true);
    let df = resolve(des.follower, sc, sc.target.lane, false);

    lon_dcbf_rows(&mut set, Role::CurrentFollower, &lon_obstacle(sc, &cf, Side::Behind, e_cur, n, dt), &cfg.lon)?;
    match state {
        ConstraintState::LaneKeeping => {
            lon_dcbf_rows(&mut set, Role::CurrentLeader, &lon_obstacle(sc, &cl, Side::Ahead, e_cur, n, dt), &cfg.lon)?;
        }
        ConstraintState::LaneProbing | ConstraintState::LaneChanging => {
            let ax = &cfg.ellipse;
            let n_dho = cfg.dho.n_dho;
            let (t, p0, p1) = ellipse_tangents(sc, &cl, true, ax.a_leader, ax.b_leader, n_dho, dt)?;
            dhocbf_rows(&mut set, Role::CurrentLeader, cl.id, &t, p0, p1, &cfg.dho, OmegaMode::Free)?;
            if state == ConstraintState::LaneChanging {
                let dl_obs = lon_obstacle(sc, &dl, Side::Ahead, e_tgt, n, dt);
                lon_dcbf_rows(&mut set, Role::DesiredLeader, &dl_obs, &cfg.lon)?;
                let (t, p0, p1) = ellipse_tangents(sc, &df, false, ax.a_follower, ax.b_follower, n_dho, dt)?;
                dhocbf_rows(&mut set, Role::DesiredFollower, df.id, &t, p0, p1, &cfg.dho, OmegaMode::Free)?;
            }
        }
    }

    // lateral rows for adjacent-lane vehicles; while changing lanes the
    // desired group's own vehicles only get them where they overlap the ego
    // body along the track, since their other rows cover the merge itself
    let desired: Vec<usize> =
        if state == ConstraintState::LaneChanging { [dl.id, df.id].into_iter().flatten().collect() } else { Vec::new() };
    let merge_lat = LatCbfParams { roi_half: cfg.merge_overlap, ..cfg.lat };
    let ego_s: Vec<f64> = (0..=n).map(|k| if k == 0 { sc.ego.s } else { sc.guess.states[k][S] }).collect();
    for nb in sc.neighbors {
        if nb.lane.abs_diff(sc.current.lane) != 1 {
            continue;
        }
        let params = if desired.contains(&nb.id) { &merge_lat } else { &cfg.lat };
        let lat = LatNeighbor {
            vehicle: nb.id,
            left: track.lane_offset(nb.lane) > e_cur,
            s: (0..=n).map(|k| nb.s + nb.v * k as f64 * dt).collect(),
            e_y: vec![nb.e_y; n + 1],
        };
        lat_dcbf_rows(&mut set, &lat, &ego_s, params)?;
    }

    let e_ref = if state == ConstraintState::LaneChanging { e_tgt } else { e_cur };
    let outer = track.half_width() - 0.5 * sc.chassis.width;
    boundary_rows(&mut set, e_ref, cfg.lambda_b, outer, state != ConstraintState::LaneChanging);
    actuator_rows(&mut set, &cfg.actuator, dt);

    let reference = reference_trajectory(sc, cfg, e_ref);
    let condensing = Condensing::new(layout, set.extras.len(), &sc.ego.to_vec(), &models);
    let problem = to_qp(&set, &condensing, sc, cfg, &reference)?;
    Ok(Assembled { problem, rows: set, condensing, reference })
}

/// Per-step reference along the lane at `e_ref`: the curve-capped speed, the
/// yaw rate that follows the lane at that speed, zero `v_y` and `e_ψ`.
fn reference_trajectory(sc: &Scenario, cfg: &PlannerConfig, e_ref: f64) -> Vec<StateVec> {
    let mut reference = build_reference(cfg);
    for (k, x) in reference.iter_mut().enumerate() {
        let s = if k == 0 { sc.ego.s } else { sc.guess.states[k][S] };
        let v = sc.speed_profile.map_or(cfg.v_desired, |p| p.at(s));
        let kappa = sc.track.curvature_at(s);
        x[VX] = v;
        x[YAW_RATE] = v * kappa / (1.0 - kappa * e_ref);
        x[EY] = e_ref;
        x[S] = s;
    }
    reference
}

/// Affine map from the condensed variables `w = [u_0..u_{N−1}, extras]` to
/// the full stage-wise vector: states follow from `x_{k+1} = A_k x_k + B_k u_k
/// + C_k`, inputs and extras are copied.
#[derive(Debug, Clone, PartialEq)]
pub struct Condensing {
    layout: Layout,
    n_free: usize,
    /// `x_k = base[k] + gain[k]·u` (gain is `6 × 2N`, row-major per state).
    base: Vec<StateVec>,
    gain: Vec<Vec<[f64; STATE_DIM]>>,
}

impl Condensing {
    fn new(layout: Layout, extras: usize, x_t: &StateVec, models: &[LinearizedModel]) -> Self {
        let n = layout.horizon;
        let nu = INPUT_DIM * n;
        let mut base = vec![*x_t];
        // gain[k][c] is the column for input variable c
        let mut gain = vec![vec![[0.0; STATE_DIM]; nu]];
        for (k, m) in models.iter().take(n).enumerate() {
            base.push(m.a * base[k] + m.c);
            let prev = &gain[k];
            let mut next = vec![[0.0; STATE_DIM]; nu];
            for c in 0..INPUT_DIM * k {
                let col = StateVec::from_column_slice(&prev[c]);
                let v = m.a * col;
                next[c].copy_from_slice(v.as_slice());
            }
            for j in 0..INPUT_DIM {
                for i in 0..STATE_DIM {
                    next[INPUT_DIM * k + j][i] = m.b[(i, j)];
                }
            }
            gain.push(next);
        }
        Self { layout, n_free: nu + extras, base, gain }
    }

    pub fn num_free(&self) -> usize {
        self.n_free
    }

    /// Condensed index of a full-layout variable that is not a state.
    fn free_index(&self, full: usize) -> Option<usize> {
        let base_len = self.layout.base_len();
        if full >= base_len {
            return Some(INPUT_DIM * self.layout.horizon + full - base_len);
        }
        let (k, i) = (full / STRIDE, full % STRIDE);
        (i >= STATE_DIM).then(|| INPUT_DIM * k + i - STATE_DIM)
    }

    /// Dense condensed coefficients and constant of `Σ c·z`.
    fn condense(&self, coeffs: &[(usize, f64)]) -> (Vec<f64>, f64) {
        let mut row = vec![0.0; self.n_free];
        let mut constant = 0.0;
        for &(idx, c) in coeffs {
            match self.free_index(idx) {
                Some(f) => row[f] += c,
                None => {
                    let (k, i) = (idx / STRIDE, idx % STRIDE);
                    constant += c * self.base[k][i];
                    for (f, g) in self.gain[k].iter().enumerate().take(INPUT_DIM * k) {
                        row[f] += c * g[i];
                    }
                }
            }
        }
        (row, constant)
    }

    /// Full stage-wise vector for condensed `w`.
    pub fn expand(&self, w: &[f64]) -> Vec<f64> {
        let l = self.layout;
        let nu = INPUT_DIM * l.horizon;
        let mut z = vec![0.0; l.base_len() + self.n_free - nu];
        for k in 0..=l.horizon {
            let mut x = self.base[k];
            for (f, g) in self.gain[k].iter().enumerate().take(INPUT_DIM * k) {
                for i in 0..STATE_DIM {
                    x[i] += g[i] * w[f];
                }
            }
            for i in 0..STATE_DIM {
                z[l.x(k, i)] = x[i];
            }
        }
        for k in 0..l.horizon {
            for j in 0..INPUT_DIM {
                z[l.u(k, j)] = w[INPUT_DIM * k + j];
            }
        }
        z[l.base_len()..].copy_from_slice(&w[nu..]);
        z
    }
}

/// Quadratic cost on the full stage-wise vector: `Σ diag·z² + off-diagonal
/// pairs + q·z` (as `½ zᵀHz + qᵀz`).
struct FullCost {
    diag: Vec<f64>,
    off: Vec<(usize, usize, f64)>,
    q: Vec<f64>,
}

fn full_cost(set: &RowSet, sc: &Scenario, cfg: &PlannerConfig, reference: &[StateVec]) -> FullCost {
    let n = cfg.horizon;
    let l = set.layout;
    let nv = set.num_vars();
    let mut c = FullCost { diag: vec![0.0; nv], off: Vec::new(), q: vec![0.0; nv] };
    let sq = |c: &mut FullCost, i: usize, w: f64, r: f64| {
        c.diag[i] += 2.0 * w;
        c.q[i] -= 2.0 * w * r;
    };
    let weights: Vec<Vec<f64>> = cfg.r.ranges().iter().map(|r| time_increasing_weights(*r, n)).collect();
    for k in 1..=n {
        for i in 0..STATE_DIM {
            sq(&mut c, l.x(k, i), weights[i][k - 1], reference[k][i]);
        }
    }
    sq(&mut c, l.x(n, EPSI), cfg.terminal_e_psi, 0.0);
    let prev = sc.prev_input.to_vec();
    for j in 0..INPUT_DIM {
        let rate = cfg.p[j] / (cfg.dt * cfg.dt);
        for k in 0..n {
            sq(&mut c, l.u(k, j), cfg.q[j], 0.0);
        }
        // (u_0 − u_prev)² and (u_k − u_{k−1})²
        sq(&mut c, l.u(0, j), rate, prev[j]);
        for k in 1..n {
            let (a, b) = (l.u(k, j), l.u(k - 1, j));
            c.diag[a] += 2.0 * rate;
            c.diag[b] += 2.0 * rate;
            if rate != 0.0 {
                c.off.push((a, b, -2.0 * rate));
            }
        }
    }
    for (e, var) in set.extras.iter().enumerate() {
        let idx = l.base_len() + e;
        match var.kind {
            ExtraKind::Slack => {
                sq(&mut c, idx, cfg.slack_weight, 0.0);
                c.q[idx] += cfg.slack_linear_weight;
            }
            ExtraKind::Omega => sq(&mut c, idx, cfg.omega_weight, 1.0),
        }
    }
    c
}

fn to_qp(set: &RowSet, cond: &Condensing, sc: &Scenario, cfg: &PlannerConfig, reference: &[StateVec]) -> Result<QpProblem, PlanError> {
    let l = set.layout;
    let nf = cond.num_free();
    let nu = INPUT_DIM * l.horizon;
    let cost = full_cost(set, sc, cfg, reference);

    // ½ (b + T w)ᵀ H (b + T w) + qᵀ(b + T w): H_c = TᵀHT, q_c = Tᵀ(H b + q)
    let mut h = vec![vec![0.0; nf]; nf];
    let mut qc = vec![0.0; nf];
    for k in 1..=l.horizon {
        let g = &cond.gain[k];
        let active = INPUT_DIM * k;
        for i in 0..STATE_DIM {
            let idx = l.x(k, i);
            let (d, q) = (cost.diag[idx], cost.q[idx]);
            if d == 0.0 && q == 0.0 {
                continue;
            }
            let grad = d * cond.base[k][i] + q;
            for a in 0..active {
                let ga = g[a][i];
                if ga == 0.0 {
                    continue;
                }
                qc[a] += ga * grad;
                for b in 0..active {
                    h[a][b] += ga * d * g[b][i];
                }
            }
        }
    }
    for idx in 0..cost.diag.len() {
        if let Some(f) = cond.free_index(idx) {
            h[f][f] += cost.diag[idx];
            qc[f] += cost.q[idx];
        }
    }
    for &(a, b, v) in &cost.off {
        let (fa, fb) = (cond.free_index(a).expect("input"), cond.free_index(b).expect("input"));
        h[fa][fb] += v;
        h[fb][fa] += v;
    }
    // symmetrize exactly against rounding in the accumulation
    let mut trips = Vec::new();
    for a in 0..nf {
        for b in 0..=a {
            let v = 0.5 * (h[a][b] + h[b][a]);
            if v != 0.0 {
                trips.push((a, b, v));
                if a != b {
                    trips.push((b, a, v));
                }
            }
        }
    }
    let hessian = CscMatrix::from_triplets(nf, nf, &trips)?;

    let (mut ineq, mut lo, mut hi) = (Vec::new(), Vec::new(), Vec::new());
    for row in &set.rows {
        if matches!(row.tag.family, Family::Initial { .. } | Family::Dynamics { .. }) {
            continue;
        }
        let (coeffs, constant) = cond.condense(&row.coeffs);
        // rows fixed by the current state alone cannot be influenced
        if coeffs.iter().all(|c| *c == 0.0) {
            continue;
        }
        let r = lo.len();
        ineq.extend(coeffs.iter().enumerate().filter(|(_, c)| **c != 0.0).map(|(f, c)| (r, f, *c)));
        lo.push(row.lo - constant);
        hi.push(row.hi - constant);
    }
    let mut lb = vec![f64::NEG_INFINITY; nf];
    for (e, var) in set.extras.iter().enumerate() {
        lb[nu + e] = match var.kind {
            ExtraKind::Slack => 0.0,
            ExtraKind::Omega => cfg.dho.omega_min,
        };
    }
    let mut warm = vec![0.0; nf];
    for k in 0..l.horizon {
        for j in 0..INPUT_DIM {
            warm[INPUT_DIM * k + j] = sc.guess.inputs[k][j];
        }
    }
    for (e, var) in set.extras.iter().enumerate() {
        if var.kind == ExtraKind::Omega {
            warm[nu + e] = 1.0;
        }
    }
    Ok(QpProblem {
        hessian,
        q: qc,
        a_eq: CscMatrix::zeros(0, nf),
        b_eq: Vec::new(),
        a_ineq: CscMatrix::from_triplets(lo.len(), nf, &ineq)?,
        l_ineq: lo,
        u_ineq: hi,
        lb,
        ub: vec![f64::INFINITY; nf],
        warm_start: Some(WarmStart { x: warm, y: None }),
    })
}

/// Hysteresis on the decision layer's target: a new target lane is adopted
/// after it has been proposed for `persist` consecutive steps. A new level in
/// the same lane is a relabeling (the ego passed a vehicle) and is taken at
/// once.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetFilter {
    pub persist: usize,
    active: Option<NodeId>,
    pending: Option<(NodeId, usize)>,
}

impl TargetFilter {
    pub fn new(persist: usize) -> Self {
        Self { persist, active: None, pending: None }
    }

    pub fn active(&self) -> Option<NodeId> {
        self.active
    }

    pub fn update(&mut self, proposed: NodeId) -> NodeId {
        let active = match self.active {
            None => proposed,
            Some(a) if a.lane == proposed.lane => proposed,
            Some(a) => {
                let count = match self.pending {
                    Some((p, c)) if p.lane == proposed.lane => c + 1,
                    _ => 1,
                };
                if count >= self.persist {
                    proposed
                } else {
                    self.pending = Some((proposed, count));
                    self.active = Some(a);
                    return a;
                }
            }
        };
        self.pending = None;
        self.active = Some(active);
        active
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanStatus {
    Solved,
    /// Braking fallback after a solver failure.
    Fallback(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlackReport {
    pub family: Family,
    pub vehicle: Option<usize>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub input: ControlInput,
    pub trajectory: Trajectory,
    pub status: PlanStatus,
    pub solver_status: Option<Status>,
    pub state: ConstraintState,
    pub target: NodeId,
    pub families: Vec<Family>,
    pub slacks: Vec<SlackReport>,
    /// Largest DCBF slack (0 when there is none).
    pub max_dcbf_slack: f64,
    /// Largest violation of any DCBF row at the solution, slack included.
    pub dcbf_violation: f64,
    /// The solver's primal stopping tolerance, which bounds every row's
    /// violation at the returned point.
    pub dcbf_tolerance: f64,
    /// Largest residual of the dynamics equality rows at the solution.
    pub dynamics_residual: f64,
    pub iterations: usize,
    /// Wall-clock time, excluded from every deterministic output.
    pub solve_time_ms: f64,
}

impl PlanResult {
    pub fn is_fallback(&self) -> bool {
        matches!(self.status, PlanStatus::Fallback(_))
    }
}

/// One planner per simulated ego.
pub struct Planner {
    pub cfg: PlannerConfig,
    chassis: ChassisParams,
    track: TrackModel,
    profiles: Vec<SpeedProfile>,
    solver: Solver,
    memory: Option<Trajectory>,
    filter: TargetFilter,
    last_input: ControlInput,
    last_state: ConstraintState,
}

impl Planner {
    pub fn new(cfg: PlannerConfig, chassis: ChassisParams, track: TrackModel) -> Result<Self, PlanError> {
        cfg.validate()?;
        let profiles = (0..track.lane_count)
            .map(|lane| SpeedProfile::build(&track, track.lane_offset(lane), cfg.v_desired, cfg.a_lat_max, cfg.a_decel))
            .collect();
        Ok(Self {
            solver: Solver::new(cfg.solver.settings()),
            filter: TargetFilter::new(cfg.hysteresis_steps),
            chassis,
            track,
            profiles,
            memory: None,
            last_input: ControlInput::default(),
            last_state: ConstraintState::LaneKeeping,
            cfg,
        })
    }

    pub fn track(&self) -> &TrackModel {
        &self.track
    }

    pub fn last_input(&self) -> ControlInput {
        self.last_input
    }

    /// Plans one step. `groups` come from the decision layer and index into
    /// `neighbors`; `proposed` is its target before hysteresis.
    pub fn plan_step(
        &mut self,
        ego: &EgoState,
        neighbors: &[Neighbor],
        groups: &[VehicleGroup; NODE_COUNT],
        current: NodeId,
        proposed: NodeId,
    ) -> PlanResult {
        let n = self.cfg.horizon;
        let target = self.filter.update(proposed);
        let target = if target.lane.abs_diff(current.lane) > 1 { current } else { target };
        let df = groups[target.index()].follower;
        let df_s = match df {
            Bound::Vehicle(i) => Some(neighbors[i].s),
            Bound::Virtual => None,
        };
        let mut state = select_state(current, target, ego.s, df_s, 0.5 * self.chassis.length);
        if state == ConstraintState::LaneChanging {
            // merging also needs room behind the desired leader
            if let Bound::Vehicle(i) = groups[target.index()].leader {
                if h_lon(ego.s, ego.v_x, neighbors[i].s, Side::Ahead, &self.cfg.lon) < 0.0 {
                    state = ConstraintState::LaneProbing;
                }
            }
        }
        if state == ConstraintState::LaneProbing && !self.cfg.probing {
            state = ConstraintState::LaneKeeping;
        }
        let target = if state == ConstraintState::LaneKeeping { current } else { target };

        let mut guess = match &self.memory {
            Some(m) => m.shifted(),
            None => Trajectory::constant_velocity(ego, n, self.cfg.dt),
        };
        guess.states[0] = ego.to_vec();
        let lane = if state == ConstraintState::LaneChanging { target.lane } else { current.lane };
        let sc = Scenario {
            track: &self.track,
            chassis: &self.chassis,
            ego: *ego,
            neighbors,
            groups,
            current,
            target,
            guess: &guess,
            prev_input: self.last_input,
            speed_profile: self.profiles.get(lane),
        };
        let outcome = assemble_qp(state, &sc, &self.cfg).and_then(|asm| {
            let sol = self.solver.solve(&asm.problem)?;
            Ok((asm, sol))
        });
        match outcome {
            Ok((asm, sol)) if sol.status == Status::Optimal => {
                let l = asm.rows.layout;
                let z = &asm.condensing.expand(&sol.x);
                let states: Vec<StateVec> =
                    (0..=n).map(|k| StateVec::from_fn(|i, _| z[l.x(k, i)])).collect();
                let inputs: Vec<InputVec> = (0..n).map(|k| InputVec::from_fn(|j, _| z[l.u(k, j)])).collect();
                let lim = &self.cfg.actuator;
                let input = ControlInput {
                    a_x: inputs[0][ACCEL].clamp(lim.a_min, lim.a_max),
                    delta: inputs[0][STEER].clamp(-lim.delta_max, lim.delta_max),
                };
                let slacks: Vec<SlackReport> = asm
                    .rows
                    .extras
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| e.kind == ExtraKind::Slack)
                    .map(|(i, e)| SlackReport { family: e.family, vehicle: e.vehicle, value: z[l.base_len() + i].max(0.0) })
                    .collect();
                let max_dcbf_slack =
                    slacks.iter().filter(|s| s.family.is_dcbf()).map(|s| s.value).fold(0.0, f64::max);
                let mut dcbf_violation: f64 = 0.0;
                let mut dynamics_residual: f64 = 0.0;
                for row in &asm.rows.rows {
                    match row.tag.family {
                        f if f.is_dcbf() => dcbf_violation = dcbf_violation.max(row.violation(z)),
                        Family::Initial { .. } | Family::Dynamics { .. } => {
                            dynamics_residual = dynamics_residual.max(row.violation(z))
                        }
                        _ => {}
                    }
                }
                let families = asm.families();
                self.memory = Some(Trajectory { states: states.clone(), inputs: inputs.clone() });
                self.last_input = input;
                self.last_state = state;
                PlanResult {
                    input,
                    trajectory: Trajectory { states, inputs },
                    status: PlanStatus::Solved,
                    solver_status: Some(sol.status),
                    state,
                    target,
                    families,
                    slacks,
                    max_dcbf_slack,
                    dcbf_violation,
                    dcbf_tolerance: sol.prim_tol,
                    dynamics_residual,
                    iterations: sol.iterations,
                    solve_time_ms: sol.solve_time_ms,
                }
            }
            other => {
                let (reason, solver_status, iterations, solve_time_ms) = match other {
                    Ok((_, sol)) => (format!("solver status {}", sol.status), Some(sol.status), sol.iterations, sol.solve_time_ms),
                    Err(e) => (e.to_string(), None, 0, 0.0),
                };
                self.fallback(ego, reason, solver_status, iterations, solve_time_ms, guess)
            }
        }
    }

    fn fallback(
        &mut self,
        ego: &EgoState,
        reason: String,
        solver_status: Option<Status>,
        iterations: usize,
        solve_time_ms: f64,
        guess: Trajectory,
    ) -> PlanResult {
        let input = ControlInput { a_x: self.cfg.actuator.a_min, delta: 0.5 * self.last_input.delta };
        let mut trajectory = guess;
        trajectory.states[0] = ego.to_vec();
        self.memory = Some(trajectory.clone());
        self.last_input = input;
        PlanResult {
            input,
            trajectory,
            status: PlanStatus::Fallback(reason),
            solver_status,
            state: self.last_state,
            target: self.filter.active().unwrap_or(NodeId::new(self.track.lane_of(ego.e_y), 1)),
            families: Vec::new(),
            slacks: Vec::new(),
            max_dcbf_slack: 0.0,
            dcbf_violation: 0.0,
            dcbf_tolerance: 0.0,
            dynamics_residual: 0.0,
            iterations,
            solve_time_ms,
        }
    }
}
