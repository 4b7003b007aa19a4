//! Closed-loop simulation: traffic, decision layer, planner and ego plant
//! stepped together on a uniform grid.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::collision::{collision_check, Rect};
use crate::lsgm::{build_groups, lsgm_decide, GroupGraph, LsgmParams, NodeId, SceneVehicle};
use crate::metrics::{compute_metrics, summarize, MetricsSummary, TrackMetrics};
use crate::mobil::{mobil_decide, MobilEgo, MobilParams, MobilVehicle};
use crate::planner::{ConstraintState, Neighbor, Planner, PlannerConfig};
use crate::track::{FrenetPose, TrackConfig, TrackModel};
use crate::traffic::{predict_positions, spawn_scenario, step_traffic, EgoBody, TrafficConfig};
use crate::vehicle::{euler_step, ChassisParams, ControlInput, EgoState, SurroundingState};

/// CSV schema tag written as the first line of every log.
pub const CSV_SCHEMA: &str = "# ideam-track-log v1";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed log: {0}")]
    Log(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Policy {
    #[serde(rename = "IDEAM")]
    Ideam,
    #[serde(rename = "No-Probing IDEAM")]
    NoProbingIdeam,
    #[serde(rename = "MOBIL")]
    Mobil,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Ideam, Policy::NoProbingIdeam, Policy::Mobil];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ideam => "IDEAM",
            Policy::NoProbingIdeam => "No-Probing IDEAM",
            Policy::Mobil => "MOBIL",
        }
    }

    /// Short identifier used on the command line and in file names.
    pub fn slug(self) -> &'static str {
        match self {
            Policy::Ideam => "ideam",
            Policy::NoProbingIdeam => "no-probing",
            Policy::Mobil => "mobil",
        }
    }

    /// Whether the planner may enter lane probing.
    pub fn probes(self) -> bool {
        self == Policy::Ideam
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace([' ', '_'], "-").as_str() {
            "ideam" => Ok(Policy::Ideam),
            "no-probing" | "noprobing" | "no-probing-ideam" | "noprobingideam" => Ok(Policy::NoProbingIdeam),
            "mobil" => Ok(Policy::Mobil),
            other => Err(SimError::Config(format!("unknown policy '{other}'"))),
        }
    }
}

/// Run timing and ego initial conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    pub dt: f64,
    pub duration: f64,
    /// Euler substeps of the ego plant per control step.
    pub plant_substeps: usize,
    pub base_seed: u64,
    pub ego_s: f64,
    pub ego_lane: usize,
    pub ego_speed: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self { dt: 0.1, duration: 40.0, plant_substeps: 10, base_seed: 0, ego_s: 0.0, ego_lane: 1, ego_speed: 12.0 }
    }
}

impl SimParams {
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }
}

/// Every parameter of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct SimConfig {
    pub sim: SimParams,
    pub track: TrackConfig,
    pub chassis: ChassisParams,
    pub traffic: TrafficConfig,
    pub lsgm: LsgmParams,
    pub planner: PlannerConfig,
    pub mobil: MobilParams,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let err = |e: String| SimError::Config(e);
        let s = &self.sim;
        if !(s.dt > 0.0) || !(s.duration >= 0.0) || s.plant_substeps == 0 {
            return Err(err("dt and substeps must be positive, duration non-negative".into()));
        }
        if (s.dt - self.planner.dt).abs() > 1e-12 {
            return Err(err("simulation and planner steps must agree".into()));
        }
        if !(s.ego_speed >= 0.0) || s.ego_lane >= self.track.lane_count {
            return Err(err("ego must start in a lane with non-negative speed".into()));
        }
        let m = &self.mobil;
        if !(m.politeness >= 0.0 && m.b_safe > 0.0 && m.threshold >= 0.0) {
            return Err(err("MOBIL parameters must be non-negative".into()));
        }
        self.chassis.validate().map_err(err)?;
        self.traffic.validate(&self.chassis).map_err(|e| err(e.to_string()))?;
        self.lsgm.validate().map_err(|e| err(e.to_string()))?;
        self.planner.validate().map_err(|e| err(e.to_string()))?;
        TrackModel::build_with_vehicle_width(&self.track, self.chassis.width).map_err(|e| err(e.to_string()))?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let cfg: SimConfig = serde_json::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// A surrounding vehicle's logged state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub x: f64,
    pub y: f64,
    pub psi: f64,
    pub v: f64,
    pub s: f64,
    pub e_y: f64,
    pub lane: usize,
}

impl From<&SurroundingState> for VehicleRecord {
    fn from(st: &SurroundingState) -> Self {
        Self { x: st.x, y: st.y, psi: st.psi, v: st.v, s: st.frenet.s, e_y: st.frenet.e_y, lane: st.lane }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Ego state with `s` unwrapped across the loop seam.
    pub ego: EgoState,
    /// Input commanded at this step.
    pub input: ControlInput,
    pub state: ConstraintState,
    /// Decision-layer proposal (LSGM target or MOBIL lane at level 1).
    pub proposed: NodeId,
    /// Target the planner acted on after hysteresis.
    pub target: NodeId,
    pub lane: usize,
    pub s_o: f64,
    pub collision: bool,
    pub fallback: bool,
    pub iterations: usize,
    pub max_slack: f64,
    pub dcbf_violation: f64,
    pub dcbf_tolerance: f64,
    pub vehicles: Vec<VehicleRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Completed,
    Collision,
    PlantFailure,
}

/// Wall-clock measurements; never part of the deterministic outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub qp_ms: Vec<f64>,
    pub decision_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackLog {
    pub seed: u64,
    pub policy: Policy,
    pub dt: f64,
    pub duration: f64,
    pub records: Vec<StepRecord>,
    pub termination: Termination,
    pub timing: Timing,
}

fn rect_of(x: f64, y: f64, psi: f64, chassis: &ChassisParams) -> Rect {
    Rect { x, y, psi, length: chassis.length, width: chassis.width }
}

/// Simulates one track. Deterministic in `(seed, cfg, policy)` apart from
/// the timing fields.
pub fn run_track(seed: u64, cfg: &SimConfig, policy: Policy) -> Result<TrackLog, SimError> {
    cfg.validate()?;
    let sim = &cfg.sim;
    let chassis = &cfg.chassis;
    let track = TrackModel::build_with_vehicle_width(&cfg.track, chassis.width)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let mut vehicles = spawn_scenario(&cfg.traffic, &track, chassis, seed, sim.ego_s, sim.ego_lane)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let planner_cfg = PlannerConfig { probing: policy.probes(), ..cfg.planner.clone() };
    let mut planner = Planner::new(planner_cfg, chassis.clone(), track.clone())
        .map_err(|e| SimError::Config(e.to_string()))?;
    let graph = GroupGraph::standard();
    let horizon = cfg.lsgm.horizon();

    let mut ego = EgoState {
        v_x: sim.ego_speed,
        s: sim.ego_s,
        e_y: track.lane_offset(sim.ego_lane),
        ..EgoState::default()
    };
    let steps = sim.steps();
    let mut records = Vec::with_capacity(steps + 1);
    let mut timing = Timing::default();
    let mut termination = Termination::Completed;

    for k in 0..=steps {
        let t = k as f64 * sim.dt;
        let ego_wrapped = track.wrap_s(ego.s);
        let (gx, gy, gpsi) = track.frenet_to_global(&FrenetPose { s: ego_wrapped, e_y: ego.e_y, e_psi: ego.e_psi });
        let others: Vec<Rect> = vehicles.iter().map(|v| rect_of(v.state.x, v.state.y, v.state.psi, chassis)).collect();
        let (collision, s_o) = collision_check(&rect_of(gx, gy, gpsi, chassis), &others);
        let lane = track.lane_of(ego.e_y);
        let logged: Vec<VehicleRecord> = vehicles.iter().map(|v| (&v.state).into()).collect();

        if collision {
            records.push(StepRecord {
                t,
                ego,
                input: planner.last_input(),
                state: ConstraintState::LaneKeeping,
                proposed: NodeId::new(lane, 1),
                target: NodeId::new(lane, 1),
                lane,
                s_o,
                collision,
                fallback: false,
                iterations: 0,
                max_slack: 0.0,
                dcbf_violation: 0.0,
                dcbf_tolerance: 0.0,
                vehicles: logged,
            });
            termination = Termination::Collision;
            break;
        }

        // scene around the ego, positions unwrapped near it
        let neighbors: Vec<Neighbor> = vehicles
            .iter()
            .map(|v| Neighbor {
                id: v.id,
                lane: v.state.lane,
                s: ego.s + track.ds(v.state.frenet.s, ego_wrapped),
                e_y: v.state.frenet.e_y,
                v: progress_rate(&v.state, &track),
            })
            .collect();
        let scene: Vec<SceneVehicle> = neighbors.iter().map(|n| SceneVehicle { lane: n.lane, s: n.s, v: n.v }).collect();
        let current = NodeId::new(lane, 1);

        let clock = Instant::now();
        let (groups, proposed) = match policy {
            Policy::Ideam | Policy::NoProbingIdeam => {
                let pairs: Vec<(f64, f64)> = scene.iter().map(|v| (v.s, v.v)).collect();
                let pred = predict_positions(&pairs, horizon, sim.dt);
                match lsgm_decide(ego.s, ego.v_x, lane, &scene, &pred, &graph, &cfg.lsgm) {
                    Ok(d) => (build_groups(ego.s, &scene), d.target),
                    Err(_) => (build_groups(ego.s, &scene), current),
                }
            }
            Policy::Mobil => {
                let road: Vec<MobilVehicle> = vehicles
                    .iter()
                    .zip(&neighbors)
                    .map(|(v, n)| MobilVehicle { lane: n.lane, s: n.s, v: v.state.v, idm: v.idm })
                    .collect();
                let me = MobilEgo { lane, s: ego.s, v: ego.v_x };
                let to = mobil_decide(&me, &road, &track, chassis.length, &cfg.mobil);
                (build_groups(ego.s, &scene), NodeId::new(to, 1))
            }
        };
        timing.decision_ms.push(clock.elapsed().as_secs_f64() * 1e3);

        let plan = planner.plan_step(&ego, &neighbors, &groups, current, proposed);
        timing.qp_ms.push(plan.solve_time_ms);
        records.push(StepRecord {
            t,
            ego,
            input: plan.input,
            state: plan.state,
            proposed,
            target: plan.target,
            lane,
            s_o,
            collision,
            fallback: plan.is_fallback(),
            iterations: plan.iterations,
            max_slack: plan.max_dcbf_slack,
            dcbf_violation: plan.dcbf_violation,
            dcbf_tolerance: plan.dcbf_tolerance,
            vehicles: logged,
        });
        if k == steps {
            break;
        }

        // advance the world; traffic reacts to the pre-step ego
        let body = EgoBody { s: ego_wrapped, e_y: ego.e_y, v: ego.v_x, width: chassis.width, length: chassis.length };
        step_traffic(&mut vehicles, Some(&body), &track, chassis, &cfg.traffic.pid, sim.dt);
        match plant_step(&ego, &plan.input, &track, chassis, sim) {
            Some(next) => ego = next,
            None => {
                termination = Termination::PlantFailure;
                break;
            }
        }
    }
    Ok(TrackLog { seed, policy, dt: sim.dt, duration: sim.duration, records, termination, timing })
}

/// Rate of centerline progress `ṡ = v·cos(e_ψ + β)/(1 − κ·e_y)`; on curves
/// it differs from the speed by the lane's radius ratio.
pub fn progress_rate(st: &SurroundingState, track: &TrackModel) -> f64 {
    let kappa = track.curvature_at(st.frenet.s);
    st.v * (st.frenet.e_psi + st.beta).cos() / (1.0 - kappa * st.frenet.e_y)
}

fn plant_step(ego: &EgoState, u: &ControlInput, track: &TrackModel, chassis: &ChassisParams, sim: &SimParams) -> Option<EgoState> {
    let h = sim.dt / sim.plant_substeps as f64;
    let mut x = *ego;
    for _ in 0..sim.plant_substeps {
        x = euler_step(&x, u, track.curvature_at(x.s), chassis, h).ok()?;
        if x.v_x < 0.0 {
            // no reversing: the brake holds the car at rest
            x.v_x = 0.0;
        }
    }
    Some(x)
}

/// Heading of every vehicle column group in the CSV, in order.
const VEHICLE_FIELDS: [&str; 7] = ["x", "y", "psi", "v", "s", "e_y", "lane"];
const EGO_FIELDS: [&str; 21] = [
    "t", "v_x", "v_y", "w", "s", "e_y", "e_psi", "a_x", "delta", "state", "proposed", "target", "lane", "s_o",
    "collision", "fallback", "iterations", "max_slack", "dcbf_violation", "dcbf_tolerance", "vehicles",
];

fn state_from_label(s: &str) -> Option<ConstraintState> {
    match s {
        "LK" => Some(ConstraintState::LaneKeeping),
        "LP" => Some(ConstraintState::LaneProbing),
        "LC" => Some(ConstraintState::LaneChanging),
        _ => None,
    }
}

impl TrackLog {
    /// CSV rendering: schema line, run line, header, one row per step.
    /// Nodes are written as their index `2·lane + level − 1`.
    pub fn to_csv(&self) -> String {
        let n_veh = self.records.first().map_or(0, |r| r.vehicles.len());
        let mut out = String::new();
        let _ = writeln!(out, "{CSV_SCHEMA}");
        let _ = writeln!(
            out,
            "# seed={} policy={} dt={} duration={} termination={:?}",
            self.seed,
            self.policy.slug(),
            self.dt,
            self.duration,
            self.termination
        );
        let mut header: Vec<String> = EGO_FIELDS.iter().map(|s| s.to_string()).collect();
        for i in 0..n_veh {
            header.extend(VEHICLE_FIELDS.iter().map(|f| format!("veh{i}_{f}")));
        }
        let _ = writeln!(out, "{}", header.join(","));
        for r in &self.records {
            let e = &r.ego;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.t,
                e.v_x,
                e.v_y,
                e.w,
                e.s,
                e.e_y,
                e.e_psi,
                r.input.a_x,
                r.input.delta,
                r.state.label(),
                r.proposed.index(),
                r.target.index(),
                r.lane,
                r.s_o,
                r.collision as u8,
                r.fallback as u8,
                r.iterations,
                r.max_slack,
                r.dcbf_violation,
                r.dcbf_tolerance,
                r.vehicles.len()
            );
            for v in &r.vehicles {
                let _ = write!(out, ",{},{},{},{},{},{},{}", v.x, v.y, v.psi, v.v, v.s, v.e_y, v.lane);
            }
            out.push('\n');
        }
        out
    }

    /// Parses a log written by [`TrackLog::to_csv`]. Timing is not stored and
    /// comes back empty.
    pub fn from_csv(text: &str) -> Result<Self, SimError> {
        let bad = |m: &str| SimError::Log(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(CSV_SCHEMA) {
            return Err(bad("missing or unsupported schema line"));
        }
        let meta = lines.next().and_then(|l| l.strip_prefix("# ")).ok_or_else(|| bad("missing run line"))?;
        let mut seed = None;
        let mut policy = None;
        let mut dt = None;
        let mut duration = None;
        let mut termination = Termination::Completed;
        for kv in meta.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or_else(|| bad("malformed run line"))?;
            match k {
                "seed" => seed = v.parse().ok(),
                "policy" => policy = v.parse().ok(),
                "dt" => dt = v.parse().ok(),
                "duration" => duration = v.parse().ok(),
                "termination" => {
                    termination = match v {
                        "Completed" => Termination::Completed,
                        "Collision" => Termination::Collision,
                        "PlantFailure" => Termination::PlantFailure,
                        _ => return Err(bad("unknown termination")),
                    }
                }
                _ => {}
            }
        }
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        if !header.starts_with(&EGO_FIELDS.join(",")) {
            return Err(bad("unexpected column header"));
        }
        let mut records = Vec::new();
        for (row, line) in lines.enumerate() {
            let cols: Vec<&str> = line.split(',').collect();
            let ctx = |m: &str| SimError::Log(format!("row {row}: {m}"));
            let f = |i: usize| -> Result<f64, SimError> {
                cols.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| ctx("bad number"))
            };
            let u = |i: usize| -> Result<usize, SimError> {
                cols.get(i).and_then(|c| c.parse().ok()).ok_or_else(|| ctx("bad integer"))
            };
            let n_veh = u(20)?;
            if cols.len() != EGO_FIELDS.len() + VEHICLE_FIELDS.len() * n_veh {
                return Err(ctx("column count"));
            }
            let vehicles = (0..n_veh)
                .map(|i| {
                    let b = EGO_FIELDS.len() + VEHICLE_FIELDS.len() * i;
                    Ok(VehicleRecord {
                        x: f(b)?,
                        y: f(b + 1)?,
                        psi: f(b + 2)?,
                        v: f(b + 3)?,
                        s: f(b + 4)?,
                        e_y: f(b + 5)?,
                        lane: u(b + 6)?,
                    })
                })
                .collect::<Result<Vec<_>, SimError>>()?;
            let node = |i: usize| -> Result<NodeId, SimError> {
                let idx = u(i)?;
                (idx < crate::lsgm::NODE_COUNT).then(|| NodeId::from_index(idx)).ok_or_else(|| ctx("bad node"))
            };
            records.push(StepRecord {
                t: f(0)?,
                ego: EgoState { v_x: f(1)?, v_y: f(2)?, w: f(3)?, s: f(4)?, e_y: f(5)?, e_psi: f(6)? },
                input: ControlInput { a_x: f(7)?, delta: f(8)? },
                state: state_from_label(cols[9]).ok_or_else(|| ctx("bad constraint state"))?,
                proposed: node(10)?,
                target: node(11)?,
                lane: u(12)?,
                s_o: f(13)?,
                collision: u(14)? != 0,
                fallback: u(15)? != 0,
                iterations: u(16)?,
                max_slack: f(17)?,
                dcbf_violation: f(18)?,
                dcbf_tolerance: f(19)?,
                vehicles,
            });
        }
        Ok(TrackLog {
            seed: seed.ok_or_else(|| bad("missing seed"))?,
            policy: policy.ok_or_else(|| bad("missing policy"))?,
            dt: dt.ok_or_else(|| bad("missing dt"))?,
            duration: duration.ok_or_else(|| bad("missing duration"))?,
            records,
            termination,
            timing: Timing::default(),
        })
    }
}

/// All tracks of one policy in a suite.
#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub policy: Policy,
    pub logs: Vec<TrackLog>,
    pub metrics: Vec<TrackMetrics>,
    pub summary: MetricsSummary,
}

/// Runs `n_tracks` seeds (`base_seed + i`) for every policy in parallel.
/// Seeds are shared across policies, so every policy faces the same traffic.
pub fn run_suite(n_tracks: usize, cfg: &SimConfig, policies: &[Policy]) -> Result<Vec<PolicyRun>, SimError> {
    if n_tracks == 0 {
        return Err(SimError::Config("a suite needs at least one track".into()));
    }
    cfg.validate()?;
    let mut unique: Vec<Policy> = Vec::new();
    for &p in policies {
        if !unique.contains(&p) {
            unique.push(p);
        }
    }
    let jobs: Vec<(Policy, u64)> = unique
        .iter()
        .flat_map(|&p| (0..n_tracks as u64).map(move |i| (p, cfg.sim.base_seed + i)))
        .collect();
    let logs: Vec<TrackLog> =
        jobs.par_iter().map(|&(p, seed)| run_track(seed, cfg, p)).collect::<Result<Vec<_>, _>>()?;
    let mut out: Vec<PolicyRun> = Vec::new();
    for policy in unique {
        let mut mine: Vec<TrackLog> = logs.iter().filter(|l| l.policy == policy).cloned().collect();
        mine.sort_by_key(|l| l.seed);
        let metrics: Vec<TrackMetrics> = mine.iter().map(compute_metrics).collect();
        let summary = summarize(policy, &metrics);
        out.push(PolicyRun { policy, logs: mine, metrics, summary });
    }
    Ok(out)
}
