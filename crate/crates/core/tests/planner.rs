use ideam_core::constraints::{ExtraKind, Family, Role, EY, S, VX};
use ideam_core::lsgm::{build_groups, NodeId, SceneVehicle, VehicleGroup, NODE_COUNT};
use ideam_core::planner::*;
use ideam_core::track::{TrackConfig, TrackModel};
use ideam_core::vehicle::{discretize_linearize, ChassisParams, ControlInput, EgoState, StateVec};
use nalgebra::DMatrix;

fn track() -> TrackModel {
    TrackModel::build(&TrackConfig::default()).unwrap()
}

fn ego(s: f64, lane: usize, v: f64) -> EgoState {
    EgoState { v_x: v, s, e_y: track().lane_offset(lane), ..EgoState::default() }
}

fn groups(ego: &EgoState, nbs: &[Neighbor]) -> [VehicleGroup; NODE_COUNT] {
    let scene: Vec<SceneVehicle> = nbs.iter().map(|n| SceneVehicle { lane: n.lane, s: n.s, v: n.v }).collect();
    build_groups(ego.s, &scene)
}

fn neighbor(id: usize, lane: usize, s: f64, v: f64) -> Neighbor {
    Neighbor { id, lane, s, e_y: track().lane_offset(lane), v }
}

fn assemble(state: ConstraintState, e: &EgoState, nbs: &[Neighbor], target: NodeId) -> Assembled {
    let (tr, ch, cfg) = (track(), ChassisParams::default(), PlannerConfig::default());
    let g = groups(e, nbs);
    let guess = Trajectory::constant_velocity(e, cfg.horizon, cfg.dt);
    let sc = Scenario {
        track: &tr,
        chassis: &ch,
        ego: *e,
        neighbors: nbs,
        groups: &g,
        current: NodeId::new(tr.lane_of(e.e_y), 1),
        target,
        guess: &guess,
        prev_input: ControlInput::default(),
        speed_profile: None,
    };
    assemble_qp(state, &sc, &cfg).unwrap()
}

fn planner() -> Planner {
    Planner::new(PlannerConfig::default(), ChassisParams::default(), track()).unwrap()
}

fn plan(p: &mut Planner, e: &EgoState, nbs: &[Neighbor], proposed: NodeId) -> PlanResult {
    let g = groups(e, nbs);
    let current = NodeId::new(p.track().lane_of(e.e_y), 1);
    p.plan_step(e, nbs, &g, current, proposed)
}

#[test]
fn time_increasing_weights_interpolate_linearly() {
    let w = time_increasing_weights(WeightRange { lo: 6.0, hi: 10.0 }, 30);
    assert_eq!(w.len(), 30);
    assert_eq!(w[0], 6.0);
    assert_eq!(w[29], 10.0);
    for (k, v) in w.iter().enumerate() {
        assert!((v - (6.0 + 4.0 * k as f64 / 29.0)).abs() < 1e-12);
    }
    // the midpoint of the horizon (k = 14.5) lies on the same line
    assert!(((w[14] + w[15]) / 2.0 - 8.0).abs() < 1e-12);
    assert!(time_increasing_weights(WeightRange::constant(4.0), 30).iter().all(|v| *v == 4.0));
}

#[test]
fn reference_is_flat_at_desired_speed() {
    let cfg = PlannerConfig::default();
    let r = build_reference(&cfg);
    assert_eq!(r.len(), cfg.horizon + 1);
    assert!(r.iter().all(|x| x[VX] == 18.0 && x[EY] == 0.0 && x[1] == 0.0 && x[2] == 0.0 && x[5] == 0.0));
}

#[test]
fn state_selection_follows_the_spatial_condition() {
    let (c1, l1) = (NodeId::new(1, 1), NodeId::new(0, 1));
    assert_eq!(select_state(c1, c1, 0.0, Some(-5.0), 1.75), ConstraintState::LaneKeeping);
    assert_eq!(select_state(c1, l1, 0.0, Some(10.0), 1.75), ConstraintState::LaneProbing);
    assert_eq!(select_state(c1, l1, 1.75, Some(0.0), 1.75), ConstraintState::LaneChanging);
    assert_eq!(select_state(c1, l1, 1.7499, Some(0.0), 1.75), ConstraintState::LaneProbing);
    assert_eq!(select_state(c1, l1, 0.0, None, 1.75), ConstraintState::LaneChanging);
}

#[test]
fn lane_keeping_row_census() {
    let e = ego(20.0, 1, 15.0);
    let a = assemble(ConstraintState::LaneKeeping, &e, &[], NodeId::new(1, 1));
    let n = 30;
    let lon = a.rows.count(|f| matches!(f, Family::Lon(_)));
    assert_eq!(lon, 2 * n);
    assert_eq!(a.rows.count(|f| *f == Family::Lat), 0);
    assert_eq!(a.rows.count(|f| matches!(f, Family::DhoFirst(_) | Family::DhoSecond(_))), 0);
    assert_eq!(a.rows.count(|f| *f == Family::Boundary), n);
    assert_eq!(a.rows.count(|f| matches!(f, Family::BandUpper | Family::BandLower)), 2 * n);
    let act = a.rows.count(|f| {
        matches!(f, Family::AccelBox | Family::SteerBox | Family::AccelRate | Family::SteerRate)
    });
    assert_eq!(act, 2 * n + 2 * (n - 1));
    assert_eq!(a.rows.count(|f| matches!(f, Family::Initial { .. } | Family::Dynamics { .. })), 6 * (n + 1));
    // dynamics are eliminated; the row at k = 1 of the hard boundary depends
    // on the current state only and drops out too
    assert!(a.problem.b_eq.is_empty());
    assert_eq!(a.problem.l_ineq.len(), a.rows.rows.len() - 6 * (n + 1) - 1);
    assert_eq!(a.problem.num_vars(), 2 * n + a.rows.extras.len());
}

#[test]
fn probing_and_changing_row_census() {
    let e = ego(20.0, 1, 15.0);
    let nbs = [neighbor(0, 1, 40.0, 12.0), neighbor(1, 0, 30.0, 12.0), neighbor(2, 0, 10.0, 12.0)];
    let lp = assemble(ConstraintState::LaneProbing, &e, &nbs, NodeId::new(0, 2));
    let dho = |a: &Assembled, r: Role| a.rows.count(|f| *f == Family::DhoFirst(r) || *f == Family::DhoSecond(r));
    assert_eq!(dho(&lp, Role::CurrentLeader), 39);
    assert_eq!(lp.rows.count(|f| *f == Family::Lon(Role::CurrentFollower)), 30);
    assert_eq!(lp.rows.count(|f| *f == Family::Lon(Role::CurrentLeader)), 0);
    // each DHOCBF row carries its own ω
    assert_eq!(lp.rows.extras.iter().filter(|e| e.kind == ExtraKind::Omega).count(), 39);

    let lc = assemble(ConstraintState::LaneChanging, &e, &nbs, NodeId::new(0, 1));
    assert_eq!(dho(&lc, Role::CurrentLeader), 39);
    assert_eq!(dho(&lc, Role::DesiredFollower), 39);
    assert_eq!(lc.rows.count(|f| *f == Family::Lon(Role::DesiredLeader)), 30);
    assert_eq!(lc.rows.count(|f| matches!(f, Family::BandUpper | Family::BandLower)), 0);
}

#[test]
fn desired_neighbours_get_lateral_rows_only_when_alongside() {
    let e = ego(20.0, 1, 12.0);
    let lat_for = |a: &Assembled, id: usize| a.rows.rows.iter().filter(|r| r.tag.family == Family::Lat && r.tag.vehicle == Some(id)).count();
    let far = [neighbor(1, 0, 60.0, 12.0), neighbor(2, 0, -20.0, 12.0)];
    let lc = assemble(ConstraintState::LaneChanging, &e, &far, NodeId::new(0, 1));
    assert_eq!(lat_for(&lc, 1) + lat_for(&lc, 2), 0);
    let alongside = [neighbor(1, 0, 60.0, 12.0), neighbor(2, 0, 18.0, 12.0)];
    let lc = assemble(ConstraintState::LaneChanging, &e, &alongside, NodeId::new(0, 1));
    assert_eq!(lat_for(&lc, 2), 30);
    assert_eq!(lat_for(&lc, 1), 0);
}

#[test]
fn cost_hessian_is_positive_semidefinite() {
    let e = ego(20.0, 1, 15.0);
    let nbs = [neighbor(0, 1, 40.0, 12.0), neighbor(1, 0, 30.0, 12.0), neighbor(2, 0, 10.0, 12.0)];
    for state in [ConstraintState::LaneKeeping, ConstraintState::LaneProbing, ConstraintState::LaneChanging] {
        let a = assemble(state, &e, &nbs, NodeId::new(0, 1));
        let h = &a.problem.hessian;
        assert!(h.is_symmetric(0.0));
        let n = h.nrows;
        let dense = DMatrix::from_fn(n, n, |i, j| h.get(i, j));
        let eig = dense.symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-9, "{state}: min eigenvalue {min}");
    }
}

#[test]
fn free_road_cruise_holds_speed_and_lane() {
    let mut p = planner();
    let e = ego(20.0, 1, 18.0);
    let r = plan(&mut p, &e, &[], NodeId::new(1, 1));
    assert_eq!(r.status, PlanStatus::Solved);
    assert_eq!(r.state, ConstraintState::LaneKeeping);
    assert!(r.input.a_x.abs() < 0.05, "a_x = {}", r.input.a_x);
    assert!(r.input.delta.abs() < 0.005, "delta = {}", r.input.delta);
    assert!(r.dynamics_residual < 1e-4);
}

#[test]
fn slow_leader_ahead_brakes() {
    let mut p = planner();
    let e = ego(20.0, 1, 15.0);
    let r = plan(&mut p, &e, &[neighbor(0, 1, 30.0, 8.0)], NodeId::new(1, 1));
    assert_eq!(r.status, PlanStatus::Solved);
    assert!(r.input.a_x < 0.0, "a_x = {}", r.input.a_x);
    assert!(r.input.a_x >= -3.0);
    assert!(r.dcbf_violation < 1e-3);
}

#[test]
fn applied_input_respects_actuator_bounds() {
    let mut p = planner();
    // leader stopped just ahead: braking saturates
    let e = ego(20.0, 1, 18.0);
    let r = plan(&mut p, &e, &[neighbor(0, 1, 32.0, 0.0)], NodeId::new(1, 1));
    assert!(r.input.a_x >= -3.0 && r.input.a_x <= 3.0);
    assert!(r.input.delta.abs() <= 0.44);
    assert!((r.input.a_x + 3.0).abs() < 1e-9, "a_x = {}", r.input.a_x);
}

#[test]
fn identical_inputs_give_identical_plans() {
    let e = ego(20.0, 1, 15.0);
    let nbs = [neighbor(0, 1, 45.0, 12.0), neighbor(1, 0, 22.0, 14.0), neighbor(2, 2, 5.0, 13.0)];
    let (mut a, mut b) = (planner(), planner());
    for _ in 0..3 {
        let ra = plan(&mut a, &e, &nbs, NodeId::new(0, 1));
        let rb = plan(&mut b, &e, &nbs, NodeId::new(0, 1));
        assert_eq!(ra.input, rb.input);
        assert_eq!(ra.trajectory, rb.trajectory);
        assert_eq!(ra.slacks, rb.slacks);
        assert_eq!(ra.iterations, rb.iterations);
    }
}

#[test]
fn hysteresis_delays_a_lane_switch() {
    let mut f = TargetFilter::new(2);
    let (c1, l1, l2) = (NodeId::new(1, 1), NodeId::new(0, 1), NodeId::new(0, 2));
    assert_eq!(f.update(c1), c1);
    assert_eq!(f.update(l1), c1);
    assert_eq!(f.update(l2), l2, "second consecutive proposal in the same lane");
    assert_eq!(f.update(c1), l2);
    assert_eq!(f.update(l1), l1, "same-lane relabeling is immediate");
}

#[test]
fn lane_change_needs_the_spatial_advantage() {
    // desired follower 10 m ahead: probing; without probing, lane keeping
    let e = ego(20.0, 1, 15.0);
    let nbs = [neighbor(0, 1, 40.0, 12.0), neighbor(1, 0, 30.0, 12.0)];
    let mut p = planner();
    for _ in 0..3 {
        let r = plan(&mut p, &e, &nbs, NodeId::new(0, 2));
        assert_ne!(r.state, ConstraintState::LaneChanging);
    }
    let r = plan(&mut p, &e, &nbs, NodeId::new(0, 2));
    assert_eq!(r.state, ConstraintState::LaneProbing);
    assert!(r.families.contains(&Family::DhoFirst(Role::CurrentLeader)));

    let cfg = PlannerConfig { probing: false, ..PlannerConfig::default() };
    let mut q = Planner::new(cfg, ChassisParams::default(), track()).unwrap();
    for _ in 0..3 {
        let r = plan(&mut q, &e, &nbs, NodeId::new(0, 2));
        assert_eq!(r.state, ConstraintState::LaneKeeping);
    }
}

#[test]
fn open_gap_alongside_triggers_a_lane_change() {
    let e = ego(20.0, 1, 15.0);
    let nbs = [neighbor(0, 1, 40.0, 12.0), neighbor(1, 0, 50.0, 15.0), neighbor(2, 0, -5.0, 15.0)];
    let mut p = planner();
    let mut last = None;
    for _ in 0..3 {
        last = Some(plan(&mut p, &e, &nbs, NodeId::new(0, 1)));
    }
    let r = last.unwrap();
    assert_eq!(r.state, ConstraintState::LaneChanging);
    assert_eq!(r.status, PlanStatus::Solved);
    // the plan moves toward the left lane
    assert!(r.trajectory.states[30][EY] > e.e_y + 1.0);
}

#[test]
fn shifted_trajectory_is_dynamics_feasible_on_straights() {
    let (tr, ch) = (track(), ChassisParams::default());
    let mut p = planner();
    let e = ego(10.0, 1, 18.0);
    let r = plan(&mut p, &e, &[], NodeId::new(1, 1));
    let sh = r.trajectory.shifted();
    for k in 0..29 {
        let x = EgoState::from_vec(&sh.states[k]);
        let u = ControlInput::from_vec(&sh.inputs[k]);
        let m = discretize_linearize(&x, &u, tr.curvature_at(x.s), &ch, 0.1).unwrap();
        let res: StateVec = m.step(&sh.states[k], &sh.inputs[k]) - sh.states[k + 1];
        assert!(res.amax() < 1e-6, "k = {k}: residual {}", res.amax());
    }
    assert!(sh.states[29][S] > sh.states[0][S]);
}

#[test]
fn merge_waits_for_room_behind_the_desired_leader() {
    let e = ego(20.0, 1, 15.0);
    let tight = [neighbor(1, 0, 26.0, 15.0)];
    let roomy = [neighbor(1, 0, 40.0, 15.0)];
    let mut p = planner();
    let mut last = None;
    for _ in 0..5 {
        last = Some(plan(&mut p, &e, &tight, NodeId::new(0, 1)).state);
    }
    assert_eq!(last, Some(ConstraintState::LaneProbing));
    let mut p = planner();
    for _ in 0..5 {
        last = Some(plan(&mut p, &e, &roomy, NodeId::new(0, 1)).state);
    }
    assert_eq!(last, Some(ConstraintState::LaneChanging));
}
