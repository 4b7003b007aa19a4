//! Graph-centric lane decision: six vehicle groups (two per lane), gap
//! filtering, risk-checked conditional DFS and long/short-term selection.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::traffic::PredictionTable;

#[derive(Debug, Error, PartialEq)]
pub enum LsgmError {
    #[error("prediction horizon {have} is shorter than the {need} steps required")]
    HorizonTooShort { have: usize, need: usize },
    #[error("no live nodes to choose from")]
    NoLiveNodes,
    #[error("invalid decision parameters: {0}")]
    Invalid(String),
}

pub const LANES: usize = 3;
pub const NODE_COUNT: usize = 2 * LANES;

/// One of the six groups; lane 0 is Left, 1 Center, 2 Right; level 1 is the
/// gap around the ego, level 2 the gap beyond the first leader.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub lane: usize,
    pub level: u8,
}

impl NodeId {
    pub fn new(lane: usize, level: u8) -> Self {
        debug_assert!(lane < LANES && (level == 1 || level == 2));
        Self { lane, level }
    }

    pub fn index(self) -> usize {
        2 * self.lane + (self.level as usize - 1)
    }

    pub fn from_index(i: usize) -> Self {
        Self::new(i / 2, (i % 2) as u8 + 1)
    }

    pub fn all() -> impl Iterator<Item = NodeId> {
        (0..NODE_COUNT).map(Self::from_index)
    }

    pub fn label(self) -> String {
        let lane = ["L", "C", "R"][self.lane];
        format!("{lane}{}", self.level)
    }
}

impl std::fmt::Display for NodeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

/// A surrounding vehicle as seen by the decision layer; `s` is unwrapped
/// around the ego.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneVehicle {
    pub lane: usize,
    pub s: f64,
    pub v: f64,
}

/// Gap boundary: a real vehicle (index into the scene) or a virtual one at
/// infinity travelling at the ego's speed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bound {
    Vehicle(usize),
    Virtual,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleGroup {
    pub node: NodeId,
    pub leader: Bound,
    pub follower: Bound,
    /// Current follower position (`−∞` when virtual).
    pub s_rear: f64,
    /// Current leader position (`+∞` when virtual).
    pub s_front: f64,
}

impl VehicleGroup {
    pub fn gap(&self) -> f64 {
        self.s_front - self.s_rear
    }
}

/// Builds the six groups around an ego at `ego_s`. A lane with fewer than two
/// leaders is closed off by virtual vehicles; an empty lane gets two
/// unbounded groups.
pub fn build_groups(ego_s: f64, scene: &[SceneVehicle]) -> [VehicleGroup; NODE_COUNT] {
    let mut out = [VehicleGroup {
        node: NodeId::new(0, 1),
        leader: Bound::Virtual,
        follower: Bound::Virtual,
        s_rear: f64::NEG_INFINITY,
        s_front: f64::INFINITY,
    }; NODE_COUNT];
    for lane in 0..LANES {
        let mut ahead: Vec<usize> = Vec::new();
        let mut behind: Option<usize> = None;
        for (i, v) in scene.iter().enumerate() {
            if v.lane != lane {
                continue;
            }
            if v.s > ego_s {
                ahead.push(i);
            } else if behind.map_or(true, |b| v.s > scene[b].s) {
                behind = Some(i);
            }
        }
        ahead.sort_by(|&a, &b| scene[a].s.total_cmp(&scene[b].s).then(a.cmp(&b)));
        let pos = |b: Bound, front: bool| match b {
            Bound::Vehicle(i) => scene[i].s,
            Bound::Virtual if front => f64::INFINITY,
            Bound::Virtual => f64::NEG_INFINITY,
        };
        let first = ahead.first().map_or(Bound::Virtual, |&i| Bound::Vehicle(i));
        let second = ahead.get(1).map_or(Bound::Virtual, |&i| Bound::Vehicle(i));
        let rear = behind.map_or(Bound::Virtual, Bound::Vehicle);
        out[NodeId::new(lane, 1).index()] = VehicleGroup {
            node: NodeId::new(lane, 1),
            leader: first,
            follower: rear,
            s_rear: pos(rear, false),
            s_front: pos(first, true),
        };
        // without a first leader, the second group is as open as the first
        let follower2 = if first == Bound::Virtual { rear } else { first };
        out[NodeId::new(lane, 2).index()] = VehicleGroup {
            node: NodeId::new(lane, 2),
            leader: second,
            follower: follower2,
            s_rear: pos(follower2, false),
            s_front: pos(second, true),
        };
    }
    out
}

/// Directed adjacency over the six nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupGraph {
    live: [bool; NODE_COUNT],
    adj: [Vec<NodeId>; NODE_COUNT],
}

impl GroupGraph {
    /// Each node links to the other level of its lane and to both levels of
    /// laterally adjacent lanes.
    pub fn standard() -> Self {
        let mut adj: [Vec<NodeId>; NODE_COUNT] = Default::default();
        for n in NodeId::all() {
            for m in NodeId::all() {
                let same_lane = m.lane == n.lane && m.level != n.level;
                let adjacent = m.lane.abs_diff(n.lane) == 1;
                if same_lane || adjacent {
                    adj[n.index()].push(m);
                }
            }
        }
        Self { live: [true; NODE_COUNT], adj }
    }

    /// A graph from explicit edge lists (duplicates and self-loops dropped).
    pub fn from_edges(live: [bool; NODE_COUNT], edges: &[(NodeId, NodeId)]) -> Self {
        let mut adj: [Vec<NodeId>; NODE_COUNT] = Default::default();
        for &(a, b) in edges {
            if a != b && !adj[a.index()].contains(&b) {
                adj[a.index()].push(b);
            }
        }
        let mut g = Self { live, adj };
        for (i, alive) in live.iter().enumerate() {
            if !alive {
                g.remove(NodeId::from_index(i));
            }
        }
        g
    }

    pub fn is_live(&self, n: NodeId) -> bool {
        self.live[n.index()]
    }

    pub fn live_nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        NodeId::all().filter(|n| self.is_live(*n))
    }

    pub fn neighbors(&self, n: NodeId) -> &[NodeId] {
        &self.adj[n.index()]
    }

    /// Drops a node and every edge touching it.
    pub fn remove(&mut self, n: NodeId) {
        self.live[n.index()] = false;
        self.adj[n.index()].clear();
        for list in self.adj.iter_mut() {
            list.retain(|m| *m != n);
        }
    }
}

/// Nodes whose gap is shorter than `min_gap` (a gap exactly at the threshold
/// is kept).
pub fn gap_magnitude_judge(groups: &[VehicleGroup], min_gap: f64) -> Vec<NodeId> {
    groups.iter().filter(|g| !(g.gap() >= min_gap)).map(|g| g.node).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskParams {
    /// Vehicle diagonal [m].
    pub l_diag: f64,
    /// Margin [m].
    pub epsilon: f64,
    /// Gain on the closing speed [s].
    pub n: f64,
    /// Steps per depth segment.
    pub n_seg: usize,
}

impl Default for RiskParams {
    fn default() -> Self {
        Self { l_diag: 3.7, epsilon: 3.5, n: 3.0, n_seg: 10 }
    }
}

/// Required separation between a leader at speed `v_l` and a follower at
/// `v_f`.
pub fn risk_distance(v_l: f64, v_f: f64, p: &RiskParams) -> f64 {
    let base = 2.0 * p.l_diag + p.epsilon;
    if v_f > v_l {
        base + p.n * (v_f - v_l)
    } else {
        base
    }
}

/// Predicted position and speed of a group boundary at step `k`.
fn bound_state(b: Bound, front: bool, ego_v: f64, pred: &PredictionTable, k: usize) -> (f64, f64) {
    match b {
        Bound::Vehicle(i) => (pred.s[i][k], pred.v[i][k]),
        Bound::Virtual if front => (f64::INFINITY, ego_v),
        Bound::Virtual => (f64::NEG_INFINITY, ego_v),
    }
}

/// Whether the leader of `pointing` stays far enough ahead of the follower of
/// `pointed` over the time segment of depth `depth` (1-based).
pub fn risk_assessment(
    pointing: &VehicleGroup,
    pointed: &VehicleGroup,
    depth: usize,
    ego_v: f64,
    pred: &PredictionTable,
    p: &RiskParams,
) -> Result<bool, LsgmError> {
    let depth = depth.max(1);
    let (k0, k1) = ((depth - 1) * p.n_seg, depth * p.n_seg);
    if pred.horizon() + 1 < k1 {
        return Err(LsgmError::HorizonTooShort { have: pred.horizon(), need: k1 });
    }
    for k in k0..k1 {
        let (s_l, v_l) = bound_state(pointing.leader, true, ego_v, pred, k);
        let (s_f, v_f) = bound_state(pointed.follower, false, ego_v, pred, k);
        if !(s_l - s_f >= risk_distance(v_l, v_f, p)) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Highest level visited per lane along the current path.
pub type LevelRecord = [u8; LANES];

/// True when `node` would step back below a level already reached in its lane.
pub fn level_check(node: NodeId, visited: &LevelRecord) -> bool {
    node.level < visited[node.lane]
}

/// All simple paths from `start` to `end` whose consecutive pairs pass
/// `risk(from, to, depth)` and that never fall back a level within a lane.
pub fn c_dfs<F>(graph: &GroupGraph, start: NodeId, end: NodeId, mut risk: F) -> Vec<Vec<NodeId>>
where
    F: FnMut(NodeId, NodeId, usize) -> bool,
{
    let mut out = Vec::new();
    if !graph.is_live(start) || !graph.is_live(end) {
        return out;
    }
    let mut path = Vec::with_capacity(NODE_COUNT);
    dfs(graph, start, end, [0; LANES], 1, &mut path, &mut risk, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn dfs<F>(
    graph: &GroupGraph,
    node: NodeId,
    end: NodeId,
    mut visited: LevelRecord,
    depth: usize,
    path: &mut Vec<NodeId>,
    risk: &mut F,
    out: &mut Vec<Vec<NodeId>>,
) where
    F: FnMut(NodeId, NodeId, usize) -> bool,
{
    path.push(node);
    visited[node.lane] = visited[node.lane].max(node.level);
    if node == end {
        out.push(path.clone());
    } else {
        for &next in graph.neighbors(node) {
            if path.contains(&next) || level_check(next, &visited) || !risk(node, next, depth) {
                continue;
            }
            dfs(graph, next, end, visited, depth + 1, path, risk, out);
        }
    }
    path.pop();
}

/// Tie-break key: current lane first, then Center, Left, Right; level 1 before
/// level 2.
fn preference(n: NodeId, current_lane: usize) -> (bool, usize, u8) {
    let rank = match n.lane {
        1 => 0,
        0 => 1,
        _ => 2,
    };
    (n.lane != current_lane, rank, n.level)
}

fn leader_at(g: &VehicleGroup, ego_v: f64, pred: &PredictionTable, k: usize) -> f64 {
    bound_state(g.leader, true, ego_v, pred, k).0
}

/// Live node whose leader is predicted farthest ahead at step `t_long`.
pub fn long_term_efficiency(
    graph: &GroupGraph,
    groups: &[VehicleGroup],
    current_lane: usize,
    ego_v: f64,
    pred: &PredictionTable,
    t_long: usize,
) -> Result<NodeId, LsgmError> {
    let mut best: Option<(f64, NodeId)> = None;
    for n in graph.live_nodes() {
        let s = leader_at(&groups[n.index()], ego_v, pred, t_long);
        let better = match best {
            None => true,
            Some((bs, bn)) => s > bs || (s == bs && preference(n, current_lane) < preference(bn, current_lane)),
        };
        if better {
            best = Some((s, n));
        }
    }
    best.map(|(_, n)| n).ok_or(LsgmError::NoLiveNodes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsgmParams {
    pub t_long: usize,
    pub t_short_min: usize,
    pub t_short_max: usize,
    /// Leader separation below which the short-term comparison is extended.
    pub d_threshold: f64,
    pub extension_step: usize,
    /// Minimum center-to-center gap for a group to be considered.
    pub min_gap: f64,
    pub risk: RiskParams,
}

impl Default for LsgmParams {
    fn default() -> Self {
        let risk = RiskParams::default();
        Self {
            t_long: 70,
            t_short_min: 20,
            t_short_max: 60,
            d_threshold: 3.0,
            extension_step: 10,
            min_gap: 2.0 * risk.l_diag + risk.epsilon,
            risk,
        }
    }
}

impl LsgmParams {
    pub fn validate(&self) -> Result<(), LsgmError> {
        let r = &self.risk;
        if !(r.l_diag > 0.0 && r.epsilon > 0.0 && r.n > 0.0 && r.n_seg > 0) {
            return Err(LsgmError::Invalid("risk parameters must be positive".into()));
        }
        if !(self.t_short_min <= self.t_short_max && self.t_short_max <= self.t_long) {
            return Err(LsgmError::Invalid("short-term horizons must not exceed the long-term one".into()));
        }
        if self.extension_step == 0 || !(self.d_threshold >= 0.0) || !(self.min_gap >= 0.0) {
            return Err(LsgmError::Invalid("thresholds must be non-negative and the step positive".into()));
        }
        Ok(())
    }

    /// Steps of prediction the decision needs.
    pub fn horizon(&self) -> usize {
        self.t_long.max((NODE_COUNT - 1) * self.risk.n_seg)
    }
}

/// Among the first nodes after the start of each path, picks the one whose
/// leader is farthest ahead, lengthening the horizon while the top two are
/// within `d_threshold`.
pub fn short_term_efficiency(
    paths: &[Vec<NodeId>],
    groups: &[VehicleGroup],
    current_lane: usize,
    ego_v: f64,
    pred: &PredictionTable,
    p: &LsgmParams,
) -> Option<NodeId> {
    let mut candidates: Vec<NodeId> = Vec::new();
    for path in paths {
        let n = *path.get(1).or(path.first())?;
        if !candidates.contains(&n) {
            candidates.push(n);
        }
    }
    candidates.sort_by_key(|n| preference(*n, current_lane));
    if candidates.len() <= 1 {
        return candidates.first().copied();
    }
    let mut t = p.t_short_min.min(p.t_long);
    loop {
        let mut ranked: Vec<(f64, NodeId)> =
            candidates.iter().map(|&n| (leader_at(&groups[n.index()], ego_v, pred, t), n)).collect();
        // stable sort keeps the preference order among equal positions
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (top, second) = (ranked[0].0, ranked[1].0);
        let separated = if top.is_infinite() && second.is_infinite() { false } else { top - second >= p.d_threshold };
        if separated || t >= p.t_long {
            return Some(ranked[0].1);
        }
        t = (t + p.extension_step).min(p.t_long);
    }
}

/// Decision outcome with its trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub current: NodeId,
    pub target: NodeId,
    pub group: VehicleGroup,
    /// Long-term node of the final iteration.
    pub long_term: NodeId,
    /// Shortest candidate paths of the final iteration.
    pub paths: Vec<Vec<NodeId>>,
    pub excluded: Vec<NodeId>,
    pub iterations: usize,
}

/// Full decision for an ego at `ego_s` in `ego_lane`. The ego's own group is
/// never filtered out by the gap check, so the loop always terminates.
pub fn lsgm_decide(
    ego_s: f64,
    ego_v: f64,
    ego_lane: usize,
    scene: &[SceneVehicle],
    pred: &PredictionTable,
    graph: &GroupGraph,
    p: &LsgmParams,
) -> Result<Decision, LsgmError> {
    let need = p.horizon();
    if !scene.is_empty() && pred.horizon() < need {
        return Err(LsgmError::HorizonTooShort { have: pred.horizon(), need });
    }
    let groups = build_groups(ego_s, scene);
    let current = NodeId::new(ego_lane.min(LANES - 1), 1);
    let mut graph = graph.clone();
    let excluded: Vec<NodeId> =
        gap_magnitude_judge(&groups, p.min_gap).into_iter().filter(|n| *n != current && graph.is_live(*n)).collect();
    for &n in &excluded {
        graph.remove(n);
    }
    let mut iterations = 0;
    let stay = |long_term, paths, iterations| Decision {
        current,
        target: current,
        group: groups[current.index()],
        long_term,
        paths,
        excluded: excluded.clone(),
        iterations,
    };
    while graph.is_live(current) {
        iterations += 1;
        let long = long_term_efficiency(&graph, &groups, ego_lane, ego_v, pred, p.t_long)?;
        if long == current {
            return Ok(stay(long, vec![vec![current]], iterations));
        }
        let all = c_dfs(&graph, current, long, |a, b, d| {
            risk_assessment(&groups[a.index()], &groups[b.index()], d, ego_v, pred, &p.risk).unwrap_or(false)
        });
        if all.is_empty() {
            graph.remove(long);
            continue;
        }
        let shortest = all.iter().map(Vec::len).min().unwrap_or(0);
        let paths: Vec<Vec<NodeId>> = all.into_iter().filter(|q| q.len() == shortest).collect();
        let target = if paths.len() == 1 {
            paths[0][1]
        } else {
            short_term_efficiency(&paths, &groups, ego_lane, ego_v, pred, p).unwrap_or(current)
        };
        return Ok(Decision {
            current,
            target,
            group: groups[target.index()],
            long_term: long,
            paths,
            excluded: excluded.clone(),
            iterations,
        });
    }
    Ok(stay(current, Vec::new(), iterations))
}
