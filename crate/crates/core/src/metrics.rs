//! Per-track and per-policy performance metrics.

use serde::{Deserialize, Serialize};

use crate::harness::{Policy, StepRecord, Termination, TrackLog};

/// Slack above which a step counts as relying on constraint softening.
pub const SLACK_REPORT_THRESHOLD: f64 = 0.1;
/// Time a new lane must be held to count as a completed change [s].
pub const LANE_STABLE_TIME: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackMetrics {
    pub seed: u64,
    /// Along-track displacement at 20 s and 40 s; absent when the run was
    /// configured shorter.
    pub progress_20: Option<f64>,
    pub progress_40: Option<f64>,
    /// Displacement at the end of the run.
    pub final_progress: f64,
    pub avg_velocity: f64,
    pub max_velocity: f64,
    pub min_s_o: f64,
    pub max_abs_acc: f64,
    pub avg_abs_acc: f64,
    pub avg_jerk: f64,
    pub lane_changes: usize,
    pub collision: bool,
    pub steps: usize,
    pub fallback_steps: usize,
    /// Steps whose largest barrier slack exceeds the report threshold.
    pub slack_steps: usize,
    pub max_dcbf_violation: f64,
    /// Steps whose barrier rows are violated beyond the solver tolerance.
    pub dcbf_excess_steps: usize,
}

/// Progress at time `t`: a run that ended in a collision keeps the progress
/// it had when it stopped.
fn progress_at(log: &TrackLog, t: f64) -> Option<f64> {
    if t > log.duration + 1e-9 {
        return None;
    }
    let s0 = log.records.first()?.ego.s;
    let i = (t / log.dt).round() as usize;
    match log.records.get(i) {
        Some(r) => Some(r.ego.s - s0),
        None if log.termination != Termination::Completed => log.records.last().map(|r| r.ego.s - s0),
        None => None,
    }
}

/// Number of lane changes: a change counts once the new lane has been held
/// for at least one second.
pub fn count_lane_changes(lanes: &[usize], dt: f64) -> usize {
    let need = (LANE_STABLE_TIME / dt).round().max(1.0) as usize;
    let Some(&first) = lanes.first() else { return 0 };
    let mut settled = first;
    let mut count = 0;
    let mut i = 0;
    while i < lanes.len() {
        let run = lanes[i..].iter().take_while(|&&l| l == lanes[i]).count();
        if lanes[i] != settled && run >= need {
            settled = lanes[i];
            count += 1;
        }
        i += run;
    }
    count
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn compute_metrics(log: &TrackLog) -> TrackMetrics {
    let r: &[StepRecord] = &log.records;
    let s0 = r.first().map_or(0.0, |x| x.ego.s);
    let jerks = r.windows(2).map(|w| (w[1].input.a_x - w[0].input.a_x).abs() / log.dt);
    let lanes: Vec<usize> = r.iter().map(|x| x.lane).collect();
    TrackMetrics {
        seed: log.seed,
        progress_20: progress_at(log, 20.0),
        progress_40: progress_at(log, 40.0),
        final_progress: r.last().map_or(0.0, |x| x.ego.s - s0),
        avg_velocity: mean(r.iter().map(|x| x.ego.v_x)),
        max_velocity: r.iter().map(|x| x.ego.v_x).fold(0.0, f64::max),
        min_s_o: r.iter().map(|x| x.s_o).fold(f64::INFINITY, f64::min),
        max_abs_acc: r.iter().map(|x| x.input.a_x.abs()).fold(0.0, f64::max),
        avg_abs_acc: mean(r.iter().map(|x| x.input.a_x.abs())),
        avg_jerk: mean(jerks),
        lane_changes: count_lane_changes(&lanes, log.dt),
        collision: log.termination == Termination::Collision,
        steps: r.len(),
        fallback_steps: r.iter().filter(|x| x.fallback).count(),
        slack_steps: r.iter().filter(|x| x.max_slack > SLACK_REPORT_THRESHOLD).count(),
        max_dcbf_violation: r.iter().map(|x| x.dcbf_violation).fold(0.0, f64::max),
        dcbf_excess_steps: r.iter().filter(|x| x.dcbf_violation > x.dcbf_tolerance).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub policy: Policy,
    pub tracks: usize,
    pub avg_progress_20: Option<f64>,
    pub avg_progress_40: Option<f64>,
    /// Largest end-of-run displacement over all tracks.
    pub max_progress: f64,
    pub avg_velocity: f64,
    pub max_velocity: f64,
    /// Mean over tracks of each track's minimum `S_o`.
    pub avg_min_s_o: f64,
    pub min_s_o: f64,
    pub max_abs_acc: f64,
    pub avg_abs_acc: f64,
    pub avg_jerk: f64,
    pub avg_lane_changes: f64,
    pub max_lane_changes: usize,
    pub collisions: usize,
    pub steps: usize,
    pub fallback_steps: usize,
    pub slack_steps: usize,
    pub max_dcbf_violation: f64,
    pub dcbf_excess_steps: usize,
}

/// Aggregates per-track metrics. Tracks are ordered by seed first, so the
/// result does not depend on the order they finished in.
pub fn summarize(policy: Policy, tracks: &[TrackMetrics]) -> MetricsSummary {
    let mut t: Vec<&TrackMetrics> = tracks.iter().collect();
    t.sort_by_key(|m| m.seed);
    let opt_mean = |f: fn(&TrackMetrics) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = t.iter().map(|m| f(m)).collect();
        vals.filter(|v| !v.is_empty()).map(|v| mean(v.into_iter()))
    };
    MetricsSummary {
        policy,
        tracks: t.len(),
        avg_progress_20: opt_mean(|m| m.progress_20),
        avg_progress_40: opt_mean(|m| m.progress_40),
        max_progress: t.iter().map(|m| m.final_progress).fold(f64::NEG_INFINITY, f64::max),
        avg_velocity: mean(t.iter().map(|m| m.avg_velocity)),
        max_velocity: t.iter().map(|m| m.max_velocity).fold(0.0, f64::max),
        avg_min_s_o: mean(t.iter().map(|m| m.min_s_o)),
        min_s_o: t.iter().map(|m| m.min_s_o).fold(f64::INFINITY, f64::min),
        max_abs_acc: t.iter().map(|m| m.max_abs_acc).fold(0.0, f64::max),
        avg_abs_acc: mean(t.iter().map(|m| m.avg_abs_acc)),
        avg_jerk: mean(t.iter().map(|m| m.avg_jerk)),
        avg_lane_changes: mean(t.iter().map(|m| m.lane_changes as f64)),
        max_lane_changes: t.iter().map(|m| m.lane_changes).max().unwrap_or(0),
        collisions: t.iter().filter(|m| m.collision).count(),
        steps: t.iter().map(|m| m.steps).sum(),
        fallback_steps: t.iter().map(|m| m.fallback_steps).sum(),
        slack_steps: t.iter().map(|m| m.slack_steps).sum(),
        max_dcbf_violation: t.iter().map(|m| m.max_dcbf_violation).fold(0.0, f64::max),
        dcbf_excess_steps: t.iter().map(|m| m.dcbf_excess_steps).sum(),
    }
}
