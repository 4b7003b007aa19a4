//! Output files and the policy-comparison table.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use ideam_core::harness::{Policy, PolicyRun, SimConfig, TrackLog};
use ideam_core::metrics::MetricsSummary;

use crate::plot::{boxplot_svg, time_series_svg};

fn cell(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.digits$}"),
        _ => "-".into(),
    }
}

/// Policies × metrics comparison table.
pub fn comparison_table(summaries: &[MetricsSummary]) -> String {
    let header = [
        "Method", "Prog.20s", "Prog.40s", "MaxProg", "AvgVel", "MaxVel", "AvgS_o", "MinS_o", "MaxAcc", "AvgAcc",
        "AvgJerk", "AvgLC", "MaxLC", "Coll.",
    ];
    let rows: Vec<Vec<String>> = summaries
        .iter()
        .map(|s| {
            vec![
                s.policy.name().to_string(),
                cell(s.avg_progress_20, 2),
                cell(s.avg_progress_40, 2),
                cell(Some(s.max_progress), 2),
                cell(Some(s.avg_velocity), 2),
                cell(Some(s.max_velocity), 2),
                cell(Some(s.avg_min_s_o), 2),
                cell(Some(s.min_s_o), 2),
                cell(Some(s.max_abs_acc), 2),
                cell(Some(s.avg_abs_acc), 2),
                cell(Some(s.avg_jerk), 2),
                cell(Some(s.avg_lane_changes), 2),
                s.max_lane_changes.to_string(),
                s.collisions.to_string(),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].len()).chain([header[c].len()]).max().unwrap_or(0))
        .collect();
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (c, text) in cells.iter().enumerate() {
            if c == 0 {
                let _ = write!(s, "{text:<w$}", w = widths[0]);
            } else {
                let _ = write!(s, "  {text:>w$}", w = widths[c]);
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(header.to_vec());
    out.push_str(&"-".repeat(out.len() - 1));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

pub fn log_file_name(log: &TrackLog) -> String {
    format!("{}_seed{}.csv", log.policy.slug(), log.seed)
}

#[derive(Serialize)]
struct TimingReport {
    policy: Policy,
    qp_solves: usize,
    qp_mean_ms: f64,
    qp_median_ms: f64,
    qp_max_ms: f64,
    decision_mean_ms: f64,
    decision_max_ms: f64,
}

fn timing_report(runs: &[PolicyRun]) -> Vec<TimingReport> {
    runs.iter()
        .map(|r| {
            let mut qp: Vec<f64> = r.logs.iter().flat_map(|l| l.timing.qp_ms.iter().copied()).collect();
            let dec: Vec<f64> = r.logs.iter().flat_map(|l| l.timing.decision_ms.iter().copied()).collect();
            qp.sort_by(f64::total_cmp);
            let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
            TimingReport {
                policy: r.policy,
                qp_solves: qp.len(),
                qp_mean_ms: mean(&qp),
                qp_median_ms: if qp.is_empty() { 0.0 } else { crate::plot::quantile(&qp, 0.5) },
                qp_max_ms: qp.last().copied().unwrap_or(0.0),
                decision_mean_ms: mean(&dec),
                decision_max_ms: dec.iter().copied().fold(0.0, f64::max),
            }
        })
        .collect()
}

/// Progress boxplots at 20 s and 40 s, one box per policy.
pub fn progress_boxplots(runs: &[PolicyRun]) -> String {
    let panel = |f: fn(&ideam_core::metrics::TrackMetrics) -> Option<f64>| -> Vec<(String, Vec<f64>)> {
        runs.iter().map(|r| (r.policy.name().to_string(), r.metrics.iter().filter_map(f).collect())).collect()
    };
    boxplot_svg(&[("Progress at 20 s [m]", panel(|m| m.progress_20)), ("Progress at 40 s [m]", panel(|m| m.progress_40))])
}

/// Writes everything a run produced below `out` and returns the written
/// paths. Only `timing.json` depends on the machine.
pub fn write_outputs(out: &Path, cfg: &SimConfig, runs: &[PolicyRun], plots: bool) -> Result<Vec<PathBuf>> {
    let logs_dir = out.join("logs");
    fs::create_dir_all(&logs_dir).with_context(|| format!("creating {}", logs_dir.display()))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, contents: String| -> Result<()> {
        write(&path, &contents)?;
        written.push(path);
        Ok(())
    };

    put(out.join("config.json"), cfg.to_json() + "\n")?;
    let summaries: Vec<&MetricsSummary> = runs.iter().map(|r| &r.summary).collect();
    put(out.join("summary.json"), json(&summaries))?;
    let tracks: Vec<_> = runs.iter().flat_map(|r| r.metrics.iter().map(move |m| (r.policy, m))).collect();
    put(out.join("tracks.json"), json(&tracks))?;
    let owned: Vec<MetricsSummary> = runs.iter().map(|r| r.summary.clone()).collect();
    put(out.join("table.txt"), comparison_table(&owned))?;
    put(out.join("timing.json"), json(&timing_report(runs)))?;
    for r in runs {
        for log in &r.logs {
            put(logs_dir.join(log_file_name(log)), log.to_csv())?;
        }
    }
    if plots {
        let dir = out.join("plots");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        put(dir.join("progress_boxplot.svg"), progress_boxplots(runs))?;
        for r in runs {
            if let Some(log) = r.logs.first() {
                put(dir.join(format!("timeseries_{}_seed{}.svg", r.policy.slug(), log.seed)), time_series_svg(log))?;
            }
        }
    }
    Ok(written)
}

/// Time-series figure for one replayed log.
pub fn write_replay_plot(out: &Path, log: &TrackLog) -> Result<PathBuf> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join(log_file_name(log).replace(".csv", ".svg"));
    write(&path, &time_series_svg(log))?;
    Ok(path)
}
