use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use ideam_cli::plot::time_series_svg;
use ideam_cli::report::{comparison_table, log_file_name, progress_boxplots, write_outputs, write_replay_plot};
use ideam_core::harness::{run_suite, Policy, PolicyRun, SimConfig, TrackLog};
use ideam_core::metrics::{compute_metrics, summarize, TrackMetrics};

#[derive(Parser)]
#[command(name = "ideam", version, about = "Multi-lane lane-change simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one seed for each selected policy.
    Run(RunArgs),
    /// Simulate a matched-seed batch of tracks for each selected policy.
    Suite(SuiteArgs),
    /// Recompute metrics from a logged CSV track.
    Replay(ReplayArgs),
    /// Draw figures for a directory of logged CSV tracks.
    Plot(PlotArgs),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults are used for absent fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed of the (first) track.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated policies: ideam, no-probing, mobil.
    #[arg(long, value_delimiter = ',', default_value = "ideam,no-probing,mobil")]
    policies: Vec<Policy>,
    /// Simulated time per track [s].
    #[arg(long)]
    duration: Option<f64>,
    /// Output directory.
    #[arg(long, env = "IDEAM_OUT", default_value = "out")]
    out: PathBuf,
    /// Also write SVG figures.
    #[arg(long)]
    plot: bool,
    /// Replace IDEAM by its no-probing variant.
    #[arg(long)]
    no_probing: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SuiteArgs {
    #[command(flatten)]
    common: Common,
    /// Number of tracks per policy.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    tracks: u64,
}

#[derive(Args)]
struct ReplayArgs {
    /// Logged track.
    log: PathBuf,
    /// Output directory for figures.
    #[arg(long, env = "IDEAM_OUT", default_value = "out")]
    out: PathBuf,
    /// Write the time-series figure.
    #[arg(long)]
    plot: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// Directory of logged tracks.
    logs: PathBuf,
    /// Output directory for figures.
    #[arg(long, env = "IDEAM_OUT", default_value = "out")]
    out: PathBuf,
}

fn load_config(common: &Common) -> Result<SimConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            SimConfig::from_json(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => SimConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.sim.base_seed = seed;
    }
    if let Some(d) = common.duration {
        cfg.sim.duration = d;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn policies(common: &Common) -> Vec<Policy> {
    let mut out: Vec<Policy> = Vec::new();
    for &p in &common.policies {
        let p = if common.no_probing && p == Policy::Ideam { Policy::NoProbingIdeam } else { p };
        if !out.contains(&p) {
            out.push(p);
        }
    }
    out
}

fn simulate(common: &Common, tracks: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let selected = policies(common);
    if selected.is_empty() {
        bail!("no policy selected");
    }
    let runs = run_suite(tracks, &cfg, &selected)?;
    write_outputs(&common.out, &cfg, &runs, common.plot)?;
    let summaries: Vec<_> = runs.iter().map(|r| r.summary.clone()).collect();
    print!("{}", comparison_table(&summaries));
    println!("outputs written to {}", common.out.display());
    Ok(())
}

fn read_log(path: &Path) -> Result<TrackLog> {
    let text = fs::read_to_string(path).with_context(|| format!("reading log {}", path.display()))?;
    TrackLog::from_csv(&text).with_context(|| format!("parsing log {}", path.display()))
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let log = read_log(&args.log)?;
    let m = compute_metrics(&log);
    println!("{}", serde_json::to_string_pretty(&m)?);
    if args.plot {
        let path = write_replay_plot(&args.out, &log)?;
        println!("figure written to {}", path.display());
    }
    Ok(())
}

fn plot(args: &PlotArgs) -> Result<()> {
    let mut files: Vec<PathBuf> = fs::read_dir(&args.logs)
        .with_context(|| format!("reading {}", args.logs.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut by_policy: BTreeMap<usize, (Policy, Vec<TrackLog>)> = BTreeMap::new();
    for f in &files {
        let log = read_log(f)?;
        let key = Policy::ALL.iter().position(|p| *p == log.policy).unwrap_or(usize::MAX);
        by_policy.entry(key).or_insert_with(|| (log.policy, Vec::new())).1.push(log);
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut runs = Vec::new();
    for (_, (policy, mut logs)) in by_policy {
        logs.sort_by_key(|l| l.seed);
        for log in &logs {
            let path = args.out.join(log_file_name(log).replace(".csv", ".svg"));
            fs::write(&path, time_series_svg(log)).with_context(|| format!("writing {}", path.display()))?;
        }
        let metrics: Vec<TrackMetrics> = logs.iter().map(compute_metrics).collect();
        let summary = summarize(policy, &metrics);
        runs.push(PolicyRun { policy, logs, metrics, summary });
    }
    let path = args.out.join("progress_boxplot.svg");
    fs::write(&path, progress_boxplots(&runs)).with_context(|| format!("writing {}", path.display()))?;
    println!("{} logs plotted into {}", files.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => simulate(&a.common, 1),
        Command::Suite(a) => simulate(&a.common, a.tracks as usize),
        Command::Replay(a) => replay(a),
        Command::Plot(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
