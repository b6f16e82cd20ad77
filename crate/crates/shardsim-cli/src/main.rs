//! Command-line front end: run a scenario under either protocol, run both
//! for a side-by-side comparison, or summarize previously written reports.
//!
//! Exit codes: 0 on success, 1 when a run aborts on a broken invariant,
//! 2 for configuration problems (unreadable scenario, bad override, bad
//! arguments).

use clap::{Args, Parser, Subcommand};
use shardsim::metrics::{render_series, HeightSample, MetricsReport};
use shardsim::plot::{height_chart_svg, throughput_chart_svg};
use shardsim::scenario::{load_scenario, ScenarioSpec};
use shardsim::sim::{run, Protocol, RunOutput, SimError};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "shardsim", version, about = "Sharded-chain interference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario under one protocol and write its artifacts.
    Run(RunArgs),
    /// Run one scenario under both protocols and compare.
    Compare(CompareArgs),
    /// Summarize existing report files.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario description file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for reports, series, and charts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the scenario seed (falls back to SHARDSIM_SEED, then the
    /// file).
    #[arg(long)]
    seed: Option<u64>,
    /// Override a scenario field, e.g. --set params.shard_count=4 or
    /// --set duration_secs=30. Repeatable.
    #[arg(long = "set", value_name = "PATH=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Which protocol to simulate: baseline or synchro.
    #[arg(long, value_parser = parse_protocol)]
    protocol: Protocol,
}

fn parse_protocol(raw: &str) -> Result<Protocol, String> {
    raw.parse()
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct ReportArgs {
    /// Report files written by earlier runs.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    /// Also write a modeled-vs-measured throughput chart across the given
    /// reports, ordered by shard count.
    #[arg(long)]
    tps_svg: Option<PathBuf>,
}

enum CliError {
    Config(String),
    Invariant(String),
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) => CliError::Config(e.to_string()),
            SimError::Invariant(_) => CliError::Invariant(e.to_string()),
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Invariant(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn effective_seed(cli_seed: Option<u64>, spec: &ScenarioSpec) -> Result<u64, CliError> {
    if let Some(seed) = cli_seed {
        return Ok(seed);
    }
    match std::env::var("SHARDSIM_SEED") {
        Ok(raw) => raw
            .parse::<u64>()
            .map_err(|_| CliError::Config(format!("SHARDSIM_SEED is not a number: {raw:?}"))),
        Err(_) => Ok(spec.seed),
    }
}

fn load(common: &CommonArgs) -> Result<(ScenarioSpec, u64), CliError> {
    let spec = load_scenario(&common.scenario, &common.overrides).map_err(config_err)?;
    let seed = effective_seed(common.seed, &spec)?;
    std::fs::create_dir_all(&common.out)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", common.out.display())))?;
    Ok((spec, seed))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn series_seconds(series: &[HeightSample]) -> Vec<(f64, f64)> {
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(series.iter().map(|s| (s.t_us as f64 / 1e6, s.height as f64)));
    pts
}

fn stall_bands(report: &MetricsReport) -> Vec<(f64, f64)> {
    report
        .stall_windows
        .iter()
        .map(|w| (w.start_us as f64 / 1e6, w.end_us as f64 / 1e6))
        .collect()
}

fn print_summary(report: &MetricsReport) {
    println!("scenario {} ({}, seed {})", report.scenario, report.protocol, report.seed);
    println!(
        "  {} shards, {:.0}s simulated, final height {}, {} blocks finalized",
        report.shard_count,
        report.duration_us as f64 / 1e6,
        report.final_height,
        report.blocks_finalized
    );
    println!(
        "  rollbacks {}, challenges {}, rejected candidates {}, proof retries {}",
        report.rollbacks, report.challenges, report.rejected_candidates, report.proof_retries
    );
    println!(
        "  txs: {} submitted, {} applied, {} rejected, {} receipts",
        report.txs_submitted, report.txs_applied, report.txs_rejected, report.receipts_applied
    );
    match report.measured_interval_us {
        Some(iv) => println!(
            "  throughput: {:.1} tps measured / {:.1} modeled, {:.3}s per block (modeled {:.3}s)",
            report.measured_tps,
            report.modeled_tps,
            iv / 1e6,
            report.steady_interval_us as f64 / 1e6
        ),
        None => println!(
            "  throughput: {:.1} tps measured / {:.1} modeled",
            report.measured_tps, report.modeled_tps
        ),
    }
    if !report.pipeline_ok {
        println!("  proof pipeline cannot keep pace with the block interval");
    }
    if report.stall_windows.is_empty() {
        println!("  no stalls");
    } else {
        println!(
            "  stalls: {} window(s), {:.1}s total, longest {:.1}s",
            report.stall_windows.len(),
            report.stall_total_us as f64 / 1e6,
            report.longest_stall_us as f64 / 1e6
        );
    }
    for fork in &report.forks {
        println!(
            "  fork {} height {} weight {}{}",
            &fork.tip[..12],
            fork.height,
            fork.weight,
            if fork.canonical { " (canonical)" } else { "" }
        );
    }
}

fn write_run(out_dir: &Path, prefix: &str, output: &RunOutput) -> Result<(), CliError> {
    let report_path = out_dir.join(format!("{prefix}report.json"));
    let series_path = out_dir.join(format!("{prefix}height_series.csv"));
    write_file(&report_path, &output.report.to_json())?;
    write_file(&series_path, &render_series(&output.series))?;
    Ok(())
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let (spec, seed) = load(&args.common)?;
    let output = run(&spec, args.protocol, seed)?;
    write_run(&args.common.out, "", &output)?;
    let chart = height_chart_svg(
        &format!("{} ({})", spec.name, args.protocol),
        &[(args.protocol.to_string(), series_seconds(&output.series))],
        &stall_bands(&output.report),
    );
    write_file(&args.common.out.join("height.svg"), &chart)?;
    print_summary(&output.report);
    println!("  wrote {}", args.common.out.join("report.json").display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), CliError> {
    let (spec, seed) = load(&args.common)?;
    let baseline = run(&spec, Protocol::Baseline, seed)?;
    let synchro = run(&spec, Protocol::Synchro, seed)?;
    write_run(&args.common.out, "baseline_", &baseline)?;
    write_run(&args.common.out, "synchro_", &synchro)?;

    let chart = height_chart_svg(
        &format!("{}: baseline vs synchro", spec.name),
        &[
            ("baseline".into(), series_seconds(&baseline.series)),
            ("synchro".into(), series_seconds(&synchro.series)),
        ],
        &stall_bands(&baseline.report),
    );
    write_file(&args.common.out.join("compare_height.svg"), &chart)?;

    print_summary(&baseline.report);
    print_summary(&synchro.report);
    let b = &baseline.report;
    let s = &synchro.report;
    println!(
        "compare: height {} vs {}, stalled {:.1}s vs {:.1}s, rollbacks {} vs {}",
        b.final_height,
        s.final_height,
        b.stall_total_us as f64 / 1e6,
        s.stall_total_us as f64 / 1e6,
        b.rollbacks,
        s.rollbacks
    );
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &args.reports {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let report = MetricsReport::from_json(&text).map_err(config_err)?;
        reports.push(report);
    }
    for report in &reports {
        print_summary(report);
    }
    if let Some(svg_path) = args.tps_svg {
        let mut by_shards = reports.clone();
        by_shards.sort_by_key(|r| r.shard_count);
        let modeled: Vec<(f64, f64)> =
            by_shards.iter().map(|r| (r.shard_count as f64, r.modeled_tps)).collect();
        let measured: Vec<(f64, f64)> =
            by_shards.iter().map(|r| (r.shard_count as f64, r.measured_tps)).collect();
        let chart = throughput_chart_svg(
            "throughput by shard count",
            &[("modeled".into(), modeled), ("measured".into(), measured)],
        );
        write_file(&svg_path, &chart)?;
        println!("wrote {}", svg_path.display());
    }
    Ok(())
}
