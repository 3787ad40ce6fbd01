//! `nexting`: generate streams, run hordes, sweep parameters, inject sensor
//! failures and summarize sweeps.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use nexting_core::config::ExperimentConfig;
use nexting_core::datastream;
use nexting_core::evaluation::{self, method_name};
use nexting_core::experiment::{self, load_base_stream};
use nexting_core::Error;

#[derive(Parser)]
#[command(name = "nexting", version, about = "Online GVF prediction experiments with TD(λ) and TIDBD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic stream and its channel table.
    Generate(Common),
    /// Run one trial per seed and write reports.
    Run(Common),
    /// Run the configured parameter sweep (resumable).
    Sweep(Common),
    /// Apply the configured sensor failure to a stream CSV.
    Inject(Common),
    /// Build step-size sensitivity curves from a sweep table.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds, e.g. `0,1,2` or `0-29`; overrides `seeds`. (The full path
    /// keeps clap from treating the list as a repeated flag.)
    #[arg(long, value_parser = parse_list::<u64>)]
    seeds: Option<std::vec::Vec<u64>>,
    /// Worker threads; more than one runs GVFs or sweep cells in parallel.
    #[arg(long, default_value_t = 1)]
    parallel: usize,
    /// Snapshot steps, e.g. `0,2264,4528`; overrides `snapshot_steps`.
    #[arg(long, value_parser = parse_list::<usize>)]
    snapshot_steps: Option<std::vec::Vec<usize>>,
    /// Input file: the stream for `inject`, the sweep table for `report`.
    #[arg(long)]
    input: Option<PathBuf>,
}

/// Comma-separated values; `a-b` expands to the inclusive range.
fn parse_list<T>(text: &str) -> Result<Vec<T>, String>
where
    T: std::str::FromStr + TryFrom<u64>,
{
    let num = |s: &str| s.trim().parse::<T>().map_err(|_| format!("not a number: {s:?}"));
    let bound = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("not a number: {s:?}"));
    let mut out = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (bound(a)?, bound(b)?);
                if a > b {
                    return Err(format!("empty range {part:?}"));
                }
                for v in a..=b {
                    out.push(T::try_from(v).map_err(|_| format!("{v} out of range"))?);
                }
            }
            None => out.push(num(part)?),
        }
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

/// Exit codes: 2 configuration, 3 data, 4 divergence, 1 anything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(e) if e.is_divergence() => 4,
        Some(Error::Config(_) | Error::Coder(_) | Error::Horde(_)) => 2,
        Some(Error::Stream(_) | Error::Io { .. } | Error::Eval(_) | Error::Report(_)) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = exit_code(&err);
            if code == 4 {
                eprintln!("error: run diverged: {err:#}");
            } else {
                eprintln!("error: {err:#}");
            }
            ExitCode::from(code)
        }
    }
}

fn prepare(common: &Common) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    prepare_with(common, |_| Ok(()))
}

/// Loads and validates the config, runs `check`, then creates the output
/// directory.
fn prepare_with(
    common: &Common,
    check: impl FnOnce(&ExperimentConfig) -> Result<(), Error>,
) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seeds) = &common.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(steps) = &common.snapshot_steps {
        cfg.snapshot_steps = steps.clone();
    }
    cfg.validate()?;
    check(&cfg)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.out_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    if common.parallel > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.parallel)
            .build_global()
            .context("starting worker threads")?;
    }
    Ok((cfg, out))
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Generate(c) => generate(&c),
        Command::Run(c) => run(&c),
        Command::Sweep(c) => sweep(&c),
        Command::Inject(c) => inject(&c),
        Command::Report(c) => report(&c),
    }
}

fn generate(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = prepare(common)?;
    let (meta, frames) = load_base_stream(&cfg)?;
    let stream = out.join("stream.csv");
    datastream::write_csv(&stream, &frames, &meta).map_err(Error::from)?;
    datastream::write_meta(&out.join("channels.csv"), &meta).map_err(Error::from)?;
    println!("{} frames written to {}", frames.len(), stream.display());
    Ok(())
}

fn run(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = prepare(common)?;
    let results = experiment::run_experiment(&cfg, &out, common.parallel > 1, |r| {
        println!(
            "seed {}: accumulated RMSE {:.4}, {:.4} ms per step",
            r.seed,
            r.accumulated_rmse,
            r.timing.step_s_mean() * 1e3
        );
    })?;
    let mean = results.iter().map(|r| r.accumulated_rmse).sum::<f64>() / results.len() as f64;
    println!("{} trials, mean accumulated RMSE {mean:.4}; reports in {}", results.len(), out.display());
    Ok(())
}

fn sweep(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = prepare(common)?;
    let plan = cfg.sweep_plan()?;
    let total = plan.cells().len() * plan.seeds.len();
    let rows = experiment::run_sweep_experiment(&cfg, &out, common.parallel > 1)?;
    let diverged = rows.iter().filter(|r| r.outcome == evaluation::CellOutcome::Diverged).count();
    println!(
        "{} of {total} runs computed ({} already present, {diverged} diverged); table at {}",
        rows.len(),
        total - rows.len(),
        out.join("sweep_results.csv").display()
    );
    Ok(())
}

fn inject(common: &Common) -> anyhow::Result<()> {
    let (cfg, out) = prepare_with(common, |cfg| match cfg.failure {
        Some(_) => Ok(()),
        None => Err(Error::Config("inject needs a [failure] section".into())),
    })?;
    let failure = cfg.failure.as_ref().expect("checked above");
    let meta = cfg.channel_meta()?;
    let mut frames = match &common.input {
        Some(path) => datastream::load_csv(path, &meta).map_err(Error::from)?,
        None => load_base_stream(&cfg)?.1,
    };
    let spec = failure.spec(cfg.seeds[0]);
    spec.validate(meta.len()).map_err(Error::from)?;
    datastream::inject_failure(&mut frames, &spec).map_err(Error::from)?;
    let kind = match spec.kind {
        datastream::FailureKind::Stuck => "stuck",
        datastream::FailureKind::Broken => "broken",
    };
    let path = out.join(format!("stream_{kind}.csv"));
    datastream::write_csv(&path, &frames, &meta).map_err(Error::from)?;
    println!(
        "{} frames, channels {:?} replaced with N({}, {}²); written to {}",
        frames.len(),
        spec.channels,
        spec.mean,
        spec.std,
        path.display()
    );
    Ok(())
}

fn report(common: &Common) -> anyhow::Result<()> {
    let (_, out) = prepare(common)?;
    let input = common.input.clone().unwrap_or_else(|| out.join("sweep_results.csv"));
    let rows = evaluation::read_sweep_rows(&input)?;
    let curves = evaluation::stepsize_sensitivity(&rows).map_err(Error::from)?;
    let path = out.join("sensitivity.csv");
    evaluation::write_sensitivity(&path, &curves)?;
    for c in &curves {
        let theta = c.meta_step_size.map_or(String::new(), |t| format!(" θ={t}"));
        println!(
            "{} n={} η={}{theta}: spread {}",
            method_name(c.method),
            c.prototype_count,
            c.active_ratio,
            fmt_spread(c.spread)
        );
    }
    println!("{} curves written to {}", curves.len(), display(&path));
    Ok(())
}

fn fmt_spread(s: f64) -> String {
    if s.is_finite() {
        format!("{s:.3}")
    } else {
        "inf (divergence)".into()
    }
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
