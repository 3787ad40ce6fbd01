//! Running trials from an [`ExperimentConfig`] and writing their reports.
//!
//! A trial fixes one seed: the prototype set and the failure noise are drawn
//! from seeds derived from it, while the stream itself is shared by all
//! trials. Returns are computed offline from the whole stream, then the
//! horde makes one online pass, predicting before each update.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use crate::config::{CumulantSource, DataSource, ExperimentConfig};
use crate::datastream::{self, ChannelMeta, PhaseKind, StreamFrame};
use crate::error::{Error, Result};
use crate::evaluation::{
    self, aggregate_periods, compute_returns, rmse_step, CellOutcome, PeriodStats, ReturnSeries, SweepCell,
    SweepRow,
};
use crate::horde::{build_horde_for, Encoded, Horde, PrototypeSharing};
use crate::kanerva::{Encoder, PrototypeSet};
use crate::tidbd::StepSizeEntry;

/// One trial's view of the data: raw frames (after any failure injection),
/// normalized observations and per-channel cumulant series.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub meta: Vec<ChannelMeta>,
    pub frames: Vec<StreamFrame>,
    pub observations: Vec<Vec<f64>>,
    /// `cumulants[c][t]`.
    pub cumulants: Vec<Vec<f64>>,
}

impl Dataset {
    pub fn new(meta: Vec<ChannelMeta>, frames: Vec<StreamFrame>, source: CumulantSource) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::Config(format!(
                "a run needs at least two frames, got {}",
                frames.len()
            )));
        }
        let observations = datastream::normalize_all(&frames, &meta);
        let cumulants = (0..meta.len())
            .map(|c| match source {
                CumulantSource::Normalized => observations.iter().map(|o| o[c]).collect(),
                CumulantSource::Raw => frames.iter().map(|f| f.values[c]).collect(),
            })
            .collect();
        Ok(Self {
            meta,
            frames,
            observations,
            cumulants,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.meta.len()
    }
}

/// Channel metadata and the stream before failure injection.
pub fn load_base_stream(cfg: &ExperimentConfig) -> Result<(Vec<ChannelMeta>, Vec<StreamFrame>)> {
    let meta = cfg.channel_meta()?;
    let frames = match cfg.data.source {
        DataSource::Synthetic => datastream::synthesize(&cfg.data.profile, &meta, cfg.data.seed)?,
        DataSource::Csv => {
            let path = cfg
                .data
                .path
                .as_ref()
                .ok_or_else(|| Error::Config("data.path is required for csv data".into()))?;
            datastream::load_csv(path, &meta)?
        }
    };
    Ok((meta, frames))
}

/// The data of one trial: the base stream with the configured failure, if
/// any, drawn for `trial_seed`.
pub fn trial_dataset(
    cfg: &ExperimentConfig,
    meta: &[ChannelMeta],
    base: &[StreamFrame],
    trial_seed: u64,
) -> Result<Dataset> {
    let mut frames = base.to_vec();
    if let Some(failure) = &cfg.failure {
        datastream::inject_failure(&mut frames, &failure.spec(trial_seed))?;
    }
    Dataset::new(meta.to_vec(), frames, cfg.learner.cumulant_source)
}

/// Cumulant channels of the horde.
pub fn gvf_channels(cfg: &ExperimentConfig, dimension: usize) -> Result<Vec<usize>> {
    let channels = cfg
        .learner
        .channels
        .clone()
        .unwrap_or_else(|| (0..dimension).collect());
    if let Some(c) = channels.iter().find(|&&c| c >= dimension) {
        return Err(Error::Config(format!(
            "cumulant channel {c} out of range for {dimension} channels"
        )));
    }
    Ok(channels)
}

pub fn trial_returns(cfg: &ExperimentConfig, data: &Dataset) -> Result<ReturnSeries> {
    let channels = gvf_channels(cfg, data.dimension())?;
    let series: Vec<Vec<f64>> = channels.iter().map(|&c| data.cumulants[c].clone()).collect();
    Ok(compute_returns(&series, cfg.learner.discount)?)
}

/// Encoders of one trial: one shared prototype set, or one per GVF.
pub fn trial_encoders(cfg: &ExperimentConfig, dimension: usize, gvfs: usize, trial_seed: u64) -> Result<Vec<Arc<dyn Encoder>>> {
    let base = cfg.coder_config(dimension, trial_seed);
    let count = match cfg.coder.sharing {
        PrototypeSharing::Shared => 1,
        PrototypeSharing::PerGvf => gvfs,
    };
    (0..count)
        .map(|i| {
            let config = crate::kanerva::CoderConfig {
                seed: base.seed.wrapping_add(i as u64),
                ..base
            };
            Ok(Arc::new(PrototypeSet::build(&config)?) as Arc<dyn Encoder>)
        })
        .collect()
}

/// Distribution of one GVF's step sizes over the features that have taken
/// part in an update (all features when none has).
#[derive(Debug, Clone, PartialEq)]
pub struct StepSizeSummary {
    pub gvf: usize,
    pub channel: usize,
    pub touched: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize_step_sizes(gvf: usize, channel: usize, alphas: &[f64], touched: Option<&[bool]>) -> StepSizeSummary {
    let mut v: Vec<f64> = match touched {
        Some(t) if t.iter().any(|&x| x) => alphas.iter().zip(t).filter(|(_, &t)| t).map(|(&a, _)| a).collect(),
        _ => alphas.to_vec(),
    };
    v.sort_by(f64::total_cmp);
    StepSizeSummary {
        gvf,
        channel,
        touched: touched.map_or(alphas.len(), |t| t.iter().filter(|&&x| x).count()),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        min: v[0],
        q25: quantile(&v, 0.25),
        median: quantile(&v, 0.5),
        q75: quantile(&v, 0.75),
        max: v[v.len() - 1],
    }
}

fn horde_summaries(horde: &Horde) -> Vec<StepSizeSummary> {
    horde
        .learners()
        .iter()
        .zip(horde.specs())
        .enumerate()
        .map(|(gvf, (learner, spec))| {
            let alphas = learner.step_sizes();
            let touched: Option<Vec<bool>> = learner
                .as_tidbd()
                .map(|l| (0..alphas.len()).map(|i| l.is_touched(i)).collect());
            summarize_step_sizes(gvf, spec.cumulant_channel, &alphas, touched.as_deref())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Updates applied before the snapshot.
    pub step: usize,
    pub summaries: Vec<StepSizeSummary>,
    /// Per-feature step sizes of every GVF, when requested.
    pub full: Option<Vec<Vec<StepSizeEntry>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timing {
    pub steps: usize,
    /// Prototype search per frame.
    pub encode_s_per_frame: f64,
    /// Learner updates per step, all GVFs.
    pub update_s_per_step: f64,
    pub update_s_max: f64,
    pub memory_bytes_per_gvf: usize,
}

impl Timing {
    /// Mean wall-clock per horde step, encoding included.
    pub fn step_s_mean(&self) -> f64 {
        self.encode_s_per_frame + self.update_s_per_step
    }
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub seed: u64,
    /// Per-step RMSE over the evaluated steps; `None` where no return was
    /// large enough to normalize by.
    pub rmse: Vec<Option<f64>>,
    pub periods: Vec<PeriodStats>,
    pub accumulated_rmse: f64,
    pub snapshots: Vec<Snapshot>,
    /// Step sizes after the last update.
    pub final_step_sizes: Vec<StepSizeSummary>,
    pub timing: Timing,
}

#[derive(Debug, Clone, Default)]
pub struct TrialOptions {
    pub snapshot_steps: Vec<usize>,
    pub full_snapshots: bool,
    pub parallel: bool,
}

/// Encodes every observation with every encoder (shared prototypes only;
/// per-GVF prototypes are encoded step by step).
pub fn pre_encode(encoders: &[Arc<dyn Encoder>], observations: &[Vec<f64>]) -> Result<Vec<Encoded>> {
    let columns: Vec<Vec<crate::features::FeatureVector>> = encoders
        .iter()
        .map(|e| e.encode_all(observations))
        .collect::<std::result::Result<_, _>>()?;
    let mut out: Vec<Encoded> = (0..observations.len()).map(|_| Vec::with_capacity(encoders.len())).collect();
    for column in columns {
        for (slot, x) in out.iter_mut().zip(column) {
            slot.push(x);
        }
    }
    Ok(out)
}

/// One online pass over `data`.
///
/// `encoded`, when given, holds the encodings of every frame under
/// `encoders` and replaces encoding during the pass; `encode_seconds` is
/// then the time that encoding took.
#[allow(clippy::too_many_arguments)]
pub fn run_trial(
    cfg: &ExperimentConfig,
    data: &Dataset,
    returns: &ReturnSeries,
    encoders: Vec<Arc<dyn Encoder>>,
    encoded: Option<(&[Encoded], f64)>,
    trial_seed: u64,
    options: &TrialOptions,
) -> Result<TrialResult> {
    let channels = gvf_channels(cfg, data.dimension())?;
    let mut horde = build_horde_for(
        &channels,
        &cfg.template(),
        encoders,
        cfg.learner.step_size_overrides.as_deref(),
    )?
    .with_parallel(options.parallel);

    let total_steps = data.len() - 1;
    let mut snapshot_at: Vec<usize> = options.snapshot_steps.iter().map(|&s| s.min(total_steps)).collect();
    snapshot_at.sort_unstable();
    snapshot_at.dedup();
    let mut snapshots = Vec::with_capacity(snapshot_at.len());
    let mut take_snapshot = |horde: &Horde, step: usize| {
        if snapshot_at.binary_search(&step).is_ok() {
            snapshots.push(Snapshot {
                step,
                summaries: horde_summaries(horde),
                full: options.full_snapshots.then(|| {
                    horde
                        .learners()
                        .iter()
                        .filter_map(|l| l.step_size_snapshot())
                        .collect()
                }),
            });
        }
    };
    take_snapshot(&horde, 0);

    let mut rmse = Vec::with_capacity(returns.len());
    let mut predictions = vec![0.0; channels.len()];
    let mut targets = vec![0.0; channels.len()];
    let mut update_total = 0.0;
    let mut update_max: f64 = 0.0;
    let mut encode_total = encoded.map_or(0.0, |(_, s)| s);
    for t in 0..total_steps {
        let start = Instant::now();
        let cumulants: Vec<f64> = (0..data.dimension()).map(|c| data.cumulants[c][t + 1]).collect();
        let outputs = match encoded {
            Some((frames, _)) => horde.step_encoded(&frames[t], &frames[t + 1], &cumulants)?,
            None => horde.step(&data.observations[t], &data.observations[t + 1], &cumulants)?,
        };
        let elapsed = start.elapsed().as_secs_f64();
        update_total += elapsed;
        update_max = update_max.max(elapsed);
        for (p, o) in predictions.iter_mut().zip(outputs) {
            *p = o.prediction;
        }
        if t < returns.len() {
            for (g, series) in targets.iter_mut().zip(&returns.returns) {
                *g = series[t];
            }
            rmse.push(rmse_step(&predictions, &targets)?);
        }
        take_snapshot(&horde, t + 1);
    }
    if encoded.is_none() {
        // step() timing already includes encoding
        encode_total = 0.0;
    }
    let periods = trial_periods(&rmse, &cfg.periods())?;
    Ok(TrialResult {
        seed: trial_seed,
        accumulated_rmse: evaluation::accumulated_rmse(&rmse),
        rmse,
        periods,
        snapshots,
        final_step_sizes: horde_summaries(&horde),
        timing: Timing {
            steps: total_steps,
            encode_s_per_frame: encode_total / data.len() as f64,
            update_s_per_step: update_total / total_steps as f64,
            update_s_max: update_max,
            memory_bytes_per_gvf: horde.memory_bytes() / horde.len(),
        },
    })
}

/// Period statistics of a trial. Periods that fall entirely inside the
/// truncated tail (short streams) are reported empty.
fn trial_periods(rmse: &[Option<f64>], lengths: &[usize]) -> Result<Vec<PeriodStats>> {
    let mut start = 0;
    let inside = lengths
        .iter()
        .take_while(|&&len| {
            let ok = start < rmse.len();
            start += len;
            ok
        })
        .count();
    let mut stats = if inside == 0 {
        Vec::new()
    } else {
        aggregate_periods(rmse, &lengths[..inside])?
    };
    let mut start: usize = lengths[..inside].iter().sum();
    for &len in &lengths[inside..] {
        stats.push(PeriodStats {
            start: start.min(rmse.len()),
            end: rmse.len(),
            mean: None,
            samples: Vec::new(),
        });
        start += len;
    }
    Ok(stats)
}

/// Loads, encodes and runs one trial.
pub fn run_single(
    cfg: &ExperimentConfig,
    meta: &[ChannelMeta],
    base: &[StreamFrame],
    trial_seed: u64,
    options: &TrialOptions,
) -> Result<TrialResult> {
    let data = trial_dataset(cfg, meta, base, trial_seed)?;
    let returns = trial_returns(cfg, &data)?;
    let channels = gvf_channels(cfg, data.dimension())?;
    let encoders = trial_encoders(cfg, data.dimension(), channels.len(), trial_seed)?;
    if encoders.len() == 1 {
        let start = Instant::now();
        let encoded = pre_encode(&encoders, &data.observations)?;
        let secs = start.elapsed().as_secs_f64();
        run_trial(cfg, &data, &returns, encoders, Some((&encoded, secs)), trial_seed, options)
    } else {
        run_trial(cfg, &data, &returns, encoders, None, trial_seed, options)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "{header}").map_err(io)?;
    for line in lines {
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn period_kinds(cfg: &ExperimentConfig, count: usize) -> Vec<&'static str> {
    let kinds: Vec<&'static str> = cfg
        .data
        .profile
        .schedule
        .iter()
        .map(|p| match p.kind {
            PhaseKind::Rest => "rest",
            PhaseKind::Movement => "movement",
        })
        .collect();
    (0..count).map(|i| kinds.get(i).copied().unwrap_or("period")).collect()
}

fn write_summaries(path: &Path, summaries: &[StepSizeSummary], meta: &[ChannelMeta]) -> Result<()> {
    write_lines(
        path,
        "gvf,channel,name,touched,mean,min,q25,median,q75,max",
        summaries.iter().map(|s| {
            format!(
                "{},{},{},{},{},{},{},{},{},{}",
                s.gvf,
                s.channel,
                meta[s.channel].name,
                s.touched,
                s.mean,
                s.min,
                s.q25,
                s.median,
                s.q75,
                s.max
            )
        }),
    )
}

/// Writes the per-seed report files into `dir`.
pub fn write_trial_reports(dir: &Path, cfg: &ExperimentConfig, meta: &[ChannelMeta], result: &TrialResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut period_of = Vec::with_capacity(result.rmse.len());
    for (p, stats) in result.periods.iter().enumerate() {
        period_of.extend(std::iter::repeat(p + 1).take(stats.end - stats.start));
    }
    write_lines(
        &dir.join("rmse_per_step.csv"),
        "t,period,rmse",
        result
            .rmse
            .iter()
            .enumerate()
            .map(|(t, r)| format!("{t},{},{}", period_of[t], opt(*r))),
    )?;
    let kinds = period_kinds(cfg, result.periods.len());
    write_lines(
        &dir.join("rmse_per_period.csv"),
        "period,kind,start,end,mean_rmse,samples",
        result.periods.iter().enumerate().map(|(p, s)| {
            format!("{},{},{},{},{},{}", p + 1, kinds[p], s.start, s.end, opt(s.mean), s.samples.len())
        }),
    )?;
    for snap in &result.snapshots {
        write_summaries(&dir.join(format!("stepsize_snapshot_{}.csv", snap.step)), &snap.summaries, meta)?;
        if let Some(full) = &snap.full {
            write_lines(
                &dir.join(format!("stepsize_full_{}.csv", snap.step)),
                "gvf,feature,alpha,touched",
                full.iter().enumerate().flat_map(|(g, entries)| {
                    entries
                        .iter()
                        .map(move |e| format!("{g},{},{},{}", e.feature_index, e.alpha, u8::from(e.touched)))
                }),
            )?;
        }
    }
    write_summaries(&dir.join("stepsize_summary.csv"), &result.final_step_sizes, meta)?;
    let t = &result.timing;
    write_lines(
        &dir.join("timing.csv"),
        "steps,encode_s_per_frame,update_s_per_step,step_s_mean,update_s_max,memory_bytes_per_gvf",
        [format!(
            "{},{},{},{},{},{}",
            t.steps,
            t.encode_s_per_frame,
            t.update_s_per_step,
            t.step_s_mean(),
            t.update_s_max,
            t.memory_bytes_per_gvf
        )],
    )
}

/// Aggregate over seeds: per-period means of means and accumulated RMSE.
pub fn write_aggregate(out: &Path, cfg: &ExperimentConfig, results: &[TrialResult]) -> Result<()> {
    let runs: Vec<Vec<PeriodStats>> = results.iter().map(|r| r.periods.clone()).collect();
    let means = evaluation::mean_of_period_means(&runs)?;
    let kinds = period_kinds(cfg, means.len());
    write_lines(
        &out.join("aggregate_periods.csv"),
        "period,kind,mean_rmse,seeds",
        means
            .iter()
            .enumerate()
            .map(|(p, m)| format!("{},{},{},{}", p + 1, kinds[p], opt(*m), results.len())),
    )?;
    let mean_acc = results.iter().map(|r| r.accumulated_rmse).sum::<f64>() / results.len() as f64;
    write_lines(
        &out.join("accumulated_rmse.csv"),
        "seed,accumulated_rmse",
        results
            .iter()
            .map(|r| format!("{},{}", r.seed, r.accumulated_rmse))
            .chain([format!("mean,{mean_acc}")]),
    )
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

pub fn write_effective_config(out: &Path, cfg: &ExperimentConfig) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("effective_config.toml");
    std::fs::write(&path, cfg.effective().to_toml()?).map_err(|e| Error::io(&path, e))
}

/// Runs every seed of `cfg`, writing reports under `out`. `progress` is
/// called after each trial.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    parallel: bool,
    mut progress: impl FnMut(&TrialResult),
) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    write_effective_config(out, cfg)?;
    let (meta, base) = load_base_stream(cfg)?;
    let mut results = Vec::with_capacity(cfg.seeds.len());
    for (i, &seed) in cfg.seeds.iter().enumerate() {
        let options = TrialOptions {
            snapshot_steps: cfg.snapshot_steps(base.len().saturating_sub(1)),
            full_snapshots: cfg.full_snapshots && i == 0,
            parallel,
        };
        let result = run_single(cfg, &meta, &base, seed, &options)?;
        write_trial_reports(&seed_dir(out, seed), cfg, &meta, &result)?;
        progress(&result);
        results.push(result);
    }
    write_aggregate(out, cfg, &results)?;
    Ok(results)
}

type CacheEntry = (Vec<Arc<dyn Encoder>>, Arc<Vec<Encoded>>, Arc<Dataset>);
type EncodingCache = Mutex<Option<((usize, u64, u64), CacheEntry)>>;

/// Runs the configured sweep, appending to `out/sweep_results.csv` and
/// skipping rows already present. Returns the newly computed rows.
pub fn run_sweep_experiment(cfg: &ExperimentConfig, out: &Path, parallel: bool) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let plan = cfg.sweep_plan()?;
    write_effective_config(out, cfg)?;
    let (meta, base) = load_base_stream(cfg)?;
    let path = out.join("sweep_results.csv");
    let done: HashSet<String> = evaluation::read_sweep_keys(&path)?;
    let periods = cfg.periods().len();
    let cache: EncodingCache = Mutex::new(None);
    let shared = cfg.coder.sharing == PrototypeSharing::Shared;

    let writer = Mutex::new(());

    let run_cell = |cell: &SweepCell, seed: u64| -> Result<CellOutcome> {
        let mut c = cfg.clone();
        c.coder.prototype_count = cell.prototype_count;
        c.coder.active_ratio = cell.active_ratio;
        c.learner.kind = cell.method;
        c.learner.step_size = Some(cell.step_size);
        c.learner.step_size_overrides = None;
        c.learner.meta_step_size = cell.meta_step_size;
        let options = TrialOptions::default();
        let result = if shared {
            let key = (cell.prototype_count, cell.active_ratio.to_bits(), seed);
            let cached = {
                let guard = cache.lock().expect("cache lock");
                guard.as_ref().filter(|(k, _)| *k == key).map(|(_, entry)| entry.clone())
            };
            let (encoders, encoded, data) = match cached {
                Some(hit) => hit,
                None => {
                    let data = Arc::new(trial_dataset(&c, &meta, &base, seed)?);
                    let gvfs = gvf_channels(&c, data.dimension())?.len();
                    let encoders = trial_encoders(&c, data.dimension(), gvfs, seed)?;
                    let encoded = Arc::new(pre_encode(&encoders, &data.observations)?);
                    let entry = (encoders, encoded, data);
                    *cache.lock().expect("cache lock") = Some((key, entry.clone()));
                    entry
                }
            };
            let returns = trial_returns(&c, &data)?;
            run_trial(&c, &data, &returns, encoders, Some((&encoded, 0.0)), seed, &options)?
        } else {
            run_single(&c, &meta, &base, seed, &options)?
        };
        Ok(CellOutcome::Completed {
            accumulated_rmse: result.accumulated_rmse,
            period_means: result.periods.iter().map(|p| p.mean).collect(),
        })
    };
    // Each row is appended as soon as it is known, so an interrupted sweep
    // resumes where it stopped.
    let run = |cell: &SweepCell, seed: u64| -> Result<CellOutcome> {
        let outcome = match run_cell(cell, seed) {
            Err(e) if e.is_divergence() => CellOutcome::Diverged,
            other => other?,
        };
        let row = SweepRow {
            cell: *cell,
            seed,
            outcome: outcome.clone(),
        };
        let _guard = writer.lock().expect("writer lock");
        evaluation::append_sweep_rows(&path, std::slice::from_ref(&row), periods)?;
        Ok(outcome)
    };
    evaluation::run_sweep(&plan, &done, parallel, run)
}
