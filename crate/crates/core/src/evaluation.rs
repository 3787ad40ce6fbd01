//! Offline returns, normalized RMSE, per-period aggregation and parameter
//! sweeps.

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError};
use crate::horde::LearnerKind;

/// Returns with `|G|` below this are left out of the RMSE.
pub const RETURN_EPSILON: f64 = 1e-8;

/// Number of trailing steps whose returns are biased by the end of the
/// stream: `⌈ln 0.01 / ln γ⌉`, at least one (the last return is always
/// zero-padded).
pub fn horizon_cut(discount: f64) -> usize {
    if discount <= 0.0 {
        return 1;
    }
    ((0.01f64).ln() / discount.ln()).ceil().max(1.0) as usize
}

/// `G_t = C_{t+1} + γ·G_{t+1}` with `G_{T−1} = 0`, full length `T`.
pub fn discounted_returns(cumulants: &[f64], discount: f64) -> Vec<f64> {
    let t_len = cumulants.len();
    let mut g = vec![0.0; t_len];
    for t in (0..t_len.saturating_sub(1)).rev() {
        g[t] = cumulants[t + 1] + discount * g[t + 1];
    }
    g
}

/// Per-GVF returns restricted to the steps unaffected by truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnSeries {
    /// `returns[i][t]` for GVF `i`, `t < len()`.
    pub returns: Vec<Vec<f64>>,
    pub horizon_cut: usize,
    len: usize,
}

impl ReturnSeries {
    /// Number of evaluated steps, `T − horizon_cut`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Returns of all GVFs at step `t`.
    pub fn at(&self, t: usize) -> Vec<f64> {
        self.returns.iter().map(|g| g[t]).collect()
    }
}

/// Returns for every GVF from its cumulant series `cumulants[i][t]`.
pub fn compute_returns(cumulants: &[Vec<f64>], discount: f64) -> Result<ReturnSeries, EvalError> {
    let Some(first) = cumulants.first() else {
        return Err(EvalError::Empty("no cumulant series"));
    };
    let t_len = first.len();
    if t_len == 0 {
        return Err(EvalError::Empty("empty stream"));
    }
    if let Some(bad) = cumulants.iter().find(|c| c.len() != t_len) {
        return Err(EvalError::Shape(format!(
            "cumulant series of length {} and {t_len}",
            bad.len()
        )));
    }
    let cut = horizon_cut(discount);
    let len = t_len.saturating_sub(cut);
    let returns = cumulants
        .iter()
        .map(|c| {
            let mut g = discounted_returns(c, discount);
            g.truncate(len);
            g
        })
        .collect();
    Ok(ReturnSeries {
        returns,
        horizon_cut: cut,
        len,
    })
}

/// Normalized RMSE over predictors at one step:
/// `sqrt(mean_i ((G_i − V_i)/|G_i|)²)` over `|G_i| ≥ 1e-8`. `None` when no
/// predictor qualifies.
pub fn rmse_step(values: &[f64], returns: &[f64]) -> Result<Option<f64>, EvalError> {
    if values.len() != returns.len() {
        return Err(EvalError::Shape(format!(
            "{} predictions for {} returns",
            values.len(),
            returns.len()
        )));
    }
    if values.is_empty() {
        return Err(EvalError::Empty("no predictors"));
    }
    let (mut sum, mut count) = (0.0, 0usize);
    for (&v, &g) in values.iter().zip(returns) {
        if g.abs() >= RETURN_EPSILON {
            let e = (g - v) / g.abs();
            sum += e * e;
            count += 1;
        }
    }
    Ok((count > 0).then(|| (sum / count as f64).sqrt()))
}

/// Sum of the present entries.
pub fn accumulated_rmse(series: &[Option<f64>]) -> f64 {
    series.iter().flatten().fold(0.0, |acc, v| acc + v)
}

/// Mean and samples of the RMSE within one period.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodStats {
    pub start: usize,
    pub end: usize,
    pub mean: Option<f64>,
    pub samples: Vec<f64>,
}

/// Splits `series` into consecutive periods of the given lengths. The
/// periods may extend past the end of the series (its truncated tail) but
/// every period must start inside it and together they must cover it.
pub fn aggregate_periods(series: &[Option<f64>], lengths: &[usize]) -> Result<Vec<PeriodStats>, EvalError> {
    if lengths.is_empty() {
        return Err(EvalError::Empty("no periods"));
    }
    let total: usize = lengths.iter().sum();
    if total < series.len() {
        return Err(EvalError::Shape(format!(
            "periods cover {total} steps of a {}-step series",
            series.len()
        )));
    }
    let mut start = 0;
    let mut out = Vec::with_capacity(lengths.len());
    for &len in lengths {
        if start >= series.len() {
            return Err(EvalError::BoundaryOverflow {
                end: start,
                len: series.len(),
            });
        }
        let end = (start + len).min(series.len());
        let samples: Vec<f64> = series[start..end].iter().flatten().copied().collect();
        let mean = (!samples.is_empty()).then(|| samples.iter().sum::<f64>() / samples.len() as f64);
        out.push(PeriodStats {
            start,
            end,
            mean,
            samples,
        });
        start += len;
    }
    Ok(out)
}

/// Averages per-period means across runs; a period missing in one run is
/// averaged over the runs that have it.
pub fn mean_of_period_means(runs: &[Vec<PeriodStats>]) -> Result<Vec<Option<f64>>, EvalError> {
    let Some(first) = runs.first() else {
        return Err(EvalError::Empty("no runs"));
    };
    let periods = first.len();
    if runs.iter().any(|r| r.len() != periods) {
        return Err(EvalError::Shape("runs with different period counts".into()));
    }
    Ok((0..periods)
        .map(|p| {
            let means: Vec<f64> = runs.iter().filter_map(|r| r[p].mean).collect();
            (!means.is_empty()).then(|| means.iter().sum::<f64>() / means.len() as f64)
        })
        .collect())
}

/// Step-size numerators of the sweep grid: `α = c/(n·η)` for each `c`.
pub const STEP_NUMERATORS: [f64; 11] = [
    0.001, 0.002, 0.004, 0.008, 0.016, 0.032, 0.064, 0.128, 0.256, 0.512, 1.024,
];
pub const PROTOTYPE_COUNTS: [usize; 4] = [10_000, 20_000, 30_000, 40_000];
pub const ACTIVE_RATIOS: [f64; 6] = [0.001, 0.002, 0.004, 0.008, 0.016, 0.032];
pub const META_STEP_SIZES: [f64; 6] = [0.005, 0.01, 0.02, 0.04, 0.08, 0.16];

/// One parameter combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub method: LearnerKind,
    pub prototype_count: usize,
    pub active_ratio: f64,
    /// `α` for classic TD, `α₀` for TIDBD.
    pub step_size: f64,
    /// Meta step size; ignored for classic TD.
    pub meta_step_size: f64,
}

impl SweepCell {
    /// Resume key: method and parameters formatted as written to disk,
    /// plus the seed.
    pub fn key(&self, seed: u64) -> String {
        format!(
            "{},{},{},{},{},{}",
            method_name(self.method),
            self.prototype_count,
            self.active_ratio,
            self.step_size,
            self.theta_field(),
            seed
        )
    }

    fn theta_field(&self) -> String {
        match self.method {
            LearnerKind::ClassicTd => String::new(),
            LearnerKind::Tidbd => self.meta_step_size.to_string(),
        }
    }
}

pub fn method_name(kind: LearnerKind) -> &'static str {
    match kind {
        LearnerKind::ClassicTd => "td",
        LearnerKind::Tidbd => "tidbd",
    }
}

/// A full-factorial grid. For classic TD the step axis is `α`; for TIDBD
/// it is `α₀`, crossed with the meta step sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub method: LearnerKind,
    pub prototype_counts: Vec<usize>,
    pub active_ratios: Vec<f64>,
    /// Step sizes are `numerator / (n·η)`.
    pub step_numerators: Vec<f64>,
    /// Used by TIDBD only.
    pub meta_step_sizes: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl SweepPlan {
    /// The fixed-step TD grid: 4 prototype counts × 6 ratios × 11 step sizes.
    pub fn table_td(seeds: Vec<u64>) -> Self {
        Self {
            method: LearnerKind::ClassicTd,
            prototype_counts: PROTOTYPE_COUNTS.to_vec(),
            active_ratios: ACTIVE_RATIOS.to_vec(),
            step_numerators: STEP_NUMERATORS.to_vec(),
            meta_step_sizes: vec![0.01],
            seeds,
        }
    }

    /// The TIDBD grid: 4 × 6 coder settings at `α₀ = 1/(n·η)`, `θ = 0.01`.
    pub fn table_tidbd(seeds: Vec<u64>) -> Self {
        Self {
            method: LearnerKind::Tidbd,
            step_numerators: vec![1.0],
            ..Self::table_td(seeds)
        }
    }

    /// Step-size sensitivity at one coder setting: 11 initial step sizes,
    /// crossed with the meta step sizes for TIDBD.
    pub fn sensitivity(method: LearnerKind, prototype_count: usize, active_ratio: f64, seeds: Vec<u64>) -> Self {
        Self {
            method,
            prototype_counts: vec![prototype_count],
            active_ratios: vec![active_ratio],
            step_numerators: STEP_NUMERATORS.to_vec(),
            meta_step_sizes: match method {
                LearnerKind::ClassicTd => vec![0.01],
                LearnerKind::Tidbd => META_STEP_SIZES.to_vec(),
            },
            seeds,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        let empty = |name: &str| Err(Error::Config(format!("sweep plan: empty {name} axis")));
        if self.prototype_counts.is_empty() {
            return empty("prototype count");
        }
        if self.active_ratios.is_empty() {
            return empty("active ratio");
        }
        if self.step_numerators.is_empty() {
            return empty("step size");
        }
        if self.method == LearnerKind::Tidbd && self.meta_step_sizes.is_empty() {
            return empty("meta step size");
        }
        if self.seeds.is_empty() {
            return empty("seed");
        }
        Ok(())
    }

    /// All cells in row-major order: prototype count, ratio, meta step
    /// size, step size.
    pub fn cells(&self) -> Vec<SweepCell> {
        let thetas: &[f64] = match self.method {
            LearnerKind::ClassicTd => &[0.0],
            LearnerKind::Tidbd => &self.meta_step_sizes,
        };
        let mut cells = Vec::new();
        for &n in &self.prototype_counts {
            for &eta in &self.active_ratios {
                for &theta in thetas {
                    for &c in &self.step_numerators {
                        cells.push(SweepCell {
                            method: self.method,
                            prototype_count: n,
                            active_ratio: eta,
                            step_size: c / (n as f64 * eta),
                            meta_step_size: theta,
                        });
                    }
                }
            }
        }
        cells
    }
}

/// Outcome of one sweep run.
#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Completed {
        accumulated_rmse: f64,
        period_means: Vec<Option<f64>>,
    },
    Diverged,
}

impl CellOutcome {
    /// Accumulated RMSE with divergence as `+∞`.
    pub fn accumulated_or_inf(&self) -> f64 {
        match self {
            CellOutcome::Completed { accumulated_rmse, .. } => *accumulated_rmse,
            CellOutcome::Diverged => f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub seed: u64,
    pub outcome: CellOutcome,
}

/// Runs every `(cell, seed)` not in `skip` through `run`, ordered by
/// prototype count, active ratio and seed. A run that
/// reports divergence becomes a [`CellOutcome::Diverged`] row; other errors
/// abort the sweep.
pub fn run_sweep<F>(plan: &SweepPlan, skip: &HashSet<String>, parallel: bool, run: F) -> Result<Vec<SweepRow>, Error>
where
    F: Fn(&SweepCell, u64) -> Result<CellOutcome, Error> + Sync,
{
    plan.validate()?;
    let mut jobs: Vec<(SweepCell, u64)> = plan
        .cells()
        .into_iter()
        .flat_map(|cell| plan.seeds.iter().map(move |&seed| (cell, seed)))
        .filter(|(cell, seed)| !skip.contains(&cell.key(*seed)))
        .collect();
    // Runs sharing a coder setting and seed sit next to each other, so a
    // runner can reuse one encoded stream across the step-size axis.
    jobs.sort_by(|(a, sa), (b, sb)| {
        (a.prototype_count, a.active_ratio.to_bits(), sa).cmp(&(b.prototype_count, b.active_ratio.to_bits(), sb))
    });
    let one = |&(cell, seed): &(SweepCell, u64)| -> Result<SweepRow, Error> {
        let outcome = match run(&cell, seed) {
            Ok(o) => o,
            Err(e) if e.is_divergence() => CellOutcome::Diverged,
            Err(e) => return Err(e),
        };
        Ok(SweepRow { cell, seed, outcome })
    };
    if parallel {
        jobs.par_iter().map(one).collect()
    } else {
        jobs.iter().map(one).collect()
    }
}

pub const DIVERGED: &str = "DIVERGED";

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn sweep_header(periods: usize) -> String {
    let mut h = String::from("method,n,eta,alpha0,theta,seed,accumulated_rmse");
    for p in 1..=periods {
        h.push_str(&format!(",period_{p}"));
    }
    h
}

/// Appends rows to a sweep CSV, writing the header when the file is new.
pub fn append_sweep_rows(path: &Path, rows: &[SweepRow], periods: usize) -> Result<(), Error> {
    let fresh = !path.exists() || std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0;
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    if fresh {
        writeln!(w, "{}", sweep_header(periods)).map_err(io)?;
    }
    for row in rows {
        let mut line = row.cell.key(row.seed);
        match &row.outcome {
            CellOutcome::Completed {
                accumulated_rmse,
                period_means,
            } => {
                line.push_str(&format!(",{accumulated_rmse}"));
                for p in 0..periods {
                    line.push(',');
                    line.push_str(&fmt_opt(period_means.get(p).copied().flatten()));
                }
            }
            CellOutcome::Diverged => {
                line.push(',');
                line.push_str(DIVERGED);
                line.push_str(&",".repeat(periods));
            }
        }
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Keys of rows already present in a sweep CSV (empty if the file does not
/// exist).
pub fn read_sweep_keys(path: &Path) -> Result<HashSet<String>, Error> {
    if !path.exists() {
        return Ok(HashSet::new());
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| {
            let fields: Vec<&str> = l.splitn(7, ',').collect();
            (fields.len() == 7).then(|| fields[..6].join(","))
        })
        .collect())
}

/// Parses a sweep CSV written by [`append_sweep_rows`].
pub fn read_sweep_rows(path: &Path) -> Result<Vec<SweepRow>, Error> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
    let bad = |line: u64, what: &str| Error::Report(format!("{}, line {line}: {what}", path.display()));
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 7 {
            return Err(bad(line, "expected at least 7 fields"));
        }
        let num = |i: usize| -> Result<f64, Error> {
            record[i].parse::<f64>().map_err(|_| bad(line, &format!("bad number {:?}", &record[i])))
        };
        let method = match &record[0] {
            "td" => LearnerKind::ClassicTd,
            "tidbd" => LearnerKind::Tidbd,
            other => return Err(bad(line, &format!("unknown method {other:?}"))),
        };
        let cell = SweepCell {
            method,
            prototype_count: record[1].parse().map_err(|_| bad(line, "bad n"))?,
            active_ratio: num(2)?,
            step_size: num(3)?,
            meta_step_size: if record[4].is_empty() { 0.0 } else { num(4)? },
        };
        let seed = record[5].parse().map_err(|_| bad(line, "bad seed"))?;
        let outcome = if &record[6] == DIVERGED {
            CellOutcome::Diverged
        } else {
            let period_means = (7..record.len())
                .map(|i| if record[i].is_empty() { Ok(None) } else { num(i).map(Some) })
                .collect::<Result<_, _>>()?;
            CellOutcome::Completed {
                accumulated_rmse: num(6)?,
                period_means,
            }
        };
        rows.push(SweepRow { cell, seed, outcome });
    }
    Ok(rows)
}

/// Accumulated RMSE against initial step size for one method and setting.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCurve {
    pub method: LearnerKind,
    pub prototype_count: usize,
    pub active_ratio: f64,
    /// `None` for classic TD.
    pub meta_step_size: Option<f64>,
    /// `(step size, mean accumulated RMSE over seeds)`; `+∞` if any seed
    /// diverged.
    pub points: Vec<(f64, f64)>,
    /// `max/min` over the step-size axis, `+∞` with any divergent point.
    pub spread: f64,
}

/// `max/min`, infinite when any value is infinite.
pub fn spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max.is_infinite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Groups rows by method, coder setting and meta step size, then builds
/// one curve per group ordered by step size.
pub fn stepsize_sensitivity(rows: &[SweepRow]) -> Result<Vec<SensitivityCurve>, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::Empty("sweep table"));
    }
    type GroupKey = (u8, usize, u64, u64);
    let mut groups: BTreeMap<GroupKey, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for row in rows {
        let c = &row.cell;
        let theta = match c.method {
            LearnerKind::ClassicTd => None,
            LearnerKind::Tidbd => Some(c.meta_step_size),
        };
        let key = (
            u8::from(c.method == LearnerKind::Tidbd),
            c.prototype_count,
            c.active_ratio.to_bits(),
            theta.map_or(0, f64::to_bits),
        );
        groups
            .entry(key)
            .or_default()
            .entry(c.step_size.to_bits())
            .or_default()
            .push(row.outcome.accumulated_or_inf());
    }
    Ok(groups
        .into_iter()
        .map(|((tidbd, n, eta, theta), by_alpha)| {
            let mut points: Vec<(f64, f64)> = by_alpha
                .into_iter()
                .map(|(alpha, acc)| (f64::from_bits(alpha), acc.iter().sum::<f64>() / acc.len() as f64))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            let values: Vec<f64> = points.iter().map(|p| p.1).collect();
            let method = if tidbd == 1 { LearnerKind::Tidbd } else { LearnerKind::ClassicTd };
            SensitivityCurve {
                method,
                prototype_count: n,
                active_ratio: f64::from_bits(eta),
                meta_step_size: (method == LearnerKind::Tidbd).then(|| f64::from_bits(theta)),
                spread: spread(&values),
                points,
            }
        })
        .collect())
}

/// Writes curves as `method,n,eta,theta,alpha0,mean_accumulated_rmse,spread`
/// rows, one per point.
pub fn write_sensitivity(path: &Path, curves: &[SensitivityCurve]) -> Result<(), Error> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "method,n,eta,theta,alpha0,mean_accumulated_rmse,spread").map_err(io)?;
    for c in curves {
        for &(alpha, acc) in &c.points {
            let acc = if acc.is_finite() { acc.to_string() } else { DIVERGED.into() };
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                method_name(c.method),
                c.prototype_count,
                c.active_ratio,
                fmt_opt(c.meta_step_size),
                alpha,
                acc,
                c.spread
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
