//! Sensor streams: CSV ingest, per-channel normalization, a synthetic
//! rest/movement generator, and stuck/broken sensor failure injection.
//!
//! Random draws (synthesis and failure noise) come from `ChaCha8Rng`
//! seeded with `seed_from_u64`, with Gaussian samples from `rand_distr`'s
//! `Normal`. Failure noise is drawn frame by frame, channels in ascending
//! index order within a frame.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::StreamError;

/// Upper clamp of normalized values: the unit interval is half-open.
pub const NORMALIZED_MAX: f64 = 1.0 - 1e-9;

/// Seconds between frames in the default profile.
pub const STEP_PERIOD_S: f64 = 0.265;

#[derive(Debug, Clone, PartialEq)]
pub struct StreamFrame {
    pub index: usize,
    pub timestamp: f64,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Position,
    Velocity,
    Load,
    Temperature,
    Accel,
    Pressure,
    Other,
}

impl Group {
    pub fn as_str(&self) -> &'static str {
        match self {
            Group::Position => "position",
            Group::Velocity => "velocity",
            Group::Load => "load",
            Group::Temperature => "temperature",
            Group::Accel => "accel",
            Group::Pressure => "pressure",
            Group::Other => "other",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Group {
    type Err = StreamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.trim() {
            "position" => Group::Position,
            "velocity" => Group::Velocity,
            "load" => Group::Load,
            "temperature" => Group::Temperature,
            "accel" => Group::Accel,
            "pressure" => Group::Pressure,
            "other" => Group::Other,
            other => return Err(StreamError::InvalidMeta(format!("unknown group `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMeta {
    pub name: String,
    pub min: f64,
    pub max: f64,
    pub group: Group,
}

impl ChannelMeta {
    pub fn new(name: impl Into<String>, min: f64, max: f64, group: Group) -> Result<Self, StreamError> {
        let name = name.into();
        if !(min.is_finite() && max.is_finite() && min < max) {
            return Err(StreamError::InvalidMeta(format!(
                "channel `{name}`: need finite min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { name, min, max, group })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    /// `clamp((raw − min)/(max − min), 0, 1 − 1e-9)`.
    #[inline]
    pub fn normalize(&self, raw: f64) -> f64 {
        let v = (raw - self.min) / (self.max - self.min);
        if v.is_nan() {
            return 0.0;
        }
        v.clamp(0.0, NORMALIZED_MAX)
    }
}

const JOINTS: [&str; 17] = [
    "shoulder_flexion",
    "shoulder_abduction",
    "humeral_rotation",
    "elbow",
    "wrist_rotation",
    "wrist_deviation",
    "wrist_flexion",
    "index_abduction",
    "index_mcp",
    "middle_mcp",
    "ring_mcp",
    "little_abduction",
    "little_mcp",
    "thumb_cmc_adduction",
    "thumb_cmc",
    "thumb_mcp",
    "thumb_dip",
];

const ELBOW_JOINT: usize = 3;
const JOINT_GROUPS: [(Group, f64, f64); 4] = [
    (Group::Position, -2.0, 2.0),
    (Group::Velocity, -5.0, 5.0),
    (Group::Load, -8.0, 8.0),
    (Group::Temperature, 20.0, 70.0),
];
const ACCEL_CHANNELS: usize = 15;
const PRESSURE_CHANNELS: usize = 25;

/// The default 108-channel arm profile: 17 joints with position, velocity,
/// load and temperature each (channels `4j..4j+4`), then 15 accelerometer
/// and 25 fingertip pressure channels.
pub fn default_channels() -> Vec<ChannelMeta> {
    let mut meta = Vec::with_capacity(108);
    for joint in JOINTS {
        for (group, min, max) in JOINT_GROUPS {
            meta.push(ChannelMeta {
                name: format!("{joint}_{group}"),
                min,
                max,
                group,
            });
        }
    }
    for i in 0..ACCEL_CHANNELS {
        meta.push(ChannelMeta {
            name: format!("accel_{i:02}"),
            min: -20.0,
            max: 20.0,
            group: Group::Accel,
        });
    }
    for i in 0..PRESSURE_CHANNELS {
        meta.push(ChannelMeta {
            name: format!("pressure_{i:02}"),
            min: 0.0,
            max: 5.0,
            group: Group::Pressure,
        });
    }
    meta
}

/// The four elbow channels (position, velocity, load, temperature) of the
/// default profile.
pub fn elbow_channels() -> [usize; 4] {
    let base = 4 * ELBOW_JOINT;
    [base, base + 1, base + 2, base + 3]
}

pub fn normalize(values: &[f64], meta: &[ChannelMeta]) -> Vec<f64> {
    values.iter().zip(meta).map(|(&v, m)| m.normalize(v)).collect()
}

/// Normalizes every frame of a stream.
pub fn normalize_all(frames: &[StreamFrame], meta: &[ChannelMeta]) -> Vec<Vec<f64>> {
    frames.iter().map(|f| normalize(&f.values, meta)).collect()
}

fn io_err(path: &Path, source: std::io::Error) -> StreamError {
    StreamError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, e: csv::Error) -> StreamError {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(source) => io_err(path, source),
            _ => unreachable!(),
        },
        _ => {
            let line = e.position().map(|p| p.line());
            match line {
                Some(line) => StreamError::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: e.to_string(),
                },
                None => StreamError::Csv {
                    path: path.to_path_buf(),
                    message: e.to_string(),
                },
            }
        }
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64, StreamError> {
    cell.trim().parse::<f64>().map_err(|_| StreamError::Parse {
        path: path.to_path_buf(),
        line,
        message: format!("column `{column}`: `{cell}` is not a number"),
    })
}

/// Reads a stream CSV: header `timestamp_s` followed by the channel names
/// of `meta` in order, then one row per frame.
pub fn load_csv(path: &Path, meta: &[ChannelMeta]) -> Result<Vec<StreamFrame>, StreamError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let expected: Vec<&str> = std::iter::once("timestamp_s")
        .chain(meta.iter().map(|m| m.name.as_str()))
        .collect();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != expected {
        let detail = if got.len() != expected.len() {
            format!(
                "{} has {} columns ({} channels), channel metadata lists {} channels",
                path.display(),
                got.len(),
                got.len().saturating_sub(1),
                meta.len()
            )
        } else {
            let (i, (g, e)) = got
                .iter()
                .zip(&expected)
                .enumerate()
                .find(|(_, (g, e))| g != e)
                .expect("headers differ");
            format!("{}: column {i} is `{g}`, expected `{e}`", path.display())
        };
        return Err(StreamError::HeaderMismatch(detail));
    }

    let mut frames = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != expected.len() {
            return Err(StreamError::Parse {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", expected.len(), record.len()),
            });
        }
        let timestamp = parse_cell(path, line, "timestamp_s", &record[0])?;
        let values = record
            .iter()
            .skip(1)
            .zip(meta)
            .map(|(cell, m)| parse_cell(path, line, &m.name, cell))
            .collect::<Result<Vec<_>, _>>()?;
        frames.push(StreamFrame {
            index: frames.len(),
            timestamp,
            values,
        });
    }
    Ok(frames)
}

/// Writes frames in the format read by [`load_csv`]. Numbers use Rust's
/// shortest round-trip formatting, so reloading is lossless.
pub fn write_csv(path: &Path, frames: &[StreamFrame], meta: &[ChannelMeta]) -> Result<(), StreamError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = std::iter::once("timestamp_s").chain(meta.iter().map(|m| m.name.as_str()));
    writer.write_record(header).map_err(|e| csv_err(path, e))?;
    let mut row = Vec::with_capacity(meta.len() + 1);
    for frame in frames {
        if frame.values.len() != meta.len() {
            return Err(StreamError::InvalidStream(format!(
                "frame {} has {} values for {} channels",
                frame.index,
                frame.values.len(),
                meta.len()
            )));
        }
        row.clear();
        row.push(frame.timestamp.to_string());
        row.extend(frame.values.iter().map(f64::to_string));
        writer.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Deserialize, Serialize)]
struct MetaRow {
    name: String,
    min: f64,
    max: f64,
    group: String,
}

/// Reads channel metadata (`name,min,max,group`).
pub fn load_meta(path: &Path) -> Result<Vec<ChannelMeta>, StreamError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let mut meta = Vec::new();
    for row in reader.deserialize::<MetaRow>() {
        let row = row.map_err(|e| csv_err(path, e))?;
        meta.push(ChannelMeta::new(row.name, row.min, row.max, row.group.parse()?)?);
    }
    if meta.is_empty() {
        return Err(StreamError::InvalidMeta(format!("{}: no channels", path.display())));
    }
    Ok(meta)
}

pub fn write_meta(path: &Path, meta: &[ChannelMeta]) -> Result<(), StreamError> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for m in meta {
        writer
            .serialize(MetaRow {
                name: m.name.clone(),
                min: m.min,
                max: m.max,
                group: m.group.to_string(),
            })
            .map_err(|e| csv_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Rest,
    Movement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub steps: usize,
}

/// Parameters of the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthProfile {
    pub schedule: Vec<Phase>,
    pub step_period_s: f64,
    /// Rest-phase noise standard deviation as a fraction of channel range.
    pub rest_noise: f64,
    /// Length of the repeating movement pattern.
    pub pattern_period_s: f64,
    /// Let one load channel drift during the third rest phase.
    pub load_drift: bool,
}

impl Default for SynthProfile {
    fn default() -> Self {
        Self {
            schedule: default_schedule(),
            step_period_s: STEP_PERIOD_S,
            rest_noise: 1e-3,
            pattern_period_s: 100.0,
            load_drift: true,
        }
    }
}

/// Rest and movement alternating three times, five minutes each.
pub fn default_schedule() -> Vec<Phase> {
    let steps = (300.0 / STEP_PERIOD_S).round() as usize;
    [PhaseKind::Rest, PhaseKind::Movement]
        .into_iter()
        .cycle()
        .take(6)
        .map(|kind| Phase { kind, steps })
        .collect()
}

impl SynthProfile {
    pub fn total_steps(&self) -> usize {
        self.schedule.iter().map(|p| p.steps).sum()
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.schedule.is_empty() || self.total_steps() == 0 {
            return Err(StreamError::InvalidStream("empty schedule".into()));
        }
        if !(self.step_period_s > 0.0 && self.pattern_period_s > 0.0) {
            return Err(StreamError::InvalidStream(
                "step and pattern periods must be positive".into(),
            ));
        }
        if !(self.rest_noise >= 0.0 && self.rest_noise.is_finite()) {
            return Err(StreamError::InvalidStream(format!(
                "rest noise must be non-negative, got {}",
                self.rest_noise
            )));
        }
        Ok(())
    }
}

/// Per-channel shape drawn once per stream.
struct ChannelShape {
    /// Rest level in normalized units.
    rest: f64,
    /// Mean level while moving.
    center: f64,
    /// `(harmonic, amplitude, phase)` in normalized units.
    waves: Vec<(f64, f64, f64)>,
}

fn draw_shape(rng: &mut ChaCha8Rng, group: Group) -> ChannelShape {
    let rest = rng.random_range(0.35..0.65);
    let center = rest + rng.random_range(-0.05..0.05);
    let count = rng.random_range(2..=3);
    let mut harmonics = [1.0, 2.0, 3.0, 4.0];
    for i in (1..harmonics.len()).rev() {
        harmonics.swap(i, rng.random_range(0..=i));
    }
    let scale = match group {
        Group::Temperature => 0.0,
        _ => 0.25,
    };
    let waves = harmonics[..count]
        .iter()
        .map(|&h| (h, scale * rng.random_range(0.3..1.0) / count as f64, rng.random_range(0.0..2.0 * PI)))
        .collect();
    ChannelShape { rest, center, waves }
}

/// Generates a rest/movement stream over `meta` (values in raw units).
///
/// Rest phases hold each channel at its rest level plus Gaussian noise;
/// movement phases play a per-channel sum of two or three sinusoids whose
/// frequencies are harmonics of the pattern period. Temperature channels
/// rise monotonically throughout, three times faster while moving. With
/// `load_drift`, the first load channel drifts linearly during the third
/// rest phase and keeps the offset afterwards.
pub fn synthesize(profile: &SynthProfile, meta: &[ChannelMeta], seed: u64) -> Result<Vec<StreamFrame>, StreamError> {
    profile.validate()?;
    if meta.is_empty() {
        return Err(StreamError::InvalidMeta("no channels".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes: Vec<ChannelShape> = meta.iter().map(|m| draw_shape(&mut rng, m.group)).collect();
    let drift_channel = meta.iter().position(|m| m.group == Group::Load);
    let third_rest = profile
        .schedule
        .iter()
        .enumerate()
        .filter(|(_, p)| p.kind == PhaseKind::Rest)
        .nth(2)
        .map(|(i, _)| i);
    let drift_total = 0.2;

    // Temperature heats by 0.3 of its range over a default-length run.
    let rest_heat = 0.3 / (2.0 * profile.total_steps() as f64);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");

    let mut frames = Vec::with_capacity(profile.total_steps());
    let mut heat = 0.0;
    let mut drift = 0.0;
    for (phase_index, phase) in profile.schedule.iter().enumerate() {
        for step in 0..phase.steps {
            let index = frames.len();
            let time = index as f64 * profile.step_period_s;
            let moving = phase.kind == PhaseKind::Movement;
            heat += if moving { 3.0 * rest_heat } else { rest_heat };
            if profile.load_drift && Some(phase_index) == third_rest {
                drift = drift_total * (step + 1) as f64 / phase.steps as f64;
            }
            let omega = 2.0 * PI * time / profile.pattern_period_s;
            let values = meta
                .iter()
                .zip(&shapes)
                .enumerate()
                .map(|(c, (m, shape))| {
                    let mut v = if m.group == Group::Temperature {
                        0.2 + heat
                    } else if moving {
                        shape.center
                            + shape
                                .waves
                                .iter()
                                .map(|&(h, a, phi)| a * (h * omega + phi).sin())
                                .sum::<f64>()
                    } else {
                        shape.rest
                    };
                    if Some(c) == drift_channel {
                        v += drift;
                    }
                    if !moving && profile.rest_noise > 0.0 {
                        v += profile.rest_noise * noise.sample(&mut rng);
                    }
                    m.min + v.clamp(0.0, NORMALIZED_MAX) * m.range()
                })
                .collect();
            frames.push(StreamFrame {
                index,
                timestamp: time,
                values,
            });
        }
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Stuck,
    Broken,
}

impl FailureKind {
    /// `(mean, std)` of the replacement noise.
    pub fn default_noise(&self) -> (f64, f64) {
        match self {
            FailureKind::Stuck => (1.0, 0.5),
            FailureKind::Broken => (0.0, 10.0),
        }
    }
}

/// Replace `channels` with Gaussian noise for the whole stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSpec {
    pub kind: FailureKind,
    pub channels: Vec<usize>,
    pub mean: f64,
    pub std: f64,
    pub seed: u64,
}

impl FailureSpec {
    pub fn new(kind: FailureKind, channels: Vec<usize>, seed: u64) -> Self {
        let (mean, std) = kind.default_noise();
        Self {
            kind,
            channels,
            mean,
            std,
            seed,
        }
    }

    pub fn stuck(channels: Vec<usize>, seed: u64) -> Self {
        Self::new(FailureKind::Stuck, channels, seed)
    }

    pub fn broken(channels: Vec<usize>, seed: u64) -> Self {
        Self::new(FailureKind::Broken, channels, seed)
    }

    pub fn validate(&self, channel_count: usize) -> Result<(), StreamError> {
        if self.channels.is_empty() {
            return Err(StreamError::InvalidFailure("no channels".into()));
        }
        if let Some(&c) = self.channels.iter().find(|&&c| c >= channel_count) {
            return Err(StreamError::InvalidFailure(format!(
                "channel {c} out of range for {channel_count} channels"
            )));
        }
        if !(self.std >= 0.0 && self.std.is_finite() && self.mean.is_finite()) {
            return Err(StreamError::InvalidFailure(format!(
                "need finite mean and non-negative std, got N({}, {})",
                self.mean, self.std
            )));
        }
        Ok(())
    }
}

/// Replaces the configured channels of every frame with independent
/// Gaussian draws. Other channels are left untouched.
pub fn inject_failure(frames: &mut [StreamFrame], spec: &FailureSpec) -> Result<(), StreamError> {
    let d = frames.first().map_or(0, |f| f.values.len());
    spec.validate(d)?;
    let mut channels = spec.channels.clone();
    channels.sort_unstable();
    channels.dedup();
    let normal = Normal::new(spec.mean, spec.std)
        .map_err(|e| StreamError::InvalidFailure(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for frame in frames {
        if frame.values.len() != d {
            return Err(StreamError::InvalidStream(format!(
                "frame {} has {} values, expected {d}",
                frame.index,
                frame.values.len()
            )));
        }
        for &c in &channels {
            frame.values[c] = normal.sample(&mut rng);
        }
    }
    Ok(())
}
