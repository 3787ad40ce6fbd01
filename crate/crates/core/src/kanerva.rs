//! Selective Kanerva coding.
//!
//! A [`PrototypeSet`] holds `n` points drawn uniformly from the unit cube
//! `[0,1)^d`. Encoding an observation activates the `k = ⌈n·η⌉` prototypes
//! closest to it under squared Euclidean distance, ties going to the lower
//! prototype index, so every feature vector has exactly `k` active entries.
//!
//! Prototypes are sampled from a `ChaCha8Rng` (rand_chacha) seeded with
//! `seed_from_u64(seed)`, row-major: prototype 0 coordinates 0..d, then
//! prototype 1, and so on. Each coordinate is one `f64` draw from rand's
//! standard uniform distribution (53 random mantissa bits).

use std::cmp::Ordering;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::CoderError;
use crate::features::FeatureVector;

/// Anything that maps a normalized observation to a binary feature vector.
pub trait Encoder: Send + Sync {
    /// Logical length of produced feature vectors.
    fn feature_count(&self) -> usize;

    fn encode(&self, observation: &[f64]) -> Result<FeatureVector, CoderError>;

    /// Encodes a sequence of observations; same result as mapping `encode`.
    fn encode_all(&self, observations: &[Vec<f64>]) -> Result<Vec<FeatureVector>, CoderError> {
        observations.iter().map(|o| self.encode(o)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoderConfig {
    /// Observation dimension `d`.
    pub dimension: usize,
    /// Number of prototypes `n`.
    pub prototype_count: usize,
    /// Fraction `η` of prototypes active per query.
    pub active_ratio: f64,
    pub seed: u64,
}

impl CoderConfig {
    pub fn validate(&self) -> Result<(), CoderError> {
        if self.dimension == 0 {
            return Err(CoderError::InvalidConfig("dimension must be >= 1".into()));
        }
        if self.prototype_count == 0 {
            return Err(CoderError::InvalidConfig(
                "prototype_count must be >= 1".into(),
            ));
        }
        if self.prototype_count > u32::MAX as usize {
            return Err(CoderError::InvalidConfig(
                "prototype_count exceeds u32 index range".into(),
            ));
        }
        if !(self.active_ratio > 0.0 && self.active_ratio <= 1.0) {
            return Err(CoderError::InvalidConfig(format!(
                "active_ratio must lie in (0, 1], got {}",
                self.active_ratio
            )));
        }
        Ok(())
    }

    /// `⌈n·η⌉`, clamped to `[1, n]`.
    pub fn active_count(&self) -> usize {
        active_count(self.prototype_count, self.active_ratio)
    }
}

/// `⌈n·η⌉` with a relative slack of 1e-12 so that products like
/// `30000 · 0.032` that are integers in decimal but not in binary do not
/// round up.
pub fn active_count(prototype_count: usize, active_ratio: f64) -> usize {
    let raw = prototype_count as f64 * active_ratio;
    let k = (raw - raw * 1e-12).ceil() as usize;
    k.clamp(1, prototype_count.max(1))
}

/// An immutable set of Kanerva prototypes plus the active count.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeSet {
    dimension: usize,
    active_count: usize,
    /// Row-major `n × d`.
    points: Vec<f64>,
}

impl PrototypeSet {
    /// Samples `n` prototypes uniformly in `[0,1)^d`.
    pub fn build(config: &CoderConfig) -> Result<Self, CoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let len = config.prototype_count * config.dimension;
        let points = (0..len).map(|_| rng.random::<f64>()).collect();
        Ok(Self {
            dimension: config.dimension,
            active_count: config.active_count(),
            points,
        })
    }

    /// Wraps explicit prototype coordinates (row-major, `d` per prototype).
    pub fn from_points(
        points: Vec<f64>,
        dimension: usize,
        active_count: usize,
    ) -> Result<Self, CoderError> {
        if dimension == 0 {
            return Err(CoderError::InvalidConfig("dimension must be >= 1".into()));
        }
        if points.is_empty() || points.len() % dimension != 0 {
            return Err(CoderError::InvalidConfig(format!(
                "{} coordinates do not form whole {dimension}-dimensional prototypes",
                points.len()
            )));
        }
        let n = points.len() / dimension;
        if active_count == 0 || active_count > n {
            return Err(CoderError::InvalidConfig(format!(
                "active count {active_count} not in [1, {n}]"
            )));
        }
        if let Some((index, &value)) = points
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..1.0).contains(*v))
        {
            return Err(CoderError::OutOfRange { index, value });
        }
        Ok(Self {
            dimension,
            active_count,
            points,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn prototype_count(&self) -> usize {
        self.points.len() / self.dimension
    }

    pub fn active_count(&self) -> usize {
        self.active_count
    }

    pub fn prototype(&self, index: usize) -> &[f64] {
        &self.points[index * self.dimension..(index + 1) * self.dimension]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    fn check_observation(&self, observation: &[f64]) -> Result<(), CoderError> {
        if observation.len() != self.dimension {
            return Err(CoderError::DimensionMismatch {
                expected: self.dimension,
                got: observation.len(),
            });
        }
        if let Some((index, &value)) = observation
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..1.0).contains(*v))
        {
            return Err(CoderError::OutOfRange { index, value });
        }
        Ok(())
    }

    /// Squared distances from `observation` to every prototype.
    pub fn distances(&self, observation: &[f64]) -> Result<Vec<f64>, CoderError> {
        self.check_observation(observation)?;
        let mut out = vec![0.0; self.prototype_count()];
        fill_distances(&self.points, observation, &mut out);
        Ok(out)
    }

    /// Indices of the `k` nearest prototypes, sorted ascending.
    pub fn encode(&self, observation: &[f64]) -> Result<FeatureVector, CoderError> {
        let distances = self.distances(observation)?;
        Ok(FeatureVector::from_sorted_unchecked(
            nearest(&distances, self.active_count),
            self.prototype_count(),
        ))
    }

    /// Encodes many observations; identical to calling [`encode`] on each,
    /// but sweeps the prototype table once per pair of queries.
    ///
    /// [`encode`]: PrototypeSet::encode
    pub fn encode_batch<O: AsRef<[f64]>>(
        &self,
        observations: &[O],
    ) -> Result<Vec<FeatureVector>, CoderError> {
        for obs in observations {
            self.check_observation(obs.as_ref())?;
        }
        let n = self.prototype_count();
        let mut encoded = Vec::with_capacity(observations.len());
        let mut dx = vec![0.0; n];
        let mut dy = vec![0.0; n];
        let mut chunks = observations.chunks_exact(2);
        for pair in &mut chunks {
            fill_distances_pair(&self.points, pair[0].as_ref(), pair[1].as_ref(), &mut dx, &mut dy);
            for d in [&dx, &dy] {
                encoded.push(FeatureVector::from_sorted_unchecked(nearest(d, self.active_count), n));
            }
        }
        for obs in chunks.remainder() {
            fill_distances(&self.points, obs.as_ref(), &mut dx);
            encoded.push(FeatureVector::from_sorted_unchecked(nearest(&dx, self.active_count), n));
        }
        Ok(encoded)
    }

    /// Writes raw little-endian `f64` rows (`n × d`, no header).
    pub fn save_binary(&self, path: &Path) -> Result<(), CoderError> {
        let file = File::create(path).map_err(|e| persist_err(path, e))?;
        let mut out = BufWriter::new(file);
        for v in &self.points {
            out.write_all(&v.to_le_bytes())
                .map_err(|e| persist_err(path, e))?;
        }
        out.flush().map_err(|e| persist_err(path, e))
    }

    pub fn load_binary(
        path: &Path,
        dimension: usize,
        active_count: usize,
    ) -> Result<Self, CoderError> {
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| persist_err(path, e))?;
        if bytes.len() % 8 != 0 {
            return Err(CoderError::Persist(format!(
                "{}: length {} is not a multiple of 8",
                path.display(),
                bytes.len()
            )));
        }
        let points = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_points(points, dimension, active_count)
    }

    /// Writes one prototype per line, coordinates comma-separated.
    pub fn save_csv(&self, path: &Path) -> Result<(), CoderError> {
        let file = File::create(path).map_err(|e| persist_err(path, e))?;
        let mut out = BufWriter::new(file);
        for row in self.points.chunks_exact(self.dimension) {
            let line = row
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(out, "{line}").map_err(|e| persist_err(path, e))?;
        }
        out.flush().map_err(|e| persist_err(path, e))
    }

    pub fn load_csv(path: &Path, active_count: usize) -> Result<Self, CoderError> {
        let file = File::open(path).map_err(|e| persist_err(path, e))?;
        let mut points = Vec::new();
        let mut dimension = None;
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| persist_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|cell| cell.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| {
                    CoderError::Persist(format!("{}:{}: {e}", path.display(), line_no + 1))
                })?;
            match dimension {
                None => dimension = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(CoderError::Persist(format!(
                        "{}:{}: expected {d} columns, found {}",
                        path.display(),
                        line_no + 1,
                        row.len()
                    )))
                }
                _ => {}
            }
            points.extend(row);
        }
        let dimension = dimension
            .ok_or_else(|| CoderError::Persist(format!("{}: empty file", path.display())))?;
        Self::from_points(points, dimension, active_count)
    }
}

impl Encoder for PrototypeSet {
    fn feature_count(&self) -> usize {
        self.prototype_count()
    }

    fn encode(&self, observation: &[f64]) -> Result<FeatureVector, CoderError> {
        PrototypeSet::encode(self, observation)
    }

    fn encode_all(&self, observations: &[Vec<f64>]) -> Result<Vec<FeatureVector>, CoderError> {
        self.encode_batch(observations)
    }
}

fn persist_err(path: &Path, e: std::io::Error) -> CoderError {
    CoderError::Persist(format!("{}: {e}", path.display()))
}

const LANES: usize = 8;

/// Squared Euclidean distance with eight interleaved accumulators, lane `l`
/// summing coordinates `j ≡ l (mod 8)`, followed by a sequential tail. The
/// vectorized kernels below reproduce this order exactly, so results are
/// identical on every target.
#[inline(always)]
fn squared_distance(p: &[f64], x: &[f64]) -> f64 {
    let mut acc = [0.0f64; LANES];
    let body = x.len() - x.len() % LANES;
    for j in (0..body).step_by(LANES) {
        for lane in 0..LANES {
            let d = p[j + lane] - x[j + lane];
            acc[lane] += d * d;
        }
    }
    let mut sum = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for j in body..x.len() {
        let d = p[j] - x[j];
        sum += d * d;
    }
    sum
}

#[cfg(target_arch = "x86_64")]
mod avx2 {
    use std::arch::x86_64::*;

    #[inline(always)]
    unsafe fn reduce(lo: __m256d, hi: __m256d) -> f64 {
        let mut a = [0.0; 4];
        let mut b = [0.0; 4];
        _mm256_storeu_pd(a.as_mut_ptr(), lo);
        _mm256_storeu_pd(b.as_mut_ptr(), hi);
        ((a[0] + a[1]) + (a[2] + a[3])) + ((b[0] + b[1]) + (b[2] + b[3]))
    }

    #[inline(always)]
    unsafe fn tail(p: *const f64, x: *const f64, from: usize, d: usize, mut sum: f64) -> f64 {
        for j in from..d {
            let t = *p.add(j) - *x.add(j);
            sum += t * t;
        }
        sum
    }

    /// Distances from one query to every prototype.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn fill(points: &[f64], x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let body = d - d % 8;
        let xp = x.as_ptr();
        for (i, slot) in out.iter_mut().enumerate() {
            let p = points.as_ptr().add(i * d);
            let (mut a0, mut a1) = (_mm256_setzero_pd(), _mm256_setzero_pd());
            let mut j = 0;
            while j < body {
                let d0 = _mm256_sub_pd(_mm256_loadu_pd(p.add(j)), _mm256_loadu_pd(xp.add(j)));
                let d1 = _mm256_sub_pd(_mm256_loadu_pd(p.add(j + 4)), _mm256_loadu_pd(xp.add(j + 4)));
                a0 = _mm256_add_pd(a0, _mm256_mul_pd(d0, d0));
                a1 = _mm256_add_pd(a1, _mm256_mul_pd(d1, d1));
                j += 8;
            }
            *slot = tail(p, xp, body, d, reduce(a0, a1));
        }
    }

    /// Distances from two queries at once, sharing prototype loads.
    #[target_feature(enable = "avx2")]
    pub(super) unsafe fn fill_pair(
        points: &[f64],
        x: &[f64],
        y: &[f64],
        out_x: &mut [f64],
        out_y: &mut [f64],
    ) {
        let d = x.len();
        let body = d - d % 8;
        let (xp, yp) = (x.as_ptr(), y.as_ptr());
        for i in 0..out_x.len() {
            let p = points.as_ptr().add(i * d);
            let (mut a0, mut a1) = (_mm256_setzero_pd(), _mm256_setzero_pd());
            let (mut b0, mut b1) = (_mm256_setzero_pd(), _mm256_setzero_pd());
            let mut j = 0;
            while j < body {
                let p0 = _mm256_loadu_pd(p.add(j));
                let p1 = _mm256_loadu_pd(p.add(j + 4));
                let dx0 = _mm256_sub_pd(p0, _mm256_loadu_pd(xp.add(j)));
                let dx1 = _mm256_sub_pd(p1, _mm256_loadu_pd(xp.add(j + 4)));
                let dy0 = _mm256_sub_pd(p0, _mm256_loadu_pd(yp.add(j)));
                let dy1 = _mm256_sub_pd(p1, _mm256_loadu_pd(yp.add(j + 4)));
                a0 = _mm256_add_pd(a0, _mm256_mul_pd(dx0, dx0));
                a1 = _mm256_add_pd(a1, _mm256_mul_pd(dx1, dx1));
                b0 = _mm256_add_pd(b0, _mm256_mul_pd(dy0, dy0));
                b1 = _mm256_add_pd(b1, _mm256_mul_pd(dy1, dy1));
                j += 8;
            }
            out_x[i] = tail(p, xp, body, d, reduce(a0, a1));
            out_y[i] = tail(p, yp, body, d, reduce(b0, b1));
        }
    }
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn fill_distances_portable(points: &[f64], x: &[f64], out: &mut [f64]) {
    for (p, slot) in points.chunks_exact(x.len()).zip(out.iter_mut()) {
        *slot = squared_distance(p, x);
    }
}

fn fill_distances(points: &[f64], x: &[f64], out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 support was detected at runtime; slice lengths are
        // consistent (`out.len() * x.len() == points.len()`).
        unsafe { avx2::fill(points, x, out) };
        return;
    }
    fill_distances_portable(points, x, out)
}

fn fill_distances_pair(points: &[f64], x: &[f64], y: &[f64], out_x: &mut [f64], out_y: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: as in `fill_distances`; both queries share the dimension.
        unsafe { avx2::fill_pair(points, x, y, out_x, out_y) };
        return;
    }
    fill_distances_portable(points, x, out_x);
    fill_distances_portable(points, y, out_y);
}

/// Indices of the `k` smallest distances (ties to the lower index), sorted.
pub(crate) fn nearest(distances: &[f64], k: usize) -> Vec<u32> {
    let by_distance = |a: &(f64, u32), b: &(f64, u32)| -> Ordering {
        a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
    };
    let mut ranked: Vec<(f64, u32)> = distances
        .iter()
        .enumerate()
        .map(|(i, &d)| (d, i as u32))
        .collect();
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance);
        ranked.truncate(k);
    }
    let mut active: Vec<u32> = ranked.into_iter().map(|(_, i)| i).collect();
    active.sort_unstable();
    active
}
