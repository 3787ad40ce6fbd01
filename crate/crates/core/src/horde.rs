//! A horde: many GVF learners sharing one state representation.
//!
//! Each GVF predicts the discounted sum of one channel (its cumulant). All
//! learners step on the same encoded transition; the horde encodes each
//! frame once per step and caches the encoding of `frame_next` so that the
//! following step reuses it as its `frame_t`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{HordeError, LearnerError};
use crate::features::{FeaturePair, FeatureVector};
use crate::kanerva::Encoder;
use crate::td::{TdConfig, TdLearner};
use crate::tidbd::{StepSizeEntry, TidbdConfig, TidbdLearner};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    ClassicTd,
    Tidbd,
}

/// Whether every GVF sees the same prototype set or each has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrototypeSharing {
    #[default]
    Shared,
    PerGvf,
}

/// Learner settings shared by every GVF built from a template. `step_size`
/// is the fixed `α` for classic TD and the initial `α₀` for TIDBD.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvfTemplate {
    pub kind: LearnerKind,
    pub discount: f64,
    pub trace_decay: f64,
    pub step_size: f64,
    pub meta_step_size: f64,
    pub decay_time: f64,
    pub xi_consistent_form: bool,
    pub trace_cutoff: f64,
}

impl GvfTemplate {
    pub fn td(step_size: f64, discount: f64, trace_decay: f64) -> Self {
        Self {
            kind: LearnerKind::ClassicTd,
            discount,
            trace_decay,
            step_size,
            meta_step_size: 0.01,
            decay_time: 1e4,
            xi_consistent_form: false,
            trace_cutoff: 0.0,
        }
    }

    pub fn tidbd(initial_step_size: f64, meta_step_size: f64, discount: f64, trace_decay: f64) -> Self {
        Self {
            kind: LearnerKind::Tidbd,
            meta_step_size,
            ..Self::td(initial_step_size, discount, trace_decay)
        }
    }

    pub fn with_trace_cutoff(mut self, cutoff: f64) -> Self {
        self.trace_cutoff = cutoff;
        self
    }

    /// Learner configuration for `n` features with the given step size.
    pub fn learner_config(&self, step_size: f64, feature_count: usize) -> LearnerConfig {
        match self.kind {
            LearnerKind::ClassicTd => LearnerConfig::Td(TdConfig {
                step_size,
                discount: self.discount,
                trace_decay: self.trace_decay,
                feature_count,
                trace_cutoff: self.trace_cutoff,
            }),
            LearnerKind::Tidbd => LearnerConfig::Tidbd(TidbdConfig {
                meta_step_size: self.meta_step_size,
                decay_time: self.decay_time,
                initial_step_size: step_size,
                discount: self.discount,
                trace_decay: self.trace_decay,
                feature_count,
                xi_consistent_form: self.xi_consistent_form,
                trace_cutoff: self.trace_cutoff,
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LearnerConfig {
    Td(TdConfig),
    Tidbd(TidbdConfig),
}

impl LearnerConfig {
    pub fn feature_count(&self) -> usize {
        match self {
            Self::Td(c) => c.feature_count,
            Self::Tidbd(c) => c.feature_count,
        }
    }
}

/// One predictive question.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GvfSpec {
    pub cumulant_channel: usize,
    pub learner: LearnerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    Td(TdLearner),
    Tidbd(TidbdLearner),
}

impl Learner {
    pub fn new(config: LearnerConfig) -> Result<Self, LearnerError> {
        Ok(match config {
            LearnerConfig::Td(c) => Self::Td(TdLearner::new(c)?),
            LearnerConfig::Tidbd(c) => Self::Tidbd(TidbdLearner::new(c)?),
        })
    }

    pub fn weights(&self) -> Vec<f64> {
        match self {
            Self::Td(l) => l.weights(),
            Self::Tidbd(l) => l.weights(),
        }
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        match self {
            Self::Td(l) => l.predict(x),
            Self::Tidbd(l) => l.predict(x),
        }
    }

    /// Prediction on `x_t` before the update, then one learning step.
    pub fn step(&mut self, pair: &FeaturePair<'_>, cumulant: f64) -> Result<GvfOutput, LearnerError> {
        let prediction = self.predict(pair.current())?;
        let delta = match self {
            Self::Td(l) => l.update_pair(pair, cumulant)?,
            Self::Tidbd(l) => l.update_pair(pair, cumulant)?.delta,
        };
        Ok(GvfOutput { prediction, delta })
    }

    pub fn as_tidbd(&self) -> Option<&TidbdLearner> {
        match self {
            Self::Tidbd(l) => Some(l),
            Self::Td(_) => None,
        }
    }

    /// Per-feature step sizes: `n` copies of `α` for classic TD.
    pub fn step_sizes(&self) -> Vec<f64> {
        match self {
            Self::Td(l) => vec![l.config().step_size; l.config().feature_count],
            Self::Tidbd(l) => l.step_sizes(),
        }
    }

    pub fn step_size_snapshot(&self) -> Option<Vec<StepSizeEntry>> {
        self.as_tidbd().map(TidbdLearner::step_size_snapshot)
    }

    pub fn memory_bytes(&self) -> usize {
        match self {
            Self::Td(l) => l.memory_bytes(),
            Self::Tidbd(l) => l.memory_bytes(),
        }
    }
}

/// Prediction `V_t` made before the update, and the TD error of the update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GvfOutput {
    pub prediction: f64,
    pub delta: f64,
}

/// Encodings of one frame, one per distinct encoder in the horde.
pub type Encoded = Vec<FeatureVector>;

pub struct Horde {
    specs: Vec<GvfSpec>,
    learners: Vec<Learner>,
    encoders: Vec<Arc<dyn Encoder>>,
    parallel: bool,
    cache: Option<(Vec<f64>, Encoded)>,
    outputs: Vec<GvfOutput>,
}

impl std::fmt::Debug for Horde {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Horde")
            .field("gvfs", &self.specs.len())
            .field("encoders", &self.encoders.len())
            .field("parallel", &self.parallel)
            .finish()
    }
}

impl Horde {
    /// `encoders` holds either one shared encoder or one per spec.
    pub fn new(specs: Vec<GvfSpec>, encoders: Vec<Arc<dyn Encoder>>) -> Result<Self, HordeError> {
        if specs.is_empty() {
            return Err(HordeError::InvalidConfig("a horde needs at least one GVF".into()));
        }
        if encoders.len() != 1 && encoders.len() != specs.len() {
            return Err(HordeError::InvalidConfig(format!(
                "expected 1 or {} encoders, got {}",
                specs.len(),
                encoders.len()
            )));
        }
        let mut learners = Vec::with_capacity(specs.len());
        for (gvf, spec) in specs.iter().enumerate() {
            let n = encoders[gvf % encoders.len()].feature_count();
            if spec.learner.feature_count() != n {
                return Err(HordeError::InvalidConfig(format!(
                    "GVF {gvf} expects {} features, its encoder produces {n}",
                    spec.learner.feature_count()
                )));
            }
            learners.push(Learner::new(spec.learner).map_err(|source| HordeError::Learner { gvf, source })?);
        }
        Ok(Self {
            outputs: vec![GvfOutput::default(); specs.len()],
            specs,
            learners,
            encoders,
            parallel: false,
            cache: None,
        })
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn specs(&self) -> &[GvfSpec] {
        &self.specs
    }

    pub fn learners(&self) -> &[Learner] {
        &self.learners
    }

    pub fn learner(&self, gvf: usize) -> &Learner {
        &self.learners[gvf]
    }

    pub fn encoders(&self) -> &[Arc<dyn Encoder>] {
        &self.encoders
    }

    pub fn encode(&self, frame: &[f64]) -> Result<Encoded, HordeError> {
        Ok(self
            .encoders
            .iter()
            .map(|e| e.encode(frame))
            .collect::<Result<_, _>>()?)
    }

    /// Encodes a whole stream up front: entry `t` holds the encodings of
    /// frame `t`.
    pub fn encode_stream(&self, frames: &[Vec<f64>]) -> Result<Vec<Encoded>, HordeError> {
        let per_encoder: Vec<Vec<FeatureVector>> = self
            .encoders
            .iter()
            .map(|e| e.encode_all(frames))
            .collect::<Result<_, _>>()?;
        let mut out: Vec<Encoded> = (0..frames.len()).map(|_| Vec::with_capacity(self.encoders.len())).collect();
        for column in per_encoder {
            for (slot, x) in out.iter_mut().zip(column) {
                slot.push(x);
            }
        }
        Ok(out)
    }

    /// One step on raw frames. `cumulants` is indexed by channel and holds
    /// the values observed with `frame_next`.
    pub fn step(
        &mut self,
        frame_t: &[f64],
        frame_next: &[f64],
        cumulants: &[f64],
    ) -> Result<&[GvfOutput], HordeError> {
        let x_t = match self.cache.take() {
            Some((frame, encoded)) if frame == frame_t => encoded,
            _ => self.encode(frame_t)?,
        };
        let x_next = self.encode(frame_next)?;
        self.step_encoded(&x_t, &x_next, cumulants)?;
        self.cache = Some((frame_next.to_vec(), x_next));
        Ok(&self.outputs)
    }

    /// One step on already encoded frames.
    pub fn step_encoded(
        &mut self,
        x_t: &[FeatureVector],
        x_next: &[FeatureVector],
        cumulants: &[f64],
    ) -> Result<&[GvfOutput], HordeError> {
        if x_t.len() != self.encoders.len() || x_next.len() != self.encoders.len() {
            return Err(HordeError::InvalidConfig(format!(
                "expected {} encodings per frame",
                self.encoders.len()
            )));
        }
        if let Some(spec) = self.specs.iter().find(|s| s.cumulant_channel >= cumulants.len()) {
            return Err(HordeError::InvalidConfig(format!(
                "cumulant channel {} missing from a {}-channel frame",
                spec.cumulant_channel,
                cumulants.len()
            )));
        }
        let pairs: Vec<FeaturePair<'_>> = x_t
            .iter()
            .zip(x_next)
            .map(|(a, b)| FeaturePair::new(a, b))
            .collect();
        let shared = pairs.len();
        let run = |gvf: usize, learner: &mut Learner, spec: &GvfSpec, out: &mut GvfOutput| {
            *out = learner
                .step(&pairs[gvf % shared], cumulants[spec.cumulant_channel])
                .map_err(|source| HordeError::Learner { gvf, source })?;
            Ok::<(), HordeError>(())
        };
        let result = if self.parallel {
            self.learners
                .par_iter_mut()
                .zip(self.specs.par_iter())
                .zip(self.outputs.par_iter_mut())
                .enumerate()
                .map(|(gvf, ((learner, spec), out))| run(gvf, learner, spec, out))
                .collect::<Vec<_>>()
                .into_iter()
                .collect::<Result<(), _>>()
        } else {
            self.learners
                .iter_mut()
                .zip(&self.specs)
                .zip(self.outputs.iter_mut())
                .enumerate()
                .try_for_each(|(gvf, ((learner, spec), out))| run(gvf, learner, spec, out))
        };
        result?;
        Ok(&self.outputs)
    }

    /// Bytes held by all learner states.
    pub fn memory_bytes(&self) -> usize {
        self.learners.iter().map(Learner::memory_bytes).sum()
    }
}

/// One GVF per channel in `0..channel_count`, all built from `template`.
/// `step_sizes`, when given, overrides the template step size per channel.
pub fn build_horde(
    channel_count: usize,
    template: &GvfTemplate,
    encoders: Vec<Arc<dyn Encoder>>,
    step_sizes: Option<&[f64]>,
) -> Result<Horde, HordeError> {
    let channels: Vec<usize> = (0..channel_count).collect();
    build_horde_for(&channels, template, encoders, step_sizes)
}

/// Like [`build_horde`] for an arbitrary list of cumulant channels.
pub fn build_horde_for(
    channels: &[usize],
    template: &GvfTemplate,
    encoders: Vec<Arc<dyn Encoder>>,
    step_sizes: Option<&[f64]>,
) -> Result<Horde, HordeError> {
    if channels.is_empty() {
        return Err(HordeError::InvalidConfig("channel count must be >= 1".into()));
    }
    if let Some(s) = step_sizes {
        if s.len() != channels.len() {
            return Err(HordeError::InvalidConfig(format!(
                "{} step-size overrides for {} channels",
                s.len(),
                channels.len()
            )));
        }
    }
    let Some(first) = encoders.first() else {
        return Err(HordeError::InvalidConfig("no encoder".into()));
    };
    let n = first.feature_count();
    let specs = channels
        .iter()
        .enumerate()
        .map(|(i, &channel)| GvfSpec {
            cumulant_channel: channel,
            learner: template.learner_config(step_sizes.map_or(template.step_size, |s| s[i]), n),
        })
        .collect();
    Horde::new(specs, encoders)
}
