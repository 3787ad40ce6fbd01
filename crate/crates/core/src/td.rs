//! Linear TD(λ) with accumulating traces and one fixed step size.

use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::features::{FeaturePair, FeatureVector};
use crate::trace::TraceSupport;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdConfig {
    /// Scalar step size `α`.
    pub step_size: f64,
    /// Discount `γ ∈ [0, 1)`.
    pub discount: f64,
    /// Trace decay `λ ∈ [0, 1]`.
    pub trace_decay: f64,
    pub feature_count: usize,
    /// Trace entries at or below this magnitude are dropped; 0 keeps the
    /// update exactly equal to the dense computation.
    #[serde(default)]
    pub trace_cutoff: f64,
}

impl TdConfig {
    pub fn new(step_size: f64, discount: f64, trace_decay: f64, feature_count: usize) -> Self {
        Self {
            step_size,
            discount,
            trace_decay,
            feature_count,
            trace_cutoff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!(
                "step size must be positive and finite, got {}",
                self.step_size
            )));
        }
        validate_common(
            self.discount,
            self.trace_decay,
            self.feature_count,
            self.trace_cutoff,
        )
    }
}

pub(crate) fn validate_common(
    discount: f64,
    trace_decay: f64,
    feature_count: usize,
    trace_cutoff: f64,
) -> Result<(), LearnerError> {
    if !(0.0..1.0).contains(&discount) {
        return Err(LearnerError::InvalidConfig(format!(
            "discount must lie in [0, 1), got {discount}"
        )));
    }
    if !(0.0..=1.0).contains(&trace_decay) {
        return Err(LearnerError::InvalidConfig(format!(
            "trace decay must lie in [0, 1], got {trace_decay}"
        )));
    }
    if feature_count == 0 {
        return Err(LearnerError::InvalidConfig(
            "feature count must be >= 1".into(),
        ));
    }
    if !(trace_cutoff >= 0.0 && trace_cutoff.is_finite()) {
        return Err(LearnerError::InvalidConfig(format!(
            "trace cutoff must be finite and non-negative, got {trace_cutoff}"
        )));
    }
    Ok(())
}

pub(crate) fn check_features(x: &FeatureVector, n: usize) -> Result<(), LearnerError> {
    if x.len() != n {
        return Err(LearnerError::LengthMismatch {
            expected: n,
            got: x.len(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct TdFeature {
    w: f64,
    z: f64,
}

fn trace_of(f: &mut TdFeature) -> &mut f64 {
    &mut f.z
}

/// Classic TD(λ) learner state: weights `w` and trace `z`, stored per
/// feature.
#[derive(Debug, Clone, PartialEq)]
pub struct TdLearner {
    config: TdConfig,
    features: Vec<TdFeature>,
    support: TraceSupport,
}

impl TdLearner {
    pub fn new(config: TdConfig) -> Result<Self, LearnerError> {
        config.validate()?;
        Ok(Self {
            features: vec![TdFeature::default(); config.feature_count],
            support: TraceSupport::new(),
            config,
        })
    }

    pub fn config(&self) -> &TdConfig {
        &self.config
    }

    pub fn weights(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.w).collect()
    }

    pub fn trace(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.z).collect()
    }

    #[inline]
    pub fn weight(&self, index: usize) -> f64 {
        self.features[index].w
    }

    fn value(&self, x: &FeatureVector) -> f64 {
        x.active().iter().map(|&i| self.features[i as usize].w).sum()
    }

    pub fn predict(&self, x: &FeatureVector) -> Result<f64, LearnerError> {
        check_features(x, self.config.feature_count)?;
        Ok(self.value(x))
    }

    pub fn update(
        &mut self,
        x_t: &FeatureVector,
        x_next: &FeatureVector,
        cumulant: f64,
    ) -> Result<f64, LearnerError> {
        self.update_pair(&FeaturePair::new(x_t, x_next), cumulant)
    }

    /// One TD(λ) step; returns the TD error `δ`.
    pub fn update_pair(&mut self, pair: &FeaturePair<'_>, cumulant: f64) -> Result<f64, LearnerError> {
        pair.check_len(self.config.feature_count)?;
        let TdConfig {
            step_size,
            discount,
            trace_decay,
            trace_cutoff,
            ..
        } = self.config;

        let delta = cumulant + discount * self.value(pair.next()) - self.value(pair.current());
        if !delta.is_finite() {
            return Err(LearnerError::Diverged {
                quantity: "TD error",
                index: None,
            });
        }

        self.support.accumulate(
            &mut self.features,
            trace_of,
            discount * trace_decay,
            pair.current().active(),
            trace_cutoff,
        );

        for &idx in self.support.indices() {
            let f = &mut self.features[idx as usize];
            f.w += step_size * delta * f.z;
            if !f.w.is_finite() {
                return Err(LearnerError::Diverged {
                    quantity: "weight",
                    index: Some(idx as usize),
                });
            }
        }
        Ok(delta)
    }

    /// Bytes held by the learner's state.
    pub fn memory_bytes(&self) -> usize {
        self.features.capacity() * std::mem::size_of::<TdFeature>() + self.support.memory_bytes()
    }
}
