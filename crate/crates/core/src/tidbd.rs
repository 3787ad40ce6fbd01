//! TD(λ) with AutoStep TIDBD(λ) per-feature step-size adaptation.
//!
//! Each feature carries a step size `α_i = exp(β_i)`. After computing the
//! TD error, the learner
//!
//! 1. refreshes the AutoStep normalizer `ξ_i` from the current meta-gradient
//!    magnitude `|δ·g_i·h_i|` and a `τ`-decayed running value,
//! 2. takes a normalized meta-descent step `β_i ← β_i − θ·δ·g_i·h_i / ξ_i`,
//! 3. computes `M = max(−Σ α_i·g_i·z_i, 1)` and subtracts `ln M` from every
//!    `β_i`, so the effective step on the current example never exceeds one,
//! 4. updates the trace, the weights, and the update trace `h`,
//!
//! where `g_i = γ·x_next,i − x_t,i`.
//!
//! Work per step is proportional to `|active(x_t) ∪ active(x_next)|` plus the
//! trace support: every term of the normalizer and meta-weight updates
//! vanishes where `g_i = 0`, and weights and `h` only move where `z_i ≠ 0`.
//! The `ln M` shift applies to all `n` features; it is held as a shared
//! log-scale so it costs O(1) per step.

use serde::{Deserialize, Serialize};

use crate::error::LearnerError;
use crate::features::{FeaturePair, FeatureVector};
use crate::td::{check_features, validate_common};
use crate::trace::TraceSupport;

/// Fold the shared log-scale into the per-feature values once it drifts
/// this far from zero, keeping `exp` of both parts comfortably in range.
const LOG_SCALE_FOLD: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TidbdConfig {
    /// Meta step size `θ`. Zero freezes the meta-descent.
    pub meta_step_size: f64,
    /// Normalizer decay time `τ`.
    pub decay_time: f64,
    /// Initial per-feature step size `α₀`.
    pub initial_step_size: f64,
    pub discount: f64,
    pub trace_decay: f64,
    pub feature_count: usize,
    /// Use `|δ·g_i·h_i|` inside the decayed normalizer term instead of
    /// `|δ·x_t,i·h_i|`.
    #[serde(default)]
    pub xi_consistent_form: bool,
    #[serde(default)]
    pub trace_cutoff: f64,
}

impl TidbdConfig {
    /// `θ = 0.01`, `τ = 10⁴`, exact traces.
    pub fn new(initial_step_size: f64, discount: f64, trace_decay: f64, feature_count: usize) -> Self {
        Self {
            meta_step_size: 0.01,
            decay_time: 1e4,
            initial_step_size,
            discount,
            trace_decay,
            feature_count,
            xi_consistent_form: false,
            trace_cutoff: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if !(self.meta_step_size >= 0.0 && self.meta_step_size.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!(
                "meta step size must be finite and >= 0, got {}",
                self.meta_step_size
            )));
        }
        if !(self.decay_time > 0.0 && self.decay_time.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!(
                "decay time must be positive, got {}",
                self.decay_time
            )));
        }
        if !(self.initial_step_size > 0.0 && self.initial_step_size.is_finite()) {
            return Err(LearnerError::InvalidConfig(format!(
                "initial step size must be positive, got {}",
                self.initial_step_size
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

/// Result of one TIDBD step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TidbdStep {
    pub delta: f64,
    /// Overshoot normalizer `M ≥ 1`.
    pub normalizer: f64,
}

/// One row of a step-size snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepSizeEntry {
    pub feature_index: usize,
    pub alpha: f64,
    /// False for features never part of an update (never active).
    pub touched: bool,
}

/// Everything the learner keeps for one feature, stored together so an
/// update touches one cache line per feature.
#[derive(Debug, Clone, Copy, PartialEq)]
struct FeatureState {
    w: f64,
    z: f64,
    /// `β_i − log_scale`.
    beta_local: f64,
    /// `exp(beta_local)`; `α_i = alpha_local · scale`.
    alpha_local: f64,
    h: f64,
    xi: f64,
}

fn trace_of(f: &mut FeatureState) -> &mut f64 {
    &mut f.z
}

#[derive(Debug, Clone, PartialEq)]
pub struct TidbdLearner {
    config: TidbdConfig,
    features: Vec<FeatureState>,
    support: TraceSupport,
    log_scale: f64,
    scale: f64,
    touched: Vec<bool>,
}

impl TidbdLearner {
    pub fn new(config: TidbdConfig) -> Result<Self, LearnerError> {
        config.validate()?;
        let n = config.feature_count;
        let beta0 = config.initial_step_size.ln();
        let init = FeatureState {
            w: 0.0,
            z: 0.0,
            beta_local: beta0,
            alpha_local: beta0.exp(),
            h: 0.0,
            xi: 0.0,
        };
        Ok(Self {
            features: vec![init; n],
            support: TraceSupport::new(),
            log_scale: 0.0,
            scale: 1.0,
            touched: vec![false; n],
            config,
        })
    }

    pub fn config(&self) -> &TidbdConfig {
        &self.config
    }

    pub fn weights(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.w).collect()
    }

    #[inline]
    pub fn weight(&self, index: usize) -> f64 {
        self.features[index].w
    }

    pub fn trace(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.z).collect()
    }

    /// The decaying trace of recent weight updates, `h`.
    pub fn update_trace(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.h).collect()
    }

    /// AutoStep normalizer `ξ`.
    pub fn normalizer(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.xi).collect()
    }

    #[inline]
    pub fn step_size(&self, index: usize) -> f64 {
        self.features[index].alpha_local * self.scale
    }

    #[inline]
    pub fn meta_weight(&self, index: usize) -> f64 {
        self.features[index].beta_local + self.log_scale
    }

    pub fn step_sizes(&self) -> Vec<f64> {
        (0..self.config.feature_count).map(|i| self.step_size(i)).collect()
    }

    pub fn meta_weights(&self) -> Vec<f64> {
        (0..self.config.feature_count).map(|i| self.meta_weight(i)).collect()
    }

    pub fn is_touched(&self, index: usize) -> bool {
        self.touched[index]
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
    ) -> Result<TidbdStep, LearnerError> {
        self.update_pair(&FeaturePair::new(x_t, x_next), cumulant)
    }

    pub fn update_pair(
        &mut self,
        pair: &FeaturePair<'_>,
        cumulant: f64,
    ) -> Result<TidbdStep, LearnerError> {
        pair.check_len(self.config.feature_count)?;
        let TidbdConfig {
            meta_step_size: theta,
            decay_time: tau,
            discount: gamma,
            trace_decay: lambda,
            xi_consistent_form,
            trace_cutoff,
            ..
        } = self.config;

        let delta = cumulant + gamma * self.value(pair.next()) - self.value(pair.current());
        if !delta.is_finite() {
            return Err(LearnerError::Diverged {
                quantity: "TD error",
                index: None,
            });
        }

        // Normalizer and meta-weight updates; both vanish where g_i = 0.
        let inv_tau = 1.0 / tau;
        let scale = self.scale;
        let mut overshoot = 0.0;
        for e in pair.union() {
            let i = e.index as usize;
            let g = e.gradient(gamma);
            let f = &mut self.features[i];
            let xi_old = f.xi;
            if xi_old < 0.0 {
                return Err(LearnerError::NegativeNormalizer { index: i, value: xi_old });
            }
            let alpha = f.alpha_local * scale;
            let recent = (delta * g * f.h).abs();
            let inner = if xi_consistent_form {
                recent
            } else {
                (delta * e.current() * f.h).abs()
            };
            let xi = recent.max(xi_old - inv_tau * alpha * g * f.z * (inner - xi_old));
            f.xi = xi;
            // ξ_i = 0 implies δ·g_i·h_i = 0, so skipping is exact.
            if xi > 0.0 {
                f.beta_local -= theta * (1.0 / xi) * delta * g * f.h;
                f.alpha_local = f.beta_local.exp();
            }
            overshoot += f.alpha_local * scale * g * f.z;
            self.touched[i] = true;
        }

        let normalizer = (-overshoot).max(1.0);
        if normalizer > 1.0 {
            self.log_scale -= normalizer.ln();
            if self.log_scale.abs() > LOG_SCALE_FOLD {
                self.fold_log_scale();
            }
            self.scale = self.log_scale.exp();
        }

        self.support.accumulate(
            &mut self.features,
            trace_of,
            gamma * lambda,
            pair.current().active(),
            trace_cutoff,
        );

        let scale = self.scale;
        let union = pair.union();
        let mut u = 0;
        for &idx in self.support.indices() {
            while u < union.len() && union[u].index < idx {
                u += 1;
            }
            let g = match union.get(u) {
                Some(e) if e.index == idx => e.gradient(gamma),
                _ => 0.0,
            };
            let f = &mut self.features[idx as usize];
            let alpha = f.alpha_local * scale;
            let step = alpha * delta * f.z;
            f.w += step;
            f.h = f.h * (1.0 + alpha * f.z * g).max(0.0) + step;
            if !f.w.is_finite() || !f.h.is_finite() {
                return Err(LearnerError::Diverged {
                    quantity: "weight",
                    index: Some(idx as usize),
                });
            }
        }

        Ok(TidbdStep { delta, normalizer })
    }

    fn fold_log_scale(&mut self) {
        let shift = self.log_scale;
        for f in &mut self.features {
            f.beta_local += shift;
            f.alpha_local = f.beta_local.exp();
        }
        self.log_scale = 0.0;
        self.scale = 1.0;
    }

    /// All `n` step sizes with a flag marking features that have taken part
    /// in at least one update.
    pub fn step_size_snapshot(&self) -> Vec<StepSizeEntry> {
        (0..self.config.feature_count)
            .map(|i| StepSizeEntry {
                feature_index: i,
                alpha: self.step_size(i),
                touched: self.touched[i],
            })
            .collect()
    }

    /// Bytes held by the learner's state.
    pub fn memory_bytes(&self) -> usize {
        self.features.capacity() * std::mem::size_of::<FeatureState>()
            + self.touched.capacity()
            + self.support.memory_bytes()
    }
}
