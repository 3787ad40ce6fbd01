//! Experiment configuration (TOML).
//!
//! Every field has a default, so an empty file describes the default run:
//! a synthetic 108-channel stream with six five-minute phases, a
//! 30000-prototype coder with 960 active features, and a TIDBD horde with
//! `γ = 0.9`, `λ = 0.9`, `α₀ = 1/(n·η)`, `θ = 0.01`, `τ = 10⁴`.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datastream::{self, ChannelMeta, FailureKind, FailureSpec, SynthProfile};
use crate::error::Error;
use crate::evaluation::SweepPlan;
use crate::horde::{GvfTemplate, LearnerKind, PrototypeSharing};
use crate::kanerva::CoderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; the `--out` flag takes precedence.
    pub out_dir: PathBuf,
    /// One trial per seed.
    pub seeds: Vec<u64>,
    /// Steps (updates applied) after which step sizes are recorded. Empty
    /// means: before learning, end of the first and second movement phases,
    /// end of the run.
    pub snapshot_steps: Vec<usize>,
    /// Also dump every per-feature step size at each snapshot (first seed
    /// only; large).
    pub full_snapshots: bool,
    pub data: DataConfig,
    pub coder: CoderSection,
    pub learner: LearnerSection,
    pub failure: Option<FailureSection>,
    pub sweep: Option<SweepSection>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("out"),
            seeds: vec![0],
            snapshot_steps: Vec::new(),
            full_snapshots: false,
            data: DataConfig::default(),
            coder: CoderSection::default(),
            learner: LearnerSection::default(),
            failure: None,
            sweep: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CumulantSource {
    #[default]
    Normalized,
    Raw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    /// Stream CSV for `source = "csv"`.
    pub path: Option<PathBuf>,
    /// Channel metadata CSV; the built-in 108-channel profile when absent.
    pub meta: Option<PathBuf>,
    /// Seed of the synthetic stream. The stream is shared by all trials.
    pub seed: u64,
    pub profile: SynthProfile,
    /// Phase lengths used to split reports into periods when reading a CSV.
    /// Defaults to the synthetic schedule.
    pub periods: Option<Vec<usize>>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            path: None,
            meta: None,
            seed: 0,
            profile: SynthProfile::default(),
            periods: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoderSection {
    pub prototype_count: usize,
    pub active_ratio: f64,
    /// Base seed; each trial derives its own prototype seed from it.
    pub seed: u64,
    pub sharing: PrototypeSharing,
}

impl Default for CoderSection {
    fn default() -> Self {
        Self {
            prototype_count: 30_000,
            active_ratio: 0.032,
            seed: 0,
            sharing: PrototypeSharing::Shared,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnerSection {
    pub kind: LearnerKind,
    pub discount: f64,
    pub trace_decay: f64,
    /// `α` for classic TD, `α₀` for TIDBD; `1/(n·η)` when absent.
    pub step_size: Option<f64>,
    /// Per-channel step sizes, one per GVF.
    pub step_size_overrides: Option<Vec<f64>>,
    pub meta_step_size: f64,
    pub decay_time: f64,
    pub xi_consistent_form: bool,
    pub trace_cutoff: f64,
    pub cumulant_source: CumulantSource,
    /// Cumulant channels, one GVF each; all channels when absent.
    pub channels: Option<Vec<usize>>,
}

impl Default for LearnerSection {
    fn default() -> Self {
        Self {
            kind: LearnerKind::Tidbd,
            discount: 0.9,
            trace_decay: 0.9,
            step_size: None,
            step_size_overrides: None,
            meta_step_size: 0.01,
            decay_time: 1e4,
            xi_consistent_form: false,
            trace_cutoff: 1e-10,
            cumulant_source: CumulantSource::Normalized,
            channels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSection {
    pub kind: FailureKind,
    /// Replaced channels; the four elbow channels when absent.
    #[serde(default)]
    pub channels: Option<Vec<usize>>,
    #[serde(default)]
    pub mean: Option<f64>,
    #[serde(default)]
    pub std: Option<f64>,
    /// Base seed; each trial derives its own noise seed from it.
    #[serde(default)]
    pub seed: u64,
}

impl FailureSection {
    /// The failure applied in the trial with the given seed.
    pub fn spec(&self, trial_seed: u64) -> FailureSpec {
        let (mean, std) = self.kind.default_noise();
        FailureSpec {
            kind: self.kind,
            channels: self
                .channels
                .clone()
                .unwrap_or_else(|| datastream::elbow_channels().to_vec()),
            mean: self.mean.unwrap_or(mean),
            std: self.std.unwrap_or(std),
            seed: derive_seed(self.seed, trial_seed, SeedPurpose::Failure),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanPreset {
    /// 264 classic TD cells.
    TableTd,
    /// 24 TIDBD cells.
    TableTidbd,
    /// 11 step sizes for classic TD at the configured coder.
    SensitivityTd,
    /// 11 initial step sizes × 6 meta step sizes at the configured coder.
    SensitivityTidbd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub plan: PlanPreset,
    /// Replace any axis of the preset.
    #[serde(default)]
    pub prototype_counts: Option<Vec<usize>>,
    #[serde(default)]
    pub active_ratios: Option<Vec<f64>>,
    #[serde(default)]
    pub step_numerators: Option<Vec<f64>>,
    #[serde(default)]
    pub meta_step_sizes: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedPurpose {
    Coder = 1,
    Failure = 2,
}

/// Seed for one purpose in one trial: the first output of a ChaCha8
/// generator seeded with `base`, on a stream selected by purpose and trial.
pub fn derive_seed(base: u64, trial: u64, purpose: SeedPurpose) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(((purpose as u64) << 56) ^ trial);
    rng.random()
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads a config file. Relative data paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.data.path, &mut cfg.data.meta].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// The configuration with every implicit default written out.
    pub fn effective(&self) -> Self {
        let mut cfg = self.clone();
        if cfg.learner.step_size.is_none() {
            cfg.learner.step_size = Some(cfg.default_step_size());
        }
        cfg
    }

    pub fn to_toml(&self) -> Result<String, Error> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// `1/(n·η)`.
    pub fn default_step_size(&self) -> f64 {
        1.0 / (self.coder.prototype_count as f64 * self.coder.active_ratio)
    }

    pub fn step_size(&self) -> f64 {
        self.learner.step_size.unwrap_or_else(|| self.default_step_size())
    }

    pub fn coder_config(&self, dimension: usize, trial_seed: u64) -> CoderConfig {
        CoderConfig {
            dimension,
            prototype_count: self.coder.prototype_count,
            active_ratio: self.coder.active_ratio,
            seed: derive_seed(self.coder.seed, trial_seed, SeedPurpose::Coder),
        }
    }

    pub fn template(&self) -> GvfTemplate {
        let l = &self.learner;
        GvfTemplate {
            kind: l.kind,
            discount: l.discount,
            trace_decay: l.trace_decay,
            step_size: self.step_size(),
            meta_step_size: l.meta_step_size,
            decay_time: l.decay_time,
            xi_consistent_form: l.xi_consistent_form,
            trace_cutoff: l.trace_cutoff,
        }
    }

    pub fn channel_meta(&self) -> Result<Vec<ChannelMeta>, Error> {
        Ok(match &self.data.meta {
            Some(path) => datastream::load_meta(path)?,
            None => datastream::default_channels(),
        })
    }

    /// Phase lengths used for per-period reports.
    pub fn periods(&self) -> Vec<usize> {
        self.data
            .periods
            .clone()
            .unwrap_or_else(|| self.data.profile.schedule.iter().map(|p| p.steps).collect())
    }

    /// Snapshot steps, defaulting to initialization, the end of the first
    /// two movement phases, and the end of a run of `total_steps` updates.
    pub fn snapshot_steps(&self, total_steps: usize) -> Vec<usize> {
        let mut steps = if self.snapshot_steps.is_empty() {
            let mut s = vec![0];
            let mut end = 0;
            let mut moves = 0;
            for p in &self.data.profile.schedule {
                end += p.steps;
                if p.kind == datastream::PhaseKind::Movement && moves < 2 {
                    moves += 1;
                    s.push(end);
                }
            }
            s.push(total_steps);
            s
        } else {
            self.snapshot_steps.clone()
        };
        for s in &mut steps {
            *s = (*s).min(total_steps);
        }
        steps.sort_unstable();
        steps.dedup();
        steps
    }

    pub fn sweep_plan(&self) -> Result<SweepPlan, Error> {
        let Some(section) = &self.sweep else {
            return Err(Error::Config("no [sweep] section".into()));
        };
        let (n, eta) = (self.coder.prototype_count, self.coder.active_ratio);
        let seeds = self.seeds.clone();
        let mut plan = match section.plan {
            PlanPreset::TableTd => SweepPlan::table_td(seeds),
            PlanPreset::TableTidbd => SweepPlan::table_tidbd(seeds),
            PlanPreset::SensitivityTd => SweepPlan::sensitivity(LearnerKind::ClassicTd, n, eta, seeds),
            PlanPreset::SensitivityTidbd => SweepPlan::sensitivity(LearnerKind::Tidbd, n, eta, seeds),
        };
        if let Some(v) = &section.prototype_counts {
            plan.prototype_counts = v.clone();
        }
        if let Some(v) = &section.active_ratios {
            plan.active_ratios = v.clone();
        }
        if let Some(v) = &section.step_numerators {
            plan.step_numerators = v.clone();
        }
        if let Some(v) = &section.meta_step_sizes {
            plan.meta_step_sizes = v.clone();
        }
        plan.validate()?;
        Ok(plan)
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<(), Error> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(s) = self.seeds.iter().find(|s| !seen.insert(**s)) {
            return bad(format!("seed {s} listed twice"));
        }
        if self.data.source == DataSource::Csv && self.data.path.is_none() {
            return bad("data.source = \"csv\" needs data.path".into());
        }
        if self.data.source == DataSource::Synthetic {
            self.data.profile.validate()?;
        }
        if self.data.periods.as_ref().is_some_and(|p| p.is_empty() || p.contains(&0)) {
            return bad("data.periods must be non-empty positive lengths".into());
        }
        // the coder dimension is only known with the data; any value passes
        // here
        self.coder_config(1, 0).validate()?;
        let probe = self.template().learner_config(self.step_size(), 1);
        let check = match probe {
            crate::horde::LearnerConfig::Td(c) => c.validate(),
            crate::horde::LearnerConfig::Tidbd(c) => c.validate(),
        };
        check.map_err(|e| Error::Config(e.to_string()))?;
        if let Some(o) = &self.learner.step_size_overrides {
            if let Some(a) = o.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                return bad(format!("step-size override {a} is not positive"));
            }
        }
        if self.learner.channels.as_ref().is_some_and(|c| c.is_empty()) {
            return bad("learner.channels must not be empty".into());
        }
        if let Some(f) = &self.failure {
            let spec = f.spec(0);
            if spec.channels.is_empty() {
                return bad("failure.channels must not be empty".into());
            }
            if !(spec.std >= 0.0 && spec.std.is_finite() && spec.mean.is_finite()) {
                return bad("failure noise needs a finite mean and non-negative std".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_default_profile() {
        let cfg = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.learner.discount, 0.9);
        assert_eq!(cfg.coder.prototype_count, 30_000);
        assert!((cfg.step_size() - 1.0 / 960.0).abs() < 1e-15);
        assert_eq!(cfg.data.profile.total_steps(), 6792);
    }

    #[test]
    fn effective_config_round_trips() {
        let cfg = ExperimentConfig::from_toml(
            "seeds = [3, 4]\n[learner]\nkind = \"classic_td\"\n[failure]\nkind = \"stuck\"\n",
        )
        .unwrap();
        let eff = cfg.effective();
        let again = ExperimentConfig::from_toml(&eff.to_toml().unwrap()).unwrap();
        assert_eq!(again, eff);
        assert_eq!(again.learner.kind, LearnerKind::ClassicTd);
        assert_eq!(again.failure.unwrap().spec(3).channels, datastream::elbow_channels());
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("sedes = [1]").is_err());
        let bad = ExperimentConfig::from_toml("[learner]\ndiscount = 1.5").unwrap();
        assert!(bad.validate().is_err());
        let dup = ExperimentConfig::from_toml("seeds = [1, 1]").unwrap();
        assert!(dup.validate().is_err());
    }

    #[test]
    fn default_snapshots_follow_schedule() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.snapshot_steps(6791), vec![0, 2264, 4528, 6791]);
    }

    #[test]
    fn derived_seeds_differ_by_trial_and_purpose() {
        let a = derive_seed(0, 1, SeedPurpose::Coder);
        assert_eq!(a, derive_seed(0, 1, SeedPurpose::Coder));
        assert_ne!(a, derive_seed(0, 2, SeedPurpose::Coder));
        assert_ne!(a, derive_seed(0, 1, SeedPurpose::Failure));
    }
}
