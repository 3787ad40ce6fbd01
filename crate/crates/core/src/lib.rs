pub mod config;
pub mod datastream;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod features;
pub mod horde;
pub mod kanerva;
pub mod td;
pub mod tidbd;
pub mod trace;

pub use config::ExperimentConfig;
pub use datastream::{
    ChannelMeta, FailureKind, FailureSpec, Group, Phase, PhaseKind, StreamFrame, SynthProfile,
};
pub use error::{CoderError, Error, EvalError, HordeError, LearnerError, Result, StreamError};
pub use features::{FeaturePair, FeatureVector, UnionEntry};
pub use horde::{
    build_horde, build_horde_for, GvfOutput, GvfSpec, GvfTemplate, Horde, Learner, LearnerConfig,
    LearnerKind, PrototypeSharing,
};
pub use kanerva::{CoderConfig, Encoder, PrototypeSet};
pub use td::{TdConfig, TdLearner};
pub use tidbd::{StepSizeEntry, TidbdConfig, TidbdLearner, TidbdStep};
