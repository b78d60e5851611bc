//! Anti-jamming channel selection with a double-DQN agent, plus the metric
//! pipeline and insight reports built on top of its training runs.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod insights;
pub mod nn;
pub mod runlog;
pub mod trainer;

pub use agent::{AgentConfig, DdqnAgent, EpsilonDecay, EpsilonSchedule, ReplayBuffer, Transition, WeightInit};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
pub use config::{ConfigError, FieldError, TrainConfig};
pub use env::{ChannelEnv, EnvConfig, JammerKind, JammerModel, ObservationVector, StepOutcome, SweepDirection, UtilityMode};
pub use insights::{
    fallback_narrative, generate_report, render_prompt, request_insight, summarize, InsightError, InsightReport, LlmEndpointConfig,
    ReportSource, TrainingSummary,
};
pub use nn::{Activation, DenseLayer, GradientSet, Mlp};
pub use runlog::{load_run_log, save_run_log, RunLogError};
pub use trainer::{
    evaluate, rolling_average, round2, train, EpisodeRecord, EvalStats, RunLog, RunStatus, TrainError, TrainOptions, Trainer,
};
