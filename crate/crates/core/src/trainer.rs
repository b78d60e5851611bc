//! Episode loop, per-episode metrics and greedy evaluation.

use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Instant;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, DdqnAgent, EpsilonDecay, Transition};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::config::{ConfigError, TrainConfig};
use crate::env::{ChannelEnv, EnvConfig, EnvError, JammerKind};
use crate::runlog::{write_meta, RunLogWriter};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("empty evaluation: at least one episode is required")]
    EmptyEvaluation,
    #[error("checkpoint has {checkpoint} channels but the environment has {env}")]
    ArchitectureMismatch { checkpoint: usize, env: usize },
    #[error("i/o error: {0}")]
    Io(String),
}

/// Rounds half away from zero to two decimals, the precision of every
/// persisted metric.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Mean of the last `min(len, window)` values; `None` for an empty slice.
pub fn rolling_average(returns: &[f64], window: usize) -> Option<f64> {
    if returns.is_empty() || window == 0 {
        return None;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    #[serde(rename = "return")]
    pub episode_return: f64,
    pub rolling_average: f64,
    pub epsilon: f64,
    pub steps: u64,
    pub jam_hits: u64,
    pub switches: u64,
    pub wall_time_ms: u64,
}

impl EpisodeRecord {
    /// `index,return,rolling_average,epsilon,steps,jam_hits,switches,wall_time_ms`
    pub fn to_line(&self) -> String {
        format!(
            "{},{:.2},{:.2},{:.2},{},{},{},{}",
            self.index,
            self.episode_return,
            self.rolling_average,
            self.epsilon,
            self.steps,
            self.jam_hits,
            self.switches,
            self.wall_time_ms
        )
    }

    pub fn parse_line(line: &str) -> Result<Self, String> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 8 {
            return Err(format!("expected 8 comma-separated fields, got {}", f.len()));
        }
        fn int(s: &str, name: &str) -> Result<u64, String> {
            s.parse().map_err(|_| format!("bad {name} {s:?}"))
        }
        fn real(s: &str, name: &str) -> Result<f64, String> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("bad {name} {s:?}"))
        }
        Ok(Self {
            index: int(f[0], "index")?,
            episode_return: real(f[1], "return")?,
            rolling_average: real(f[2], "rolling_average")?,
            epsilon: real(f[3], "epsilon")?,
            steps: int(f[4], "steps")?,
            jam_hits: int(f[5], "jam_hits")?,
            switches: int(f[6], "switches")?,
            wall_time_ms: int(f[7], "wall_time_ms")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Completed,
    Solved,
    Stopped,
    Failed,
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            RunStatus::Running => "running",
            RunStatus::Completed => "completed",
            RunStatus::Solved => "solved",
            RunStatus::Stopped => "stopped",
            RunStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "running" => RunStatus::Running,
            "completed" => RunStatus::Completed,
            "solved" => RunStatus::Solved,
            "stopped" => RunStatus::Stopped,
            "failed" => RunStatus::Failed,
            _ => return None,
        })
    }

    pub fn is_terminal(&self) -> bool {
        *self != RunStatus::Running
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub run_id: String,
    pub config: TrainConfig,
    pub records: Vec<EpisodeRecord>,
    pub status: RunStatus,
    pub created_at: DateTime<Utc>,
    /// Cause of a `failed` status.
    pub failure: Option<String>,
}

impl RunLog {
    pub fn new(run_id: impl Into<String>, config: TrainConfig) -> Self {
        Self {
            run_id: run_id.into(),
            config,
            records: Vec::new(),
            status: RunStatus::Running,
            created_at: Utc::now(),
            failure: None,
        }
    }

    pub fn returns(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.episode_return).collect()
    }
}

/// Drives one environment and one agent episode by episode.
pub struct Trainer {
    config: TrainConfig,
    env: ChannelEnv,
    agent: DdqnAgent,
    returns: Vec<f64>,
    episode: u64,
    global_step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let env_cfg = EnvConfig {
            rng_seed: config.seed,
            ..config.env.clone()
        };
        let env = ChannelEnv::new(env_cfg, config.jammer)?;
        let agent = DdqnAgent::new(config.env.num_channels, config.agent.clone(), config.seed)?;
        Ok(Self {
            config,
            env,
            agent,
            returns: Vec::new(),
            episode: 0,
            global_step: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn agent(&self) -> &DdqnAgent {
        &self.agent
    }

    pub fn agent_mut(&mut self) -> &mut DdqnAgent {
        &mut self.agent
    }

    pub fn episodes_run(&self) -> u64 {
        self.episode
    }

    fn exploration_t(&self) -> u64 {
        match self.config.agent.epsilon.decay {
            EpsilonDecay::LinearPerEpisode => self.episode,
            EpsilonDecay::ExponentialPerStep => self.global_step,
        }
    }

    /// Runs one episode: act, step, remember and learn once per slot.
    pub fn run_episode(&mut self) -> Result<EpisodeRecord, TrainError> {
        let started = Instant::now();
        let mut state = self.env.reset();
        let mut total = 0.0;
        let (mut steps, mut jam_hits, mut switches) = (0u64, 0u64, 0u64);
        let last_t = loop {
            let t = self.exploration_t();
            let action = self.agent.act(&state, t)?;
            let out = self.env.step(action)?;
            total += out.reward;
            steps += 1;
            jam_hits += u64::from(out.info.jammed);
            switches += u64::from(out.info.switched);
            self.agent.remember(Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.observation.clone(),
                done: out.done,
            });
            self.agent.learn()?;
            self.global_step += 1;
            state = out.observation;
            if out.done {
                break t;
            }
        };
        let epsilon = self.agent.epsilon(last_t);
        let episode_return = round2(total);
        self.returns.push(episode_return);
        let rolling = rolling_average(&self.returns, self.config.rolling_window)
            .expect("at least one return");
        let record = EpisodeRecord {
            index: self.episode,
            episode_return,
            rolling_average: round2(rolling),
            epsilon: round2(epsilon),
            steps,
            jam_hits,
            switches,
            wall_time_ms: if self.config.record_wall_time {
                started.elapsed().as_millis() as u64
            } else {
                0
            },
        };
        self.episode += 1;
        Ok(record)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            agent: self.agent.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Directory receiving `run.log`, `run.meta` and checkpoints.
    pub output_dir: Option<PathBuf>,
    pub run_id: Option<String>,
    /// Checked at every episode boundary.
    pub stop: Option<Arc<AtomicBool>>,
}

pub const RUN_LOG_FILE: &str = "run.log";
pub const FINAL_CHECKPOINT_FILE: &str = "checkpoint.txt";

/// Trains for `config.episodes` episodes (or until solved / stopped),
/// handing every record to `sink` as soon as its episode ends. Failures
/// after start-up are reported through the returned log's status.
pub fn train(
    config: TrainConfig,
    opts: &TrainOptions,
    sink: &mut dyn FnMut(&EpisodeRecord),
) -> Result<RunLog, TrainError> {
    let mut trainer = Trainer::new(config.clone())?;
    let run_id = opts
        .run_id
        .clone()
        .unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    let mut log = RunLog::new(run_id, config);

    let mut writer = match &opts.output_dir {
        None => None,
        Some(dir) => {
            let opened = std::fs::create_dir_all(dir)
                .and_then(|_| RunLogWriter::create(dir.join(RUN_LOG_FILE), &log));
            match opened {
                Ok(w) => Some(w),
                Err(e) => {
                    log.status = RunStatus::Failed;
                    log.failure = Some(format!("cannot open run log in {}: {e}", dir.display()));
                    return Ok(log);
                }
            }
        }
    };

    let result = run_loop(&mut trainer, &mut log, writer.as_mut(), opts, sink);
    if let Err(e) = result {
        log.status = RunStatus::Failed;
        log.failure = Some(e.to_string());
    }
    if let Some(dir) = &opts.output_dir {
        let final_ckpt = save_checkpoint(&trainer.checkpoint(), &dir.join(FINAL_CHECKPOINT_FILE));
        if let Err(e) = final_ckpt {
            if log.status != RunStatus::Failed {
                log.status = RunStatus::Failed;
                log.failure = Some(format!("writing final checkpoint: {e}"));
            }
        }
        if let Some(w) = &writer {
            let _ = write_meta(w.path(), &log);
        }
    }
    Ok(log)
}

fn run_loop(
    trainer: &mut Trainer,
    log: &mut RunLog,
    mut writer: Option<&mut RunLogWriter>,
    opts: &TrainOptions,
    sink: &mut dyn FnMut(&EpisodeRecord),
) -> Result<(), TrainError> {
    let cfg = trainer.config().clone();
    for ep in 0..cfg.episodes {
        if opts.stop.as_ref().is_some_and(|s| s.load(Ordering::SeqCst)) {
            log.status = RunStatus::Stopped;
            return Ok(());
        }
        let record = trainer.run_episode()?;
        if let Some(w) = writer.as_deref_mut() {
            w.append(&record).map_err(|e| TrainError::Io(e.to_string()))?;
        }
        log.records.push(record);
        sink(&record);

        if cfg.checkpoint_every > 0 && (ep + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &opts.output_dir {
                save_checkpoint(&trainer.checkpoint(), &dir.join(format!("checkpoint-{:05}.txt", ep + 1)))
                    .map_err(|e| TrainError::Io(e.to_string()))?;
            }
        }
        if cfg.stop_on_solve && record.rolling_average >= cfg.solved_threshold {
            log.status = RunStatus::Solved;
            return Ok(());
        }
    }
    log.status = RunStatus::Completed;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub episodes: u64,
    pub mean_return: f64,
    /// Population standard deviation of episode returns.
    pub std: f64,
    pub jam_rate: f64,
    pub switch_rate: f64,
}

/// Greedy rollouts with learning disabled.
pub fn evaluate(
    agent: &DdqnAgent,
    env_config: &EnvConfig,
    jammer: JammerKind,
    episodes: u64,
) -> Result<EvalStats, TrainError> {
    if episodes == 0 {
        return Err(TrainError::EmptyEvaluation);
    }
    if agent.num_channels() != env_config.num_channels
        || agent.online().input_dim() != env_config.num_channels
    {
        return Err(TrainError::ArchitectureMismatch {
            checkpoint: agent.online().input_dim(),
            env: env_config.num_channels,
        });
    }
    let mut env = ChannelEnv::new(env_config.clone(), jammer)?;
    let mut returns = Vec::with_capacity(episodes as usize);
    let (mut steps, mut jams, mut switches) = (0u64, 0u64, 0u64);
    for _ in 0..episodes {
        let mut state = env.reset();
        let mut total = 0.0;
        loop {
            let action = agent.greedy_policy(&state)?;
            let out = env.step(action)?;
            total += out.reward;
            steps += 1;
            jams += u64::from(out.info.jammed);
            switches += u64::from(out.info.switched);
            state = out.observation;
            if out.done {
                break;
            }
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok(EvalStats {
        episodes,
        mean_return: mean,
        std: var.sqrt(),
        jam_rate: jams as f64 / steps as f64,
        switch_rate: switches as f64 / steps as f64,
    })
}
