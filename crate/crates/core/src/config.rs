//! Flat `key=value` configuration shared by config files, run-log headers,
//! checkpoints and the HTTP API.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::agent::{AgentConfig, AgentError, EpsilonDecay, EpsilonSchedule, WeightInit};
use crate::env::{EnvConfig, EnvError, JammerKind, SweepDirection, UtilityMode};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub struct ConfigError {
    pub errors: Vec<FieldError>,
}

impl ConfigError {
    pub fn single(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            errors: vec![FieldError {
                field: field.into(),
                message: message.into(),
            }],
        }
    }

    pub fn fields(&self) -> impl Iterator<Item = &str> {
        self.errors.iter().map(|e| e.field.as_str())
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.errors.iter().map(ToString::to_string).collect();
        write!(f, "invalid config: {}", parts.join("; "))
    }
}

impl From<EnvError> for ConfigError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidConfig { field, reason } => ConfigError::single(field, reason),
            other => ConfigError::single("env", other.to_string()),
        }
    }
}

impl From<AgentError> for ConfigError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::InvalidConfig { field, reason } => ConfigError::single(field, reason),
            other => ConfigError::single("agent", other.to_string()),
        }
    }
}

/// Parses `key=value` text. Pairs may be spread over lines or share a line
/// separated by whitespace; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    let mut errors = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("");
        for token in line.split_whitespace() {
            match token.split_once('=') {
                Some((k, v)) if !k.is_empty() => {
                    if map.insert(k.to_string(), v.to_string()).is_some() {
                        errors.push(FieldError {
                            field: k.to_string(),
                            message: format!("duplicate key on line {}", i + 1),
                        });
                    }
                }
                _ => errors.push(FieldError {
                    field: format!("line {}", i + 1),
                    message: format!("expected key=value, got {token:?}"),
                }),
            }
        }
    }
    if errors.is_empty() {
        Ok(map)
    } else {
        Err(ConfigError { errors })
    }
}

/// Sorted `key=value` pairs joined by single spaces.
pub fn format_kv(map: &BTreeMap<String, String>) -> String {
    map.iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: u64,
    pub env: EnvConfig,
    pub jammer: JammerKind,
    pub agent: AgentConfig,
    pub solved_threshold: f64,
    pub rolling_window: usize,
    pub stop_on_solve: bool,
    /// Checkpoint period in episodes; 0 writes only the final checkpoint.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// When false every record's `wall_time_ms` is 0 so run logs are
    /// byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let episodes = 200;
        Self {
            episodes,
            env: EnvConfig::default(),
            jammer: JammerKind::Sweep {
                start: 0,
                stride: 1,
                direction: SweepDirection::Up,
            },
            agent: AgentConfig {
                epsilon: EpsilonSchedule::linear(0.93, 0.08, episodes),
                ..AgentConfig::default()
            },
            solved_threshold: 90.0,
            rolling_window: 10,
            stop_on_solve: true,
            checkpoint_every: 50,
            seed: 0,
            record_wall_time: true,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "adjacent_leakage",
    "batch_size",
    "checkpoint_every",
    "episodes",
    "epsilon_decay",
    "epsilon_end",
    "epsilon_horizon",
    "epsilon_start",
    "gamma",
    "grad_clip",
    "hidden_layers",
    "jammer",
    "jammer_channel",
    "jammer_direction",
    "jammer_power",
    "jammer_stay_probability",
    "jammer_stride",
    "learning_rate",
    "noise_floor",
    "num_channels",
    "record_wall_time",
    "replay_capacity",
    "rolling_window",
    "seed",
    "signal_power",
    "solved_threshold",
    "steps_per_episode",
    "stop_on_solve",
    "switching_cost",
    "target_sync_interval",
    "utility",
    "weight_init",
];

struct Reader<'a> {
    map: &'a BTreeMap<String, String>,
    errors: Vec<FieldError>,
}

impl Reader<'_> {
    fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    fn fail(&mut self, key: &str, msg: impl Into<String>) {
        self.errors.push(FieldError {
            field: key.to_string(),
            message: msg.into(),
        });
    }

    fn get<T: std::str::FromStr>(&mut self, key: &str, default: T) -> T {
        match self.raw(key) {
            None => default,
            Some(v) => match v.parse() {
                Ok(x) => x,
                Err(_) => {
                    let v = v.to_string();
                    self.fail(key, format!("cannot parse {v:?}"));
                    default
                }
            },
        }
    }

    fn choice<T: Copy>(&mut self, key: &str, default: T, options: &[(&str, T)]) -> T {
        let Some(v) = self.raw(key) else {
            return default;
        };
        if let Some((_, t)) = options.iter().find(|(name, _)| *name == v) {
            return *t;
        }
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        let v = v.to_string();
        self.fail(key, format!("{v:?} is not one of {}", names.join(", ")));
        default
    }
}

impl TrainConfig {
    /// Builds and validates a config from flat pairs. Missing keys take their
    /// defaults; unknown keys are rejected.
    pub fn from_kv(map: &BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut r = Reader {
            map,
            errors: Vec::new(),
        };
        for key in map.keys() {
            if !CONFIG_KEYS.contains(&key.as_str()) {
                r.fail(key, "unknown key");
            }
        }
        let d = TrainConfig::default();

        let episodes = r.get("episodes", d.episodes);
        let jammer_power = r.get("jammer_power", d.env.jammer_power);
        let utility = r.choice("utility", "binary", &[("binary", "binary"), ("sinr", "sinr")]);
        let signal_power = r.get("signal_power", 1.0f64);
        let env = EnvConfig {
            num_channels: r.get("num_channels", d.env.num_channels),
            steps_per_episode: r.get("steps_per_episode", d.env.steps_per_episode),
            switching_cost: r.get("switching_cost", d.env.switching_cost),
            jammer_power,
            noise_floor: r.get("noise_floor", 0.01 * jammer_power),
            adjacent_leakage: r.get("adjacent_leakage", d.env.adjacent_leakage),
            utility: if utility == "sinr" {
                UtilityMode::Sinr { signal_power }
            } else {
                UtilityMode::Binary
            },
            rng_seed: 0,
        };

        let channel = r.get("jammer_channel", 0usize);
        let stride = r.get("jammer_stride", 1usize);
        let direction = r.choice(
            "jammer_direction",
            SweepDirection::Up,
            &[("up", SweepDirection::Up), ("down", SweepDirection::Down)],
        );
        let stay_probability = r.get("jammer_stay_probability", 0.8f64);
        let jammer = r.choice(
            "jammer",
            JammerKind::Sweep {
                start: channel,
                stride,
                direction,
            },
            &[
                ("fixed", JammerKind::Fixed { channel }),
                (
                    "sweep",
                    JammerKind::Sweep {
                        start: channel,
                        stride,
                        direction,
                    },
                ),
                ("random", JammerKind::RandomUniform),
                ("markov", JammerKind::Markov { stay_probability }),
            ],
        );

        let decay = r.choice(
            "epsilon_decay",
            EpsilonDecay::LinearPerEpisode,
            &[
                ("linear_per_episode", EpsilonDecay::LinearPerEpisode),
                ("exponential_per_step", EpsilonDecay::ExponentialPerStep),
            ],
        );
        let horizon: u64 = r.get("epsilon_horizon", 0);
        let horizon = match (horizon, decay) {
            (0, EpsilonDecay::LinearPerEpisode) => episodes.max(1),
            (0, EpsilonDecay::ExponentialPerStep) => {
                (episodes * env.steps_per_episode as u64).max(1)
            }
            (h, _) => h,
        };
        let hidden_layers = match r.raw("hidden_layers") {
            None => d.agent.hidden_layers.clone(),
            Some("") => Vec::new(),
            Some(v) => match v.split(',').map(str::parse).collect::<Result<Vec<usize>, _>>() {
                Ok(h) => h,
                Err(_) => {
                    let v = v.to_string();
                    r.fail("hidden_layers", format!("expected comma-separated widths, got {v:?}"));
                    d.agent.hidden_layers.clone()
                }
            },
        };
        let grad_clip: f64 = r.get("grad_clip", 0.0);
        let agent = AgentConfig {
            gamma: r.get("gamma", d.agent.gamma),
            batch_size: r.get("batch_size", d.agent.batch_size),
            replay_capacity: r.get("replay_capacity", d.agent.replay_capacity),
            learning_rate: r.get("learning_rate", d.agent.learning_rate),
            target_sync_interval: r.get("target_sync_interval", d.agent.target_sync_interval),
            hidden_layers,
            grad_clip: (grad_clip != 0.0).then_some(grad_clip),
            weight_init: r.choice(
                "weight_init",
                WeightInit::Glorot,
                &[("glorot", WeightInit::Glorot), ("zeros", WeightInit::Zeros)],
            ),
            epsilon: EpsilonSchedule {
                start: r.get("epsilon_start", 0.93),
                end: r.get("epsilon_end", 0.08),
                decay,
                horizon,
            },
        };
        let seed = r.get("seed", d.seed);
        let cfg = TrainConfig {
            episodes,
            env: EnvConfig {
                rng_seed: seed,
                ..env
            },
            jammer,
            agent,
            solved_threshold: r.get("solved_threshold", d.solved_threshold),
            rolling_window: r.get("rolling_window", d.rolling_window),
            stop_on_solve: r.get("stop_on_solve", d.stop_on_solve),
            checkpoint_every: r.get("checkpoint_every", d.checkpoint_every),
            seed,
            record_wall_time: r.get("record_wall_time", d.record_wall_time),
        };
        if !r.errors.is_empty() {
            return Err(ConfigError { errors: r.errors });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_kv(&parse_kv(text)?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.env.validate()?;
        self.jammer.validate(self.env.num_channels)?;
        self.agent.validate()?;
        if self.episodes == 0 {
            return Err(ConfigError::single("episodes", "must be positive"));
        }
        if self.rolling_window == 0 || self.rolling_window as u64 > self.episodes {
            return Err(ConfigError::single(
                "rolling_window",
                "must lie in [1, episodes]",
            ));
        }
        let max_return = self.env.steps_per_episode as f64 * self.env.max_utility();
        if !(self.solved_threshold.is_finite() && self.solved_threshold <= max_return) {
            return Err(ConfigError::single(
                "solved_threshold",
                format!("must not exceed the maximum attainable return {max_return}"),
            ));
        }
        Ok(())
    }

    /// Canonical pairs; every key is present.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let e = &self.env;
        put("adjacent_leakage", e.adjacent_leakage.to_string());
        put("jammer_power", e.jammer_power.to_string());
        put("noise_floor", e.noise_floor.to_string());
        put("num_channels", e.num_channels.to_string());
        put("steps_per_episode", e.steps_per_episode.to_string());
        put("switching_cost", e.switching_cost.to_string());
        put("utility", e.utility.name().to_string());
        let signal = match e.utility {
            UtilityMode::Sinr { signal_power } => signal_power,
            UtilityMode::Binary => 1.0,
        };
        put("signal_power", signal.to_string());

        let (channel, stride, direction, stay) = match self.jammer {
            JammerKind::Fixed { channel } => (channel, 1, SweepDirection::Up, 0.8),
            JammerKind::Sweep {
                start,
                stride,
                direction,
            } => (start, stride, direction, 0.8),
            JammerKind::RandomUniform => (0, 1, SweepDirection::Up, 0.8),
            JammerKind::Markov { stay_probability } => (0, 1, SweepDirection::Up, stay_probability),
        };
        put("jammer", self.jammer.name().to_string());
        put("jammer_channel", channel.to_string());
        put("jammer_stride", stride.to_string());
        put("jammer_direction", direction.name().to_string());
        put("jammer_stay_probability", stay.to_string());

        let a = &self.agent;
        put("gamma", a.gamma.to_string());
        put("batch_size", a.batch_size.to_string());
        put("replay_capacity", a.replay_capacity.to_string());
        put("learning_rate", a.learning_rate.to_string());
        put("target_sync_interval", a.target_sync_interval.to_string());
        put(
            "hidden_layers",
            a.hidden_layers
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(","),
        );
        put("grad_clip", a.grad_clip.unwrap_or(0.0).to_string());
        put("weight_init", a.weight_init.name().to_string());
        put("epsilon_start", a.epsilon.start.to_string());
        put("epsilon_end", a.epsilon.end.to_string());
        put("epsilon_decay", a.epsilon.decay.name().to_string());
        put("epsilon_horizon", a.epsilon.horizon.to_string());

        put("episodes", self.episodes.to_string());
        put("solved_threshold", self.solved_threshold.to_string());
        put("rolling_window", self.rolling_window.to_string());
        put("stop_on_solve", self.stop_on_solve.to_string());
        put("checkpoint_every", self.checkpoint_every.to_string());
        put("seed", self.seed.to_string());
        put("record_wall_time", self.record_wall_time.to_string());
        m
    }

    /// Canonical single-line form used as the run-log header.
    pub fn to_line(&self) -> String {
        format_kv(&self.to_kv())
    }
}
