//! Multi-channel radio environment with an oblivious jammer.
//!
//! Each slot the transmitter picks a channel while the jammer occupies one.
//! Both commit at the same time: the reward uses the jammer channel in effect
//! during the slot, and the observation returned by [`ChannelEnv::step`]
//! already shows where the jammer will sit during the next slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Stream id of the environment's generator. Agents draw from other streams
/// of the same seed.
pub const ENV_RNG_STREAM: u64 = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("invalid environment config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("action {action} out of range for {num_channels} channels")]
    ActionOutOfRange { action: usize, num_channels: usize },
    #[error("episode is done; call reset before stepping again")]
    EpisodeDone,
}

fn invalid(field: &'static str, reason: impl Into<String>) -> EnvError {
    EnvError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

/// Per-slot utility of an unjammed channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UtilityMode {
    /// Every unjammed channel is worth exactly 1.
    Binary,
    /// Normalized Shannon rate `log2(1 + S/(p_i + n)) / log2(1 + S/n)`.
    Sinr { signal_power: f64 },
}

impl UtilityMode {
    pub fn name(&self) -> &'static str {
        match self {
            UtilityMode::Binary => "binary",
            UtilityMode::Sinr { .. } => "sinr",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub num_channels: usize,
    pub steps_per_episode: usize,
    pub switching_cost: f64,
    pub jammer_power: f64,
    pub noise_floor: f64,
    pub adjacent_leakage: f64,
    pub utility: UtilityMode,
    pub rng_seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_channels: 10,
            steps_per_episode: 100,
            switching_cost: 0.1,
            jammer_power: 1.0,
            noise_floor: 0.01,
            adjacent_leakage: 0.0,
            utility: UtilityMode::Binary,
            rng_seed: 0,
        }
    }
}

impl EnvConfig {
    /// Largest utility any slot can yield. Both modes are normalized to 1.
    pub fn max_utility(&self) -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_channels < 2 {
            return Err(invalid("num_channels", "must be at least 2"));
        }
        if self.steps_per_episode == 0 {
            return Err(invalid("steps_per_episode", "must be positive"));
        }
        if !(self.jammer_power.is_finite() && self.jammer_power > 0.0) {
            return Err(invalid("jammer_power", "must be a positive finite number"));
        }
        if !(self.noise_floor.is_finite() && self.noise_floor >= 0.0) {
            return Err(invalid("noise_floor", "must be a nonnegative finite number"));
        }
        if !(self.adjacent_leakage >= 0.0 && self.adjacent_leakage < 1.0) {
            return Err(invalid("adjacent_leakage", "must lie in [0, 1)"));
        }
        if !(self.switching_cost.is_finite() && self.switching_cost >= 0.0) {
            return Err(invalid("switching_cost", "must be nonnegative"));
        }
        if self.switching_cost >= self.max_utility() {
            return Err(invalid(
                "switching_cost",
                format!(
                    "{} is not below the maximum per-step utility {}",
                    self.switching_cost,
                    self.max_utility()
                ),
            ));
        }
        if let UtilityMode::Sinr { signal_power } = self.utility {
            if !(signal_power.is_finite() && signal_power > 0.0) {
                return Err(invalid("signal_power", "must be positive in sinr mode"));
            }
            if self.noise_floor <= 0.0 {
                return Err(invalid("noise_floor", "must be positive in sinr mode"));
            }
        }
        Ok(())
    }

    /// Divisor mapping raw powers into `[0, 1]`.
    pub fn normalization(&self) -> f64 {
        self.jammer_power + self.noise_floor
    }

    /// Utility of transmitting on a channel whose received interference is
    /// `interference` (raw linear units).
    pub fn utility_at(&self, interference: f64) -> f64 {
        match self.utility {
            UtilityMode::Binary => 1.0,
            UtilityMode::Sinr { signal_power } => {
                let n = self.noise_floor;
                (1.0 + signal_power / (interference + n)).log2() / (1.0 + signal_power / n).log2()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepDirection {
    Up,
    Down,
}

impl SweepDirection {
    pub fn name(&self) -> &'static str {
        match self {
            SweepDirection::Up => "up",
            SweepDirection::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JammerKind {
    Fixed {
        channel: usize,
    },
    Sweep {
        start: usize,
        stride: usize,
        direction: SweepDirection,
    },
    RandomUniform,
    /// Stays put with `stay_probability`, otherwise hops to a uniformly drawn
    /// different channel.
    Markov {
        stay_probability: f64,
    },
}

impl JammerKind {
    pub fn name(&self) -> &'static str {
        match self {
            JammerKind::Fixed { .. } => "fixed",
            JammerKind::Sweep { .. } => "sweep",
            JammerKind::RandomUniform => "random",
            JammerKind::Markov { .. } => "markov",
        }
    }

    pub fn validate(&self, num_channels: usize) -> Result<(), EnvError> {
        match *self {
            JammerKind::Fixed { channel } if channel >= num_channels => {
                Err(invalid("jammer_channel", format!("{channel} is not below {num_channels}")))
            }
            JammerKind::Sweep { start, .. } if start >= num_channels => {
                Err(invalid("jammer_channel", format!("{start} is not below {num_channels}")))
            }
            JammerKind::Sweep { stride: 0, .. } => Err(invalid("jammer_stride", "must be at least 1")),
            JammerKind::Markov { stay_probability } if !(0.0..=1.0).contains(&stay_probability) => {
                Err(invalid("jammer_stay_probability", "must lie in [0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

/// Jammer dynamics plus its current channel `f_J`.
#[derive(Debug, Clone, PartialEq)]
pub struct JammerModel {
    kind: JammerKind,
    current: usize,
}

impl JammerModel {
    pub fn new(kind: JammerKind) -> Self {
        let current = match kind {
            JammerKind::Fixed { channel } => channel,
            JammerKind::Sweep { start, .. } => start,
            _ => 0,
        };
        Self { kind, current }
    }

    pub fn kind(&self) -> JammerKind {
        self.kind
    }

    pub fn channel(&self) -> usize {
        self.current
    }

    /// Places the jammer at its initial channel for a new episode.
    pub fn reset<R: Rng>(&mut self, num_channels: usize, rng: &mut R) {
        self.current = match self.kind {
            JammerKind::Fixed { channel } => channel,
            JammerKind::Sweep { start, .. } => start,
            JammerKind::RandomUniform | JammerKind::Markov { .. } => rng.random_range(0..num_channels),
        };
    }

    pub fn advance<R: Rng>(&mut self, num_channels: usize, rng: &mut R) {
        self.current = match self.kind {
            JammerKind::Fixed { channel } => channel,
            JammerKind::Sweep {
                stride, direction, ..
            } => {
                let n = num_channels as i64;
                let step = (stride as i64) % n;
                let delta = match direction {
                    SweepDirection::Up => step,
                    SweepDirection::Down => -step,
                };
                (self.current as i64 + delta).rem_euclid(n) as usize
            }
            JammerKind::RandomUniform => rng.random_range(0..num_channels),
            JammerKind::Markov { stay_probability } => {
                if rng.random::<f64>() < stay_probability {
                    self.current
                } else {
                    // uniform over the other n-1 channels
                    let hop = rng.random_range(1..num_channels);
                    (self.current + hop) % num_channels
                }
            }
        };
    }
}

/// Per-channel received power `P_t`, raw and normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationVector {
    powers: Vec<f64>,
    normalized: Vec<f64>,
}

impl ObservationVector {
    pub fn new(powers: Vec<f64>, normalization: f64) -> Self {
        let normalized = powers.iter().map(|p| p / normalization).collect();
        Self { powers, normalized }
    }

    /// Builds an observation from an already-normalized vector.
    pub fn from_normalized(values: Vec<f64>) -> Self {
        Self {
            powers: values.clone(),
            normalized: values,
        }
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    pub fn len(&self) -> usize {
        self.powers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.powers.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepInfo {
    pub jammed: bool,
    pub switched: bool,
    pub jammer_channel: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: ObservationVector,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// Reward for one slot: exactly 0 when the transmitter sits on the jammed
/// channel, otherwise `utility - switching_cost * [action != prev_action]`.
/// No switching cost is charged when there is no previous action.
pub fn compute_reward(
    transmit_channel: usize,
    jammer_channel: usize,
    action: usize,
    prev_action: Option<usize>,
    utility: f64,
    switching_cost: f64,
) -> f64 {
    if transmit_channel == jammer_channel {
        return 0.0;
    }
    let switched = prev_action.is_some_and(|prev| prev != action);
    if switched {
        utility - switching_cost
    } else {
        utility
    }
}

/// Raw received powers for a jammer on `jammer_channel`: full jammer power on
/// that channel, `adjacent_leakage` of it on the immediate (non-wrapping)
/// neighbours, plus uniform noise in `[0, noise_floor]` on every channel.
pub fn received_powers<R: Rng>(jammer_channel: usize, config: &EnvConfig, rng: &mut R) -> Vec<f64> {
    let leak = config.adjacent_leakage * config.jammer_power;
    (0..config.num_channels)
        .map(|i| {
            let jam = if i == jammer_channel {
                config.jammer_power
            } else if i.abs_diff(jammer_channel) == 1 {
                leak
            } else {
                0.0
            };
            jam + config.noise_floor * rng.random::<f64>()
        })
        .collect()
}

/// Jammed channel-selection environment. Episodes last
/// `steps_per_episode` slots.
#[derive(Debug, Clone)]
pub struct ChannelEnv {
    config: EnvConfig,
    jammer: JammerModel,
    rng: ChaCha8Rng,
    step: usize,
    prev_action: Option<usize>,
    powers: Vec<f64>,
}

impl ChannelEnv {
    pub fn new(config: EnvConfig, jammer: JammerKind) -> Result<Self, EnvError> {
        config.validate()?;
        jammer.validate(config.num_channels)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        rng.set_stream(ENV_RNG_STREAM);
        let mut env = Self {
            jammer: JammerModel::new(jammer),
            powers: vec![0.0; config.num_channels],
            config,
            rng,
            step: 0,
            prev_action: None,
        };
        env.reset();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn jammer(&self) -> &JammerModel {
        &self.jammer
    }

    pub fn num_channels(&self) -> usize {
        self.config.num_channels
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.config.steps_per_episode
    }

    fn observation(&self) -> ObservationVector {
        ObservationVector::new(self.powers.clone(), self.config.normalization())
    }

    pub fn reset(&mut self) -> ObservationVector {
        self.step = 0;
        self.prev_action = None;
        self.jammer.reset(self.config.num_channels, &mut self.rng);
        self.powers = received_powers(self.jammer.channel(), &self.config, &mut self.rng);
        self.observation()
    }

    pub fn step(&mut self, action: usize) -> Result<StepOutcome, EnvError> {
        let n = self.config.num_channels;
        if action >= n {
            return Err(EnvError::ActionOutOfRange {
                action,
                num_channels: n,
            });
        }
        if self.is_done() {
            return Err(EnvError::EpisodeDone);
        }
        let jammer_channel = self.jammer.channel();
        let utility = self.config.utility_at(self.powers[action]);
        let reward = compute_reward(
            action,
            jammer_channel,
            action,
            self.prev_action,
            utility,
            self.config.switching_cost,
        );
        let info = StepInfo {
            jammed: action == jammer_channel,
            switched: self.prev_action.is_some_and(|p| p != action),
            jammer_channel,
        };
        self.prev_action = Some(action);
        self.step += 1;
        self.jammer.advance(n, &mut self.rng);
        self.powers = received_powers(self.jammer.channel(), &self.config, &mut self.rng);
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.is_done(),
            info,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(n: usize, leakage: f64) -> EnvConfig {
        EnvConfig {
            num_channels: n,
            steps_per_episode: 100,
            noise_floor: 0.0,
            adjacent_leakage: leakage,
            ..EnvConfig::default()
        }
    }

    #[test]
    fn reset_fixed_jammer_one_hot() {
        let mut env = ChannelEnv::new(quiet(4, 0.0), JammerKind::Fixed { channel: 2 }).unwrap();
        assert_eq!(env.reset().powers(), &[0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn reset_with_leakage() {
        let mut env = ChannelEnv::new(quiet(4, 0.5), JammerKind::Fixed { channel: 2 }).unwrap();
        assert_eq!(env.reset().powers(), &[0.0, 0.5, 1.0, 0.5]);
    }

    #[test]
    fn leakage_does_not_wrap() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(received_powers(0, &quiet(3, 0.5), &mut rng), vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn switching_cost_at_or_above_utility_rejected() {
        let cfg = EnvConfig {
            num_channels: 2,
            switching_cost: 1.5,
            ..EnvConfig::default()
        };
        assert!(matches!(
            ChannelEnv::new(cfg, JammerKind::RandomUniform),
            Err(EnvError::InvalidConfig { field: "switching_cost", .. })
        ));
    }

    #[test]
    fn zero_jammer_power_rejected() {
        let cfg = EnvConfig {
            jammer_power: 0.0,
            ..EnvConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(EnvError::InvalidConfig { field: "jammer_power", .. })
        ));
    }

    #[test]
    fn single_channel_rejected() {
        let cfg = EnvConfig {
            num_channels: 1,
            ..EnvConfig::default()
        };
        assert!(matches!(
            cfg.validate(),
            Err(EnvError::InvalidConfig { field: "num_channels", .. })
        ));
    }

    #[test]
    fn sweep_visits_in_order() {
        let jammer = JammerKind::Sweep {
            start: 0,
            stride: 1,
            direction: SweepDirection::Up,
        };
        let mut env = ChannelEnv::new(quiet(4, 0.0), jammer).unwrap();
        env.reset();
        let seen: Vec<usize> = (0..5).map(|_| env.step(0).unwrap().info.jammer_channel).collect();
        assert_eq!(seen, vec![0, 1, 2, 3, 0]);
    }

    #[test]
    fn sweep_down_wraps() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut j = JammerModel::new(JammerKind::Sweep {
            start: 1,
            stride: 3,
            direction: SweepDirection::Down,
        });
        j.advance(5, &mut rng);
        assert_eq!(j.channel(), 3);
    }

    #[test]
    fn jammed_step_scores_zero() {
        let jammer = JammerKind::Fixed { channel: 3 };
        let mut env = ChannelEnv::new(quiet(4, 0.0), jammer).unwrap();
        env.reset();
        let out = env.step(3).unwrap();
        assert_eq!(out.reward, 0.0);
        assert!(out.info.jammed);
    }

    #[test]
    fn staying_put_costs_nothing() {
        let mut env = ChannelEnv::new(quiet(4, 0.0), JammerKind::Fixed { channel: 3 }).unwrap();
        env.reset();
        env.step(1).unwrap();
        let out = env.step(1).unwrap();
        assert_eq!(out.reward, 1.0);
        assert!(!out.info.switched);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(compute_reward(2, 2, 2, Some(0), 1.0, 0.1), 0.0);
        assert_eq!(compute_reward(1, 2, 1, Some(0), 1.0, 0.1), 0.9);
        assert_eq!(compute_reward(1, 2, 1, None, 1.0, 0.1), 1.0);
    }

    #[test]
    fn out_of_range_and_after_done() {
        let cfg = EnvConfig {
            steps_per_episode: 2,
            ..quiet(3, 0.0)
        };
        let mut env = ChannelEnv::new(cfg, JammerKind::Fixed { channel: 0 }).unwrap();
        env.reset();
        assert!(matches!(env.step(3), Err(EnvError::ActionOutOfRange { .. })));
        assert!(!env.step(1).unwrap().done);
        assert!(env.step(1).unwrap().done);
        assert_eq!(env.step(1), Err(EnvError::EpisodeDone));
        env.reset();
        // the first step of a fresh episode never pays a switching cost
        assert_eq!(env.step(2).unwrap().reward, 1.0);
    }

    #[test]
    fn sinr_utility_is_normalized() {
        let cfg = EnvConfig {
            utility: UtilityMode::Sinr { signal_power: 1.0 },
            noise_floor: 0.01,
            ..EnvConfig::default()
        };
        assert!((cfg.utility_at(0.0) - 1.0).abs() < 1e-12);
        let u = cfg.utility_at(0.5);
        assert!(u > 0.0 && u < 1.0);
    }

    #[test]
    fn markov_always_stays_with_probability_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut j = JammerModel::new(JammerKind::Markov { stay_probability: 1.0 });
        j.reset(6, &mut rng);
        let c = j.channel();
        for _ in 0..50 {
            j.advance(6, &mut rng);
            assert_eq!(j.channel(), c);
        }
    }

    #[test]
    fn markov_never_stays_with_probability_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut j = JammerModel::new(JammerKind::Markov { stay_probability: 0.0 });
        j.reset(3, &mut rng);
        for _ in 0..50 {
            let before = j.channel();
            j.advance(3, &mut rng);
            assert_ne!(j.channel(), before);
        }
    }
}
