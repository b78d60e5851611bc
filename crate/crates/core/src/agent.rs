//! Double-DQN agent: epsilon-greedy acting, uniform experience replay and
//! double-Q bootstrapped targets.

use std::collections::VecDeque;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::ObservationVector;
use crate::nn::{Mlp, NnError};

/// Stream used by the agent's acting/sampling generator.
pub const AGENT_RNG_STREAM: u64 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("insufficient experience: requested {requested} transitions, buffer holds {available}")]
    InsufficientExperience { requested: usize, available: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("invalid agent config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: ObservationVector,
    pub action: usize,
    pub reward: f64,
    pub next_state: ObservationVector,
    pub done: bool,
}

/// FIFO replay memory `D`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: VecDeque<Transition>,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            storage: VecDeque::with_capacity(capacity.min(1 << 16)),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() == self.capacity {
            self.storage.pop_front();
        }
        self.storage.push_back(t);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.storage.iter()
    }

    /// `k` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>, AgentError> {
        if k > self.storage.len() {
            return Err(AgentError::InsufficientExperience {
                requested: k,
                available: self.storage.len(),
            });
        }
        let n = self.storage.len();
        Ok((0..k).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample<R: Rng>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>, AgentError> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| &self.storage[i])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpsilonDecay {
    /// Straight line from `start` (t = 0) to `end` (t = horizon - 1), indexed
    /// by episode.
    LinearPerEpisode,
    /// `end + (start - end) * exp(-5 t / horizon)`, indexed by environment
    /// step, clamped to `end` from the horizon on.
    ExponentialPerStep,
}

impl EpsilonDecay {
    pub fn name(&self) -> &'static str {
        match self {
            EpsilonDecay::LinearPerEpisode => "linear_per_episode",
            EpsilonDecay::ExponentialPerStep => "exponential_per_step",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay: EpsilonDecay,
    pub horizon: u64,
}

impl EpsilonSchedule {
    pub fn linear(start: f64, end: f64, episodes: u64) -> Self {
        Self {
            start,
            end,
            decay: EpsilonDecay::LinearPerEpisode,
            horizon: episodes,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::linear(value, value, 1)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |field, reason: &str| {
            Err(AgentError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(0.0..=1.0).contains(&self.start) {
            return bad("epsilon_start", "must lie in [0, 1]");
        }
        if !(self.end >= 0.0 && self.end <= self.start) {
            return bad("epsilon_end", "must lie in [0, epsilon_start]");
        }
        if self.horizon == 0 {
            return bad("epsilon_horizon", "must be positive");
        }
        Ok(())
    }

    pub fn value(&self, t: u64) -> f64 {
        if t == 0 {
            return self.start;
        }
        match self.decay {
            EpsilonDecay::LinearPerEpisode => {
                let last = self.horizon.saturating_sub(1);
                if t >= last {
                    self.end
                } else {
                    self.start + (self.end - self.start) * (t as f64 / last as f64)
                }
            }
            EpsilonDecay::ExponentialPerStep => {
                if t >= self.horizon {
                    self.end
                } else {
                    let frac = t as f64 / self.horizon as f64;
                    self.end + (self.start - self.end) * (-5.0 * frac).exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightInit {
    Glorot,
    Zeros,
}

impl WeightInit {
    pub fn name(&self) -> &'static str {
        match self {
            WeightInit::Glorot => "glorot",
            WeightInit::Zeros => "zeros",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub learning_rate: f64,
    pub target_sync_interval: u64,
    pub hidden_layers: Vec<usize>,
    /// Global gradient-norm cap; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub weight_init: WeightInit,
    pub epsilon: EpsilonSchedule,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            replay_capacity: 10_000,
            learning_rate: 1e-3,
            target_sync_interval: 100,
            hidden_layers: vec![256, 256],
            grad_clip: None,
            weight_init: WeightInit::Glorot,
            epsilon: EpsilonSchedule::linear(0.93, 0.08, 200),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |field, reason: &str| {
            Err(AgentError::InvalidConfig {
                field,
                reason: reason.into(),
            })
        };
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma", "must lie in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if self.replay_capacity < self.batch_size {
            return bad("replay_capacity", "must be at least batch_size");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.target_sync_interval == 0 {
            return bad("target_sync_interval", "must be positive");
        }
        if self.hidden_layers.iter().any(|&h| h == 0) {
            return bad("hidden_layers", "widths must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return bad("grad_clip", "must be positive when set");
            }
        }
        self.epsilon.validate()
    }
}

/// First index of the maximum; NaNs never win.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct DdqnAgent {
    online: Mlp,
    target: Mlp,
    buffer: ReplayBuffer,
    config: AgentConfig,
    rng: ChaCha8Rng,
    updates: u64,
}

impl DdqnAgent {
    pub fn new(num_channels: usize, config: AgentConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let mut online = Mlp::q_network(num_channels, &config.hidden_layers);
        if config.weight_init == WeightInit::Glorot {
            online.init_parameters(seed);
        }
        let target = online.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(AGENT_RNG_STREAM);
        Ok(Self {
            online,
            target,
            buffer: ReplayBuffer::new(config.replay_capacity),
            config,
            rng,
            updates: 0,
        })
    }

    /// Reassembles an agent from persisted parts; the replay buffer starts
    /// empty.
    pub fn from_parts(
        online: Mlp,
        target: Mlp,
        config: AgentConfig,
        rng: ChaCha8Rng,
        updates: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if online.shape() != target.shape() {
            return Err(NnError::ArchitectureMismatch("online and target differ".into()).into());
        }
        Ok(Self {
            online,
            target,
            buffer: ReplayBuffer::new(config.replay_capacity),
            config,
            rng,
            updates,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn online(&self) -> &Mlp {
        &self.online
    }

    pub fn online_mut(&mut self) -> &mut Mlp {
        &mut self.online
    }

    pub fn target(&self) -> &Mlp {
        &self.target
    }

    pub fn target_mut(&mut self) -> &mut Mlp {
        &mut self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// Learning steps that applied a gradient update.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn num_channels(&self) -> usize {
        self.online.output_dim()
    }

    pub fn epsilon(&self, exploration_t: u64) -> f64 {
        self.config.epsilon.value(exploration_t)
    }

    pub fn q_values(&self, state: &ObservationVector) -> Result<Vec<f64>, AgentError> {
        Ok(self.online.forward(state.normalized())?)
    }

    /// Epsilon-greedy action. One uniform draw decides exploration on every
    /// call so the generator advances identically regardless of epsilon.
    pub fn act(&mut self, state: &ObservationVector, exploration_t: u64) -> Result<usize, AgentError> {
        let eps = self.epsilon(exploration_t);
        let explore = self.rng.random::<f64>() < eps;
        if explore {
            Ok(self.rng.random_range(0..self.num_channels()))
        } else {
            self.greedy_policy(state)
        }
    }

    /// Argmax of the online network, lowest index on ties.
    pub fn greedy_policy(&self, state: &ObservationVector) -> Result<usize, AgentError> {
        Ok(argmax(&self.q_values(state)?))
    }

    pub fn remember(&mut self, t: Transition) {
        self.buffer.push(t);
    }

    /// `r` if terminal, else `r + gamma * Q_target(s', argmax_a Q_online(s', a))`.
    pub fn compute_target(&self, t: &Transition) -> Result<f64, AgentError> {
        if t.done {
            return Ok(t.reward);
        }
        let next = t.next_state.normalized();
        let best = argmax(&self.online.forward(next)?);
        let q_target = self.target.forward(next)?;
        Ok(t.reward + self.config.gamma * q_target[best])
    }

    /// One minibatch update. Returns `None` while the buffer holds fewer than
    /// `batch_size` transitions.
    pub fn learn(&mut self) -> Result<Option<f64>, AgentError> {
        let k = self.config.batch_size;
        if self.buffer.len() < k {
            return Ok(None);
        }
        let idx = self.buffer.sample_indices(k, &mut self.rng)?;
        let n = self.online.input_dim();
        let mut states = Array2::<f64>::zeros((k, n));
        let mut next_states = Array2::<f64>::zeros((k, n));
        let mut actions = Vec::with_capacity(k);
        for (row, &i) in idx.iter().enumerate() {
            let t = &self.buffer.storage[i];
            states.row_mut(row).assign(&ndarray::aview1(t.state.normalized()));
            next_states
                .row_mut(row)
                .assign(&ndarray::aview1(t.next_state.normalized()));
            actions.push(t.action);
        }

        // every target is fixed before the online net moves
        let online_next = self.online.forward_batch(next_states.view())?;
        let target_next = self.target.forward_batch(next_states.view())?;
        let targets: Vec<f64> = idx
            .iter()
            .enumerate()
            .map(|(row, &i)| {
                let t = &self.buffer.storage[i];
                if t.done {
                    t.reward
                } else {
                    let q_row = online_next.row(row);
                    let best = argmax(q_row.as_slice().expect("row-major"));
                    t.reward + self.config.gamma * target_next[[row, best]]
                }
            })
            .collect();

        let (loss, mut grads) = self.online.backward_batch(states.view(), &actions, &targets)?;
        if let Some(max_norm) = self.config.grad_clip {
            grads.clip_norm(max_norm);
        }
        self.online.sgd_step(&grads, self.config.learning_rate)?;
        self.updates += 1;
        if self.updates % self.config.target_sync_interval == 0 {
            self.sync_target();
        }
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target
            .copy_parameters_from(&self.online)
            .expect("online and target share an architecture");
    }
}
