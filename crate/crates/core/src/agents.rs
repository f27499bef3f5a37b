//! Off-policy learners over [`Mlp`] networks: a two-action DQN and a
//! single-output TD3 actor with twin critics, both fed from a uniform replay
//! buffer.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{mse_loss, Activation, Adam, AdamConfig, Mlp, NnError};
use crate::sim::{Action, MAX_ANGULAR_VELOCITY};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay buffer holds {size} transitions, {requested} requested")]
    Underfilled { size: usize, requested: usize },
    #[error("expected a batch of {expected}, got {got}")]
    BatchSize { expected: usize, got: usize },
    #[error("transition does not match the agent: {0}")]
    Transition(String),
    #[error("invalid agent config: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StoredAction {
    Discrete(usize),
    /// Normalized action in [-1, 1].
    Continuous(f32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: StoredAction,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub done: bool,
}

/// Fixed-capacity ring of transitions.
///
/// States live in flat arrays rather than one allocation per transition;
/// long-lived small blocks interleaved with the per-update temporaries
/// fragmented the heap badly over long runs.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    /// State width, fixed by the first push.
    width: usize,
    states: Vec<f32>,
    next_states: Vec<f32>,
    actions: Vec<StoredAction>,
    rewards: Vec<f32>,
    dones: Vec<bool>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            width: 0,
            states: Vec::new(),
            next_states: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            dones: Vec::new(),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    /// Appends, overwriting the oldest entry once full.
    ///
    /// # Panics
    /// If the state widths differ from each other or from earlier pushes.
    pub fn push(&mut self, transition: Transition) {
        let w = transition.state.len();
        assert_eq!(w, transition.next_state.len(), "state and next state widths differ");
        if self.is_empty() {
            self.width = w;
        }
        assert_eq!(w, self.width, "transition width differs from the buffer");
        if self.len() < self.capacity {
            self.states.extend_from_slice(&transition.state);
            self.next_states.extend_from_slice(&transition.next_state);
            self.actions.push(transition.action);
            self.rewards.push(transition.reward);
            self.dones.push(transition.done);
        } else {
            let i = self.next;
            self.states[i * w..(i + 1) * w].copy_from_slice(&transition.state);
            self.next_states[i * w..(i + 1) * w].copy_from_slice(&transition.next_state);
            self.actions[i] = transition.action;
            self.rewards[i] = transition.reward;
            self.dones[i] = transition.done;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Copy of the entry in storage slot `i`.
    fn get(&self, i: usize) -> Transition {
        let w = self.width;
        Transition {
            state: self.states[i * w..(i + 1) * w].to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_state: self.next_states[i * w..(i + 1) * w].to_vec(),
            done: self.dones[i],
        }
    }

    /// Uniform sample of `n` distinct entries.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>, AgentError> {
        if n > self.len() || n == 0 {
            return Err(AgentError::Underfilled {
                size: self.len(),
                requested: n,
            });
        }
        Ok(index::sample(rng, self.len(), n)
            .into_iter()
            .map(|i| self.get(i))
            .collect())
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        let split = if self.len() < self.capacity { 0 } else { self.next };
        (split..self.len()).chain(0..split).map(|i| self.get(i))
    }
}

fn stack_states<'a>(rows: impl Iterator<Item = &'a [f32]>, width: usize) -> Result<Vec<f32>, AgentError> {
    let mut out = Vec::new();
    for row in rows {
        if row.len() != width {
            return Err(AgentError::Transition(format!(
                "state of length {} for input width {width}",
                row.len()
            )));
        }
        out.extend_from_slice(row);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// DQN

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DqnConfig {
    pub learning_rate: f32,
    pub batch_size: usize,
    pub gamma: f32,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episodes over which epsilon decays linearly.
    pub epsilon_decay_episodes: u64,
    /// Gradient steps between hard target copies.
    pub target_sync_interval: u64,
    pub buffer_capacity: usize,
    /// Environment steps before the first update.
    pub learning_starts: u64,
    /// Fixed turn magnitude in rad/s.
    pub turn_rate: f64,
    pub hidden_layers: Vec<usize>,
}

impl Default for DqnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            gamma: 0.99,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_episodes: 2500,
            target_sync_interval: 1000,
            buffer_capacity: 100_000,
            learning_starts: 1000,
            turn_rate: 0.2,
            hidden_layers: vec![1024, 512],
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size || self.target_sync_interval == 0 {
            return bad("batch size, buffer capacity and target sync interval must be positive");
        }
        if !(self.turn_rate > 0.0 && self.turn_rate <= MAX_ANGULAR_VELOCITY) {
            return bad("turn rate must lie in (0, 0.4]");
        }
        Ok(())
    }

    /// Linear decay from `epsilon_start` to `epsilon_end`, then constant.
    pub fn epsilon(&self, episode: u64) -> f64 {
        if episode >= self.epsilon_decay_episodes {
            return self.epsilon_end;
        }
        let frac = episode as f64 / self.epsilon_decay_episodes as f64;
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    /// Angular velocity for a discrete action: 0 turns right, 1 turns left.
    pub fn angular_velocity(&self, action: usize) -> Action {
        let w = if action == 0 { -self.turn_rate } else { self.turn_rate };
        Action::clamped(w)
    }
}

pub fn dqn_network(obs_dim: usize, hidden: &[usize], actions: usize, seed: u64) -> Result<Mlp, NnError> {
    let sizes: Vec<usize> = std::iter::once(obs_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(actions))
        .collect();
    let mut activations = vec![Activation::Relu; hidden.len()];
    activations.push(Activation::Linear);
    Mlp::new(&sizes, &activations, seed)
}

/// Index of the largest value; earlier indices win ties.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Epsilon-greedy action over the Q-network outputs.
pub fn dqn_select<R: Rng + ?Sized>(qnet: &Mlp, obs: &[f32], epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..qnet.output_size()));
    }
    Ok(argmax(&qnet.predict(obs)?))
}

/// Bootstrapped targets `r + gamma * (1 - done) * max_a' Q_target(s', a')`.
pub fn dqn_targets(target: &Mlp, batch: &[Transition], gamma: f32) -> Result<Vec<f32>, AgentError> {
    let next = stack_states(batch.iter().map(|t| t.next_state.as_slice()), target.input_size())?;
    let q_next = target.predict(&next)?;
    let actions = target.output_size();
    Ok(batch
        .iter()
        .zip(q_next.chunks_exact(actions))
        .map(|(t, q)| {
            let bootstrap = if t.done { 0.0 } else { q[argmax(q)] };
            t.reward + gamma * bootstrap
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct DqnAgent {
    pub config: DqnConfig,
    pub qnet: Mlp,
    pub target: Mlp,
    pub optimizer: Adam,
    /// Gradient steps taken so far.
    pub updates: u64,
}

impl DqnAgent {
    pub const ACTIONS: usize = 2;

    pub fn new(obs_dim: usize, config: DqnConfig, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let qnet = dqn_network(obs_dim, &config.hidden_layers, Self::ACTIONS, seed)?;
        let target = qnet.clone();
        let optimizer = Adam::new(&qnet, AdamConfig::with_learning_rate(config.learning_rate));
        Ok(Self {
            config,
            qnet,
            target,
            optimizer,
            updates: 0,
        })
    }

    pub fn select<R: Rng + ?Sized>(&self, obs: &[f32], epsilon: f64, rng: &mut R) -> Result<usize, AgentError> {
        dqn_select(&self.qnet, obs, epsilon, rng)
    }

    /// One Adam step on the squared TD error of the sampled batch.
    pub fn update(&mut self, batch: &[Transition]) -> Result<f32, AgentError> {
        if batch.len() != self.config.batch_size {
            return Err(AgentError::BatchSize {
                expected: self.config.batch_size,
                got: batch.len(),
            });
        }
        let targets = dqn_targets(&self.target, batch, self.config.gamma)?;
        let states = stack_states(batch.iter().map(|t| t.state.as_slice()), self.qnet.input_size())?;
        let (q, cache) = self.qnet.forward(&states)?;
        let actions = self.qnet.output_size();
        let mut chosen = Vec::with_capacity(batch.len());
        let mut picks = Vec::with_capacity(batch.len());
        for (b, t) in batch.iter().enumerate() {
            let a = match t.action {
                StoredAction::Discrete(a) if a < actions => a,
                other => return Err(AgentError::Transition(format!("{other:?} is not a DQN action"))),
            };
            picks.push(a);
            chosen.push(q[b * actions + a]);
        }
        let (loss, grad_chosen) = mse_loss(&chosen, &targets)?;
        let mut grad = vec![0.0f32; q.len()];
        for (b, (&a, &g)) in picks.iter().zip(&grad_chosen).enumerate() {
            grad[b * actions + a] = g;
        }
        let grads = self.qnet.backward(&cache, &grad)?;
        self.optimizer.step(&mut self.qnet, &grads)?;
        self.updates += 1;
        if self.updates % self.config.target_sync_interval == 0 {
            self.target.copy_from(&self.qnet)?;
        }
        Ok(loss)
    }
}

// ---------------------------------------------------------------------------
// TD3

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Td3Config {
    pub actor_learning_rate: f32,
    pub critic_learning_rate: f32,
    pub batch_size: usize,
    pub gamma: f32,
    pub tau: f32,
    pub policy_delay: u64,
    /// Target policy smoothing noise, normalized action space.
    pub target_noise: f32,
    pub target_noise_clip: f32,
    pub exploration_noise: f32,
    /// Uniformly random steps before the policy acts.
    pub warmup_steps: u64,
    pub buffer_capacity: usize,
    /// rad/s per unit of normalized action.
    pub action_scale: f64,
    pub hidden_layers: Vec<usize>,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            actor_learning_rate: 1e-4,
            critic_learning_rate: 1e-3,
            batch_size: 32,
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            target_noise: 0.2,
            target_noise_clip: 0.5,
            exploration_noise: 0.1,
            warmup_steps: 1000,
            buffer_capacity: 100_000,
            action_scale: MAX_ANGULAR_VELOCITY,
            hidden_layers: vec![64, 64, 32],
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(self.target_noise >= 0.0 && self.target_noise_clip >= 0.0 && self.exploration_noise >= 0.0) {
            return bad("noise scales must be non-negative");
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size || self.policy_delay == 0 {
            return bad("batch size, buffer capacity and policy delay must be positive");
        }
        if (self.action_scale - MAX_ANGULAR_VELOCITY).abs() > 1e-12 {
            return bad("action scale is fixed at 0.4 rad/s");
        }
        Ok(())
    }

    pub fn angular_velocity(&self, normalized: f32) -> Action {
        Action::clamped(f64::from(normalized.clamp(-1.0, 1.0)) * self.action_scale)
    }
}

pub fn td3_actor(obs_dim: usize, hidden: &[usize], seed: u64) -> Result<Mlp, NnError> {
    let sizes: Vec<usize> = std::iter::once(obs_dim)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut activations = vec![Activation::Relu; hidden.len()];
    activations.push(Activation::Tanh);
    Mlp::new(&sizes, &activations, seed)
}

/// Critic over the state with the normalized action appended.
pub fn td3_critic(obs_dim: usize, hidden: &[usize], seed: u64) -> Result<Mlp, NnError> {
    let sizes: Vec<usize> = std::iter::once(obs_dim + 1)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(1))
        .collect();
    let mut activations = vec![Activation::Relu; hidden.len()];
    activations.push(Activation::Linear);
    Mlp::new(&sizes, &activations, seed)
}

/// Exploratory (or, with `sigma = 0`, deterministic) TD3 action.
/// Returns the normalized action and the scaled command.
pub fn td3_select<R: Rng + ?Sized>(
    actor: &Mlp,
    obs: &[f32],
    sigma: f32,
    action_scale: f64,
    rng: &mut R,
) -> Result<(f32, Action), AgentError> {
    let out = actor.predict(obs)?[0];
    let noise = if sigma > 0.0 {
        sigma * rng.sample::<f32, _>(StandardNormal)
    } else {
        0.0
    };
    let a = (out + noise).clamp(-1.0, 1.0);
    Ok((a, Action::clamped(f64::from(a) * action_scale)))
}

/// Clipped double-Q target.
pub fn td3_target_value(reward: f32, gamma: f32, done: bool, q1: f32, q2: f32) -> f32 {
    let bootstrap = if done { 0.0 } else { q1.min(q2) };
    reward + gamma * bootstrap
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Td3Losses {
    pub critic1: f32,
    pub critic2: f32,
    /// Present on delayed policy steps.
    pub actor: Option<f32>,
}

#[derive(Clone, Debug)]
pub struct Td3Agent {
    pub config: Td3Config,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub actor_target: Mlp,
    pub critic1_target: Mlp,
    pub critic2_target: Mlp,
    pub actor_optimizer: Adam,
    pub critic1_optimizer: Adam,
    pub critic2_optimizer: Adam,
    /// Critic updates taken so far.
    pub updates: u64,
}

fn with_action(states: &[f32], actions: &[f32], obs_dim: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(states.len() + actions.len());
    for (row, &a) in states.chunks_exact(obs_dim).zip(actions) {
        out.extend_from_slice(row);
        out.push(a);
    }
    out
}

impl Td3Agent {
    pub fn new(obs_dim: usize, config: Td3Config, seed: u64) -> Result<Self, AgentError> {
        config.validate()?;
        let actor = td3_actor(obs_dim, &config.hidden_layers, seed)?;
        let critic1 = td3_critic(obs_dim, &config.hidden_layers, seed.wrapping_add(1))?;
        let critic2 = td3_critic(obs_dim, &config.hidden_layers, seed.wrapping_add(2))?;
        Ok(Self {
            actor_optimizer: Adam::new(&actor, AdamConfig::with_learning_rate(config.actor_learning_rate)),
            critic1_optimizer: Adam::new(&critic1, AdamConfig::with_learning_rate(config.critic_learning_rate)),
            critic2_optimizer: Adam::new(&critic2, AdamConfig::with_learning_rate(config.critic_learning_rate)),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            updates: 0,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_size()
    }

    pub fn select<R: Rng + ?Sized>(&self, obs: &[f32], sigma: f32, rng: &mut R) -> Result<(f32, Action), AgentError> {
        td3_select(&self.actor, obs, sigma, self.config.action_scale, rng)
    }

    /// Targets for a batch; exposed so the min-of-critics rule can be inspected.
    pub fn targets<R: Rng + ?Sized>(&self, batch: &[Transition], rng: &mut R) -> Result<Vec<TargetTerms>, AgentError> {
        let obs_dim = self.obs_dim();
        let next = stack_states(batch.iter().map(|t| t.next_state.as_slice()), obs_dim)?;
        let clip = self.config.target_noise_clip;
        let next_actions: Vec<f32> = self
            .actor_target
            .predict(&next)?
            .into_iter()
            .map(|a| {
                let noise = if self.config.target_noise > 0.0 {
                    (self.config.target_noise * rng.sample::<f32, _>(StandardNormal)).clamp(-clip, clip)
                } else {
                    0.0
                };
                (a + noise).clamp(-1.0, 1.0)
            })
            .collect();
        let input = with_action(&next, &next_actions, obs_dim);
        let q1 = self.critic1_target.predict(&input)?;
        let q2 = self.critic2_target.predict(&input)?;
        Ok(batch
            .iter()
            .zip(q1.iter().zip(&q2))
            .map(|(t, (&q1, &q2))| TargetTerms {
                q1,
                q2,
                target: td3_target_value(t.reward, self.config.gamma, t.done, q1, q2),
            })
            .collect())
    }

    pub fn update<R: Rng + ?Sized>(&mut self, batch: &[Transition], rng: &mut R) -> Result<Td3Losses, AgentError> {
        if batch.len() != self.config.batch_size {
            return Err(AgentError::BatchSize {
                expected: self.config.batch_size,
                got: batch.len(),
            });
        }
        let obs_dim = self.obs_dim();
        let targets: Vec<f32> = self.targets(batch, rng)?.into_iter().map(|t| t.target).collect();
        let states = stack_states(batch.iter().map(|t| t.state.as_slice()), obs_dim)?;
        let actions = batch
            .iter()
            .map(|t| match t.action {
                StoredAction::Continuous(a) => Ok(a),
                other => Err(AgentError::Transition(format!("{other:?} is not a TD3 action"))),
            })
            .collect::<Result<Vec<f32>, _>>()?;
        let critic_input = with_action(&states, &actions, obs_dim);

        let critic_step = |critic: &mut Mlp, optimizer: &mut Adam| -> Result<f32, AgentError> {
            let (q, cache) = critic.forward(&critic_input)?;
            let (loss, grad) = mse_loss(&q, &targets)?;
            let grads = critic.backward(&cache, &grad)?;
            optimizer.step(critic, &grads)?;
            Ok(loss)
        };
        let critic1 = critic_step(&mut self.critic1, &mut self.critic1_optimizer)?;
        let critic2 = critic_step(&mut self.critic2, &mut self.critic2_optimizer)?;
        self.updates += 1;

        let actor = if self.updates % self.config.policy_delay == 0 {
            let loss = self.actor_step(&states)?;
            let tau = self.config.tau;
            self.actor_target.soft_update_from(&self.actor, tau)?;
            self.critic1_target.soft_update_from(&self.critic1, tau)?;
            self.critic2_target.soft_update_from(&self.critic2, tau)?;
            Some(loss)
        } else {
            None
        };
        Ok(Td3Losses {
            critic1,
            critic2,
            actor,
        })
    }

    /// Gradient ascent on `Q1(s, actor(s))`; returns `-mean Q1`.
    fn actor_step(&mut self, states: &[f32]) -> Result<f32, AgentError> {
        let obs_dim = self.obs_dim();
        let (pi, actor_cache) = self.actor.forward(states)?;
        let input = with_action(states, &pi, obs_dim);
        let (q, critic_cache) = self.critic1.forward(&input)?;
        let n = q.len() as f32;
        let grad_q = vec![-1.0 / n; q.len()];
        let critic_grads = self.critic1.backward(&critic_cache, &grad_q)?;
        let grad_pi: Vec<f32> = critic_grads
            .input
            .chunks_exact(obs_dim + 1)
            .map(|row| row[obs_dim])
            .collect();
        let grads = self.actor.backward(&actor_cache, &grad_pi)?;
        self.actor_optimizer.step(&mut self.actor, &grads)?;
        Ok(-q.iter().sum::<f32>() / n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TargetTerms {
    pub q1: f32,
    pub q2: f32,
    pub target: f32,
}
