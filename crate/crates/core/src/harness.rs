//! Training protocol, evaluation suites, and per-episode reporting.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{
    argmax, AgentError, DqnAgent, DqnConfig, ReplayBuffer, StoredAction, Td3Agent, Td3Config, Transition,
};
use crate::nn::{Mlp, NnError};
use crate::sim::{
    Action, EnvConfig, Observation, RacingEnv, SimError, TerminationKind, OBSERVATION_DIM,
};
use crate::track::{generate_oval, generate_track, segment_variants, Direction, NoiseConfig, SegmentSpec, Track, TrackError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no episodes to summarize")]
    EmptyResults,
    #[error(transparent)]
    Track(#[from] TrackError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("worker pool: {0}")]
    Pool(String),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dqn,
    Td3,
}

impl Algo {
    pub const SUPPORTED: &'static str = "dqn, td3";

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Dqn => "dqn",
            Algo::Td3 => "td3",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dqn" => Ok(Algo::Dqn),
            "td3" => Ok(Algo::Td3),
            other => Err(format!("unsupported algorithm '{other}' (supported: {})", Algo::SUPPORTED)),
        }
    }
}

/// Independent generator for one episode (or evaluation run) of a seeded experiment.
pub fn episode_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream reserved for network initialization.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub episodes: u64,
    pub max_steps: usize,
    pub checkpoint_interval: u64,
    pub noise: bool,
    pub seed: u64,
    pub env: EnvConfig,
    pub dqn: DqnConfig,
    pub td3: Td3Config,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Td3,
            episodes: 5000,
            max_steps: 2000,
            checkpoint_interval: 500,
            noise: false,
            seed: 0,
            env: EnvConfig::default(),
            dqn: DqnConfig::default(),
            td3: Td3Config::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 || self.max_steps == 0 {
            return Err(HarnessError::Config("episodes and max_steps must be positive".into()));
        }
        if self.checkpoint_interval == 0 || self.episodes % self.checkpoint_interval != 0 {
            return Err(HarnessError::Config(format!(
                "checkpoint_interval {} must divide episodes {}",
                self.checkpoint_interval, self.episodes
            )));
        }
        self.env_config().validate()?;
        match self.algo {
            Algo::Dqn => self.dqn.validate()?,
            Algo::Td3 => self.td3.validate()?,
        }
        Ok(())
    }

    /// Environment settings with the episode step limit applied.
    pub fn env_config(&self) -> EnvConfig {
        EnvConfig {
            max_steps: self.max_steps,
            ..self.env
        }
    }

    /// SHA-256 over the canonical JSON of the fully resolved config.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// A learner plus its bookkeeping, in the form saved to checkpoints.
#[derive(Clone, Debug)]
pub enum Learner {
    Dqn(DqnAgent),
    Td3(Td3Agent),
}

impl Learner {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let init_seed = episode_rng(cfg.seed, INIT_STREAM).random::<u64>();
        Ok(match cfg.algo {
            Algo::Dqn => Learner::Dqn(DqnAgent::new(OBSERVATION_DIM, cfg.dqn.clone(), init_seed)?),
            Algo::Td3 => Learner::Td3(Td3Agent::new(OBSERVATION_DIM, cfg.td3.clone(), init_seed)?),
        })
    }

    pub fn algo(&self) -> Algo {
        match self {
            Learner::Dqn(_) => Algo::Dqn,
            Learner::Td3(_) => Algo::Td3,
        }
    }

    pub fn updates(&self) -> u64 {
        match self {
            Learner::Dqn(a) => a.updates,
            Learner::Td3(a) => a.updates,
        }
    }

    fn buffer_capacity(&self) -> usize {
        match self {
            Learner::Dqn(a) => a.config.buffer_capacity,
            Learner::Td3(a) => a.config.buffer_capacity,
        }
    }

    /// Exploratory action for training.
    fn explore<R: Rng + ?Sized>(
        &self,
        obs: &[f32],
        episode: u64,
        total_steps: u64,
        rng: &mut R,
    ) -> Result<(StoredAction, Action)> {
        Ok(match self {
            Learner::Dqn(a) => {
                let eps = a.config.epsilon(episode);
                let idx = a.select(obs, eps, rng)?;
                (StoredAction::Discrete(idx), a.config.angular_velocity(idx))
            }
            Learner::Td3(a) => {
                let norm = if total_steps < a.config.warmup_steps {
                    rng.random_range(-1.0f32..=1.0)
                } else {
                    a.select(obs, a.config.exploration_noise, rng)?.0
                };
                (StoredAction::Continuous(norm), a.config.angular_velocity(norm))
            }
        })
    }

    /// One gradient step when the buffer and warmup allow it.
    fn maybe_update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, total_steps: u64, rng: &mut R) -> Result<()> {
        match self {
            Learner::Dqn(a) => {
                if total_steps >= a.config.learning_starts && buffer.len() >= a.config.batch_size {
                    let batch = buffer.sample(a.config.batch_size, rng)?;
                    a.update(&batch)?;
                }
            }
            Learner::Td3(a) => {
                if total_steps >= a.config.warmup_steps && buffer.len() >= a.config.batch_size {
                    let batch = buffer.sample(a.config.batch_size, rng)?;
                    a.update(&batch, rng)?;
                }
            }
        }
        Ok(())
    }

    /// Deterministic policy view of the current parameters.
    pub fn policy(&self) -> NetworkPolicy {
        match self {
            Learner::Dqn(a) => NetworkPolicy::dqn(a.qnet.clone(), a.config.turn_rate),
            Learner::Td3(a) => NetworkPolicy::td3(a.actor.clone(), a.config.action_scale),
        }
    }
}

/// One row of the training reward log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    pub total_reward: f64,
    pub steps: usize,
    pub termination: TerminationKind,
    pub progress: f64,
}

pub const REWARD_LOG_HEADER: &str = "episode,total_reward,steps,termination,progress";

impl EpisodeLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.total_reward, self.steps, self.termination, self.progress
        )
    }

    pub fn parse_csv_row(line: &str) -> Result<Self> {
        let bad = || HarnessError::Config(format!("malformed reward log row '{line}'"));
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 5 {
            return Err(bad());
        }
        Ok(Self {
            episode: fields[0].parse().map_err(|_| bad())?,
            total_reward: fields[1].parse().map_err(|_| bad())?,
            steps: fields[2].parse().map_err(|_| bad())?,
            termination: fields[3].parse().map_err(|_| bad())?,
            progress: fields[4].parse().map_err(|_| bad())?,
        })
    }
}

pub fn reward_log_csv(rows: &[EpisodeLog]) -> String {
    let mut out = String::from(REWARD_LOG_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    out
}

/// Where a training run starts from.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub learner: Learner,
    /// Episodes already completed.
    pub episode: u64,
    pub total_steps: u64,
}

impl TrainState {
    pub fn fresh(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            learner: Learner::new(cfg)?,
            episode: 0,
            total_steps: 0,
        })
    }
}

/// Callbacks invoked while training; both default to no-ops.
pub trait TrainObserver {
    fn on_episode(&mut self, _log: &EpisodeLog) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Track for a training episode: two uniformly drawn segments and a fresh noise seed.
pub fn training_track<R: Rng + ?Sized>(noise: bool, rng: &mut R) -> Result<Track> {
    let variants = segment_variants();
    let specs = [
        variants[rng.random_range(0..variants.len())],
        variants[rng.random_range(0..variants.len())],
    ];
    let track_seed = rng.random::<u64>();
    Ok(generate_track(&specs, NoiseConfig::with_enabled(noise), track_seed)?)
}

/// Runs episodes `state.episode + 1 ..= cfg.episodes`, updating once per step.
/// A resumed run starts with an empty replay buffer.
pub fn train(cfg: &TrainConfig, mut state: TrainState, observer: &mut dyn TrainObserver) -> Result<(TrainState, Vec<EpisodeLog>)> {
    cfg.validate()?;
    if state.learner.algo() != cfg.algo {
        return Err(HarnessError::Config(format!(
            "learner is {}, config asks for {}",
            state.learner.algo(),
            cfg.algo
        )));
    }
    if state.episode > cfg.episodes {
        return Err(HarnessError::Config(format!(
            "state is at episode {}, beyond the configured {}",
            state.episode, cfg.episodes
        )));
    }
    let mut env = RacingEnv::new(cfg.env_config())?;
    let mut buffer = ReplayBuffer::new(state.learner.buffer_capacity());
    let mut logs = Vec::new();

    for episode in state.episode + 1..=cfg.episodes {
        let mut rng = episode_rng(cfg.seed, episode);
        let track = Arc::new(training_track(cfg.noise, &mut rng)?);
        let mut obs = env.reset(track, 0.0)?.features();
        let mut total_reward = 0.0;
        let schedule_episode = episode - 1;
        loop {
            let (stored, action) = state.learner.explore(&obs, schedule_episode, state.total_steps, &mut rng)?;
            let out = env.step(action)?;
            let next = out.observation.features();
            total_reward += out.reward;
            buffer.push(Transition {
                state: obs.to_vec(),
                action: stored,
                reward: out.reward as f32,
                next_state: next.to_vec(),
                done: out.termination.kind.cuts_bootstrap(),
            });
            state.total_steps += 1;
            state.learner.maybe_update(&buffer, state.total_steps, &mut rng)?;
            obs = next;
            if out.termination.kind.is_terminal() {
                break;
            }
        }
        let log = EpisodeLog {
            episode,
            total_reward,
            steps: env.step_index(),
            termination: env.termination().kind,
            progress: env.max_progress(),
        };
        observer.on_episode(&log)?;
        logs.push(log);
        state.episode = episode;
        if episode % cfg.checkpoint_interval == 0 {
            observer.on_checkpoint(&state)?;
        }
    }
    Ok((state, logs))
}

// ---------------------------------------------------------------------------
// Policies

/// Deterministic controller used for evaluation and traces.
pub trait Policy: Sync {
    fn name(&self) -> String;
    fn act(&self, obs: &Observation, env: &RacingEnv) -> Result<Action>;
}

/// Greedy DQN or noise-free TD3 actor.
#[derive(Clone, Debug)]
pub struct NetworkPolicy {
    pub algo: Algo,
    pub network: Mlp,
    /// DQN turn magnitude or TD3 action scale, rad/s.
    pub scale: f64,
}

impl NetworkPolicy {
    pub fn dqn(qnet: Mlp, turn_rate: f64) -> Self {
        Self {
            algo: Algo::Dqn,
            network: qnet,
            scale: turn_rate,
        }
    }

    pub fn td3(actor: Mlp, action_scale: f64) -> Self {
        Self {
            algo: Algo::Td3,
            network: actor,
            scale: action_scale,
        }
    }
}

impl Policy for NetworkPolicy {
    fn name(&self) -> String {
        self.algo.to_string()
    }

    fn act(&self, obs: &Observation, _env: &RacingEnv) -> Result<Action> {
        let out = self.network.predict(&obs.features())?;
        Ok(match self.algo {
            Algo::Dqn => {
                let w = if argmax(&out) == 0 { -self.scale } else { self.scale };
                Action::clamped(w)
            }
            Algo::Td3 => Action::clamped(f64::from(out[0].clamp(-1.0, 1.0)) * self.scale),
        })
    }
}

/// Pure-pursuit follower of the true centre-line. Uses privileged state;
/// serves as an upper-bound reference.
#[derive(Clone, Copy, Debug)]
pub struct CenterlineFollower {
    pub lookahead: f64,
}

impl Default for CenterlineFollower {
    fn default() -> Self {
        Self { lookahead: 2.0 }
    }
}

impl Policy for CenterlineFollower {
    fn name(&self) -> String {
        "scripted".into()
    }

    fn act(&self, _obs: &Observation, env: &RacingEnv) -> Result<Action> {
        let track = env.track().ok_or(SimError::NotRunning)?;
        let pose = env.pose();
        let target = track.point_at(env.arc_length() + self.lookahead);
        let (dx, dy) = (target.x - pose.x, target.y - pose.y);
        let dist = dx.hypot(dy);
        if dist < 1e-9 {
            return Ok(Action::clamped(0.0));
        }
        let alpha = dy.atan2(dx) - pose.heading;
        let v = env.config().linear_velocity / track.unit_to_meter();
        Ok(Action::clamped(2.0 * v * alpha.sin() / dist))
    }
}

/// Fixed angular velocity regardless of input.
#[derive(Clone, Copy, Debug)]
pub struct ConstantTurn(pub f64);

impl Policy for ConstantTurn {
    fn name(&self) -> String {
        format!("constant({})", self.0)
    }

    fn act(&self, _obs: &Observation, _env: &RacingEnv) -> Result<Action> {
        Ok(Action::clamped(self.0))
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode_id: usize,
    pub track_spec: Vec<SegmentSpec>,
    pub start_offset: f64,
    /// `none` for the segment suite.
    pub direction: String,
    pub finished: bool,
    pub max_progress: f64,
    pub steps: usize,
    pub termination: TerminationKind,
    pub total_reward: f64,
}

pub const EVAL_CSV_HEADER: &str = "episode_id,track_spec,start_offset,direction,finished,max_progress,steps,termination";

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        let spec: Vec<String> = self.track_spec.iter().map(|s| s.turn_angle_deg().to_string()).collect();
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode_id,
            spec.join(";"),
            self.start_offset,
            self.direction,
            self.finished,
            self.max_progress,
            self.steps,
            self.termination
        )
    }
}

pub fn eval_csv(records: &[EpisodeRecord]) -> String {
    let mut out = String::from(EVAL_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// One step of a recorded episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub action_w: f64,
    pub reward: f64,
    pub theta_deg: Option<f64>,
    pub progress: f64,
    pub termination: TerminationKind,
}

/// Runs one deterministic episode, optionally recording every step.
pub fn run_episode(
    env_cfg: EnvConfig,
    track: Arc<Track>,
    start_offset: f64,
    policy: &dyn Policy,
    mut trace: Option<&mut Vec<TraceStep>>,
) -> Result<EpisodeOutcome> {
    let mut env = RacingEnv::new(env_cfg)?;
    let mut obs = env.reset(track, start_offset)?;
    let mut total_reward = 0.0;
    loop {
        let action = policy.act(&obs, &env)?;
        let out = env.step(action)?;
        total_reward += out.reward;
        if let Some(t) = trace.as_deref_mut() {
            let pose = env.pose();
            t.push(TraceStep {
                step: out.termination.step_index,
                x: pose.x,
                y: pose.y,
                heading: pose.heading,
                action_w: action.angular_velocity(),
                reward: out.reward,
                theta_deg: out.theta_deg,
                progress: out.progress,
                termination: out.termination.kind,
            });
        }
        obs = out.observation;
        if out.termination.kind.is_terminal() {
            return Ok(EpisodeOutcome {
                finished: out.termination.kind == TerminationKind::Finished,
                max_progress: env.max_progress(),
                steps: env.step_index(),
                termination: out.termination.kind,
                total_reward,
            });
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeOutcome {
    pub finished: bool,
    pub max_progress: f64,
    pub steps: usize,
    pub termination: TerminationKind,
    pub total_reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub episodes: usize,
    pub finished: usize,
    pub finish_pct: f64,
    pub avg_distance_pct: f64,
}

pub fn summarize(records: &[EpisodeRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let finished = records.iter().filter(|r| r.finished).count();
    let total: f64 = records.iter().map(|r| r.max_progress).sum();
    let n = records.len() as f64;
    Ok(Summary {
        episodes: records.len(),
        finished,
        finish_pct: 100.0 * finished as f64 / n,
        avg_distance_pct: 100.0 * total / n,
    })
}

/// Finish counts per start position: left, centre, right.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartBreakdown {
    pub left: usize,
    pub centre: usize,
    pub right: usize,
}

impl StartBreakdown {
    pub fn total(&self) -> usize {
        self.left + self.centre + self.right
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub suite: String,
    pub policy: String,
    pub noise: bool,
    pub seed: u64,
    pub summary: Summary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start_breakdown: Option<StartBreakdown>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub env: EnvConfig,
    pub noise: bool,
    pub seed: u64,
    /// Worker threads; 1 runs inline.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            noise: false,
            seed: 0,
            workers: 1,
        }
    }
}

/// Runs `count` independent jobs, returning results in index order.
fn run_indexed<T, F>(count: usize, workers: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync,
{
    if workers <= 1 {
        return (0..count).map(job).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    pool.install(|| (0..count).into_par_iter().map(&job).collect())
}

/// All 13 x 13 ordered two-segment tracks, in enumeration order.
pub fn segment_pairs() -> Vec<[SegmentSpec; 2]> {
    let variants = segment_variants();
    variants
        .iter()
        .flat_map(|&a| variants.iter().map(move |&b| [a, b]))
        .collect()
}

/// One episode per ordered segment pair, starting on the centre-line.
pub fn eval_segments(policy: &dyn Policy, opts: &EvalOptions) -> Result<EvalReport> {
    let pairs = segment_pairs();
    let noise = NoiseConfig::with_enabled(opts.noise);
    let episodes = run_indexed(pairs.len(), opts.workers, |i| {
        let track_seed = episode_rng(opts.seed, i as u64).random::<u64>();
        let track = Arc::new(generate_track(&pairs[i], noise, track_seed)?);
        let out = run_episode(opts.env, track, 0.0, policy, None)?;
        Ok(record(i, pairs[i].to_vec(), 0.0, "none", out))
    })?;
    Ok(EvalReport {
        suite: "segments".into(),
        policy: policy.name(),
        noise: opts.noise,
        seed: opts.seed,
        summary: summarize(&episodes)?,
        start_breakdown: None,
        episodes,
    })
}

pub const OVAL_START_OFFSETS: [f64; 3] = [-0.5, 0.0, 0.5];
pub const OVAL_RUNS_PER_START: usize = 30;

/// 90 runs around the oval: 30 from each of the left, centre and right starts.
pub fn eval_oval(policy: &dyn Policy, direction: Direction, opts: &EvalOptions) -> Result<EvalReport> {
    let noise = NoiseConfig::with_enabled(opts.noise);
    let count = OVAL_START_OFFSETS.len() * OVAL_RUNS_PER_START;
    let stream_base = match direction {
        Direction::Clockwise => 0,
        Direction::Anticlockwise => 1 << 32,
    };
    let episodes = run_indexed(count, opts.workers, |i| {
        let offset = OVAL_START_OFFSETS[i / OVAL_RUNS_PER_START];
        let track_seed = episode_rng(opts.seed, stream_base + i as u64).random::<u64>();
        let track = generate_oval(noise, track_seed, direction)?;
        let specs = track.meta.specs.clone();
        let out = run_episode(opts.env, Arc::new(track), offset, policy, None)?;
        Ok(record(i, specs, offset, direction.as_str(), out))
    })?;
    let mut breakdown = StartBreakdown::default();
    for r in episodes.iter().filter(|r| r.finished) {
        if r.start_offset < 0.0 {
            breakdown.left += 1;
        } else if r.start_offset > 0.0 {
            breakdown.right += 1;
        } else {
            breakdown.centre += 1;
        }
    }
    Ok(EvalReport {
        suite: format!("oval-{}", direction.as_str()),
        policy: policy.name(),
        noise: opts.noise,
        seed: opts.seed,
        summary: summarize(&episodes)?,
        start_breakdown: Some(breakdown),
        episodes,
    })
}

/// Pools per-direction oval reports into one summary.
pub fn combine_reports(suite: &str, reports: &[&EvalReport]) -> Result<EvalReport> {
    let first = reports.first().ok_or(HarnessError::EmptyResults)?;
    let episodes: Vec<EpisodeRecord> = reports.iter().flat_map(|r| r.episodes.iter().cloned()).collect();
    let breakdown = reports.iter().filter_map(|r| r.start_breakdown).fold(None, |acc: Option<StartBreakdown>, b| {
        let a = acc.unwrap_or_default();
        Some(StartBreakdown {
            left: a.left + b.left,
            centre: a.centre + b.centre,
            right: a.right + b.right,
        })
    });
    Ok(EvalReport {
        suite: suite.into(),
        policy: first.policy.clone(),
        noise: first.noise,
        seed: first.seed,
        summary: summarize(&episodes)?,
        start_breakdown: breakdown,
        episodes,
    })
}

fn record(id: usize, specs: Vec<SegmentSpec>, offset: f64, direction: &str, out: EpisodeOutcome) -> EpisodeRecord {
    EpisodeRecord {
        episode_id: id,
        track_spec: specs,
        start_offset: offset,
        direction: direction.into(),
        finished: out.finished,
        max_progress: out.max_progress,
        steps: out.steps,
        termination: out.termination,
        total_reward: out.total_reward,
    }
}
