//! Small tasks with known optimal behaviour, used to check the learners end to end.

use marker_rally::agents::{
    argmax, DqnAgent, DqnConfig, ReplayBuffer, StoredAction, Td3Agent, Td3Config, Transition,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic chain: states 0..=4, both ends terminal. Moving costs -4,
/// entering the left end pays 2, entering the right end pays 10.
pub struct Chain;

impl Chain {
    pub const STATES: usize = 5;
    pub const STEP_REWARD: f32 = -4.0;
    pub const LEFT_REWARD: f32 = 2.0;
    pub const RIGHT_REWARD: f32 = 10.0;

    pub fn is_terminal(s: usize) -> bool {
        s == 0 || s == Self::STATES - 1
    }

    /// Action 0 moves left, 1 moves right.
    pub fn step(s: usize, a: usize) -> (usize, f32, bool) {
        let next = if a == 0 { s - 1 } else { s + 1 };
        let reward = match next {
            0 => Self::LEFT_REWARD,
            n if n == Self::STATES - 1 => Self::RIGHT_REWARD,
            _ => Self::STEP_REWARD,
        };
        (next, reward, Self::is_terminal(next))
    }

    pub fn encode(s: usize) -> Vec<f32> {
        let mut v = vec![0.0; Self::STATES];
        v[s] = 1.0;
        v
    }

    /// Value iteration to convergence; returns Q(s, a) for every state.
    pub fn value_iteration(gamma: f64) -> Vec<[f64; 2]> {
        let mut v = vec![0.0f64; Self::STATES];
        let mut q = vec![[0.0f64; 2]; Self::STATES];
        for _ in 0..10_000 {
            let mut delta = 0.0f64;
            for s in 1..Self::STATES - 1 {
                for a in 0..2 {
                    let (n, r, done) = Self::step(s, a);
                    q[s][a] = f64::from(r) + if done { 0.0 } else { gamma * v[n] };
                }
                let best = q[s][0].max(q[s][1]);
                delta = delta.max((best - v[s]).abs());
                v[s] = best;
            }
            if delta < 1e-12 {
                break;
            }
        }
        q
    }

    pub fn optimal_policy(gamma: f64) -> Vec<usize> {
        Self::value_iteration(gamma)
            .iter()
            .enumerate()
            .filter(|(s, _)| !Self::is_terminal(*s))
            .map(|(_, q)| if q[1] > q[0] { 1 } else { 0 })
            .collect()
    }
}

/// Greedy actions of the agent on the interior states.
pub fn dqn_chain_policy(agent: &DqnAgent) -> Vec<usize> {
    (1..Chain::STATES - 1)
        .map(|s| argmax(&agent.qnet.predict(&Chain::encode(s)).unwrap()))
        .collect()
}

/// Trains DQN on the chain for `updates` gradient steps with a fixed exploration rate.
pub fn train_dqn_chain(seed: u64, updates: u64) -> DqnAgent {
    let cfg = DqnConfig {
        hidden_layers: vec![64, 64],
        learning_starts: 256,
        ..DqnConfig::default()
    };
    let mut agent = DqnAgent::new(Chain::STATES, cfg, seed).unwrap();
    let mut buffer = ReplayBuffer::new(agent.config.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut steps = 0u64;
    while agent.updates < updates {
        let mut s = rng.random_range(1..Chain::STATES - 1);
        loop {
            let a = agent.select(&Chain::encode(s), 0.5, &mut rng).unwrap();
            let (next, reward, done) = Chain::step(s, a);
            buffer.push(Transition {
                state: Chain::encode(s),
                action: StoredAction::Discrete(a),
                reward,
                next_state: Chain::encode(next),
                done,
            });
            steps += 1;
            if steps >= agent.config.learning_starts && buffer.len() >= agent.config.batch_size {
                let batch = buffer.sample(agent.config.batch_size, &mut rng).unwrap();
                agent.update(&batch).unwrap();
            }
            if done || agent.updates >= updates {
                break;
            }
            s = next;
        }
    }
    agent
}

/// One-dimensional drive-to-origin task: `x' = x + GAIN * a`, reward `-|x'|`,
/// fixed horizon. Full correction `a = -x / GAIN` zeroes the error in one step.
pub struct DriveToOrigin;

impl DriveToOrigin {
    pub const GAIN: f32 = 0.5;
    pub const HORIZON: usize = 10;

    pub fn step(x: f32, a: f32) -> f32 {
        (x + Self::GAIN * a.clamp(-1.0, 1.0)).clamp(-2.0, 2.0)
    }

    /// Mean terminal |x| of the deterministic actor over seeded starts in [-1, 1].
    pub fn evaluate(agent: &Td3Agent, seed: u64, runs: usize) -> f32 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..runs {
            let mut x: f32 = rng.random_range(-1.0..1.0);
            for _ in 0..Self::HORIZON {
                let a = agent.select(&[x], 0.0, &mut rng).unwrap().0;
                x = Self::step(x, a);
            }
            total += x.abs();
        }
        total / runs as f32
    }
}

/// Trains TD3 on the drive-to-origin task for `env_steps` environment steps.
pub fn train_td3_drive(seed: u64, env_steps: u64) -> Td3Agent {
    let cfg = Td3Config::default();
    let mut agent = Td3Agent::new(1, cfg, seed).unwrap();
    let mut buffer = ReplayBuffer::new(agent.config.buffer_capacity);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xd71e);
    let mut steps = 0u64;
    while steps < env_steps {
        let mut x: f32 = rng.random_range(-1.0..1.0);
        for t in 0..DriveToOrigin::HORIZON {
            let a = if steps < agent.config.warmup_steps {
                rng.random_range(-1.0..=1.0)
            } else {
                agent.select(&[x], agent.config.exploration_noise, &mut rng).unwrap().0
            };
            let next = DriveToOrigin::step(x, a);
            buffer.push(Transition {
                state: vec![x],
                action: StoredAction::Continuous(a),
                reward: -next.abs(),
                next_state: vec![next],
                // The horizon is a truncation, not a terminal state.
                done: false,
            });
            steps += 1;
            if steps >= agent.config.warmup_steps && buffer.len() >= agent.config.batch_size {
                let batch = buffer.sample(agent.config.batch_size, &mut rng).unwrap();
                agent.update(&batch, &mut rng).unwrap();
            }
            x = next;
            if steps >= env_steps || t + 1 == DriveToOrigin::HORIZON {
                break;
            }
        }
    }
    agent
}
