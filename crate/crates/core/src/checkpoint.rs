//! On-disk agent checkpoints: one directory per save, holding a manifest,
//! one network file per role and the matching optimizer moments.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::agents::{DqnAgent, Td3Agent};
use crate::harness::{Algo, HarnessError, Learner, NetworkPolicy, Result, TrainConfig, TrainState};
use crate::nn::{Adam, Mlp, NetworkCheckpoint};
use crate::sim::OBSERVATION_DIM;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub algo: Algo,
    pub episode: u64,
    pub total_steps: u64,
    pub updates: u64,
    pub train_config_digest: String,
    pub train_config: TrainConfig,
    /// Role to network file name.
    pub networks: BTreeMap<String, String>,
    /// Role to optimizer file name.
    pub optimizers: BTreeMap<String, String>,
}

pub fn checkpoint_dir_name(episode: u64) -> String {
    format!("ep_{episode:05}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("checkpoint types serialize")
}

fn roles(learner: &Learner) -> (Vec<(&'static str, &Mlp)>, Vec<(&'static str, &Adam)>) {
    match learner {
        Learner::Dqn(a) => (
            vec![("qnet", &a.qnet), ("target", &a.target)],
            vec![("qnet", &a.optimizer)],
        ),
        Learner::Td3(a) => (
            vec![
                ("actor", &a.actor),
                ("critic1", &a.critic1),
                ("critic2", &a.critic2),
                ("actor_target", &a.actor_target),
                ("critic1_target", &a.critic1_target),
                ("critic2_target", &a.critic2_target),
            ],
            vec![
                ("actor", &a.actor_optimizer),
                ("critic1", &a.critic1_optimizer),
                ("critic2", &a.critic2_optimizer),
            ],
        ),
    }
}

/// Writes `root/ep_XXXXX/` for the state's episode and returns that path.
/// Files land in a staging directory first so a crash never leaves a half checkpoint.
pub fn save_checkpoint(root: &Path, cfg: &TrainConfig, state: &TrainState) -> Result<PathBuf> {
    let name = checkpoint_dir_name(state.episode);
    let dest = root.join(&name);
    let staging = root.join(format!(".{name}.partial"));
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
    }
    fs::create_dir_all(&staging).map_err(io_err(&staging))?;

    let digest = cfg.digest();
    let algo = state.learner.algo();
    let (nets, opts) = roles(&state.learner);
    let mut networks = BTreeMap::new();
    for (role, net) in nets {
        let file = format!("{role}.json");
        let ck = net.to_checkpoint(algo.as_str(), state.episode, &digest);
        write_file(&staging.join(&file), &to_json(&ck))?;
        networks.insert(role.to_string(), file);
    }
    let mut optimizers = BTreeMap::new();
    for (role, opt) in opts {
        let file = format!("{role}.adam.json");
        write_file(&staging.join(&file), &to_json(opt))?;
        optimizers.insert(role.to_string(), file);
    }
    let manifest = Manifest {
        format_version: MANIFEST_VERSION,
        algo,
        episode: state.episode,
        total_steps: state.total_steps,
        updates: state.learner.updates(),
        train_config_digest: digest,
        train_config: cfg.clone(),
        networks,
        optimizers,
    };
    write_file(&staging.join(MANIFEST_FILE), &to_json(&manifest))?;
    if dest.exists() {
        fs::remove_dir_all(&dest).map_err(io_err(&dest))?;
    }
    fs::rename(&staging, &dest).map_err(io_err(&dest))?;
    Ok(dest)
}

/// Checkpoint directories under `root`, sorted by episode.
pub fn list_checkpoints(root: &Path) -> Result<Vec<(u64, PathBuf)>> {
    if !root.exists() {
        return Ok(Vec::new());
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let name = entry.file_name();
        let Some(ep) = name.to_str().and_then(|n| n.strip_prefix("ep_")).and_then(|n| n.parse::<u64>().ok()) else {
            continue;
        };
        if entry.path().join(MANIFEST_FILE).is_file() {
            found.push((ep, entry.path()));
        }
    }
    found.sort();
    Ok(found)
}

pub fn latest_checkpoint(root: &Path) -> Result<Option<(u64, PathBuf)>> {
    Ok(list_checkpoints(root)?.pop())
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(&manifest_path(path))?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(HarnessError::Checkpoint(format!(
            "unsupported manifest version {}",
            manifest.format_version
        )));
    }
    if manifest.train_config.digest() != manifest.train_config_digest {
        return Err(HarnessError::Checkpoint("manifest digest does not match its config".into()));
    }
    Ok(manifest)
}

struct Loaded {
    dir: PathBuf,
    manifest: Manifest,
}

impl Loaded {
    fn open(path: &Path) -> Result<Self> {
        let mpath = manifest_path(path);
        let manifest = read_manifest(&mpath)?;
        let dir = mpath.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, manifest })
    }

    fn network(&self, role: &str) -> Result<Mlp> {
        let file = self
            .manifest
            .networks
            .get(role)
            .ok_or_else(|| HarnessError::Checkpoint(format!("manifest lacks network '{role}'")))?;
        let ck: NetworkCheckpoint = read_json(&self.dir.join(file))?;
        if ck.train_config_digest != self.manifest.train_config_digest || ck.algo != self.manifest.algo.as_str() {
            return Err(HarnessError::Checkpoint(format!("network '{role}' belongs to a different run")));
        }
        Mlp::from_checkpoint(&ck).map_err(|e| HarnessError::Checkpoint(format!("network '{role}': {e}")))
    }

    fn optimizer(&self, role: &str, net: &Mlp) -> Result<Adam> {
        let file = self
            .manifest
            .optimizers
            .get(role)
            .ok_or_else(|| HarnessError::Checkpoint(format!("manifest lacks optimizer '{role}'")))?;
        let adam: Adam = read_json(&self.dir.join(file))?;
        if !adam.matches(net) {
            return Err(HarnessError::Checkpoint(format!("optimizer '{role}' does not match its network")));
        }
        Ok(adam)
    }
}

/// Restores networks and optimizer state for resuming `cfg`. The replay buffer starts empty.
pub fn load_train_state(path: &Path, cfg: &TrainConfig) -> Result<TrainState> {
    let ck = Loaded::open(path)?;
    let m = &ck.manifest;
    if m.train_config_digest != cfg.digest() {
        return Err(HarnessError::Config(format!(
            "checkpoint {} was written by a different configuration",
            path.display()
        )));
    }
    let learner = match m.algo {
        Algo::Dqn => {
            let qnet = ck.network("qnet")?;
            let target = ck.network("target")?;
            let optimizer = ck.optimizer("qnet", &qnet)?;
            Learner::Dqn(DqnAgent {
                config: m.train_config.dqn.clone(),
                qnet,
                target,
                optimizer,
                updates: m.updates,
            })
        }
        Algo::Td3 => {
            let actor = ck.network("actor")?;
            let critic1 = ck.network("critic1")?;
            let critic2 = ck.network("critic2")?;
            Learner::Td3(Td3Agent {
                config: m.train_config.td3.clone(),
                actor_optimizer: ck.optimizer("actor", &actor)?,
                critic1_optimizer: ck.optimizer("critic1", &critic1)?,
                critic2_optimizer: ck.optimizer("critic2", &critic2)?,
                actor_target: ck.network("actor_target")?,
                critic1_target: ck.network("critic1_target")?,
                critic2_target: ck.network("critic2_target")?,
                actor,
                critic1,
                critic2,
                updates: m.updates,
            })
        }
    };
    Ok(TrainState {
        learner,
        episode: m.episode,
        total_steps: m.total_steps,
    })
}

/// Deterministic policy from a checkpoint directory, its manifest, or a bare
/// network file (DQN Q-network or TD3 actor, default action scaling).
pub fn load_policy(path: &Path) -> Result<NetworkPolicy> {
    let is_manifest = path.is_dir() || path.file_name().is_some_and(|n| n == MANIFEST_FILE);
    if is_manifest {
        let ck = Loaded::open(path)?;
        let cfg = &ck.manifest.train_config;
        return Ok(match ck.manifest.algo {
            Algo::Dqn => NetworkPolicy::dqn(ck.network("qnet")?, cfg.dqn.turn_rate),
            Algo::Td3 => NetworkPolicy::td3(ck.network("actor")?, cfg.td3.action_scale),
        });
    }
    let ck: NetworkCheckpoint = read_json(path)?;
    let net = Mlp::from_checkpoint(&ck).map_err(|e| HarnessError::Checkpoint(format!("{}: {e}", path.display())))?;
    let algo: Algo = ck.algo.parse().map_err(HarnessError::Checkpoint)?;
    let outputs = match algo {
        Algo::Dqn => DqnAgent::ACTIONS,
        Algo::Td3 => 1,
    };
    if net.input_size() != OBSERVATION_DIM || net.output_size() != outputs {
        return Err(HarnessError::Checkpoint(format!(
            "{}: a {algo} policy needs {OBSERVATION_DIM} inputs and {outputs} outputs",
            path.display()
        )));
    }
    Ok(match algo {
        Algo::Dqn => NetworkPolicy::dqn(net, crate::agents::DqnConfig::default().turn_rate),
        Algo::Td3 => NetworkPolicy::td3(net, crate::agents::Td3Config::default().action_scale),
    })
}
