//! Self-describing JSON checkpoints: every named tensor with its shape,
//! the full config and its hash, optimizer moments and progress counters.

use std::collections::BTreeMap;
use std::path::Path;

use hipdream_autodiff::{ParamStore, Tensor};
use hipdream_nn::AdamState;
use serde::{Deserialize, Serialize};

use crate::agent::Agent;
use crate::config::TrainConfig;
use crate::error::{CoreError, Result};

pub const CHECKPOINT_FORMAT: &str = "hipdream-checkpoint-1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: TrainConfig,
    config_hash: String,
    env_steps: usize,
    updates: u64,
    /// Store name → parameter name → tensor.
    params: BTreeMap<String, BTreeMap<String, Tensor>>,
    optimizers: BTreeMap<String, AdamState>,
}

/// An agent restored from disk together with its progress counter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub agent: Agent,
    pub env_steps: usize,
}

fn stores(agent: &Agent) -> [(&'static str, &ParamStore); 4] {
    [
        ("world", &agent.world.params),
        ("actor", &agent.actor.params),
        ("critic", &agent.critic.params),
        ("target", &agent.target),
    ]
}

pub fn to_json(agent: &Agent, env_steps: usize) -> Result<String> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        config: agent.config.clone(),
        config_hash: agent.config.hash(),
        env_steps,
        updates: agent.updates,
        params: stores(agent)
            .into_iter()
            .map(|(k, s)| (k.to_string(), s.to_map()))
            .collect(),
        optimizers: [
            ("world", &agent.opt_world),
            ("actor", &agent.opt_actor),
            ("critic", &agent.opt_critic),
        ]
        .into_iter()
        .map(|(k, o)| (k.to_string(), o.clone()))
        .collect(),
    };
    serde_json::to_string(&file).map_err(|e| CoreError::Checkpoint(e.to_string()))
}

fn validated(map: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
    map.iter()
        .map(|(k, t)| {
            let t = Tensor::new(t.shape(), t.data().to_vec())
                .map_err(|e| CoreError::Checkpoint(format!("tensor `{k}`: {e}")))?;
            Ok((k.clone(), t))
        })
        .collect()
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| CoreError::Checkpoint(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(CoreError::Checkpoint(format!(
            "unsupported format `{}`",
            file.format
        )));
    }
    if file.config.hash() != file.config_hash {
        return Err(CoreError::Checkpoint(
            "config hash does not match the stored config".into(),
        ));
    }
    let mut agent = Agent::new(&file.config)?;
    let load = |name: &str, store: &mut ParamStore| -> Result<()> {
        let map = file
            .params
            .get(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing parameter group `{name}`")))?;
        store
            .load_map(&validated(map)?)
            .map_err(|e| CoreError::Checkpoint(format!("group `{name}`: {e}")))
    };
    load("world", &mut agent.world.params)?;
    load("actor", &mut agent.actor.params)?;
    load("critic", &mut agent.critic.params)?;
    load("target", &mut agent.target)?;
    let opt = |name: &str, store: &ParamStore| -> Result<AdamState> {
        let o = file
            .optimizers
            .get(name)
            .ok_or_else(|| CoreError::Checkpoint(format!("missing optimizer `{name}`")))?;
        if !o.matches(store) {
            return Err(CoreError::Checkpoint(format!(
                "optimizer `{name}` does not match its parameters"
            )));
        }
        Ok(o.clone())
    };
    agent.opt_world = opt("world", &agent.world.params)?;
    agent.opt_actor = opt("actor", &agent.actor.params)?;
    agent.opt_critic = opt("critic", &agent.critic.params)?;
    agent.updates = file.updates;
    Ok(Checkpoint {
        agent,
        env_steps: file.env_steps,
    })
}

pub fn save(agent: &Agent, env_steps: usize, path: &Path) -> Result<()> {
    let json = to_json(agent, env_steps)?;
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_json(&std::fs::read_to_string(path)?)
}
