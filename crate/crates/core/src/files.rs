//! JSON documents for rewards, policies and planning states.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Result, RfxError};
use crate::mdp::{Policy, RewardFunction};

pub const FILE_SCHEMA_VERSION: u32 = 1;

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("document serializes");
    std::fs::write(path, text).map_err(|e| RfxError::io(path.display().to_string(), e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| RfxError::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| RfxError::Format(format!("{}: {e}", path.display())))
}

fn check_version(found: u32, what: &str) -> Result<()> {
    if found != FILE_SCHEMA_VERSION {
        return Err(RfxError::Format(format!(
            "{what} schema version {found}, expected {FILE_SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

/// Reward file: `values[h][s][a]`, zero-based steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDocument {
    pub schema_version: u32,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl RewardDocument {
    pub fn from_reward(r: &RewardFunction) -> Self {
        let (h, s, a) = (r.horizon(), r.num_states(), r.num_actions());
        RewardDocument {
            schema_version: FILE_SCHEMA_VERSION,
            values: (0..h)
                .map(|h| (0..s).map(|s| (0..a).map(|a| r.get(h, s, a)).collect()).collect())
                .collect(),
        }
    }

    pub fn to_reward(&self) -> Result<RewardFunction> {
        check_version(self.schema_version, "reward")?;
        let horizon = self.values.len();
        let states = self.values.first().map_or(0, Vec::len);
        let actions = self.values.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if self.values.iter().any(|r| r.len() != states || r.iter().any(|q| q.len() != actions)) {
            return Err(RfxError::Format("reward values are ragged".into()));
        }
        let flat = self.values.iter().flatten().flatten().copied().collect();
        RewardFunction::new(horizon, states, actions, flat)
    }
}

/// Policy file: `actions[h][s]`, zero-based steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub schema_version: u32,
    pub actions: Vec<Vec<usize>>,
}

impl PolicyDocument {
    pub fn from_policy(p: &Policy) -> Self {
        PolicyDocument {
            schema_version: FILE_SCHEMA_VERSION,
            actions: (0..p.horizon())
                .map(|h| (0..p.num_states()).map(|s| p.action(h, s)).collect())
                .collect(),
        }
    }

    pub fn to_policy(&self) -> Result<Policy> {
        check_version(self.schema_version, "policy")?;
        let horizon = self.actions.len();
        let states = self.actions.first().map_or(0, Vec::len);
        if self.actions.iter().any(|r| r.len() != states) {
            return Err(RfxError::Format("policy actions are ragged".into()));
        }
        Policy::new(horizon, states, self.actions.concat())
    }
}

pub fn save_reward(r: &RewardFunction, path: &Path) -> Result<()> {
    write_json(&RewardDocument::from_reward(r), path)
}

pub fn load_reward(path: &Path) -> Result<RewardFunction> {
    read_json::<RewardDocument>(path)?.to_reward()
}

pub fn save_policy(p: &Policy, path: &Path) -> Result<()> {
    write_json(&PolicyDocument::from_policy(p), path)
}

pub fn load_policy(path: &Path) -> Result<Policy> {
    read_json::<PolicyDocument>(path)?.to_policy()
}
