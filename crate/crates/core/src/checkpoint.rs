//! Self-describing JSON checkpoints of a trained policy.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::PolicyKind;
use crate::error::{Error, Result};
use crate::nn::{Mlp, Optimizer};
use crate::rewards::AgentParams;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Constants used to normalize the observation vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub v_des: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub g_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub kind: PolicyKind,
    pub agent: AgentParams,
    pub g_max: f64,
    pub dt: f64,
    pub normalization: Normalization,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub actor_optimizer: Optimizer,
    pub critic_optimizer: Optimizer,
    /// Episode after which this snapshot was taken.
    pub episode: usize,
    /// Trailing mean episode return at that point.
    pub trailing_mean: f64,
    pub seed: u64,
}

impl Checkpoint {
    /// Short content hash of the policy (kind, parameters and actor weights).
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.kind.to_string().as_bytes());
        h.update(serde_json::to_vec(&self.agent).unwrap_or_default());
        for p in self.actor.params() {
            h.update(p.to_le_bytes());
        }
        let digest = h.finalize();
        format!("{}-{}", self.kind, &hex::encode(digest)[..12])
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        for net in [&self.actor, &self.critic, &self.actor_target, &self.critic_target] {
            net.validate()?;
        }
        if self.actor.input_dim() != self.kind.obs_dim() {
            return Err(Error::Config(format!(
                "{} checkpoint actor takes {} inputs",
                self.kind,
                self.actor.input_dim()
            )));
        }
        self.agent.validate()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| {
            Error::Config(format!("cannot read checkpoint {}: {e}", path.display()))
        })?;
        let ckpt: Checkpoint = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("bad checkpoint {}: {e}", path.display())))?;
        ckpt.validate()?;
        Ok(ckpt)
    }
}
