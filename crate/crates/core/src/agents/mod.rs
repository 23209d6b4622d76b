//! Actor-critic agents: models, rollouts, losses and the PPO / PPG / DCPG loops.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cmdp::CmdpError;
use crate::nn::NnError;

pub mod losses;
pub mod model;
pub mod rollout;
pub mod train;

pub use losses::LossOutput;
pub use model::{ActorCritic, ArchConfig, Group};
pub use rollout::{collect_rollout, compute_gae, Batch, RewardNormaliser, RolloutBuffer, RunningMeanStd, VecEnv};
pub use train::{assembly_optimal_return, evaluate, train, LogRecord, TrainConfig, TrainOutput, TrainRequest};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ppo,
    Ppg,
    Dcpg,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Ppo, Algorithm::Ppg, Algorithm::Dcpg];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Ppo => "ppo",
            Algorithm::Ppg => "ppg",
            Algorithm::Dcpg => "dcpg",
        }
    }

    /// PPG and DCPG alternate policy and auxiliary phases.
    pub fn is_phasic(self) -> bool {
        !matches!(self, Algorithm::Ppo)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.to_ascii_lowercase())
            .ok_or_else(|| AgentError::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Coupled,
    Decoupled,
}

impl Coupling {
    pub fn name(self) -> &'static str {
        match self {
            Coupling::Coupled => "coupled",
            Coupling::Decoupled => "decoupled",
        }
    }
}

impl fmt::Display for Coupling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Coupling {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "coupled" | "shared" => Ok(Coupling::Coupled),
            "decoupled" | "separate" => Ok(Coupling::Decoupled),
            _ => Err(AgentError::Config(format!("unknown coupling `{s}`"))),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
