//! Coupled and decoupled actor-critic networks.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{AgentError, Coupling};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{Activation, Categorical, Mlp, ParamSet, Tape};
use crate::seed::Rng;

pub const PHI: &str = "phi";
pub const PHI_ACTOR: &str = "phi_actor";
pub const PHI_CRITIC: &str = "phi_critic";
pub const POLICY_HEAD: &str = "policy_head";
pub const VALUE_HEAD: &str = "value_head";
pub const AUX_VALUE_HEAD: &str = "aux_value_head";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    pub hidden: usize,
    pub hidden_layers: usize,
    pub latent: usize,
    /// Scales every hidden width; the latent width is kept fixed.
    pub width_multiplier: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self { hidden: 64, hidden_layers: 2, latent: 32, width_multiplier: 1.0 }
    }
}

impl ArchConfig {
    pub fn hidden_width(&self) -> usize {
        ((self.hidden as f64 * self.width_multiplier).round() as usize).max(1)
    }

    pub fn encoder_sizes(&self, obs_dim: usize) -> Vec<usize> {
        let mut s = vec![obs_dim];
        s.extend(std::iter::repeat_n(self.hidden_width(), self.hidden_layers));
        s.push(self.latent);
        s
    }
}

/// Which optimiser group a network belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Actor,
    Critic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActorCritic {
    pub coupling: Coupling,
    pub params: ParamSet,
    pub obs_dim: usize,
    pub n_actions: usize,
    pub arch: ArchConfig,
}

impl ActorCritic {
    /// Fresh model. Base networks draw from `init`, the auxiliary value head
    /// from `aux_init`, so adding the head never changes the base weights.
    pub fn new(
        coupling: Coupling,
        obs_dim: usize,
        n_actions: usize,
        arch: ArchConfig,
        with_aux_value: bool,
        init: &mut Rng,
        aux_init: &mut Rng,
    ) -> Self {
        let gain = 2f64.sqrt();
        let encoder = |rng: &mut Rng| Mlp::orthogonal(&arch.encoder_sizes(obs_dim), Activation::Tanh, Activation::Tanh, gain, gain, rng);
        let mut params = ParamSet::new();
        match coupling {
            Coupling::Coupled => params.insert(PHI, encoder(init)),
            Coupling::Decoupled => {
                params.insert(PHI_ACTOR, encoder(init));
                params.insert(PHI_CRITIC, encoder(init));
            }
        }
        let head = |out: usize, g: f64, rng: &mut Rng| Mlp::orthogonal(&[arch.latent, out], Activation::Identity, Activation::Identity, g, g, rng);
        params.insert(POLICY_HEAD, head(n_actions, 0.01, init));
        params.insert(VALUE_HEAD, head(1, 1.0, init));
        if with_aux_value {
            params.insert(AUX_VALUE_HEAD, head(1, 1.0, aux_init));
        }
        Self { coupling, params, obs_dim, n_actions, arch }
    }

    pub fn actor_phi(&self) -> &'static str {
        match self.coupling {
            Coupling::Coupled => PHI,
            Coupling::Decoupled => PHI_ACTOR,
        }
    }

    pub fn critic_phi(&self) -> &'static str {
        match self.coupling {
            Coupling::Coupled => PHI,
            Coupling::Decoupled => PHI_CRITIC,
        }
    }

    pub fn phi_for(&self, group: Group) -> &'static str {
        match group {
            Group::Actor => self.actor_phi(),
            Group::Critic => self.critic_phi(),
        }
    }

    pub fn net(&self, name: &str) -> &Mlp {
        self.params.get(name).unwrap_or_else(|| panic!("network `{name}` missing"))
    }

    pub fn has_aux_value(&self) -> bool {
        self.params.contains(AUX_VALUE_HEAD)
    }

    /// Optimiser group of a network. Auxiliary heads are suffixed `/actor` or `/critic`.
    pub fn group_of(name: &str) -> Group {
        if name == PHI_CRITIC || name == VALUE_HEAD || name.ends_with("/critic") {
            Group::Critic
        } else {
            Group::Actor
        }
    }

    pub fn encode(&self, phi: &str, obs: &Array2<f64>) -> Result<(Array2<f64>, Tape), AgentError> {
        Ok(self.net(phi).forward(obs)?)
    }

    pub fn latents(&self, group: Group, obs: &Array2<f64>) -> Result<Array2<f64>, AgentError> {
        Ok(self.net(self.phi_for(group)).predict(obs)?)
    }

    pub fn logits(&self, obs: &Array2<f64>) -> Result<Array2<f64>, AgentError> {
        let z = self.latents(Group::Actor, obs)?;
        Ok(self.net(POLICY_HEAD).predict(&z)?)
    }

    pub fn values(&self, obs: &Array2<f64>) -> Result<Vec<f64>, AgentError> {
        let z = self.latents(Group::Critic, obs)?;
        Ok(self.net(VALUE_HEAD).predict(&z)?.into_raw_vec_and_offset().0)
    }

    /// Sample one action per row; returns (actions, log-probs, logits).
    pub fn act(&self, obs: &Array2<f64>, rng: &mut Rng) -> Result<(Vec<usize>, Vec<f64>, Array2<f64>), AgentError> {
        let logits = self.logits(obs)?;
        let mut actions = Vec::with_capacity(obs.nrows());
        let mut logp = Vec::with_capacity(obs.nrows());
        for row in logits.rows() {
            let d = Categorical::from_logits(row.as_slice().expect("standard layout"));
            let a = d.sample(rng);
            actions.push(a);
            logp.push(d.log_prob(a));
        }
        Ok((actions, logp, logits))
    }

    pub fn to_checkpoint(&self, extra: BTreeMap<String, String>) -> Checkpoint {
        let mut ck = Checkpoint::new(self.params.clone());
        ck.metadata = extra;
        ck.metadata.insert("coupling".into(), self.coupling.to_string());
        ck.metadata.insert("obs_dim".into(), self.obs_dim.to_string());
        ck.metadata.insert("n_actions".into(), self.n_actions.to_string());
        ck.metadata.insert("arch".into(), serde_json::to_string(&self.arch).expect("serialisable arch"));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, AgentError> {
        let get = |k: &str| ck.metadata.get(k).ok_or_else(|| AgentError::Config(format!("checkpoint lacks `{k}`")));
        let coupling = get("coupling")?.parse()?;
        let obs_dim = get("obs_dim")?.parse().map_err(|_| AgentError::Config("bad obs_dim".into()))?;
        let n_actions = get("n_actions")?.parse().map_err(|_| AgentError::Config("bad n_actions".into()))?;
        let arch = serde_json::from_str(get("arch")?).map_err(|e| AgentError::Config(e.to_string()))?;
        let model = Self { coupling, params: ck.params.clone(), obs_dim, n_actions, arch };
        for name in [model.actor_phi(), model.critic_phi(), POLICY_HEAD, VALUE_HEAD] {
            if !model.params.contains(name) {
                return Err(AgentError::Config(format!("checkpoint lacks network `{name}`")));
            }
        }
        Ok(model)
    }
}
