//! Auxiliary representation objectives attachable to the actor or critic
//! pathway: MICo, dynamics discrimination, advantage distillation and
//! feature-space augmentation.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::agents::losses::LossOutput;
use crate::agents::model::{ActorCritic, Group};
use crate::agents::rollout::Batch;
use crate::agents::AgentError;
use crate::nn::{Activation, Mlp};
use crate::seed::Rng;

pub mod objectives;

pub use objectives::{
    advantage_distill_loss, augmentation_loss, dynamics_loss, mico_distance, mico_loss, DynamicsWeights, Negatives,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Mico,
    Dynamics,
    AdvantageDistill,
    Augmentation,
}

impl Objective {
    pub const ALL: [Objective; 4] = [Objective::Mico, Objective::Dynamics, Objective::AdvantageDistill, Objective::Augmentation];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Mico => "mico",
            Objective::Dynamics => "dynamics",
            Objective::AdvantageDistill => "advantage_distill",
            Objective::Augmentation => "augmentation",
        }
    }

    pub fn default_coefficient(self) -> f64 {
        match self {
            Objective::Mico => 0.5,
            Objective::Dynamics => 1.0,
            Objective::AdvantageDistill => 0.25,
            Objective::Augmentation => 0.1,
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = AgentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| AgentError::Config(format!("unknown auxiliary objective `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Actor,
    Critic,
}

impl Target {
    pub fn group(self) -> Group {
        match self {
            Target::Actor => Group::Actor,
            Target::Critic => Group::Critic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Target::Actor => "actor",
            Target::Critic => "critic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AuxParams {
    /// Target-network EMA rate (MICo).
    pub tau: f64,
    /// Angular weight βθ of the MICo distance.
    pub mico_angular_weight: f64,
    pub in_distribution_weight: f64,
    pub ood_state_weight: f64,
    pub ood_action_weight: f64,
    /// Hidden width of the dynamics discriminator.
    pub discriminator_hidden: usize,
    pub noise_std: f64,
    pub dropout: f64,
}

impl Default for AuxParams {
    fn default() -> Self {
        Self {
            tau: 0.005,
            mico_angular_weight: 0.1,
            in_distribution_weight: 1.0,
            ood_state_weight: 1.0,
            ood_action_weight: 0.5,
            discriminator_hidden: 64,
            noise_std: 0.1,
            dropout: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxAttachment {
    pub objective: Objective,
    pub target: Target,
    pub coefficient: f64,
    #[serde(default)]
    pub params: AuxParams,
}

impl AuxAttachment {
    pub fn new(objective: Objective, target: Target) -> Self {
        Self { objective, target, coefficient: objective.default_coefficient(), params: AuxParams::default() }
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let p = &self.params;
        let bad = |m: &str| Err(AgentError::Config(format!("{} on {}: {m}", self.objective, self.target.name())));
        if !(self.coefficient >= 0.0 && self.coefficient.is_finite()) {
            return bad("coefficient must be finite and non-negative");
        }
        if !(p.tau > 0.0 && p.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&p.dropout) || p.noise_std < 0.0 || p.mico_angular_weight < 0.0 {
            return bad("augmentation/MICo parameters out of range");
        }
        if [p.in_distribution_weight, p.ood_state_weight, p.ood_action_weight].iter().any(|w| *w < 0.0) {
            return bad("discriminator weights must be non-negative");
        }
        Ok(())
    }

    /// Name of the head network owned by this attachment, if any.
    pub fn head_name(&self) -> Option<String> {
        match self.objective {
            Objective::Dynamics => Some(format!("dynamics/{}", self.target.name())),
            Objective::AdvantageDistill => Some(format!("advantage/{}", self.target.name())),
            _ => None,
        }
    }

    fn label(&self) -> String {
        format!("aux/{}/{}", self.objective, self.target.name())
    }
}

/// Random derangement: `p[i] != i` for every i (n ≥ 2).
pub fn derangement(n: usize, rng: &mut Rng) -> Vec<usize> {
    assert!(n >= 2, "a derangement needs two elements");
    // A random cyclic shift of a random permutation.
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let shift = rng.random_range(1..n);
    let mut p = vec![0; n];
    for k in 0..n {
        p[order[k]] = order[(k + shift) % n];
    }
    p
}

pub fn sample_negatives(batch: &Batch, n_actions: usize, rng: &mut Rng) -> Negatives {
    let partner = derangement(batch.len(), rng);
    let alt_actions = batch
        .actions
        .iter()
        .map(|&a| {
            let r = rng.random_range(0..n_actions - 1);
            if r >= a {
                r + 1
            } else {
                r
            }
        })
        .collect();
    Negatives { partner, alt_actions }
}

/// Gaussian feature noise followed by a dropout mask (dropped features set to 0).
pub fn augment(obs: &Array2<f64>, noise_std: f64, dropout: f64, rng: &mut Rng) -> Array2<f64> {
    let mut out = obs.clone();
    for v in out.iter_mut() {
        if noise_std > 0.0 {
            let e: f64 = StandardNormal.sample(rng);
            *v += noise_std * e;
        }
        if dropout > 0.0 && rng.random::<f64>() < dropout {
            *v = 0.0;
        }
    }
    out
}

/// `target ← (1 − τ)·target + τ·online`.
pub fn ema_update(target: &mut Mlp, online: &Mlp, tau: f64) {
    for (t, o) in target.tensors_mut().zip(online.tensors()) {
        for (a, b) in t.iter_mut().zip(o) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
}

/// Live auxiliary objectives of one training run.
///
/// Attachments with coefficient 0 are dropped at construction: they create no
/// heads and draw no random numbers.
#[derive(Clone, Debug)]
pub struct AuxRuntime {
    attachments: Vec<AuxAttachment>,
    /// MICo target encoders, aligned with `attachments`.
    targets: Vec<Option<Mlp>>,
    rng: Rng,
}

impl AuxRuntime {
    pub fn new(attachments: &[AuxAttachment], model: &mut ActorCritic, init_rng: &mut Rng, rng: Rng) -> Result<Self, AgentError> {
        let mut active = Vec::new();
        let mut targets = Vec::new();
        for a in attachments {
            a.validate()?;
            if a.coefficient == 0.0 {
                continue;
            }
            let latent = model.arch.latent;
            let n_actions = model.n_actions;
            let phi = model.phi_for(a.target.group());
            if let Some(name) = a.head_name() {
                if model.params.contains(&name) {
                    return Err(AgentError::Config(format!("duplicate attachment {}", a.label())));
                }
                let head = match a.objective {
                    Objective::Dynamics => Mlp::orthogonal(
                        &[2 * latent + n_actions, a.params.discriminator_hidden, 1],
                        Activation::Tanh,
                        Activation::Identity,
                        2f64.sqrt(),
                        1.0,
                        init_rng,
                    ),
                    _ => Mlp::orthogonal(&[latent + n_actions, 1], Activation::Identity, Activation::Identity, 1.0, 1.0, init_rng),
                };
                model.params.insert(name, head);
            }
            targets.push(match a.objective {
                Objective::Mico => Some(model.net(phi).clone()),
                _ => None,
            });
            active.push(a.clone());
        }
        Ok(Self { attachments: active, targets, rng })
    }

    pub fn is_empty(&self) -> bool {
        self.attachments.is_empty()
    }

    pub fn attachments(&self) -> &[AuxAttachment] {
        &self.attachments
    }

    /// Coefficient-weighted sum of the objectives attached to `group`
    /// (all attachments when `group` is `None`).
    pub fn loss(&mut self, model: &ActorCritic, batch: &Batch, group: Option<Group>, gamma: f64) -> Result<Option<LossOutput>, AgentError> {
        let mut total: Option<LossOutput> = None;
        for (k, a) in self.attachments.iter().enumerate() {
            let g = a.target.group();
            if group.is_some_and(|want| want != g) {
                continue;
            }
            let p = &a.params;
            let out = match a.objective {
                Objective::Mico => {
                    let partner = derangement(batch.len(), &mut self.rng);
                    let target = self.targets[k].as_ref().expect("MICo target network");
                    mico_loss(model, g, target, batch, &partner, gamma, p.mico_angular_weight)?
                }
                Objective::Dynamics => {
                    let neg = sample_negatives(batch, model.n_actions, &mut self.rng);
                    let w = DynamicsWeights {
                        in_distribution: p.in_distribution_weight,
                        ood_states: p.ood_state_weight,
                        ood_actions: p.ood_action_weight,
                    };
                    dynamics_loss(model, g, &a.head_name().expect("head"), batch, &neg, w)?
                }
                Objective::AdvantageDistill => advantage_distill_loss(model, g, &a.head_name().expect("head"), batch)?,
                Objective::Augmentation => {
                    let aug = augment(&batch.obs, p.noise_std, p.dropout, &mut self.rng);
                    augmentation_loss(model, g, &batch.obs, &aug)?
                }
            };
            let t = total.get_or_insert_with(LossOutput::default);
            t.add_scaled(&out, a.coefficient);
            t.stats.insert(a.label(), out.loss);
        }
        Ok(total)
    }

    /// EMA step of every target network towards the online encoder.
    pub fn update_targets(&mut self, model: &ActorCritic) {
        for (a, t) in self.attachments.iter().zip(self.targets.iter_mut()) {
            if let Some(t) = t {
                ema_update(t, model.net(model.phi_for(a.target.group())), a.params.tau);
            }
        }
    }
}
