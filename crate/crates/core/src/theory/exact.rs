//! Exact enumeration of assembly-line episodes under a fixed policy.
//!
//! Every level is a finite chain, so visitation probabilities, transition
//! frequencies and values are computed in closed form. Representations are
//! plain maps from enumerated states to discrete latent codes.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::TheoryError;
use crate::cmdp::assembly::{self, AssemblyConfig, AssemblyPos, ACCEPT, REJECT};
use crate::cmdp::{CmdpError, Environment, LevelContext};
use crate::info::DiscreteJoint;

/// One enumerated position of one level.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactState {
    /// Index into the level list the chain was built from.
    pub level: usize,
    pub context_id: u64,
    pub pos: AssemblyPos,
    pub obs: Vec<f64>,
    /// `None` at terminal positions.
    pub optimal_action: Option<usize>,
    pub optimal_value: f64,
    /// Parts still on the line, the current one included.
    pub remaining: usize,
    /// Probability that an episode on this level visits the state.
    pub reach: f64,
    /// Value of the enumerating policy.
    pub value: f64,
}

impl ExactState {
    pub fn is_terminal(&self) -> bool {
        self.pos.is_terminal()
    }

    /// Code of the position, unique within a level.
    pub fn pos_key(&self) -> u64 {
        pos_code(self.pos)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExactTransition {
    pub from: usize,
    pub action: usize,
    pub to: usize,
    /// Joint weight: level weight × reach × π(a|x), normalised over the chain.
    pub weight: f64,
    pub reward: f64,
}

/// Policies used to probe the chain.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbePolicy {
    Uniform,
    Optimal,
    /// `alpha`·optimal + (1 − `alpha`)·uniform.
    Mixture(f64),
}

impl ProbePolicy {
    pub const DEFAULT_SET: [ProbePolicy; 4] =
        [ProbePolicy::Uniform, ProbePolicy::Optimal, ProbePolicy::Mixture(0.3), ProbePolicy::Mixture(0.8)];

    pub fn name(self) -> String {
        match self {
            ProbePolicy::Uniform => "uniform".into(),
            ProbePolicy::Optimal => "optimal".into(),
            ProbePolicy::Mixture(a) => format!("mixture({a})"),
        }
    }

    pub fn probs(self, s: &ExactState) -> [f64; 2] {
        let opt = |a: Option<usize>| match a {
            Some(REJECT) => [0.0, 1.0],
            _ => [1.0, 0.0],
        };
        match self {
            ProbePolicy::Uniform => [0.5, 0.5],
            ProbePolicy::Optimal => opt(s.optimal_action),
            ProbePolicy::Mixture(alpha) => {
                let o = opt(s.optimal_action);
                [alpha * o[0] + (1.0 - alpha) * 0.5, alpha * o[1] + (1.0 - alpha) * 0.5]
            }
        }
    }
}

/// Named map from enumerated states to latent codes.
#[derive(Clone)]
pub struct Representation {
    pub name: String,
    map: Arc<dyn Fn(&ExactState) -> u64 + Send + Sync>,
}

impl std::fmt::Debug for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Representation").field("name", &self.name).finish()
    }
}

fn pos_code(pos: AssemblyPos) -> u64 {
    match pos {
        AssemblyPos::Inspect(i) => 2 * i as u64,
        AssemblyPos::Done { next } => 2 * next as u64 + 1,
    }
}

/// Latent code for a value, equal for values within 1e-9 of each other on the grid.
pub fn value_key(v: f64) -> u64 {
    (v * 1e9).round() as i64 as u64
}

impl Representation {
    pub fn new(name: impl Into<String>, map: impl Fn(&ExactState) -> u64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), map: Arc::new(map) }
    }

    pub fn latent(&self, s: &ExactState) -> u64 {
        (self.map)(s)
    }

    /// Distinct code for every (level, position).
    pub fn injective() -> Self {
        Self::new("injective", |s| ((s.level as u64) << 32) | pos_code(s.pos))
    }

    pub fn constant() -> Self {
        Self::new("constant", |_| 0)
    }

    /// z*_0 when accepting is optimal, z*_1 when rejecting is. Terminal
    /// positions get their own code.
    pub fn optimal_actor() -> Self {
        Self::new("optimal_actor", |s| match s.optimal_action {
            Some(a) => a as u64,
            None => 2,
        })
    }

    /// One latent per distinct optimal value (to 1e-9).
    pub fn optimal_critic() -> Self {
        Self::new("optimal_critic", |s| value_key(s.optimal_value))
    }

    /// The context id itself.
    pub fn level_id() -> Self {
        Self::new("level_id", |s| s.context_id)
    }

    /// (a*, min(remaining, m)): m = 0 is the level-invariant actor code and
    /// growing m adds progressively more level-specific value information.
    pub fn actor_with_value(m: usize) -> Self {
        Self::new(format!("actor_value_{m}"), move |s| {
            let a = s.optimal_action.map_or(2, |a| a as u64);
            (a << 32) | s.remaining.min(m) as u64
        })
    }
}

/// Variable indices of [`ExactChain::state_joint`].
pub const S_X: usize = 0;
pub const S_Z: usize = 1;
pub const S_L: usize = 2;
pub const S_V: usize = 3;
/// Variable indices of [`ExactChain::transition_joint`].
pub const T_X: usize = 0;
pub const T_A: usize = 1;
pub const T_XN: usize = 2;
pub const T_Z: usize = 3;
pub const T_ZN: usize = 4;

/// All states and transitions of a weighted level set under one policy.
#[derive(Clone, Debug)]
pub struct ExactChain {
    pub cfg: AssemblyConfig,
    pub gamma: f64,
    pub states: Vec<ExactState>,
    pub transitions: Vec<ExactTransition>,
    /// Normalised level weights.
    pub level_weights: Vec<f64>,
}

impl ExactChain {
    /// Enumerate `levels` (with unnormalised weights) under `policy`.
    pub fn build(
        env: &Environment,
        levels: &[(LevelContext, f64)],
        gamma: f64,
        policy: impl Fn(&ExactState) -> [f64; 2],
    ) -> Result<Self, TheoryError> {
        let cfg = *env.assembly_config().ok_or(CmdpError::UnsupportedEnvironment(env.kind()))?;
        if levels.is_empty() {
            return Err(CmdpError::EmptyLevelSet.into());
        }
        let total_w: f64 = levels.iter().map(|(_, w)| w).sum();
        if !(total_w > 0.0) || levels.iter().any(|(_, w)| !(*w >= 0.0)) {
            return Err(TheoryError::Invalid("level weights must be non-negative with a positive sum".into()));
        }
        let mut states = Vec::new();
        let mut transitions = Vec::new();
        let mut level_weights = Vec::with_capacity(levels.len());
        for (li, (ctx, w)) in levels.iter().enumerate() {
            let w = w / total_w;
            level_weights.push(w);
            let lvl = ctx.assembly().ok_or(CmdpError::LevelMismatch(ctx.context_id))?;
            let n = lvl.n_parts();
            let mut index: HashMap<AssemblyPos, usize> = HashMap::new();
            for pos in assembly::enumerate_positions(lvl) {
                let (optimal_action, optimal_value, remaining) = match pos {
                    AssemblyPos::Inspect(i) => {
                        (Some(assembly::optimal_action(lvl, i)), assembly::optimal_value(&cfg, lvl, i, gamma), n - i)
                    }
                    AssemblyPos::Done { next } => (None, 0.0, n - next),
                };
                index.insert(pos, states.len());
                states.push(ExactState {
                    level: li,
                    context_id: ctx.context_id,
                    pos,
                    obs: assembly::observe(&cfg, lvl, pos),
                    optimal_action,
                    optimal_value,
                    remaining,
                    reach: 0.0,
                    value: 0.0,
                });
            }
            let probs: Vec<[f64; 2]> = (0..n).map(|i| policy(&states[index[&AssemblyPos::Inspect(i)]])).collect();
            for p in &probs {
                if p.iter().any(|x| !(*x >= 0.0)) || (p[0] + p[1] - 1.0).abs() > 1e-9 {
                    return Err(TheoryError::Invalid(format!("policy returned {p:?}")));
                }
            }
            let mut reach = 1.0;
            for i in 0..n {
                let from = index[&AssemblyPos::Inspect(i)];
                states[from].reach = reach;
                states[from].value = assembly::policy_value(&cfg, lvl, i, gamma, |j| probs[j]);
                let mut carried = 0.0;
                for a in [ACCEPT, REJECT] {
                    let p = probs[i][a];
                    let (next, reward, done) = assembly::transition(&cfg, lvl, i, a);
                    let to = index[&next];
                    if done {
                        states[to].reach += reach * p;
                    } else {
                        carried += p;
                    }
                    if p > 0.0 && reach > 0.0 {
                        transitions.push(ExactTransition { from, action: a, to, weight: w * reach * p, reward });
                    }
                }
                reach *= carried;
            }
        }
        Ok(Self { cfg, gamma, states, transitions, level_weights })
    }

    /// Unnormalised visitation weight of a non-terminal state.
    pub fn visitation(&self, s: usize) -> f64 {
        let st = &self.states[s];
        if st.is_terminal() {
            0.0
        } else {
            self.level_weights[st.level] * st.reach
        }
    }

    /// Joint over (X, Z, L, V) with full-episode visitation weights.
    pub fn state_joint(&self, repr: &Representation) -> DiscreteJoint {
        let mut j = DiscreteJoint::new(4);
        for (i, s) in self.states.iter().enumerate() {
            let w = self.visitation(i);
            if w > 0.0 {
                j.add(vec![i as u64, repr.latent(s), s.context_id, value_key(s.value)], w);
            }
        }
        j
    }

    /// Joint over (X, A, X', Z, Z') for transitions into non-terminal states.
    pub fn transition_joint(&self, repr: &Representation) -> DiscreteJoint {
        let mut j = DiscreteJoint::new(5);
        for t in &self.transitions {
            if self.states[t.to].is_terminal() {
                continue;
            }
            let (s, sn) = (&self.states[t.from], &self.states[t.to]);
            j.add(vec![t.from as u64, t.action as u64, t.to as u64, repr.latent(s), repr.latent(sn)], t.weight);
        }
        j
    }

    /// Expected return from the first position, weighted over levels.
    pub fn mean_return(&self) -> f64 {
        self.states
            .iter()
            .filter(|s| s.pos == AssemblyPos::Inspect(0))
            .map(|s| self.level_weights[s.level] * s.value)
            .sum()
    }

    /// Visitation distribution of latent codes.
    pub fn latent_distribution(&self, repr: &Representation) -> BTreeMap<u64, f64> {
        let mut m = BTreeMap::new();
        let mut total = 0.0;
        for (i, s) in self.states.iter().enumerate() {
            let w = self.visitation(i);
            if w > 0.0 {
                *m.entry(repr.latent(s)).or_insert(0.0) += w;
                total += w;
            }
        }
        m.values_mut().for_each(|p| *p /= total);
        m
    }
}

/// Latent-level model induced by a representation on an enumerated chain.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedMdp {
    pub representation: String,
    pub policy: String,
    /// Latent codes of non-terminal states, sorted.
    pub latents: Vec<u64>,
    /// T_z(z'|z, a) keyed by (z, a); `None` is the terminal outcome. Rows sum to one.
    pub transitions: BTreeMap<(u64, usize), BTreeMap<Option<u64>, f64>>,
    /// Expected reward R_z(z, a).
    pub rewards: BTreeMap<(u64, usize), f64>,
}

impl ReducedMdp {
    pub fn from_chain(chain: &ExactChain, repr: &Representation, policy: impl Into<String>) -> Self {
        let mut mass: BTreeMap<(u64, usize), BTreeMap<Option<u64>, f64>> = BTreeMap::new();
        let mut rew: BTreeMap<(u64, usize), (f64, f64)> = BTreeMap::new();
        for t in &chain.transitions {
            let z = repr.latent(&chain.states[t.from]);
            let to = &chain.states[t.to];
            let zn = if to.is_terminal() { None } else { Some(repr.latent(to)) };
            *mass.entry((z, t.action)).or_default().entry(zn).or_insert(0.0) += t.weight;
            let r = rew.entry((z, t.action)).or_insert((0.0, 0.0));
            r.0 += t.weight * t.reward;
            r.1 += t.weight;
        }
        for row in mass.values_mut() {
            let s: f64 = row.values().sum();
            row.values_mut().for_each(|p| *p /= s);
        }
        let mut latents: Vec<u64> = chain
            .states
            .iter()
            .enumerate()
            .filter(|(i, _)| chain.visitation(*i) > 0.0)
            .map(|(_, s)| repr.latent(s))
            .collect();
        latents.sort_unstable();
        latents.dedup();
        Self {
            representation: repr.name.clone(),
            policy: policy.into(),
            latents,
            transitions: mass,
            rewards: rew.into_iter().map(|(k, (r, w))| (k, r / w)).collect(),
        }
    }
}

/// `AssemblyLevel` wrapped as a context with an explicit id.
pub fn assembly_context(context_id: u64, level: assembly::AssemblyLevel) -> LevelContext {
    LevelContext { context_id, seed: context_id, payload: crate::cmdp::LevelPayload::Assembly(level) }
}
