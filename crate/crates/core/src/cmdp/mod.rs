//! Contextual MDPs: levels, states, observations and the two environments.

pub mod assembly;
pub mod gridworld;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use assembly::{AssemblyConfig, AssemblyLevel, AssemblyPos, Part};
pub use gridworld::{Cell, GridConfig, GridLevel};

use crate::seed::{derive_seed, rng_from};

#[derive(Debug, thiserror::Error)]
pub enum CmdpError {
    #[error("operation unsupported for the {0} environment")]
    UnsupportedEnvironment(EnvKind),
    #[error("stepped a terminal state")]
    TerminalStep,
    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("level {0} does not belong to this environment")]
    LevelMismatch(u64),
    #[error("level set must contain at least one level")]
    EmptyLevelSet,
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Assembly,
    Gridworld,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Assembly => "assembly",
            EnvKind::Gridworld => "gridworld",
        })
    }
}

impl FromStr for EnvKind {
    type Err = CmdpError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "assembly" => Ok(EnvKind::Assembly),
            "gridworld" => Ok(EnvKind::Gridworld),
            other => Err(CmdpError::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmdpSpec {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub max_episode_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LevelPayload {
    Assembly(AssemblyLevel),
    Gridworld(GridLevel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelContext {
    pub context_id: u64,
    pub seed: u64,
    pub payload: LevelPayload,
}

impl LevelContext {
    pub fn assembly(&self) -> Option<&AssemblyLevel> {
        match &self.payload {
            LevelPayload::Assembly(l) => Some(l),
            LevelPayload::Gridworld(_) => None,
        }
    }

    pub fn gridworld(&self) -> Option<&GridLevel> {
        match &self.payload {
            LevelPayload::Gridworld(l) => Some(l),
            LevelPayload::Assembly(_) => None,
        }
    }

    pub fn digest(&self) -> String {
        let bytes = match &self.payload {
            LevelPayload::Assembly(l) => l.payload_bytes(),
            LevelPayload::Gridworld(l) => l.payload_bytes(),
        };
        hex::encode(Sha256::digest(bytes))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Internal {
    Assembly(AssemblyPos),
    Grid { cell: Cell, terminal: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EnvState {
    pub context_id: u64,
    pub step_index: usize,
    pub internal: Internal,
}

impl EnvState {
    pub fn is_terminal(&self) -> bool {
        match self.internal {
            Internal::Assembly(p) => p.is_terminal(),
            Internal::Grid { terminal, .. } => terminal,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: EnvState,
    pub reward: f64,
    pub done: bool,
    pub obs: Observation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Observation,
    pub done: bool,
    pub context_id: u64,
    pub t: usize,
}

/// Which half of a train/test split a level set belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LevelSplit {
    Train,
    Test,
}

const TRAIN_STREAM: u64 = 0x4C45_5645_4C53_0001;
const TEST_STREAM_OFFSET: u64 = 0x0000_7E57_0000_0000;
/// Test-level ids start here so they never collide with training ids.
pub const TEST_ID_BASE: u64 = 1 << 32;

impl LevelSplit {
    fn stream(self) -> u64 {
        match self {
            LevelSplit::Train => TRAIN_STREAM,
            LevelSplit::Test => TRAIN_STREAM.wrapping_add(TEST_STREAM_OFFSET),
        }
    }

    fn id_base(self) -> u64 {
        match self {
            LevelSplit::Train => 0,
            LevelSplit::Test => TEST_ID_BASE,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Environment {
    Assembly(AssemblyConfig),
    Gridworld(GridConfig),
}

/// Environment discount shared by both environments.
pub const DEFAULT_GAMMA: f64 = 0.999;

impl Environment {
    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Assembly => Environment::Assembly(AssemblyConfig::default()),
            EnvKind::Gridworld => Environment::Gridworld(GridConfig::default()),
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            Environment::Assembly(_) => EnvKind::Assembly,
            Environment::Gridworld(_) => EnvKind::Gridworld,
        }
    }

    pub fn validate(&self) -> Result<(), CmdpError> {
        match self {
            Environment::Assembly(c) => c.validate(),
            Environment::Gridworld(c) => c.validate(),
        }
        .map_err(CmdpError::Config)
    }

    pub fn spec(&self) -> CmdpSpec {
        match self {
            Environment::Assembly(c) => CmdpSpec {
                obs_dim: c.obs_dim(),
                n_actions: 2,
                gamma: DEFAULT_GAMMA,
                max_episode_len: c.max_parts,
            },
            Environment::Gridworld(c) => CmdpSpec {
                obs_dim: c.obs_dim(),
                n_actions: gridworld::N_ACTIONS,
                gamma: DEFAULT_GAMMA,
                max_episode_len: c.max_steps,
            },
        }
    }

    pub fn assembly_config(&self) -> Option<&AssemblyConfig> {
        match self {
            Environment::Assembly(c) => Some(c),
            Environment::Gridworld(_) => None,
        }
    }

    /// D with |V^π| ≤ D/2 for every policy: 2 · max|r| · max episode length.
    pub fn reward_bound(&self) -> f64 {
        let spec = self.spec();
        let max_r = match self {
            Environment::Assembly(c) => c.r_plus.abs().max(c.r_minus.abs()),
            Environment::Gridworld(c) => c.goal_reward.abs(),
        };
        2.0 * max_r * spec.max_episode_len as f64
    }

    /// Build the level with the given id from its own seed.
    pub fn generate_level(&self, context_id: u64, seed: u64) -> LevelContext {
        let mut rng = rng_from(seed);
        let payload = match self {
            Environment::Assembly(c) => LevelPayload::Assembly(AssemblyLevel::generate(c, &mut rng)),
            Environment::Gridworld(c) => LevelPayload::Gridworld(GridLevel::generate(c, &mut rng)),
        };
        LevelContext { context_id, seed, payload }
    }

    /// `count` levels, deterministic in `seed`. Train and test splits use
    /// disjoint seed streams and disjoint id ranges.
    pub fn sample_level_set(&self, count: usize, seed: u64, split: LevelSplit) -> Result<Vec<LevelContext>, CmdpError> {
        if count == 0 {
            return Err(CmdpError::EmptyLevelSet);
        }
        Ok((0..count as u64)
            .map(|i| self.generate_level(split.id_base() + i, derive_seed(seed, split.stream(), i)))
            .collect())
    }

    pub fn reset(&self, level: &LevelContext) -> Result<(EnvState, Observation), CmdpError> {
        let internal = match (self, &level.payload) {
            (Environment::Assembly(_), LevelPayload::Assembly(_)) => Internal::Assembly(AssemblyPos::Inspect(0)),
            (Environment::Gridworld(_), LevelPayload::Gridworld(g)) => Internal::Grid { cell: g.start, terminal: false },
            _ => return Err(CmdpError::LevelMismatch(level.context_id)),
        };
        let state = EnvState { context_id: level.context_id, step_index: 0, internal };
        let obs = self.observe(level, &state);
        Ok((state, obs))
    }

    pub fn observe(&self, level: &LevelContext, state: &EnvState) -> Observation {
        let features = match (self, &level.payload, state.internal) {
            (Environment::Assembly(c), LevelPayload::Assembly(l), Internal::Assembly(pos)) => assembly::observe(c, l, pos),
            (Environment::Gridworld(_), LevelPayload::Gridworld(g), Internal::Grid { cell, .. }) => gridworld::observe(g, cell),
            _ => panic!("state and level belong to different environments"),
        };
        Observation { features }
    }

    pub fn step(&self, level: &LevelContext, state: &EnvState, action: usize) -> Result<Step, CmdpError> {
        let n_actions = self.spec().n_actions;
        if action >= n_actions {
            return Err(CmdpError::InvalidAction { action, n_actions });
        }
        if state.is_terminal() {
            return Err(CmdpError::TerminalStep);
        }
        if state.context_id != level.context_id {
            return Err(CmdpError::LevelMismatch(level.context_id));
        }
        let (internal, reward, done) = match (self, &level.payload, state.internal) {
            (Environment::Assembly(c), LevelPayload::Assembly(l), Internal::Assembly(AssemblyPos::Inspect(i))) => {
                let (pos, r, done) = assembly::transition(c, l, i, action);
                (Internal::Assembly(pos), r, done)
            }
            (Environment::Gridworld(c), LevelPayload::Gridworld(g), Internal::Grid { cell, .. }) => {
                let (next, r, done) = gridworld::transition(c, g, cell, state.step_index, action);
                (Internal::Grid { cell: next, terminal: done }, r, done)
            }
            _ => return Err(CmdpError::LevelMismatch(level.context_id)),
        };
        let next = EnvState { context_id: state.context_id, step_index: state.step_index + 1, internal };
        let obs = self.observe(level, &next);
        Ok(Step { state: next, reward, done, obs })
    }

    /// Every reachable state of an assembly level, terminals included.
    pub fn enumerate_states(&self, level: &LevelContext) -> Result<Vec<(EnvState, Observation)>, CmdpError> {
        let l = match (self, &level.payload) {
            (Environment::Assembly(_), LevelPayload::Assembly(l)) => l,
            (Environment::Gridworld(_), _) => return Err(CmdpError::UnsupportedEnvironment(EnvKind::Gridworld)),
            _ => return Err(CmdpError::LevelMismatch(level.context_id)),
        };
        Ok(assembly::enumerate_positions(l)
            .into_iter()
            .map(|pos| {
                let step_index = match pos {
                    AssemblyPos::Inspect(i) => i,
                    AssemblyPos::Done { next } => next,
                };
                let s = EnvState { context_id: level.context_id, step_index, internal: Internal::Assembly(pos) };
                let o = self.observe(level, &s);
                (s, o)
            })
            .collect())
    }

    /// Optimal action at a non-terminal assembly state.
    pub fn assembly_optimal_policy(&self, level: &LevelContext, state: &EnvState) -> Result<usize, CmdpError> {
        match (level.assembly(), state.internal) {
            (Some(l), Internal::Assembly(AssemblyPos::Inspect(i))) => Ok(assembly::optimal_action(l, i)),
            (Some(_), _) => Err(CmdpError::TerminalStep),
            (None, _) => Err(CmdpError::UnsupportedEnvironment(self.kind())),
        }
    }

    /// V*(state) by backward induction; terminal states have value 0.
    pub fn assembly_optimal_value(&self, level: &LevelContext, state: &EnvState, gamma: f64) -> Result<f64, CmdpError> {
        match (self, level.assembly(), state.internal) {
            (Environment::Assembly(c), Some(l), Internal::Assembly(AssemblyPos::Inspect(i))) => {
                Ok(assembly::optimal_value(c, l, i, gamma))
            }
            (Environment::Assembly(_), Some(_), _) => Ok(0.0),
            _ => Err(CmdpError::UnsupportedEnvironment(self.kind())),
        }
    }
}

/// Text manifest of a level set: enough to regenerate and verify it.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelManifest {
    pub env: EnvKind,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub context_id: u64,
    pub seed: u64,
    pub digest: String,
}

const MANIFEST_HEADER: &str = "aclab-levels v1";

impl LevelManifest {
    pub fn from_levels(env: EnvKind, levels: &[LevelContext]) -> Self {
        Self {
            env,
            entries: levels
                .iter()
                .map(|l| ManifestEntry { context_id: l.context_id, seed: l.seed, digest: l.digest() })
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\nenv {}\ncount {}\n", self.env, self.entries.len());
        for e in &self.entries {
            s.push_str(&format!("{} {} {}\n", e.context_id, e.seed, e.digest));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, CmdpError> {
        let bad = |m: &str| CmdpError::Manifest(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let env = lines
            .next()
            .and_then(|l| l.strip_prefix("env "))
            .ok_or_else(|| bad("missing env line"))?
            .parse()?;
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("count "))
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| bad("missing count line"))?;
        let mut entries = Vec::with_capacity(count);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut it = line.split_whitespace();
            let (Some(id), Some(seed), Some(digest), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(bad(&format!("malformed entry `{line}`")));
            };
            entries.push(ManifestEntry {
                context_id: id.parse().map_err(|_| bad("bad context id"))?,
                seed: seed.parse().map_err(|_| bad("bad seed"))?,
                digest: digest.to_string(),
            });
        }
        if entries.len() != count {
            return Err(bad(&format!("expected {count} entries, found {}", entries.len())));
        }
        Ok(Self { env, entries })
    }

    /// Regenerate the levels and check every payload digest.
    pub fn replay(&self, env: &Environment) -> Result<Vec<LevelContext>, CmdpError> {
        if env.kind() != self.env {
            return Err(CmdpError::Manifest(format!("manifest is for {}, not {}", self.env, env.kind())));
        }
        self.entries
            .iter()
            .map(|e| {
                let l = env.generate_level(e.context_id, e.seed);
                if l.digest() != e.digest {
                    return Err(CmdpError::Manifest(format!("digest mismatch for level {}", e.context_id)));
                }
                Ok(l)
            })
            .collect()
    }
}
