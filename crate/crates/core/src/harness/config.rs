//! Experiment configuration: one TOML file with a section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::agents::{Algorithm, Coupling, TrainConfig};
use crate::aux::AuxAttachment;
use crate::cmdp::{AssemblyConfig, EnvKind, Environment, GridConfig, LevelContext, LevelSplit};
use crate::info::{AnalysisConfig, EstimatorOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub train_levels: usize,
    pub test_levels: usize,
    pub level_seed: u64,
    pub assembly: AssemblyConfig,
    pub gridworld: GridConfig,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            kind: EnvKind::Assembly,
            train_levels: 200,
            test_levels: 100,
            level_seed: 0,
            assembly: AssemblyConfig::default(),
            gridworld: GridConfig::default(),
        }
    }
}

impl EnvSection {
    pub fn environment(&self) -> Environment {
        match self.kind {
            EnvKind::Assembly => Environment::Assembly(self.assembly),
            EnvKind::Gridworld => Environment::Gridworld(self.gridworld),
        }
    }

    /// Training and test level sets; both are fixed by `level_seed` alone.
    pub fn level_sets(&self) -> Result<(Vec<LevelContext>, Vec<LevelContext>), HarnessError> {
        let env = self.environment();
        let train = env.sample_level_set(self.train_levels, self.level_seed, LevelSplit::Train)?;
        let test = if self.test_levels == 0 { Vec::new() } else { env.sample_level_set(self.test_levels, self.level_seed, LevelSplit::Test)? };
        Ok((train, test))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub algorithm: Algorithm,
    pub coupling: Coupling,
    /// Environment steps per run.
    pub budget: u64,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self { algorithm: Algorithm::Ppo, coupling: Coupling::Coupled, budget: 200_000 }
    }
}

/// Analysis-batch collection and estimator settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSection {
    pub enabled: bool,
    pub collection_steps: usize,
    pub n: usize,
    pub k: usize,
    pub num_envs: usize,
    pub gamma: f64,
    pub jitter: f64,
    pub standardise: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        let e = EstimatorOptions::default();
        Self {
            enabled: true,
            collection_steps: a.collection_steps,
            n: a.n,
            k: a.k,
            num_envs: a.num_envs,
            gamma: a.gamma,
            jitter: e.jitter,
            standardise: e.standardise,
        }
    }
}

impl AnalysisSection {
    pub fn collection(&self) -> AnalysisConfig {
        AnalysisConfig { collection_steps: self.collection_steps, n: self.n, k: self.k, num_envs: self.num_envs, gamma: self.gamma }
    }

    pub fn estimator(&self, seed: u64) -> EstimatorOptions {
        EstimatorOptions { k: self.k, jitter: self.jitter, seed, standardise: self.standardise, ..EstimatorOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Multiplier on every hidden width.
    ModelWidth,
    /// Policy phases per auxiliary phase.
    AuxBatchLevels,
    Coupling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SweepValue {
    Number(f64),
    Text(String),
}

impl std::fmt::Display for SweepValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepValue::Number(x) => write!(f, "{x}"),
            SweepValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Vec<SweepValue>,
    /// Also run coupled PPO without auxiliary objectives at every axis value,
    /// so each cell can be normalised.
    #[serde(default = "yes")]
    pub include_baseline: bool,
}

fn yes() -> bool {
    true
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub agent: AgentSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aux: Vec<AuxAttachment>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: default_name(),
            env: EnvSection::default(),
            agent: AgentSection::default(),
            train: TrainConfig::default(),
            analysis: AnalysisSection::default(),
            sweep: None,
            aux: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Canonical text: re-serialised with every default filled in.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serialisable")
    }

    /// SHA-256 of the canonical text.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.name.is_empty() || !self.name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
            return bad(format!("name `{}` must be non-empty and use only [A-Za-z0-9-_.]", self.name));
        }
        if self.env.train_levels == 0 {
            return bad("env.train_levels must be positive".into());
        }
        match self.env.kind {
            EnvKind::Assembly => self.env.assembly.validate(),
            EnvKind::Gridworld => self.env.gridworld.validate(),
        }
        .or_else(|m| bad(format!("env: {m}")))?;
        self.train.validate()?;
        for a in &self.aux {
            a.validate()?;
        }
        let an = &self.analysis;
        if an.enabled && (an.n <= an.k || an.k == 0 || an.num_envs == 0 || an.collection_steps < an.n) {
            return bad("analysis needs 0 < k < n ≤ collection_steps and num_envs > 0".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep.values is empty".into());
            }
            for v in &s.values {
                self.with_axis(s.axis, v)?;
            }
        }
        Ok(())
    }

    /// Copy of the config with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: SweepAxis, value: &SweepValue) -> Result<Self, HarnessError> {
        let mut c = self.clone();
        let bad = || HarnessError::Config(format!("sweep value `{value}` does not fit axis {axis:?}"));
        match (axis, value) {
            (SweepAxis::ModelWidth, SweepValue::Number(x)) if *x > 0.0 => c.train.arch.width_multiplier = *x,
            (SweepAxis::AuxBatchLevels, SweepValue::Number(x)) if *x >= 1.0 && x.fract() == 0.0 => {
                if !c.agent.algorithm.is_phasic() {
                    return Err(HarnessError::Config("aux_batch_levels needs a phasic algorithm (ppg or dcpg)".into()));
                }
                c.train.n_pi = *x as usize;
            }
            (SweepAxis::Coupling, SweepValue::Text(s)) => c.agent.coupling = s.parse()?,
            _ => return Err(bad()),
        }
        c.sweep = None;
        Ok(c)
    }

    /// Label of the attached auxiliary objectives, `none` when there are none.
    pub fn attachment_label(&self) -> String {
        let active: Vec<String> = self
            .aux
            .iter()
            .filter(|a| a.coefficient > 0.0)
            .map(|a| format!("{}:{}", a.objective, a.target.name()))
            .collect();
        if active.is_empty() {
            "none".into()
        } else {
            active.join("+")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_sections() {
        let c = ExperimentConfig::from_toml_str("name = \"a\"\n[agent]\nalgorithm = \"ppg\"\n").unwrap();
        assert_eq!(c.agent.algorithm, Algorithm::Ppg);
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.env.kind, EnvKind::Assembly);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = ExperimentConfig::from_toml_str("[train]\nlearning_rate = 0.1\n").unwrap_err();
        let m = e.to_string();
        assert!(m.contains("learning_rate"), "{m}");
        assert!(ExperimentConfig::from_toml_str("bogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("[train]\nclip = 2.0\n").is_err());
    }

    #[test]
    fn digest_is_stable_across_round_trips() {
        let text = "name = \"x\"\n[env]\nkind = \"gridworld\"\n[train]\nlr = 0.001\n[[aux]]\nobjective = \"mico\"\ntarget = \"critic\"\ncoefficient = 0.5\n[sweep]\naxis = \"model_width\"\nvalues = [0.5, 1, 2]\n";
        let a = ExperimentConfig::from_toml_str(text).unwrap();
        let b = ExperimentConfig::from_toml_str(&a.to_toml()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
        let mut c = a.clone();
        c.train.lr = 0.002;
        assert_ne!(c.digest(), a.digest());
        assert_eq!(a.attachment_label(), "mico:critic");
    }

    #[test]
    fn axis_application() {
        let mut c = ExperimentConfig::default();
        assert_eq!(c.with_axis(SweepAxis::ModelWidth, &SweepValue::Number(2.0)).unwrap().train.arch.width_multiplier, 2.0);
        assert!(c.with_axis(SweepAxis::AuxBatchLevels, &SweepValue::Number(8.0)).is_err(), "PPO has no aux phase");
        c.agent.algorithm = Algorithm::Ppg;
        assert_eq!(c.with_axis(SweepAxis::AuxBatchLevels, &SweepValue::Number(8.0)).unwrap().train.n_pi, 8);
        assert!(c.with_axis(SweepAxis::AuxBatchLevels, &SweepValue::Number(1.5)).is_err());
        let d = c.with_axis(SweepAxis::Coupling, &SweepValue::Text("decoupled".into())).unwrap();
        assert_eq!(d.agent.coupling, Coupling::Decoupled);
        assert!(c.with_axis(SweepAxis::Coupling, &SweepValue::Number(1.0)).is_err());
    }
}
