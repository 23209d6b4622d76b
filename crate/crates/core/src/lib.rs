//! Actor-critic representation laboratory.
//!
//! Trains coupled and decoupled on-policy agents (PPO, PPG, DCPG) on
//! contextual MDPs, measures what their representations encode with k-NN
//! mutual-information estimators, and checks the accompanying theory by
//! exact enumeration on the assembly-line environment.
//!
//! Module map:
//! - [`cmdp`]: contextual MDP abstraction, assembly line and gridworld.
//! - [`nn`]: dense networks with reverse-mode gradients, Adam, categoricals.
//! - [`agents`]: rollouts, GAE, PPO/PPG/DCPG losses and training loops.
//! - [`aux`]: auxiliary representation objectives (MICo, dynamics, ...).
//! - [`info`]: KSG / mixed estimators, analysis batches, metric suites.
//! - [`theory`]: exact-enumeration checks and optimal representations.
//! - [`harness`]: configs, runs, statistics, sweeps and reports.

pub mod agents;
pub mod aux;
pub mod cmdp;
pub mod harness;
pub mod info;
pub mod nn;
pub mod seed;
pub mod theory;

pub use agents::{Algorithm, ActorCritic, Coupling, TrainConfig};
pub use cmdp::{CmdpSpec, EnvKind, Environment, LevelContext, Observation};
pub use harness::{ExperimentConfig, RunRecord};
pub use info::{MiEstimate, MiReport};
pub use theory::{BoundReport, VerificationReport};
pub use nn::{Mlp, ParamSet};
