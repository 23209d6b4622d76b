//! PPO, PPG and DCPG training loops for coupled and decoupled models.

use std::collections::BTreeMap;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::losses::{ppg_aux_loss, ppo_policy_loss, value_loss, AuxPhaseCoefs, LossOutput};
use super::model::{ActorCritic, ArchConfig, Group};
use super::rollout::{collect_rollout, Batch, RewardNormaliser, RolloutBuffer, VecEnv};
use super::{AgentError, Algorithm, Coupling};
use crate::aux::{AuxAttachment, AuxRuntime};
use crate::cmdp::assembly::{self, AssemblyPos};
use crate::cmdp::{Environment, LevelContext};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{adam_step, AdamConfig, AdamState, Categorical, ParamSet};
use crate::seed::{Rng, SeedStreams, Stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub num_envs: usize,
    pub rollout_len: usize,
    /// Minibatches per epoch in policy updates.
    pub minibatches: usize,
    /// Epochs of coupled PPO.
    pub ppo_epochs: usize,
    /// Decoupled PPO actor and critic epochs.
    pub actor_epochs: usize,
    pub critic_epochs: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
    pub normalise_returns: bool,
    /// Epochs per PPG/DCPG policy phase.
    pub policy_epochs: usize,
    /// Policy phases per auxiliary phase (N_π).
    pub n_pi: usize,
    pub aux_epochs: usize,
    pub aux_minibatch_size: usize,
    /// Critic value-loss coefficient in the auxiliary phase.
    pub aux_value_coef: f64,
    /// Value-distillation coefficient of the auxiliary head.
    pub aux_distill_coef: f64,
    pub beta_clone: f64,
    pub dcpg_fresh_value_coef: f64,
    pub dcpg_delayed_value_coef: f64,
    pub arch: ArchConfig,
    /// Evaluate every this many iterations (the final iteration is always evaluated).
    pub eval_interval: usize,
    /// Episodes per Monte-Carlo evaluation (gridworld).
    pub eval_episodes: usize,
    /// Keep a checkpoint every this many iterations; 0 keeps only the final model.
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.999,
            gae_lambda: 0.95,
            num_envs: 16,
            rollout_len: 128,
            minibatches: 8,
            ppo_epochs: 3,
            actor_epochs: 1,
            critic_epochs: 9,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 5e-4,
            adam_eps: 1e-5,
            max_grad_norm: 0.5,
            normalise_returns: true,
            policy_epochs: 1,
            n_pi: 32,
            aux_epochs: 6,
            aux_minibatch_size: 1024,
            aux_value_coef: 1.0,
            aux_distill_coef: 1.0,
            beta_clone: 1.0,
            dcpg_fresh_value_coef: 0.0,
            dcpg_delayed_value_coef: 1.0,
            arch: ArchConfig::default(),
            eval_interval: 10,
            eval_episodes: 64,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn batch_size(&self) -> usize {
        self.num_envs * self.rollout_len
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let err = |m: &str| Err(AgentError::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return err("gamma must lie in (0, 1] and gae_lambda in [0, 1]");
        }
        if self.num_envs == 0 || self.rollout_len == 0 || self.minibatches == 0 {
            return err("num_envs, rollout_len and minibatches must be positive");
        }
        if self.minibatches > self.batch_size() {
            return err("more minibatches than samples per rollout");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return err("clip must lie in (0, 1)");
        }
        if self.lr <= 0.0 || self.adam_eps <= 0.0 || self.max_grad_norm < 0.0 {
            return err("lr and adam_eps must be positive, max_grad_norm non-negative");
        }
        if self.ppo_epochs == 0 || self.actor_epochs == 0 || self.critic_epochs == 0 || self.policy_epochs == 0 {
            return err("epoch counts must be positive");
        }
        if self.n_pi == 0 || self.aux_epochs == 0 || self.aux_minibatch_size == 0 {
            return err("n_pi, aux_epochs and aux_minibatch_size must be positive");
        }
        let coefs = [
            self.entropy_coef,
            self.value_coef,
            self.aux_value_coef,
            self.aux_distill_coef,
            self.beta_clone,
            self.dcpg_fresh_value_coef,
            self.dcpg_delayed_value_coef,
        ];
        if coefs.iter().any(|c| !(c.is_finite() && *c >= 0.0)) {
            return err("loss coefficients must be finite and non-negative");
        }
        if self.arch.hidden == 0 || self.arch.latent == 0 || self.arch.width_multiplier <= 0.0 {
            return err("architecture sizes must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return err("eval_interval and eval_episodes must be positive");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.lr,
            epsilon: self.adam_eps,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            ..AdamConfig::default()
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub step: u64,
    /// Expected return of the current policy on the training levels.
    pub train_return: f64,
    pub test_return: Option<f64>,
    /// Mean raw return of episodes completed since the previous record.
    pub episode_return: Option<f64>,
    pub stats: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub model: ActorCritic,
    pub log: Vec<LogRecord>,
    /// (environment step, checkpoint).
    pub checkpoints: Vec<(u64, Checkpoint)>,
    /// Size of every auxiliary batch used.
    pub aux_batch_sizes: Vec<usize>,
    pub steps: u64,
}

impl TrainOutput {
    pub fn final_record(&self) -> Option<&LogRecord> {
        self.log.last()
    }
}

/// Everything that determines a training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainRequest<'a> {
    pub algorithm: Algorithm,
    pub coupling: Coupling,
    pub config: &'a TrainConfig,
    pub attachments: &'a [AuxAttachment],
    pub env: &'a Environment,
    pub train_levels: &'a [LevelContext],
    pub test_levels: &'a [LevelContext],
    /// Environment steps.
    pub budget: u64,
    pub seed: u64,
}

struct Optimisers {
    coupling: Coupling,
    actor: AdamState,
    critic: AdamState,
}

impl Optimisers {
    fn step(&mut self, model: &mut ActorCritic, grads: &ParamSet) -> Result<(), AgentError> {
        match self.coupling {
            Coupling::Coupled => {
                adam_step(&mut model.params, grads, &mut self.actor)?;
            }
            Coupling::Decoupled => {
                let actor = grads.filtered(|n| ActorCritic::group_of(n) == Group::Actor);
                let critic = grads.filtered(|n| ActorCritic::group_of(n) == Group::Critic);
                if !actor.is_empty() {
                    adam_step(&mut model.params, &actor, &mut self.actor)?;
                }
                if !critic.is_empty() {
                    adam_step(&mut model.params, &critic, &mut self.critic)?;
                }
            }
        }
        Ok(())
    }
}

fn minibatch_indices(n: usize, count: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let base = n / count;
    let extra = n % count;
    let mut out = Vec::with_capacity(count);
    let mut start = 0;
    for k in 0..count {
        let len = base + usize::from(k < extra);
        out.push(idx[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Running mean of scalar statistics over one update phase.
#[derive(Default)]
struct StatMeans(BTreeMap<String, (f64, usize)>);

impl StatMeans {
    fn add(&mut self, stats: &BTreeMap<String, f64>) {
        for (k, v) in stats {
            let e = self.0.entry(k.clone()).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }

    fn means(&self) -> BTreeMap<String, f64> {
        self.0.iter().map(|(k, (s, n))| (k.clone(), s / *n as f64)).collect()
    }
}

struct Trainer<'a> {
    req: TrainRequest<'a>,
    model: ActorCritic,
    opt: Optimisers,
    aux: AuxRuntime,
    shuffle_rng: Rng,
    /// Frozen critic providing DCPG's delayed targets.
    snapshot: Option<ActorCritic>,
    stats: StatMeans,
}

impl Trainer<'_> {
    fn cfg(&self) -> &TrainConfig {
        self.req.config
    }

    fn with_aux(&mut self, mut out: LossOutput, batch: &Batch, group: Option<Group>) -> Result<LossOutput, AgentError> {
        if let Some(a) = self.aux.loss(&self.model, batch, group, self.cfg().gamma)? {
            out.add_scaled(&a, 1.0);
        }
        Ok(out)
    }

    fn apply(&mut self, out: LossOutput) -> Result<(), AgentError> {
        self.opt.step(&mut self.model, &out.grads)?;
        self.aux.update_targets(&self.model);
        self.stats.add(&out.stats);
        Ok(())
    }

    /// Value terms of a policy update; `stop_grad` blocks the shared encoder.
    fn value_terms(&self, batch: &Batch, stop_grad: bool) -> Result<LossOutput, AgentError> {
        let cfg = self.cfg();
        let mut out = LossOutput::default();
        match self.req.algorithm {
            Algorithm::Dcpg => {
                if cfg.dcpg_fresh_value_coef != 0.0 {
                    out.add_scaled(&value_loss(&self.model, &batch.obs, &batch.targets, stop_grad)?, cfg.dcpg_fresh_value_coef);
                }
                if cfg.dcpg_delayed_value_coef != 0.0 {
                    let delayed = self.snapshot.as_ref().expect("DCPG snapshot").values(&batch.obs)?;
                    let mut d = value_loss(&self.model, &batch.obs, &delayed, stop_grad)?;
                    d.stats = BTreeMap::from([("delayed_value_loss".to_string(), d.loss)]);
                    out.add_scaled(&d, cfg.dcpg_delayed_value_coef);
                }
            }
            _ => out.add_scaled(&value_loss(&self.model, &batch.obs, &batch.targets, stop_grad)?, cfg.value_coef),
        }
        Ok(out)
    }

    fn policy_update(&mut self, buf: &RolloutBuffer) -> Result<(), AgentError> {
        let cfg = self.req.config;
        let phasic = self.req.algorithm.is_phasic();
        let n = buf.size();
        match self.model.coupling {
            Coupling::Coupled => {
                let epochs = if phasic { cfg.policy_epochs } else { cfg.ppo_epochs };
                for _ in 0..epochs {
                    for idx in minibatch_indices(n, cfg.minibatches, &mut self.shuffle_rng) {
                        let batch = buf.minibatch(&idx);
                        let mut out = ppo_policy_loss(&self.model, &batch, cfg.clip, cfg.entropy_coef)?;
                        // Phasic coupled models only shape the shared encoder through ℓ_V in the auxiliary phase.
                        out.add_scaled(&self.value_terms(&batch, phasic)?, 1.0);
                        let out = self.with_aux(out, &batch, None)?;
                        self.apply(out)?;
                    }
                }
            }
            Coupling::Decoupled => {
                let (actor_epochs, critic_epochs) = if phasic { (cfg.policy_epochs, cfg.policy_epochs) } else { (cfg.actor_epochs, cfg.critic_epochs) };
                for _ in 0..actor_epochs {
                    for idx in minibatch_indices(n, cfg.minibatches, &mut self.shuffle_rng) {
                        let batch = buf.minibatch(&idx);
                        let out = ppo_policy_loss(&self.model, &batch, cfg.clip, cfg.entropy_coef)?;
                        let out = self.with_aux(out, &batch, Some(Group::Actor))?;
                        self.apply(out)?;
                    }
                }
                for _ in 0..critic_epochs {
                    for idx in minibatch_indices(n, cfg.minibatches, &mut self.shuffle_rng) {
                        let batch = buf.minibatch(&idx);
                        let out = self.value_terms(&batch, false)?;
                        let out = self.with_aux(out, &batch, Some(Group::Critic))?;
                        self.apply(out)?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Auxiliary phase over the concatenated recent rollouts. The policy
    /// anchor π_old is evaluated once at the start of the phase.
    fn aux_phase(&mut self, buffers: &[RolloutBuffer]) -> Result<usize, AgentError> {
        let cfg = self.req.config;
        let obs_views: Vec<_> = buffers.iter().map(|b| b.obs.view()).collect();
        let obs = concatenate(Axis(0), &obs_views).expect("equal widths");
        let targets: Vec<f64> = buffers.iter().flat_map(|b| b.targets.iter().copied()).collect();
        let old_logits = self.model.logits(&obs)?;
        let n = obs.nrows();
        let coefs = AuxPhaseCoefs { value: cfg.aux_value_coef, aux_value: cfg.aux_distill_coef, beta_clone: cfg.beta_clone };
        let count = n.div_ceil(cfg.aux_minibatch_size);
        for _ in 0..cfg.aux_epochs {
            for idx in minibatch_indices(n, count, &mut self.shuffle_rng) {
                let batch = Batch {
                    obs: obs.select(Axis(0), &idx),
                    next_obs: Array2::zeros((0, obs.ncols())),
                    actions: vec![0; idx.len()],
                    rewards: Vec::new(),
                    dones: Vec::new(),
                    old_log_probs: Vec::new(),
                    advantages: Vec::new(),
                    targets: idx.iter().map(|&i| targets[i]).collect(),
                    old_logits: Some(old_logits.select(Axis(0), &idx)),
                };
                let out = ppg_aux_loss(&self.model, &batch, coefs)?;
                self.opt.step(&mut self.model, &out.grads)?;
                self.stats.add(&out.stats);
            }
        }
        Ok(n)
    }
}

/// Train one model. A budget below one rollout returns the initial model.
pub fn train(req: TrainRequest<'_>) -> Result<TrainOutput, AgentError> {
    let cfg = req.config;
    cfg.validate()?;
    req.env.validate()?;
    if req.train_levels.is_empty() {
        return Err(AgentError::Config("empty training level set".into()));
    }
    let spec = req.env.spec();
    let streams = SeedStreams::new(req.seed);
    let mut aux_init = streams.rng(Stream::AuxInit);
    let with_aux_value = req.algorithm.is_phasic() && req.coupling == Coupling::Decoupled;
    let mut model = ActorCritic::new(req.coupling, spec.obs_dim, spec.n_actions, cfg.arch, with_aux_value, &mut streams.rng(Stream::Init), &mut aux_init);
    let aux = AuxRuntime::new(req.attachments, &mut model, &mut aux_init, streams.rng(Stream::AuxObjective))?;
    let snapshot = (req.algorithm == Algorithm::Dcpg).then(|| model.clone());
    let mut t = Trainer {
        req,
        opt: Optimisers { coupling: req.coupling, actor: AdamState::new(cfg.adam()), critic: AdamState::new(cfg.adam()) },
        model,
        aux,
        shuffle_rng: streams.rng(Stream::Shuffle),
        snapshot,
        stats: StatMeans::default(),
    };
    let mut policy_rng = streams.rng(Stream::Policy);
    let mut eval_rng = streams.rng(Stream::Evaluation);
    let mut test_rng = streams.rng(Stream::TestEvaluation);
    let mut envs = VecEnv::new(req.env, req.train_levels, cfg.num_envs, streams.rng(Stream::Env))?;
    let mut normaliser = RewardNormaliser::new(cfg.num_envs, cfg.gamma, cfg.normalise_returns);

    let per_iter = cfg.batch_size() as u64;
    let iterations = (req.budget / per_iter) as usize;
    let mut out = TrainOutput { model: t.model.clone(), log: Vec::new(), checkpoints: Vec::new(), aux_batch_sizes: Vec::new(), steps: 0 };
    let mut aux_store: Vec<RolloutBuffer> = Vec::new();
    let mut finished: Vec<f64> = Vec::new();

    for it in 0..iterations {
        let mut buf = collect_rollout(&t.model, &mut envs, &mut normaliser, &mut policy_rng, cfg.rollout_len)?;
        buf.finalise(cfg.gamma, cfg.gae_lambda);
        finished.extend(buf.finished_returns.iter().copied());
        t.policy_update(&buf)?;
        if req.algorithm.is_phasic() {
            aux_store.push(buf);
            if aux_store.len() == cfg.n_pi {
                let size = t.aux_phase(&aux_store)?;
                out.aux_batch_sizes.push(size);
                aux_store.clear();
                if req.algorithm == Algorithm::Dcpg {
                    t.snapshot = Some(t.model.clone());
                }
            }
        }
        out.steps += per_iter;
        let last = it + 1 == iterations;
        if (it + 1) % cfg.eval_interval == 0 || last {
            let train_return = evaluate(req.env, &t.model, req.train_levels, cfg.eval_episodes, &mut eval_rng)?;
            let test_return = if req.test_levels.is_empty() {
                None
            } else {
                Some(evaluate(req.env, &t.model, req.test_levels, cfg.eval_episodes, &mut test_rng)?)
            };
            let episode_return = (!finished.is_empty()).then(|| finished.iter().sum::<f64>() / finished.len() as f64);
            finished.clear();
            let record = LogRecord { iteration: it + 1, step: out.steps, train_return, test_return, episode_return, stats: t.stats.means() };
            log::info!(
                "{} {} it {} step {} train {:.4} test {:?}",
                req.algorithm,
                req.coupling,
                record.iteration,
                record.step,
                record.train_return,
                record.test_return
            );
            out.log.push(record);
            t.stats = StatMeans::default();
        }
        if cfg.checkpoint_interval > 0 && (it + 1) % cfg.checkpoint_interval == 0 && !last {
            out.checkpoints.push((out.steps, t.model.to_checkpoint(checkpoint_meta(&req, out.steps))));
        }
    }
    out.checkpoints.push((out.steps, t.model.to_checkpoint(checkpoint_meta(&req, out.steps))));
    out.model = t.model;
    Ok(out)
}

fn checkpoint_meta(req: &TrainRequest<'_>, step: u64) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("algorithm".to_string(), req.algorithm.to_string()),
        ("seed".to_string(), req.seed.to_string()),
        ("step".to_string(), step.to_string()),
    ])
}

/// Mean undiscounted return of the stochastic policy over `levels`.
///
/// Exact on the assembly line; Monte-Carlo with `episodes` episodes (levels
/// visited round-robin) on the gridworld.
pub fn evaluate(env: &Environment, model: &ActorCritic, levels: &[LevelContext], episodes: usize, rng: &mut Rng) -> Result<f64, AgentError> {
    if levels.is_empty() {
        return Err(AgentError::Config("empty evaluation level set".into()));
    }
    match env {
        Environment::Assembly(cfg) => {
            let mut total = 0.0;
            for level in levels {
                let l = level.assembly().ok_or(crate::cmdp::CmdpError::LevelMismatch(level.context_id))?;
                let rows: Vec<Vec<f64>> = (0..l.n_parts()).map(|j| assembly::observe(cfg, l, AssemblyPos::Inspect(j))).collect();
                let obs = Array2::from_shape_fn((rows.len(), cfg.obs_dim()), |(i, k)| rows[i][k]);
                let logits = model.logits(&obs)?;
                let probs: Vec<Vec<f64>> = logits.rows().into_iter().map(|r| Categorical::from_logits(&r.to_vec()).probs()).collect();
                total += assembly::policy_value(cfg, l, 0, 1.0, |j| [probs[j][0], probs[j][1]]);
            }
            Ok(total / levels.len() as f64)
        }
        Environment::Gridworld(_) => {
            let mut states = Vec::with_capacity(episodes);
            let mut obs = Vec::with_capacity(episodes);
            for e in 0..episodes {
                let (s, o) = env.reset(&levels[e % levels.len()])?;
                states.push(s);
                obs.push(o.features);
            }
            let mut returns = vec![0.0; episodes];
            let mut live: Vec<usize> = (0..episodes).collect();
            while !live.is_empty() {
                let x = Array2::from_shape_fn((live.len(), model.obs_dim), |(i, k)| obs[live[i]][k]);
                let (actions, _, _) = model.act(&x, rng)?;
                let mut still = Vec::with_capacity(live.len());
                for (&e, a) in live.iter().zip(actions) {
                    let st = env.step(&levels[e % levels.len()], &states[e], a)?;
                    returns[e] += st.reward;
                    if !st.done {
                        states[e] = st.state;
                        obs[e] = st.obs.features;
                        still.push(e);
                    }
                }
                live = still;
            }
            Ok(returns.iter().sum::<f64>() / episodes as f64)
        }
    }
}

/// Mean optimal undiscounted return over assembly levels.
pub fn assembly_optimal_return(env: &Environment, levels: &[LevelContext]) -> Option<f64> {
    let cfg = env.assembly_config()?;
    let total: f64 = levels.iter().map(|l| l.assembly().map(|a| assembly::optimal_value(cfg, a, 0, 1.0))).sum::<Option<f64>>()?;
    Some(total / levels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{EnvKind, LevelSplit};

    fn quick_cfg() -> TrainConfig {
        TrainConfig {
            num_envs: 4,
            rollout_len: 16,
            minibatches: 4,
            n_pi: 2,
            aux_minibatch_size: 32,
            aux_epochs: 2,
            eval_interval: 1,
            arch: ArchConfig { hidden: 16, hidden_layers: 1, latent: 8, width_multiplier: 1.0 },
            ..TrainConfig::default()
        }
    }

    fn run(alg: Algorithm, coupling: Coupling, budget: u64, seed: u64) -> TrainOutput {
        let env = Environment::default_for(EnvKind::Assembly);
        let levels = env.sample_level_set(8, 1, LevelSplit::Train).unwrap();
        let test = env.sample_level_set(8, 1, LevelSplit::Test).unwrap();
        let cfg = quick_cfg();
        train(TrainRequest {
            algorithm: alg,
            coupling,
            config: &cfg,
            attachments: &[],
            env: &env,
            train_levels: &levels,
            test_levels: &test,
            budget,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn zero_budget_returns_initial_model() {
        let out = run(Algorithm::Ppo, Coupling::Coupled, 0, 3);
        let spec = Environment::default_for(EnvKind::Assembly).spec();
        let streams = SeedStreams::new(3);
        let init = ActorCritic::new(Coupling::Coupled, spec.obs_dim, spec.n_actions, quick_cfg().arch, false, &mut streams.rng(Stream::Init), &mut streams.rng(Stream::AuxInit));
        assert_eq!(out.model, init);
        assert!(out.log.is_empty());
    }

    #[test]
    fn all_combinations_run_and_log() {
        for alg in Algorithm::ALL {
            for coupling in [Coupling::Coupled, Coupling::Decoupled] {
                let out = run(alg, coupling, 64 * 5, 1);
                assert_eq!(out.log.len(), 5, "{alg} {coupling}");
                assert!(out.log.iter().all(|r| r.train_return.is_finite() && r.test_return.is_some()));
                if alg.is_phasic() {
                    // Aux phases after iterations 2 and 4, each over two rollouts.
                    assert_eq!(out.aux_batch_sizes, vec![128, 128]);
                    assert!(out.log[1].stats.contains_key("policy_kl"));
                } else {
                    assert!(out.aux_batch_sizes.is_empty());
                }
                assert_eq!(out.model.has_aux_value(), alg.is_phasic() && coupling == Coupling::Decoupled);
            }
        }
    }

    #[test]
    fn training_is_deterministic() {
        let a = run(Algorithm::Dcpg, Coupling::Decoupled, 64 * 4, 9);
        let b = run(Algorithm::Dcpg, Coupling::Decoupled, 64 * 4, 9);
        assert_eq!(a.model, b.model);
        assert_eq!(a.log, b.log);
        let c = run(Algorithm::Dcpg, Coupling::Decoupled, 64 * 4, 10);
        assert_ne!(a.model, c.model);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig { clip: 1.5, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig { n_pi: 0, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        cfg = TrainConfig { minibatches: 10_000, num_envs: 2, rollout_len: 2, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
        assert!(toml::from_str::<TrainConfig>("gama = 0.9").is_err());
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn minibatches_partition_the_batch() {
        let mut rng = crate::seed::rng_from(1);
        let parts = minibatch_indices(103, 8, &mut rng);
        let mut all: Vec<usize> = parts.concat();
        all.sort();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        assert!(parts.iter().all(|p| p.len() == 12 || p.len() == 13));
    }

    #[test]
    fn optimal_policy_evaluates_to_optimal_return() {
        let env = Environment::default_for(EnvKind::Assembly);
        let levels = env.sample_level_set(20, 4, LevelSplit::Train).unwrap();
        let opt = assembly_optimal_return(&env, &levels).unwrap();
        let mean_parts = levels.iter().map(|l| l.assembly().unwrap().n_parts() as f64).sum::<f64>() / 20.0;
        assert!((opt - mean_parts).abs() < 1e-12);
    }
}
