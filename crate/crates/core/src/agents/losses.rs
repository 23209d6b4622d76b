//! PPO, value and PPG auxiliary-phase losses with analytic gradients.
//!
//! Every loss is returned unscaled; callers combine them with coefficients
//! through [`LossOutput::add_scaled`].

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};

use super::model::{ActorCritic, AUX_VALUE_HEAD, POLICY_HEAD, VALUE_HEAD};
use super::rollout::{normalise_advantages, Batch};
use super::{AgentError, Coupling};
use crate::nn::{Categorical, ParamSet, Tape};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: ParamSet,
    pub stats: BTreeMap<String, f64>,
}

impl LossOutput {
    /// `self += coef · other`; statistics are copied unscaled.
    pub fn add_scaled(&mut self, other: &LossOutput, coef: f64) {
        self.loss += coef * other.loss;
        self.grads.add_scaled(&other.grads, coef);
        for (k, v) in &other.stats {
            self.stats.insert(k.clone(), *v);
        }
    }
}

/// Encoder followed by a head, with tapes for the reverse pass.
pub(crate) struct Path {
    phi: String,
    head: String,
    z_tape: Tape,
    out_tape: Tape,
}

impl Path {
    pub(crate) fn forward(model: &ActorCritic, phi: &str, head: &str, obs: &Array2<f64>) -> Result<(Array2<f64>, Self), AgentError> {
        let (z, z_tape) = model.net(phi).forward(obs)?;
        let (out, out_tape) = model.net(head).forward(&z)?;
        Ok((out, Self { phi: phi.to_string(), head: head.to_string(), z_tape, out_tape }))
    }

    /// Accumulate gradients for `d_out`; the encoder is skipped when `through_phi` is false.
    pub(crate) fn backward(&self, model: &ActorCritic, d_out: &Array2<f64>, through_phi: bool, grads: &mut ParamSet) {
        let (g_head, d_z) = model.net(&self.head).backward(&self.out_tape, d_out);
        grads.accumulate(&self.head, &g_head);
        if through_phi {
            let (g_phi, _) = model.net(&self.phi).backward(&self.z_tape, &d_z);
            grads.accumulate(&self.phi, &g_phi);
        }
    }
}

fn row(m: &Array2<f64>, i: usize) -> ArrayView1<'_, f64> {
    m.row(i)
}

fn dist(logits: &Array2<f64>, i: usize) -> Categorical {
    Categorical::from_logits(&row(logits, i).to_vec())
}

/// Clipped surrogate with entropy bonus, negated for minimisation.
///
/// Advantages are normalised over the minibatch before use. At a tie between
/// the two surrogate branches the unclipped gradient is taken.
pub fn ppo_policy_loss(model: &ActorCritic, batch: &Batch, clip: f64, entropy_coef: f64) -> Result<LossOutput, AgentError> {
    let b = batch.len();
    let mut adv = batch.advantages.clone();
    normalise_advantages(&mut adv);
    let (logits, path) = Path::forward(model, model.actor_phi(), POLICY_HEAD, &batch.obs)?;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let (mut obj, mut ent, mut kl, mut clipped) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..b {
        let d = dist(&logits, i);
        let a = batch.actions[i];
        let logp = d.log_prob(a);
        let ratio = (logp - batch.old_log_probs[i]).exp();
        let unclipped = ratio * adv[i];
        let clipped_obj = ratio.clamp(1.0 - clip, 1.0 + clip) * adv[i];
        let h = d.entropy();
        obj += unclipped.min(clipped_obj) + entropy_coef * h;
        ent += h;
        kl += (ratio - 1.0) - (logp - batch.old_log_probs[i]);
        // ∂ obj / ∂ logp_a
        let d_logp = if unclipped <= clipped_obj {
            unclipped
        } else {
            clipped += 1.0;
            0.0
        };
        let p = d.probs();
        let hg = d.entropy_grad();
        for j in 0..p.len() {
            let onehot = if j == a { 1.0 } else { 0.0 };
            d_logits[[i, j]] = -(d_logp * (onehot - p[j]) + entropy_coef * hg[j]) / b as f64;
        }
    }
    let mut out = LossOutput { loss: -obj / b as f64, ..Default::default() };
    path.backward(model, &d_logits, true, &mut out.grads);
    out.stats.insert("policy_loss".into(), out.loss);
    out.stats.insert("entropy".into(), ent / b as f64);
    out.stats.insert("approx_kl".into(), kl / b as f64);
    out.stats.insert("clip_frac".into(), clipped / b as f64);
    Ok(out)
}

fn mse_through(model: &ActorCritic, phi: &str, head: &str, obs: &Array2<f64>, targets: &[f64], through_phi: bool) -> Result<LossOutput, AgentError> {
    let b = targets.len();
    if obs.nrows() != b {
        return Err(AgentError::Config(format!("{} observations for {b} targets", obs.nrows())));
    }
    let (pred, path) = Path::forward(model, phi, head, obs)?;
    let mut d = Array2::zeros((b, 1));
    let mut loss = 0.0;
    for i in 0..b {
        let e = pred[[i, 0]] - targets[i];
        loss += e * e;
        d[[i, 0]] = 2.0 * e / b as f64;
    }
    let mut out = LossOutput { loss: loss / b as f64, ..Default::default() };
    path.backward(model, &d, through_phi, &mut out.grads);
    Ok(out)
}

/// (1/|B|) Σ (V(o) − V̂)². With `stop_grad_phi` only the value head receives gradient.
pub fn value_loss(model: &ActorCritic, obs: &Array2<f64>, targets: &[f64], stop_grad_phi: bool) -> Result<LossOutput, AgentError> {
    let mut out = mse_through(model, model.critic_phi(), VALUE_HEAD, obs, targets, !stop_grad_phi)?;
    out.stats.insert("value_loss".into(), out.loss);
    Ok(out)
}

/// Value regression through the actor representation via the auxiliary head.
pub fn aux_value_loss(model: &ActorCritic, obs: &Array2<f64>, targets: &[f64]) -> Result<LossOutput, AgentError> {
    if !model.has_aux_value() {
        return Err(AgentError::Config("model has no auxiliary value head".into()));
    }
    let mut out = mse_through(model, model.actor_phi(), AUX_VALUE_HEAD, obs, targets, true)?;
    out.stats.insert("aux_value_loss".into(), out.loss);
    Ok(out)
}

/// Mean KL(π_old ‖ π) over the batch, differentiated with respect to π.
pub fn policy_kl_loss(model: &ActorCritic, obs: &Array2<f64>, old_logits: &Array2<f64>) -> Result<LossOutput, AgentError> {
    let b = obs.nrows();
    if old_logits.nrows() != b {
        return Err(AgentError::Config("old logits do not match the batch".into()));
    }
    let (logits, path) = Path::forward(model, model.actor_phi(), POLICY_HEAD, obs)?;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut kl = 0.0;
    for i in 0..b {
        let old = dist(old_logits, i);
        let new = dist(&logits, i);
        kl += old.kl(&new);
        let (p_old, p_new) = (old.probs(), new.probs());
        for j in 0..p_new.len() {
            d_logits[[i, j]] = (p_new[j] - p_old[j]) / b as f64;
        }
    }
    let mut out = LossOutput { loss: kl / b as f64, ..Default::default() };
    path.backward(model, &d_logits, true, &mut out.grads);
    out.stats.insert("policy_kl".into(), out.loss);
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxPhaseCoefs {
    pub value: f64,
    pub aux_value: f64,
    pub beta_clone: f64,
}

/// Auxiliary-phase joint loss ℓ_V + ℓ_aux.
///
/// Decoupled: critic value loss, value distillation into φ_A through the
/// auxiliary head, and β_c·KL(π_old ‖ π). Coupled: the value head already
/// sits on the shared φ, so ℓ_V doubles as the distillation term.
pub fn ppg_aux_loss(model: &ActorCritic, batch: &Batch, coefs: AuxPhaseCoefs) -> Result<LossOutput, AgentError> {
    let old = batch
        .old_logits
        .as_ref()
        .ok_or_else(|| AgentError::Config("auxiliary batch lacks behaviour logits".into()))?;
    let mut out = LossOutput::default();
    out.add_scaled(&value_loss(model, &batch.obs, &batch.targets, false)?, coefs.value);
    if model.coupling == Coupling::Decoupled && coefs.aux_value != 0.0 {
        out.add_scaled(&aux_value_loss(model, &batch.obs, &batch.targets)?, coefs.aux_value);
    }
    if coefs.beta_clone != 0.0 {
        out.add_scaled(&policy_kl_loss(model, &batch.obs, old)?, coefs.beta_clone);
    } else {
        out.stats.insert("policy_kl".into(), 0.0);
    }
    out.stats.insert("joint_loss".into(), out.loss);
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::agents::model::{ArchConfig, Group};
    use crate::nn::gradcheck;
    use crate::seed::rng_from;
    use rand::Rng as _;

    pub(crate) fn small_model(coupling: Coupling, seed: u64) -> ActorCritic {
        let arch = ArchConfig { hidden: 6, hidden_layers: 1, latent: 4, width_multiplier: 1.0 };
        let mut m = ActorCritic::new(coupling, 5, 3, arch, coupling == Coupling::Decoupled, &mut rng_from(seed), &mut rng_from(seed + 100));
        // Larger policy weights than the 0.01 init so every gradient is well above noise.
        let head = m.params.get_mut(POLICY_HEAD).unwrap();
        head.scale(100.0);
        m
    }

    /// Random 2-env × 4-step style batch with ratios away from the clip edges.
    pub(crate) fn random_batch(model: &ActorCritic, seed: u64) -> Batch {
        let mut rng = rng_from(seed);
        let n = 8;
        let obs = Array2::from_shape_fn((n, model.obs_dim), |_| rng.random_range(-1.0..1.0));
        let next_obs = Array2::from_shape_fn((n, model.obs_dim), |_| rng.random_range(-1.0..1.0));
        let logits = model.logits(&obs).unwrap();
        let actions: Vec<usize> = (0..n).map(|i| i % model.n_actions).collect();
        let shifts = [0.5, -0.4, 0.05, -0.03, 0.6, 0.0, -0.5, 0.08];
        let old_log_probs = (0..n).map(|i| dist(&logits, i).log_prob(actions[i]) + shifts[i]).collect();
        let old_logits = Some(Array2::from_shape_fn((n, model.n_actions), |_| rng.random_range(-1.0..1.0)));
        Batch {
            obs,
            next_obs,
            actions,
            rewards: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            dones: (0..n).map(|i| i == 3).collect(),
            old_log_probs,
            advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            targets: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            old_logits,
        }
    }

    fn check(model: &ActorCritic, out: &LossOutput, f: impl Fn(&ActorCritic) -> f64) -> f64 {
        let r = gradcheck(
            &model.params,
            &out.grads,
            |p| {
                let mut m = model.clone();
                m.params = p.clone();
                f(&m)
            },
            1e-5,
            12,
            1e-7,
        );
        assert!(r.checked > 0);
        r.max_rel_error
    }

    #[test]
    fn policy_loss_gradients() {
        for coupling in [Coupling::Coupled, Coupling::Decoupled] {
            let m = small_model(coupling, 1);
            let b = random_batch(&m, 2);
            let out = ppo_policy_loss(&m, &b, 0.2, 0.01).unwrap();
            assert!(out.stats["clip_frac"] > 0.0 && out.stats["clip_frac"] < 1.0);
            let err = check(&m, &out, |m| ppo_policy_loss(m, &b, 0.2, 0.01).unwrap().loss);
            assert!(err < 1e-4, "{coupling}: {err}");
        }
    }

    #[test]
    fn ratio_one_matches_vanilla_policy_gradient() {
        let m = small_model(Coupling::Decoupled, 3);
        let mut b = random_batch(&m, 4);
        let logits = m.logits(&b.obs).unwrap();
        b.old_log_probs = (0..b.len()).map(|i| dist(&logits, i).log_prob(b.actions[i])).collect();
        let out = ppo_policy_loss(&m, &b, 0.2, 0.01).unwrap();
        assert_eq!(out.stats["clip_frac"], 0.0);
        // −mean(Â·log π(a|o) + β_H·H): same gradient as the surrogate at ρ = 1.
        let mut adv = b.advantages.clone();
        normalise_advantages(&mut adv);
        let vanilla = |m: &ActorCritic| {
            let l = m.logits(&b.obs).unwrap();
            -(0..b.len()).map(|i| adv[i] * dist(&l, i).log_prob(b.actions[i]) + 0.01 * dist(&l, i).entropy()).sum::<f64>() / b.len() as f64
        };
        assert!(check(&m, &out, vanilla) < 1e-4);
    }

    #[test]
    fn saturated_clip_has_no_ratio_gradient() {
        let m = small_model(Coupling::Coupled, 5);
        let mut b = random_batch(&m, 6);
        let logits = m.logits(&b.obs).unwrap();
        // ρ = 1.3 and Â > 0 on every sample.
        b.old_log_probs = (0..b.len()).map(|i| dist(&logits, i).log_prob(b.actions[i]) - 1.3f64.ln()).collect();
        b.advantages = (0..b.len()).map(|i| 1.0 + i as f64).collect();
        let out = ppo_policy_loss(&m, &b, 0.2, 0.0).unwrap();
        let mut adv = b.advantages.clone();
        normalise_advantages(&mut adv);
        let positive = adv.iter().filter(|&&a| a > 0.0).count();
        assert!(positive > 0 && positive < adv.len());
        assert_eq!(out.stats["clip_frac"], positive as f64 / adv.len() as f64);
        // Positive Â use the saturated 1.2·Â, negative Â the unclipped 1.3·Â.
        let expect = -adv.iter().map(|&a| if a > 0.0 { 1.2 * a } else { 1.3 * a }).sum::<f64>() / adv.len() as f64;
        assert!((out.loss - expect).abs() < 1e-12);
        // Only the unclipped samples carry gradient.
        let unclipped_only = |x: &ActorCritic| {
            let l = x.logits(&b.obs).unwrap();
            -(0..b.len())
                .filter(|&i| adv[i] < 0.0)
                .map(|i| (dist(&l, i).log_prob(b.actions[i]) - b.old_log_probs[i]).exp() * adv[i])
                .sum::<f64>()
                / b.len() as f64
        };
        assert!(check(&m, &out, unclipped_only) < 1e-4);
    }

    #[test]
    fn value_loss_examples_and_gradients() {
        let m = small_model(Coupling::Decoupled, 7);
        let b = random_batch(&m, 8);
        let out = value_loss(&m, &b.obs, &b.targets, false).unwrap();
        assert!(check(&m, &out, |m| value_loss(m, &b.obs, &b.targets, false).unwrap().loss) < 1e-4);
        // Perfect predictions give zero loss.
        let v = m.values(&b.obs).unwrap();
        assert_eq!(value_loss(&m, &b.obs, &v, false).unwrap().loss, 0.0);
    }

    #[test]
    fn constant_predictor_value_loss() {
        let mut m = small_model(Coupling::Coupled, 9);
        let head = m.params.get_mut(VALUE_HEAD).unwrap();
        head.scale(0.0);
        let obs = Array2::zeros((2, m.obs_dim));
        for c in [0.0, 0.5, 1.0, 3.0] {
            m.params.get_mut(VALUE_HEAD).unwrap().layers[0].bias[0] = c;
            let l = value_loss(&m, &obs, &[0.0, 2.0], false).unwrap().loss;
            assert!((l - (c * c + (c - 2.0) * (c - 2.0)) / 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stop_gradient_leaves_shared_encoder_untouched() {
        let m = small_model(Coupling::Coupled, 11);
        let b = random_batch(&m, 12);
        let out = value_loss(&m, &b.obs, &b.targets, true).unwrap();
        assert!(!out.grads.contains(m.actor_phi()));
        assert!(check(&m, &out, |x| {
            // Encoder perturbations do change the loss, so compare only the head.
            let mut y = m.clone();
            y.params.insert(VALUE_HEAD, x.net(VALUE_HEAD).clone());
            value_loss(&y, &b.obs, &b.targets, true).unwrap().loss
        }) < 1e-4);
    }

    #[test]
    fn decoupled_losses_are_isolated() {
        let m = small_model(Coupling::Decoupled, 13);
        let b = random_batch(&m, 14);
        let pol = ppo_policy_loss(&m, &b, 0.2, 0.01).unwrap();
        assert!(pol.grads.names().all(|n| ActorCritic::group_of(n) == Group::Actor));
        let val = value_loss(&m, &b.obs, &b.targets, false).unwrap();
        assert!(val.grads.names().all(|n| ActorCritic::group_of(n) == Group::Critic));
    }

    #[test]
    fn aux_phase_gradients() {
        let coefs = AuxPhaseCoefs { value: 1.0, aux_value: 1.0, beta_clone: 1.0 };
        for coupling in [Coupling::Coupled, Coupling::Decoupled] {
            let m = small_model(coupling, 15);
            let b = random_batch(&m, 16);
            let out = ppg_aux_loss(&m, &b, coefs).unwrap();
            let err = check(&m, &out, |m| ppg_aux_loss(m, &b, coefs).unwrap().loss);
            assert!(err < 1e-4, "{coupling}: {err}");
        }
    }

    #[test]
    fn kl_vanishes_for_unchanged_policy() {
        let m = small_model(Coupling::Decoupled, 17);
        let mut b = random_batch(&m, 18);
        b.old_logits = Some(m.logits(&b.obs).unwrap());
        let out = policy_kl_loss(&m, &b.obs, b.old_logits.as_ref().unwrap()).unwrap();
        assert!(out.loss.abs() < 1e-15 && out.grads.global_norm() < 1e-15);
    }

    #[test]
    fn explicit_categorical_kl() {
        let p = Categorical::from_logits(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
        let q = Categorical::from_logits(&[0.4f64.ln(), 0.4f64.ln(), 0.2f64.ln()]);
        let direct = 0.5 * (0.5f64 / 0.4).ln() + 0.3 * (0.3f64 / 0.4).ln();
        assert!((p.kl(&q) - direct).abs() < 1e-12);
        assert!((direct - 0.02527).abs() < 5e-6);
    }

    #[test]
    fn zero_clone_coefficient_leaves_two_regressions() {
        let m = small_model(Coupling::Decoupled, 19);
        let b = random_batch(&m, 20);
        let out = ppg_aux_loss(&m, &b, AuxPhaseCoefs { value: 1.0, aux_value: 1.0, beta_clone: 0.0 }).unwrap();
        let v = value_loss(&m, &b.obs, &b.targets, false).unwrap().loss;
        let a = aux_value_loss(&m, &b.obs, &b.targets).unwrap().loss;
        assert!((out.loss - v - a).abs() < 1e-12);
        assert!(!out.grads.contains(POLICY_HEAD));
    }

    #[test]
    fn missing_logits_is_rejected() {
        let m = small_model(Coupling::Coupled, 21);
        let mut b = random_batch(&m, 22);
        b.old_logits = None;
        assert!(ppg_aux_loss(&m, &b, AuxPhaseCoefs { value: 1.0, aux_value: 1.0, beta_clone: 1.0 }).is_err());
    }
}
