//! The four auxiliary losses, each a pure function of the model, a batch and
//! pre-sampled randomness (partners, negatives, augmented views).

use ndarray::{concatenate, s, Array2, Axis};

use crate::agents::losses::{LossOutput, Path};
use crate::agents::model::{ActorCritic, Group, POLICY_HEAD, VALUE_HEAD};
use crate::agents::rollout::{normalise_advantages, Batch};
use crate::agents::AgentError;
use crate::nn::{Categorical, Mlp, ParamSet};

/// Cosine bound keeping arccos differentiable.
const COS_LIMIT: f64 = 1.0 - 1e-7;

/// MICo-style distance (‖a‖² + ‖b‖²)/2 + β·θ(a, b).
pub fn mico_distance(a: &[f64], b: &[f64], beta: f64) -> f64 {
    mico_distance_grad(a, b, beta).0
}

/// Distance and its gradients with respect to `a` and `b`.
fn mico_distance_grad(a: &[f64], b: &[f64], beta: f64) -> (f64, Vec<f64>, Vec<f64>) {
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    let mut d = 0.5 * (na2 + nb2);
    let mut ga: Vec<f64> = a.to_vec();
    let mut gb: Vec<f64> = b.to_vec();
    let (na, nb) = (na2.sqrt(), nb2.sqrt());
    if beta != 0.0 && na > 0.0 && nb > 0.0 {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let c = dot / (na * nb);
        let cc = c.clamp(-COS_LIMIT, COS_LIMIT);
        d += beta * cc.acos();
        if c == cc {
            // dθ/dc = −1/√(1−c²); dc/da = b/(|a||b|) − c·a/|a|²
            let k = -beta / (1.0 - c * c).sqrt();
            for j in 0..a.len() {
                ga[j] += k * (b[j] / (na * nb) - c * a[j] / na2);
                gb[j] += k * (a[j] / (na * nb) - c * b[j] / nb2);
            }
        }
    }
    (d, ga, gb)
}

/// Squared error between online latent distances of (i, partner[i]) and the
/// bootstrapped target |r_i − r_j| + γ·d_target(z'_i, z'_j). The bootstrap is
/// dropped when either sample ends its episode.
pub fn mico_loss(
    model: &ActorCritic,
    group: Group,
    target_phi: &Mlp,
    batch: &Batch,
    partner: &[usize],
    gamma: f64,
    beta: f64,
) -> Result<LossOutput, AgentError> {
    let n = batch.len();
    let phi = model.phi_for(group);
    let (z, tape) = model.net(phi).forward(&batch.obs)?;
    let zt_next = target_phi.predict(&batch.next_obs)?;
    let mut dz = Array2::zeros(z.raw_dim());
    let mut loss = 0.0;
    for i in 0..n {
        let j = partner[i];
        let zi = z.row(i).to_vec();
        let zj = z.row(j).to_vec();
        let (d, gi, gj) = mico_distance_grad(&zi, &zj, beta);
        let live = !(batch.dones[i] || batch.dones[j]);
        let boot = if live { mico_distance(&zt_next.row(i).to_vec(), &zt_next.row(j).to_vec(), beta) } else { 0.0 };
        let target = (batch.rewards[i] - batch.rewards[j]).abs() + gamma * boot;
        let e = d - target;
        loss += e * e;
        let w = 2.0 * e / n as f64;
        for k in 0..zi.len() {
            dz[[i, k]] += w * gi[k];
            dz[[j, k]] += w * gj[k];
        }
    }
    let mut out = LossOutput { loss: loss / n as f64, ..Default::default() };
    let (g, _) = model.net(phi).backward(&tape, &dz);
    out.grads.accumulate(phi, &g);
    Ok(out)
}

/// Negative samples for the dynamics discriminator.
#[derive(Clone, Debug, PartialEq)]
pub struct Negatives {
    /// Derangement supplying the out-of-distribution next state.
    pub partner: Vec<usize>,
    /// Replacement actions, each different from the recorded one.
    pub alt_actions: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DynamicsWeights {
    pub in_distribution: f64,
    pub ood_states: f64,
    pub ood_actions: f64,
}

fn one_hot(actions: &[usize], n: usize) -> Array2<f64> {
    let mut m = Array2::zeros((actions.len(), n));
    for (i, &a) in actions.iter().enumerate() {
        m[[i, a]] = 1.0;
    }
    m
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weighted binary cross-entropy of a discriminator g(z, a, z') that labels
/// recorded transitions 1 and both kinds of negatives 0.
pub fn dynamics_loss(
    model: &ActorCritic,
    group: Group,
    head: &str,
    batch: &Batch,
    neg: &Negatives,
    w: DynamicsWeights,
) -> Result<LossOutput, AgentError> {
    let n = batch.len();
    if n < 2 {
        return Err(AgentError::Config("dynamics discriminator needs at least two samples".into()));
    }
    let phi = model.phi_for(group);
    let (z, z_tape) = model.net(phi).forward(&batch.obs)?;
    let (zn, zn_tape) = model.net(phi).forward(&batch.next_obs)?;
    let latent = z.ncols();
    let na = model.n_actions;
    let zn_shuffled = zn.select(Axis(0), &neg.partner);
    let a_real = one_hot(&batch.actions, na);
    let a_alt = one_hot(&neg.alt_actions, na);
    // Rows: [recorded; shuffled next state; replaced action]
    let classes = [(w.in_distribution, 1.0), (w.ood_states, 0.0), (w.ood_actions, 0.0)];
    let blocks = [
        concatenate(Axis(1), &[z.view(), a_real.view(), zn.view()]).expect("aligned"),
        concatenate(Axis(1), &[z.view(), a_real.view(), zn_shuffled.view()]).expect("aligned"),
        concatenate(Axis(1), &[z.view(), a_alt.view(), zn.view()]).expect("aligned"),
    ];
    let active: Vec<usize> = (0..3).filter(|&c| classes[c].0 != 0.0).collect();
    if active.is_empty() {
        return Ok(LossOutput::default());
    }
    let inputs: Vec<_> = active.iter().map(|&c| blocks[c].view()).collect();
    let input = concatenate(Axis(0), &inputs).expect("same widths");
    let (logits, tape) = model.net(head).forward(&input)?;
    let total_w: f64 = active.iter().map(|&c| classes[c].0).sum::<f64>() * n as f64;
    let mut d_logits = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (bi, &c) in active.iter().enumerate() {
        let (wc, y) = classes[c];
        for i in 0..n {
            let r = bi * n + i;
            let l = logits[[r, 0]];
            loss += wc * (softplus(l) - y * l);
            d_logits[[r, 0]] = wc * (sigmoid(l) - y) / total_w;
        }
    }
    let mut out = LossOutput { loss: loss / total_w, ..Default::default() };
    let (g_head, d_in) = model.net(head).backward(&tape, &d_logits);
    out.grads.accumulate(head, &g_head);
    let mut dz = Array2::zeros(z.raw_dim());
    let mut dzn = Array2::zeros(zn.raw_dim());
    for (bi, &c) in active.iter().enumerate() {
        let block = d_in.slice(s![bi * n..(bi + 1) * n, ..]);
        dz += &block.slice(s![.., ..latent]);
        let dnext = block.slice(s![.., latent + na..]);
        if c == 1 {
            for i in 0..n {
                let mut r = dzn.row_mut(neg.partner[i]);
                r += &dnext.row(i);
            }
        } else {
            dzn += &dnext;
        }
    }
    let (g1, _) = model.net(phi).backward(&z_tape, &dz);
    let (g2, _) = model.net(phi).backward(&zn_tape, &dzn);
    out.grads.accumulate(phi, &g1);
    out.grads.accumulate(phi, &g2);
    Ok(out)
}

/// MSE between a linear head on (z, one-hot a) and the minibatch-normalised advantage.
pub fn advantage_distill_loss(model: &ActorCritic, group: Group, head: &str, batch: &Batch) -> Result<LossOutput, AgentError> {
    let n = batch.len();
    let phi = model.phi_for(group);
    let (z, z_tape) = model.net(phi).forward(&batch.obs)?;
    let latent = z.ncols();
    let input = concatenate(Axis(1), &[z.view(), one_hot(&batch.actions, model.n_actions).view()]).expect("aligned");
    let (pred, tape) = model.net(head).forward(&input)?;
    let mut adv = batch.advantages.clone();
    normalise_advantages(&mut adv);
    let mut d = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let e = pred[[i, 0]] - adv[i];
        loss += e * e;
        d[[i, 0]] = 2.0 * e / n as f64;
    }
    let mut out = LossOutput { loss: loss / n as f64, ..Default::default() };
    let (g_head, d_in) = model.net(head).backward(&tape, &d);
    out.grads.accumulate(head, &g_head);
    let (g_phi, _) = model.net(phi).backward(&z_tape, &d_in.slice(s![.., ..latent]).to_owned());
    out.grads.accumulate(phi, &g_phi);
    Ok(out)
}

/// Consistency between clean and augmented views on one pathway: the policy
/// KL(π(·|o) ‖ π(·|aug(o))) for the actor, the value MSE for the critic.
/// Gradients flow through both views.
pub fn augmentation_loss(model: &ActorCritic, group: Group, obs: &Array2<f64>, augmented: &Array2<f64>) -> Result<LossOutput, AgentError> {
    let n = obs.nrows();
    let phi = model.phi_for(group);
    let head = match group {
        Group::Actor => POLICY_HEAD,
        Group::Critic => VALUE_HEAD,
    };
    let (clean, p_clean) = Path::forward(model, phi, head, obs)?;
    let (aug, p_aug) = Path::forward(model, phi, head, augmented)?;
    let mut d_clean = Array2::zeros(clean.raw_dim());
    let mut d_aug = Array2::zeros(aug.raw_dim());
    let mut loss = 0.0;
    for i in 0..n {
        match group {
            Group::Actor => {
                let p = Categorical::from_logits(&clean.row(i).to_vec());
                let q = Categorical::from_logits(&aug.row(i).to_vec());
                let kl = p.kl(&q);
                loss += kl;
                let (pp, qq) = (p.probs(), q.probs());
                for j in 0..pp.len() {
                    d_clean[[i, j]] = pp[j] * (p.log_probs()[j] - q.log_probs()[j] - kl) / n as f64;
                    d_aug[[i, j]] = (qq[j] - pp[j]) / n as f64;
                }
            }
            Group::Critic => {
                let e = clean[[i, 0]] - aug[[i, 0]];
                loss += e * e;
                d_clean[[i, 0]] = 2.0 * e / n as f64;
                d_aug[[i, 0]] = -2.0 * e / n as f64;
            }
        }
    }
    let mut grads = ParamSet::new();
    p_clean.backward(model, &d_clean, true, &mut grads);
    p_aug.backward(model, &d_aug, true, &mut grads);
    Ok(LossOutput { loss: loss / n as f64, grads, ..Default::default() })
}
