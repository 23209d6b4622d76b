//! Vectorised environments, rollout buffers, GAE and return normalisation.

use ndarray::{Array2, Axis};
use rand::Rng as _;

use super::model::ActorCritic;
use super::AgentError;
use crate::cmdp::{EnvState, Environment, LevelContext};
use crate::seed::Rng;

#[derive(Clone, Debug)]
struct Slot {
    level: usize,
    state: EnvState,
    obs: Vec<f64>,
    episode_return: f64,
}

/// `num_envs` independent copies of one environment over a level set.
/// Finished episodes restart on a level drawn uniformly from the set.
#[derive(Clone, Debug)]
pub struct VecEnv<'a> {
    pub env: &'a Environment,
    pub levels: &'a [LevelContext],
    slots: Vec<Slot>,
    rng: Rng,
}

pub struct VecStep {
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Observation after the action, before any automatic reset.
    pub next_obs: Vec<Vec<f64>>,
    pub finished_returns: Vec<f64>,
}

impl<'a> VecEnv<'a> {
    pub fn new(env: &'a Environment, levels: &'a [LevelContext], num_envs: usize, mut rng: Rng) -> Result<Self, AgentError> {
        if levels.is_empty() {
            return Err(AgentError::Config("empty level set".into()));
        }
        let mut slots = Vec::with_capacity(num_envs);
        for _ in 0..num_envs {
            let level = rng.random_range(0..levels.len());
            let (state, obs) = env.reset(&levels[level])?;
            slots.push(Slot { level, state, obs: obs.features, episode_return: 0.0 });
        }
        Ok(Self { env, levels, slots, rng })
    }

    pub fn num_envs(&self) -> usize {
        self.slots.len()
    }

    pub fn observations(&self) -> Array2<f64> {
        let d = self.env.spec().obs_dim;
        let mut m = Array2::zeros((self.slots.len(), d));
        for (mut row, s) in m.rows_mut().into_iter().zip(&self.slots) {
            row.assign(&ndarray::ArrayView1::from(&s.obs));
        }
        m
    }

    pub fn contexts(&self) -> Vec<u64> {
        self.slots.iter().map(|s| self.levels[s.level].context_id).collect()
    }

    pub fn episode_steps(&self) -> Vec<usize> {
        self.slots.iter().map(|s| s.state.step_index).collect()
    }

    pub fn step(&mut self, actions: &[usize]) -> Result<VecStep, AgentError> {
        let n = self.slots.len();
        let mut out = VecStep {
            rewards: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            next_obs: Vec::with_capacity(n),
            finished_returns: Vec::new(),
        };
        for (slot, &a) in self.slots.iter_mut().zip(actions) {
            let level = &self.levels[slot.level];
            let st = self.env.step(level, &slot.state, a)?;
            slot.episode_return += st.reward;
            out.rewards.push(st.reward);
            out.dones.push(st.done);
            out.next_obs.push(st.obs.features.clone());
            if st.done {
                out.finished_returns.push(slot.episode_return);
                slot.level = self.rng.random_range(0..self.levels.len());
                let (state, obs) = self.env.reset(&self.levels[slot.level])?;
                slot.state = state;
                slot.obs = obs.features;
                slot.episode_return = 0.0;
            } else {
                slot.state = st.state;
                slot.obs = st.obs.features;
            }
        }
        Ok(out)
    }
}

/// Running mean and variance (parallel-update form).
#[derive(Clone, Debug, PartialEq)]
pub struct RunningMeanStd {
    pub mean: f64,
    pub var: f64,
    pub count: f64,
}

impl Default for RunningMeanStd {
    fn default() -> Self {
        Self { mean: 0.0, var: 1.0, count: 1e-4 }
    }
}

impl RunningMeanStd {
    pub fn update(&mut self, xs: &[f64]) {
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let delta = mean - self.mean;
        let total = self.count + n;
        let m2 = self.var * self.count + var * n + delta * delta * self.count * n / total;
        self.mean += delta * n / total;
        self.var = m2 / total;
        self.count = total;
    }

    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// Divides rewards by the running std of the discounted return.
#[derive(Clone, Debug, PartialEq)]
pub struct RewardNormaliser {
    pub enabled: bool,
    pub gamma: f64,
    returns: Vec<f64>,
    pub stats: RunningMeanStd,
}

pub const SCALE_FLOOR: f64 = 1e-8;

impl RewardNormaliser {
    pub fn new(num_envs: usize, gamma: f64, enabled: bool) -> Self {
        Self { enabled, gamma, returns: vec![0.0; num_envs], stats: RunningMeanStd::default() }
    }

    /// Normalise one vectorised step of rewards.
    pub fn normalise(&mut self, rewards: &[f64], dones: &[bool]) -> Vec<f64> {
        if !self.enabled {
            return rewards.to_vec();
        }
        for (ret, r) in self.returns.iter_mut().zip(rewards) {
            *ret = *ret * self.gamma + r;
        }
        self.stats.update(&self.returns);
        let scale = self.stats.std().max(SCALE_FLOOR);
        for (ret, &d) in self.returns.iter_mut().zip(dones) {
            if d {
                *ret = 0.0;
            }
        }
        rewards.iter().map(|r| r / scale).collect()
    }
}

/// One rollout, time-major: index `t * num_envs + e`.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub len: usize,
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub raw_rewards: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub logits: Array2<f64>,
    pub contexts: Vec<u64>,
    pub episode_steps: Vec<usize>,
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    pub finished_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn size(&self) -> usize {
        self.num_envs * self.len
    }

    pub fn has_targets(&self) -> bool {
        self.advantages.len() == self.size()
    }

    pub fn finalise(&mut self, gamma: f64, lambda: f64) {
        let (adv, targets) = compute_gae(&self.rewards, &self.values, &self.dones, &self.bootstrap, self.num_envs, gamma, lambda);
        self.advantages = adv;
        self.targets = targets;
    }

    pub fn minibatch(&self, idx: &[usize]) -> Batch {
        assert!(self.has_targets(), "GAE has not been computed");
        Batch {
            obs: self.obs.select(Axis(0), idx),
            next_obs: self.next_obs.select(Axis(0), idx),
            actions: idx.iter().map(|&i| self.actions[i]).collect(),
            rewards: idx.iter().map(|&i| self.rewards[i]).collect(),
            dones: idx.iter().map(|&i| self.dones[i]).collect(),
            old_log_probs: idx.iter().map(|&i| self.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| self.advantages[i]).collect(),
            targets: idx.iter().map(|&i| self.targets[i]).collect(),
            old_logits: None,
        }
    }
}

/// Collect `len` vectorised steps with the current policy.
pub fn collect_rollout(
    model: &ActorCritic,
    envs: &mut VecEnv<'_>,
    normaliser: &mut RewardNormaliser,
    rng: &mut Rng,
    len: usize,
) -> Result<RolloutBuffer, AgentError> {
    let e = envs.num_envs();
    let d = model.obs_dim;
    let n = e * len;
    let mut buf = RolloutBuffer {
        num_envs: e,
        len,
        obs: Array2::zeros((n, d)),
        next_obs: Array2::zeros((n, d)),
        actions: Vec::with_capacity(n),
        raw_rewards: Vec::with_capacity(n),
        rewards: Vec::with_capacity(n),
        dones: Vec::with_capacity(n),
        log_probs: Vec::with_capacity(n),
        values: Vec::with_capacity(n),
        logits: Array2::zeros((n, model.n_actions)),
        contexts: Vec::with_capacity(n),
        episode_steps: Vec::with_capacity(n),
        bootstrap: Vec::new(),
        advantages: Vec::new(),
        targets: Vec::new(),
        finished_returns: Vec::new(),
    };
    for t in 0..len {
        let obs = envs.observations();
        let (actions, logp, logits) = model.act(&obs, rng)?;
        let values = model.values(&obs)?;
        buf.contexts.extend(envs.contexts());
        buf.episode_steps.extend(envs.episode_steps());
        let step = envs.step(&actions)?;
        let rows = t * e..(t + 1) * e;
        buf.obs.slice_mut(ndarray::s![rows.clone(), ..]).assign(&obs);
        buf.logits.slice_mut(ndarray::s![rows.clone(), ..]).assign(&logits);
        for (k, o) in step.next_obs.iter().enumerate() {
            buf.next_obs.row_mut(t * e + k).assign(&ndarray::ArrayView1::from(o));
        }
        buf.rewards.extend(normaliser.normalise(&step.rewards, &step.dones));
        buf.raw_rewards.extend(step.rewards);
        buf.dones.extend(step.dones);
        buf.actions.extend(actions);
        buf.log_probs.extend(logp);
        buf.values.extend(values);
        buf.finished_returns.extend(step.finished_returns);
    }
    buf.bootstrap = model.values(&envs.observations())?;
    Ok(buf)
}

/// GAE over a time-major `(len × num_envs)` layout.
///
/// δ_t = r_t + γ(1−d_t)V_{t+1} − V_t, Â_t = δ_t + γλ(1−d_t)Â_{t+1}, V̂_t = Â_t + V_t,
/// with `bootstrap` supplying V after the final step.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: &[f64],
    num_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert_eq!(n % num_envs, 0);
    assert_eq!(bootstrap.len(), num_envs);
    let len = n / num_envs;
    let mut adv = vec![0.0; n];
    for e in 0..num_envs {
        let mut next_adv = 0.0;
        let mut next_value = bootstrap[e];
        for t in (0..len).rev() {
            let i = t * num_envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * live * next_value - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, targets)
}

/// Training minibatch.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub obs: Array2<f64>,
    pub next_obs: Array2<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub targets: Vec<f64>,
    /// Behaviour logits, required by the auxiliary phase.
    pub old_logits: Option<Array2<f64>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Zero-mean, unit-variance advantages (a single value maps to 0).
pub fn normalise_advantages(adv: &mut [f64]) {
    let n = adv.len() as f64;
    if adv.is_empty() {
        return;
    }
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    for a in adv.iter_mut() {
        *a = (*a - mean) / std;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_single_terminal_step() {
        let (a, v) = compute_gae(&[1.0], &[0.0], &[true], &[123.0], 1, 0.99, 0.95);
        assert_eq!((a[0], v[0]), (1.0, 1.0));
    }

    #[test]
    fn gae_lambda_zero_is_td_error() {
        let r = [0.5, -1.0, 2.0];
        let v = [0.1, 0.4, -0.3];
        let (a, _) = compute_gae(&r, &v, &[false, false, false], &[0.7], 1, 0.9, 0.0);
        let expected = [0.5 + 0.9 * 0.4 - 0.1, -1.0 + 0.9 * -0.3 - 0.4, 2.0 + 0.9 * 0.7 + 0.3];
        for (x, y) in a.iter().zip(expected) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gae_hand_unrolled_example() {
        // δ = [1 + .99·.5 − .5, .99·.5 − .5, 1 − .5]; Â_t = δ_t + .99·.95·Â_{t+1}
        let (a, v) = compute_gae(&[1.0, 0.0, 1.0], &[0.5; 3], &[false, false, true], &[0.0], 1, 0.99, 0.95);
        let d = [0.995, -0.005, 0.5];
        let c = 0.99 * 0.95;
        let a2 = d[2];
        let a1 = d[1] + c * a2;
        let a0 = d[0] + c * a1;
        for (x, y) in a.iter().zip([a0, a1, a2]) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a[0] - 1.43257).abs() < 5e-6 && (a[1] - 0.46525).abs() < 5e-6 && (a[2] - 0.5).abs() < 1e-12);
        assert!((v[0] - (a0 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gae_keeps_envs_separate() {
        // Two envs interleaved; env 1 terminates at t = 0.
        let (a, _) = compute_gae(&[1.0, 2.0, 0.0, 0.0], &[0.0; 4], &[false, true, false, false], &[0.0, 5.0], 2, 1.0, 1.0);
        assert_eq!(a, vec![1.0, 2.0, 0.0, 5.0]);
    }

    #[test]
    fn disabled_normaliser_is_identity() {
        let mut n = RewardNormaliser::new(2, 0.99, false);
        assert_eq!(n.normalise(&[3.0, -1.0], &[false, true]), vec![3.0, -1.0]);
    }

    #[test]
    fn zero_rewards_stay_finite() {
        let mut n = RewardNormaliser::new(2, 0.99, true);
        for _ in 0..1000 {
            let r = n.normalise(&[0.0, 0.0], &[false, false]);
            assert!(r.iter().all(|x| x.is_finite() && *x == 0.0));
        }
    }

    #[test]
    fn scaled_reward_streams_normalise_alike() {
        let mut a = RewardNormaliser::new(1, 0.99, true);
        let mut b = RewardNormaliser::new(1, 0.99, true);
        let mut last = (0.0, 0.0);
        for t in 0..20_000 {
            let r = ((t * 7919) % 13) as f64 / 13.0 - 0.3;
            let d = t % 50 == 49;
            last = (a.normalise(&[r], &[d])[0], b.normalise(&[10.0 * r], &[d])[0]);
        }
        assert!((last.0 - last.1).abs() < 1e-6 * last.0.abs().max(1e-3), "{last:?}");
    }

    #[test]
    fn running_stats_match_batch_moments() {
        let mut s = RunningMeanStd { mean: 0.0, var: 0.0, count: 0.0 };
        let xs: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        for c in xs.chunks(7) {
            s.update(c);
        }
        let m = xs.iter().sum::<f64>() / 100.0;
        let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 100.0;
        assert!((s.mean - m).abs() < 1e-12 && (s.var - v).abs() < 1e-12);
    }

    #[test]
    fn advantage_normalisation() {
        let mut a = vec![1.0, 2.0, 3.0, 6.0];
        normalise_advantages(&mut a);
        let m: f64 = a.iter().sum::<f64>() / 4.0;
        let v: f64 = a.iter().map(|x| x * x).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-6);
    }
}
