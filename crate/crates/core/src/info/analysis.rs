//! Analysis-batch construction for MI estimation.

use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::suite::{AnalysisSample, Latents};
use super::InfoError;
use crate::agents::model::{ActorCritic, Group};
use crate::agents::rollout::VecEnv;
use crate::agents::AgentError;
use crate::cmdp::{Environment, LevelContext};
use crate::seed::{rng_from, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Total environment steps collected before filtering.
    pub collection_steps: usize,
    /// Records kept after filtering.
    pub n: usize,
    pub k: usize,
    pub num_envs: usize,
    /// Discount of the return-to-go V.
    pub gamma: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { collection_steps: 1 << 16, n: 4096, k: 3, num_envs: 16, gamma: 0.999 }
    }
}

struct StepRecord {
    obs: Vec<f64>,
    action: usize,
    reward: f64,
    next_obs: Vec<f64>,
    done: bool,
    global: usize,
}

struct Usable {
    obs: Vec<f64>,
    action: usize,
    next_obs: Vec<f64>,
    value: f64,
    context: u64,
    global: usize,
}

/// Roll out the stochastic policy and keep records that satisfy all three
/// exclusion rules: even episode step, not an episode-ending step, and the
/// episode terminated within the collection window. `n` records are then
/// drawn uniformly without replacement.
pub fn collect_analysis_batch(
    model: &ActorCritic,
    env: &Environment,
    levels: &[LevelContext],
    cfg: &AnalysisConfig,
    rng: &mut Rng,
) -> Result<AnalysisSample, InfoError> {
    if cfg.num_envs == 0 || cfg.n <= cfg.k {
        return Err(InfoError::TooFewSamples { n: cfg.n, k: cfg.k });
    }
    let mut envs = VecEnv::new(env, levels, cfg.num_envs, rng_from(rng.random()))?;
    let mut episodes: Vec<Vec<StepRecord>> = (0..cfg.num_envs).map(|_| Vec::new()).collect();
    let mut contexts = envs.contexts();
    let mut usable: Vec<Usable> = Vec::new();
    let rounds = cfg.collection_steps / cfg.num_envs;
    for round in 0..rounds {
        let obs = envs.observations();
        let (actions, _, _) = model.act(&obs, rng)?;
        let step = envs.step(&actions)?;
        for e in 0..cfg.num_envs {
            episodes[e].push(StepRecord {
                obs: obs.row(e).to_vec(),
                action: actions[e],
                reward: step.rewards[e],
                next_obs: step.next_obs[e].clone(),
                done: step.dones[e],
                global: round * cfg.num_envs + e,
            });
            if step.dones[e] {
                let ep = std::mem::take(&mut episodes[e]);
                let mut ret = 0.0;
                let mut values = vec![0.0; ep.len()];
                for t in (0..ep.len()).rev() {
                    ret = ep[t].reward + cfg.gamma * ret;
                    values[t] = ret;
                }
                for (t, (rec, v)) in ep.into_iter().zip(values).enumerate() {
                    if t % 2 == 0 && !rec.done {
                        usable.push(Usable {
                            obs: rec.obs,
                            action: rec.action,
                            next_obs: rec.next_obs,
                            value: v,
                            context: contexts[e],
                            global: rec.global,
                        });
                    }
                }
            }
        }
        contexts = envs.contexts();
    }
    if usable.len() < cfg.n {
        return Err(InfoError::InsufficientSamples { needed: cfg.n, available: usable.len() });
    }
    let mut picked = sample(rng, usable.len(), cfg.n).into_vec();
    picked.sort_unstable();
    let d = model.obs_dim;
    let pick = |f: &dyn Fn(&Usable) -> &Vec<f64>| Array2::from_shape_fn((cfg.n, d), |(i, j)| f(&usable[picked[i]])[j]);
    Ok(AnalysisSample {
        obs: pick(&|u| &u.obs),
        next_obs: pick(&|u| &u.next_obs),
        actions: picked.iter().map(|&i| usable[i].action).collect(),
        values: picked.iter().map(|&i| usable[i].value).collect(),
        contexts: picked.iter().map(|&i| usable[i].context).collect(),
        steps: picked.iter().map(|&i| usable[i].global).collect(),
        collection_steps: rounds * cfg.num_envs,
    })
}

/// Actor and critic latents of a model on a sample. Coupled models yield the
/// same array under both names.
pub fn representation_latents(model: &ActorCritic, sample: &AnalysisSample) -> Result<Vec<Latents>, AgentError> {
    [("actor", Group::Actor), ("critic", Group::Critic)]
        .into_iter()
        .map(|(name, g)| {
            Ok(Latents { name: name.to_string(), z: model.latents(g, &sample.obs)?, z_next: model.latents(g, &sample.next_obs)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ArchConfig, Coupling};
    use crate::cmdp::{EnvKind, LevelSplit};

    fn setup() -> (Environment, Vec<LevelContext>, ActorCritic) {
        let env = Environment::default_for(EnvKind::Assembly);
        let levels = env.sample_level_set(10, 3, LevelSplit::Train).unwrap();
        let spec = env.spec();
        let model = ActorCritic::new(Coupling::Decoupled, spec.obs_dim, spec.n_actions, ArchConfig::default(), false, &mut rng_from(1), &mut rng_from(2));
        (env, levels, model)
    }

    #[test]
    fn records_follow_the_exclusion_rules() {
        let (env, levels, model) = setup();
        let cfg = AnalysisConfig { collection_steps: 2048, n: 200, num_envs: 8, ..Default::default() };
        let s = collect_analysis_batch(&model, &env, &levels, &cfg, &mut rng_from(5)).unwrap();
        s.check().unwrap();
        assert_eq!(s.len(), 200);
        // Assembly observations carry the part index one-hot in the first 8 slots.
        for i in 0..s.len() {
            let t = (0..8).find(|&j| s.obs[[i, j]] == 1.0).unwrap();
            assert_eq!(t % 2, 0, "o must come from an even step");
            // o' is non-terminal, so it shows the next inspection.
            assert_eq!(s.next_obs[[i, t + 1]], 1.0);
            // Same level: identical spec slots for parts still on the line.
            let lvl = levels.iter().find(|l| l.context_id == s.contexts[i]).unwrap();
            let n = lvl.assembly().unwrap().n_parts();
            assert!(t + 1 < n);
            assert_eq!(s.obs.row(i).slice(ndarray::s![8 + (t + 1) * 4..8 + n * 4]), s.next_obs.row(i).slice(ndarray::s![8 + (t + 1) * 4..8 + n * 4]));
        }
        let mut steps = s.steps.clone();
        steps.dedup();
        assert_eq!(steps.len(), s.len());
    }

    #[test]
    fn deficit_is_reported() {
        let (env, levels, model) = setup();
        let cfg = AnalysisConfig { collection_steps: 64, n: 4096, num_envs: 8, ..Default::default() };
        match collect_analysis_batch(&model, &env, &levels, &cfg, &mut rng_from(5)) {
            Err(InfoError::InsufficientSamples { needed, available }) => assert!(needed == 4096 && available < 64),
            other => panic!("expected a deficit, got {other:?}"),
        }
    }

    #[test]
    fn latents_per_representation() {
        let (env, levels, model) = setup();
        let cfg = AnalysisConfig { collection_steps: 1024, n: 64, num_envs: 8, ..Default::default() };
        let s = collect_analysis_batch(&model, &env, &levels, &cfg, &mut rng_from(6)).unwrap();
        let l = representation_latents(&model, &s).unwrap();
        assert_eq!(l.len(), 2);
        assert_eq!(l[0].z.dim(), (64, 32));
        assert_ne!(l[0].z, l[1].z);
    }
}
