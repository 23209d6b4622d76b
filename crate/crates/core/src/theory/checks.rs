//! Checks built on exact enumeration: Markov certification, level
//! information of optimal representations, and the generalisation bound.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::exact::*;
use super::TheoryError;
use crate::agents::{evaluate, ActorCritic};
use crate::cmdp::assembly::{self, AssemblyConfig, AssemblyLevel, AssemblyPos};
use crate::cmdp::{Environment, LevelContext};
use crate::seed::rng_from;

/// Tolerance for "equal" in exact comparisons.
pub const EXACT_TOL: f64 = 1e-9;
/// Tolerance for the data-processing direction.
pub const DPI_TOL: f64 = 1e-10;
/// Estimator slack (nats) added to the MI before the square root.
pub const ESTIMATOR_SLACK: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub representation: String,
    pub policy: String,
    /// I((X,X');A) − I((Z,Z');A).
    pub delta_inverse: f64,
    /// I(X;X') − I(Z;Z').
    pub delta_density: f64,
    /// max |P(a|z,z') − P(a|x,x')| over the support.
    pub inverse_residual: f64,
    /// max |P(x,x')/(P(x)P(x')) − P(z,z')/(P(z)P(z'))| over the support.
    pub density_residual: f64,
    pub mi_inverse_x: f64,
    pub mi_density_x: f64,
}

impl MarkovReport {
    pub fn certified(&self) -> bool {
        self.delta_inverse <= EXACT_TOL && self.delta_density <= EXACT_TOL
    }

    pub fn data_processing_holds(&self) -> bool {
        self.delta_inverse >= -DPI_TOL && self.delta_density >= -DPI_TOL
    }
}

fn lookup(m: &HashMap<Vec<u64>, f64>, k: &[u64]) -> f64 {
    m.get(k).copied().unwrap_or(0.0)
}

/// Compare a representation with the raw state on the transition joint of `chain`.
pub fn markov_check(chain: &ExactChain, repr: &Representation, policy: &str) -> MarkovReport {
    let j = chain.transition_joint(repr);
    let mi_inverse_x = j.mi(&[T_X, T_XN], &[T_A]);
    let mi_density_x = j.mi(&[T_X], &[T_XN]);
    let delta_inverse = mi_inverse_x - j.mi(&[T_Z, T_ZN], &[T_A]);
    let delta_density = mi_density_x - j.mi(&[T_Z], &[T_ZN]);

    let p_xx = j.marginal(&[T_X, T_XN]);
    let p_xax = j.marginal(&[T_X, T_A, T_XN]);
    let p_zz = j.marginal(&[T_Z, T_ZN]);
    let p_zaz = j.marginal(&[T_Z, T_A, T_ZN]);
    let (p_x, p_xn) = (j.marginal(&[T_X]), j.marginal(&[T_XN]));
    let (p_z, p_zn) = (j.marginal(&[T_Z]), j.marginal(&[T_ZN]));
    // Each (x, x') pair maps to exactly one (z, z').
    let mut pairs: BTreeMap<(u64, u64), (u64, u64)> = BTreeMap::new();
    for (o, _) in j.outcomes() {
        pairs.insert((o[T_X], o[T_XN]), (o[T_Z], o[T_ZN]));
    }
    let mut inverse_residual: f64 = 0.0;
    let mut density_residual: f64 = 0.0;
    for (&(x, xn), &(z, zn)) in &pairs {
        let pxx = lookup(&p_xx, &[x, xn]);
        let pzz = lookup(&p_zz, &[z, zn]);
        for a in 0..2u64 {
            let d = lookup(&p_xax, &[x, a, xn]) / pxx - lookup(&p_zaz, &[z, a, zn]) / pzz;
            inverse_residual = inverse_residual.max(d.abs());
        }
        let rx = pxx / (lookup(&p_x, &[x]) * lookup(&p_xn, &[xn]));
        let rz = pzz / (lookup(&p_z, &[z]) * lookup(&p_zn, &[zn]));
        density_residual = density_residual.max((rx - rz).abs());
    }
    MarkovReport {
        representation: repr.name.clone(),
        policy: policy.to_string(),
        delta_inverse,
        delta_density,
        inverse_residual,
        density_residual,
        mi_inverse_x,
        mi_density_x,
    }
}

/// A level with an explicit defect pattern; specs come from `spec_seed`.
pub fn flags_level(cfg: &AssemblyConfig, context_id: u64, flags: &[bool], spec_seed: u64) -> LevelContext {
    assembly_context(context_id, AssemblyLevel::from_flags(cfg, flags, &mut rng_from(spec_seed)))
}

/// Every defect pattern of length `n`, weighted by its probability under
/// independent defects with rate `p`.
pub fn bernoulli_family(cfg: &AssemblyConfig, n: usize, p: f64) -> Vec<(LevelContext, f64)> {
    (0..1u64 << n)
        .map(|mask| {
            let flags: Vec<bool> = (0..n).map(|i| mask >> i & 1 == 1).collect();
            let k = flags.iter().filter(|&&f| f).count() as i32;
            let w = p.powi(k) * (1.0 - p).powi(n as i32 - k);
            (flags_level(cfg, mask, &flags, mask), w)
        })
        .collect()
}

fn uniform(levels: Vec<LevelContext>) -> Vec<(LevelContext, f64)> {
    levels.into_iter().map(|l| (l, 1.0)).collect()
}

/// Largest deviation of the z*-greedy policy's return from V* over all levels.
pub fn optimality_conservation_gap(env: &Environment, levels: &[LevelContext], gamma: f64) -> Result<f64, TheoryError> {
    let chain = ExactChain::build(env, &uniform(levels.to_vec()), gamma, |s| ProbePolicy::Uniform.probs(s))?;
    let repr = Representation::optimal_actor();
    let mut worst: f64 = 0.0;
    for (li, ctx) in levels.iter().enumerate() {
        let lvl = ctx.assembly().expect("built above");
        let codes: Vec<u64> = (0..lvl.n_parts())
            .map(|i| repr.latent(chain.states.iter().find(|s| s.level == li && s.pos == AssemblyPos::Inspect(i)).expect("enumerated")))
            .collect();
        // z*_0 → accept, z*_1 → reject
        let v = assembly::policy_value(&chain.cfg, lvl, 0, gamma, |j| if codes[j] == 0 { [1.0, 0.0] } else { [0.0, 1.0] });
        worst = worst.max((v - assembly::optimal_value(&chain.cfg, lvl, 0, gamma)).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurableSearch {
    pub representation: String,
    pub n_latents: usize,
    pub policies_searched: usize,
    pub best_return: f64,
    pub optimal_return: f64,
}

/// Exhaustive search over deterministic policies that depend on the state
/// only through `repr`, scored by the exact weighted return. When no latent
/// repeats within an episode the return is multilinear in the per-latent
/// action probabilities, so deterministic policies cover the stochastic ones.
pub fn best_measurable_policy(
    env: &Environment,
    levels: &[(LevelContext, f64)],
    repr: &Representation,
    gamma: f64,
) -> Result<MeasurableSearch, TheoryError> {
    let chain = ExactChain::build(env, levels, gamma, |s| ProbePolicy::Uniform.probs(s))?;
    let reduced = ReducedMdp::from_chain(&chain, repr, "uniform");
    let nz = reduced.latents.len();
    if nz > 16 {
        return Err(TheoryError::Invalid(format!("{nz} latents is too many for exhaustive search")));
    }
    let slot: HashMap<u64, usize> = reduced.latents.iter().enumerate().map(|(i, &z)| (z, i)).collect();
    let per_level: Vec<Vec<usize>> = levels
        .iter()
        .enumerate()
        .map(|(li, (ctx, _))| {
            let n = ctx.assembly().expect("built above").n_parts();
            (0..n)
                .map(|i| slot[&repr.latent(chain.states.iter().find(|s| s.level == li && s.pos == AssemblyPos::Inspect(i)).expect("enumerated"))])
                .collect()
        })
        .collect();
    let mut best = f64::NEG_INFINITY;
    for mask in 0..1usize << nz {
        let mut ret = 0.0;
        for (li, (ctx, _)) in levels.iter().enumerate() {
            let lvl = ctx.assembly().expect("built above");
            let slots = &per_level[li];
            let v = assembly::policy_value(&chain.cfg, lvl, 0, gamma, |j| if mask >> slots[j] & 1 == 1 { [0.0, 1.0] } else { [1.0, 0.0] });
            ret += chain.level_weights[li] * v;
        }
        best = best.max(ret);
    }
    let optimal_return = levels
        .iter()
        .enumerate()
        .map(|(li, (ctx, _))| chain.level_weights[li] * assembly::optimal_value(&chain.cfg, ctx.assembly().expect("built above"), 0, gamma))
        .sum();
    Ok(MeasurableSearch { representation: repr.name.clone(), n_latents: nz, policies_searched: 1 << nz, best_return: best, optimal_return })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyPoint {
    pub representation: String,
    /// I(Z;V) − I(Z;V|L).
    pub level_specific: f64,
    pub mi_level: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    /// I(Z*_A;L) on levels with defect rates 0.1 and 0.9.
    pub heterogeneous_mi: f64,
    /// I(Z*_A;L) on reorderings of one defect pattern.
    pub homogeneous_mi: f64,
    /// I(Z*_A;L) on copies of one level.
    pub identical_mi: f64,
    /// I(Z;L) when z is the context id, against H(L) and ln|L|.
    pub level_id_mi: f64,
    pub level_entropy: f64,
    pub ln_levels: f64,
    pub family: Vec<FamilyPoint>,
    /// Largest |[I(Z;L) − I(Z;L|V)] − [I(Z;V) − I(Z;V|L)]| along the family.
    pub chain_rule_error: f64,
}

impl LemmaReport {
    /// Lemma 2 pointwise: a larger level-specific component never comes with
    /// a smaller I(Z;L).
    pub fn monotone(&self) -> bool {
        self.family.iter().all(|a| {
            self.family.iter().all(|b| a.level_specific > b.level_specific + EXACT_TOL || a.mi_level <= b.mi_level + EXACT_TOL)
        })
    }

    pub fn passes(&self) -> bool {
        self.heterogeneous_mi > EXACT_TOL
            && self.homogeneous_mi.abs() <= DPI_TOL
            && self.identical_mi.abs() <= DPI_TOL
            && (self.level_id_mi - self.level_entropy).abs() <= EXACT_TOL
            && (self.level_entropy - self.ln_levels).abs() <= EXACT_TOL
            && self.chain_rule_error <= EXACT_TOL
            && self.monotone()
    }
}

/// Ten-part assembly config used by the lemma level sets.
fn lemma_config(base: &AssemblyConfig) -> AssemblyConfig {
    AssemblyConfig { max_parts: base.max_parts.max(10), ..*base }
}

fn pattern(n: usize, defective: &[usize]) -> Vec<bool> {
    (0..n).map(|i| defective.contains(&i)).collect()
}

/// Level sets of both lemmas, all enumerated under π*.
pub fn lemma_checks(base: &AssemblyConfig, gamma: f64) -> Result<LemmaReport, TheoryError> {
    let cfg = lemma_config(base);
    let env = Environment::Assembly(cfg);
    let optimal = |s: &ExactState| ProbePolicy::Optimal.probs(s);
    let actor = Representation::optimal_actor();
    let mi_level = |levels: Vec<LevelContext>, repr: &Representation| -> Result<f64, TheoryError> {
        let c = ExactChain::build(&env, &uniform(levels), gamma, optimal)?;
        Ok(c.state_joint(repr).mi(&[S_Z], &[S_L]))
    };

    let heterogeneous = vec![flags_level(&cfg, 0, &pattern(10, &[4]), 0), flags_level(&cfg, 1, &pattern(10, &[0, 1, 2, 3, 5, 6, 7, 8, 9]), 1)];
    let homogeneous: Vec<LevelContext> =
        [[0, 1, 2], [7, 8, 9], [1, 4, 8], [2, 5, 9]].iter().enumerate().map(|(i, d)| flags_level(&cfg, i as u64, &pattern(10, d), i as u64)).collect();
    let identical: Vec<LevelContext> = (0..3).map(|i| flags_level(&cfg, i, &pattern(10, &[2, 3, 7]), 42)).collect();

    let c = ExactChain::build(&env, &uniform(homogeneous.clone()), gamma, optimal)?;
    let sj = c.state_joint(&Representation::level_id());
    let level_id_mi = sj.mi(&[S_Z], &[S_L]);
    let level_entropy = sj.entropy(&[S_L]);

    // Varying lengths and defect rates, so value and level interact.
    let mixed: Vec<LevelContext> = [&[1, 3][..], &[0][..], &[][..], &[0, 1, 2, 3, 4, 5][..], &[2, 6][..], &[1, 2, 3][..]]
        .iter()
        .zip([4usize, 6, 3, 8, 10, 5])
        .enumerate()
        .map(|(i, (d, n))| flags_level(&cfg, i as u64, &pattern(n, d), 100 + i as u64))
        .collect();
    let mc = ExactChain::build(&env, &uniform(mixed), gamma, optimal)?;
    let mut family = Vec::new();
    let mut chain_rule_error: f64 = 0.0;
    for m in 0..=cfg.max_parts {
        let repr = Representation::actor_with_value(m);
        let j = mc.state_joint(&repr);
        let lhs = j.mi(&[S_Z], &[S_L]) - j.cmi(&[S_Z], &[S_L], &[S_V]);
        let level_specific = j.mi(&[S_Z], &[S_V]) - j.cmi(&[S_Z], &[S_V], &[S_L]);
        chain_rule_error = chain_rule_error.max((lhs - level_specific).abs());
        family.push(FamilyPoint { representation: repr.name.clone(), level_specific, mi_level: j.mi(&[S_Z], &[S_L]) });
    }

    Ok(LemmaReport {
        heterogeneous_mi: mi_level(heterogeneous, &actor)?,
        homogeneous_mi: mi_level(homogeneous.clone(), &actor)?,
        identical_mi: mi_level(identical, &actor)?,
        level_id_mi,
        level_entropy,
        ln_levels: (homogeneous.len() as f64).ln(),
        family,
        chain_rule_error,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub train_return: f64,
    pub test_return: f64,
    /// train − test.
    pub gap: f64,
    /// I(Z_A;L) estimate in nats.
    pub mi: f64,
    pub d: f64,
    pub n_levels: usize,
    /// √(2D²/|L| · I).
    pub bound: f64,
    /// The bound with [`ESTIMATOR_SLACK`] added to I.
    pub slack_bound: f64,
    pub holds: bool,
}

/// √(2D²/|L| · I), with negative estimates treated as zero.
pub fn generalisation_bound(mi: f64, d: f64, n_levels: usize) -> f64 {
    (2.0 * d * d / n_levels as f64 * mi.max(0.0)).sqrt()
}

impl BoundReport {
    pub fn new(train_return: f64, test_return: f64, mi: f64, d: f64, n_levels: usize) -> Self {
        let gap = train_return - test_return;
        let bound = generalisation_bound(mi, d, n_levels);
        let slack_bound = generalisation_bound(mi.max(0.0) + ESTIMATOR_SLACK, d, n_levels);
        Self { train_return, test_return, gap, mi, d, n_levels, bound, slack_bound, holds: gap <= slack_bound }
    }
}

/// Evaluate a trained model on both level sets and compare the gap with the bound.
pub fn generalisation_bound_check(
    env: &Environment,
    model: &ActorCritic,
    train_levels: &[LevelContext],
    test_levels: &[LevelContext],
    mi_level: f64,
    eval_episodes: usize,
    seed: u64,
) -> Result<BoundReport, TheoryError> {
    let mut rng = rng_from(seed);
    let train = evaluate(env, model, train_levels, eval_episodes, &mut rng)?;
    let test = evaluate(env, model, test_levels, eval_episodes, &mut rng)?;
    Ok(BoundReport::new(train, test, mi_level, env.reward_bound(), train_levels.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmdp::{EnvKind, LevelSplit};
    use proptest::prelude::*;

    fn env() -> Environment {
        Environment::default_for(EnvKind::Assembly)
    }

    fn sampled(n: usize, seed: u64) -> Vec<(LevelContext, f64)> {
        uniform(env().sample_level_set(n, seed, LevelSplit::Train).unwrap())
    }

    #[test]
    fn injective_is_certified_under_every_probe() {
        let levels = sampled(12, 1);
        for p in ProbePolicy::DEFAULT_SET {
            let c = ExactChain::build(&env(), &levels, 1.0, |s| p.probs(s)).unwrap();
            let r = markov_check(&c, &Representation::injective(), &p.name());
            assert!(r.certified(), "{r:?}");
            assert!(r.inverse_residual < 1e-12 && r.density_residual < 1e-9, "{r:?}");
        }
    }

    #[test]
    fn constant_loses_the_whole_inverse_term() {
        let c = ExactChain::build(&env(), &sampled(12, 2), 1.0, |s| ProbePolicy::Optimal.probs(s)).unwrap();
        let r = markov_check(&c, &Representation::constant(), "optimal");
        assert!(!r.certified());
        assert!(r.mi_inverse_x > 0.1);
        assert!((r.delta_inverse - r.mi_inverse_x).abs() < 1e-12);
        assert!(r.inverse_residual > 0.1);
    }

    #[test]
    fn optimal_actor_keeps_actions_but_not_dynamics() {
        let c = ExactChain::build(&env(), &sampled(12, 3), 1.0, |s| ProbePolicy::Optimal.probs(s)).unwrap();
        let r = markov_check(&c, &Representation::optimal_actor(), "optimal");
        assert!(r.delta_inverse.abs() <= EXACT_TOL, "{r:?}");
        assert!(r.delta_density > 1e-3, "{r:?}");
        assert!(!r.certified());
    }

    #[test]
    fn stationary_law_of_the_actor_code() {
        let p = 0.3;
        let fam = bernoulli_family(&AssemblyConfig::default(), 5, p);
        let c = ExactChain::build(&env(), &fam, 1.0, |s| ProbePolicy::Optimal.probs(s)).unwrap();
        let mu = c.latent_distribution(&Representation::optimal_actor());
        assert!((mu[&1] - p).abs() < 1e-12 && (mu[&0] - (1.0 - p)).abs() < 1e-12, "{mu:?}");
        let j = c.transition_joint(&Representation::optimal_actor());
        assert!(j.mi(&[T_Z], &[T_ZN]).abs() < 1e-12);
    }

    #[test]
    fn all_good_level_maps_to_one_code() {
        let cfg = AssemblyConfig::default();
        let c = ExactChain::build(&env(), &[(flags_level(&cfg, 0, &[false; 6], 0), 1.0)], 1.0, |s| ProbePolicy::Uniform.probs(s)).unwrap();
        let mu = c.latent_distribution(&Representation::optimal_actor());
        assert_eq!(mu.keys().copied().collect::<Vec<_>>(), vec![0]);
    }

    #[test]
    fn greedy_actor_policy_is_optimal() {
        let levels = env().sample_level_set(30, 4, LevelSplit::Train).unwrap();
        assert!(optimality_conservation_gap(&env(), &levels, 1.0).unwrap() < 1e-12);
        assert!(optimality_conservation_gap(&env(), &levels, 0.9).unwrap() < 1e-12);
    }

    #[test]
    fn critic_code_indexes_remaining_parts() {
        let levels = sampled(20, 5);
        let max_n = levels.iter().map(|(l, _)| l.assembly().unwrap().n_parts()).max().unwrap();
        let c = ExactChain::build(&env(), &levels, 1.0, |s| ProbePolicy::Optimal.probs(s)).unwrap();
        let critic = Representation::optimal_critic();
        for s in c.states.iter().filter(|s| !s.is_terminal()) {
            assert_eq!(critic.latent(s), value_key(s.remaining as f64));
        }
        assert_eq!(c.latent_distribution(&critic).len(), max_n);
        let j = c.state_joint(&critic);
        assert!((j.mi(&[S_Z], &[S_V]) - j.entropy(&[S_V])).abs() < 1e-12);
    }

    #[test]
    fn critic_code_carries_more_level_information() {
        let cfg = lemma_config(&AssemblyConfig::default());
        let e = Environment::Assembly(cfg);
        let levels = uniform(vec![
            flags_level(&cfg, 0, &pattern(3, &[1]), 0),
            flags_level(&cfg, 1, &pattern(7, &[0, 1, 2, 3, 5]), 1),
            flags_level(&cfg, 2, &pattern(10, &[9]), 2),
        ]);
        let c = ExactChain::build(&e, &levels, 1.0, |s| ProbePolicy::Optimal.probs(s)).unwrap();
        let ic = c.state_joint(&Representation::optimal_critic()).mi(&[S_Z], &[S_L]);
        let ia = c.state_joint(&Representation::optimal_actor()).mi(&[S_Z], &[S_L]);
        assert!(ic > ia + 1e-3, "critic {ic} actor {ia}");
    }

    #[test]
    fn critic_code_cannot_act_optimally() {
        let s = best_measurable_policy(&env(), &sampled(20, 6), &Representation::optimal_critic(), 1.0).unwrap();
        assert!(s.best_return < s.optimal_return - 1e-6, "{s:?}");
        // The actor code loses nothing.
        let a = best_measurable_policy(&env(), &sampled(20, 6), &Representation::optimal_actor(), 1.0).unwrap();
        assert!((a.best_return - a.optimal_return).abs() < 1e-12);
    }

    #[test]
    fn measurable_search_matches_brute_force_on_one_level() {
        // Two good parts and one bad: with the constant code the best choice
        // is "accept everything" (1 + 1 − 1 = 1, ending at the bad part).
        let cfg = AssemblyConfig::default();
        let lv = [(flags_level(&cfg, 0, &[false, false, true], 0), 1.0)];
        let s = best_measurable_policy(&env(), &lv, &Representation::constant(), 1.0).unwrap();
        assert_eq!(s.policies_searched, 2);
        assert!((s.best_return - 1.0).abs() < 1e-12);
        assert_eq!(s.optimal_return, 3.0);
    }

    #[test]
    fn lemmas_hold() {
        let r = lemma_checks(&AssemblyConfig::default(), 1.0).unwrap();
        assert!(r.passes(), "{r:#?}");
        let first = &r.family[0];
        let last = r.family.last().unwrap();
        assert!(last.mi_level > first.mi_level + 1e-3, "{r:#?}");
        assert!((r.ln_levels - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bound_by_hand() {
        assert!((generalisation_bound(0.5, 2.0, 200) - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(generalisation_bound(0.0, 2.0, 200), 0.0);
        let r = BoundReport::new(1.0, 1.0, 0.0, 2.0, 200);
        assert!(r.holds && r.bound == 0.0);
        assert!((r.slack_bound - (2.0 * 4.0 / 200.0 * 0.05f64).sqrt()).abs() < 1e-15);
        assert!(!BoundReport::new(3.0, 1.0, 0.0, 2.0, 200).holds);
    }

    proptest! {
        #[test]
        fn bound_is_monotone(i in 0.0f64..5.0, di in 0.0f64..1.0, n in 1usize..1000, dn in 1usize..1000, d in 0.1f64..50.0) {
            prop_assert!(generalisation_bound(i + di, d, n) >= generalisation_bound(i, d, n));
            prop_assert!(generalisation_bound(i, d, n + dn) <= generalisation_bound(i, d, n));
        }

        #[test]
        fn data_processing_on_random_codes(seed in 0u64..1000, buckets in 1u64..6, alpha in 0.0f64..1.0) {
            let levels = sampled(4, seed);
            let c = ExactChain::build(&env(), &levels, 1.0, |s| ProbePolicy::Mixture(alpha).probs(s)).unwrap();
            let h = move |s: &ExactState| crate::seed::mix64(seed ^ ((s.level as u64) << 16) ^ s.pos_key()) % buckets;
            let r = markov_check(&c, &Representation::new("hashed", h), "mixture");
            prop_assert!(r.data_processing_holds(), "{:?}", r);
        }
    }
}
