//! Exact-enumeration checks on the assembly line: Markov certification of
//! representations, the optimal actor and critic codes, the level-information
//! lemmas, and the train/test gap bound.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cmdp::{CmdpError, Environment, LevelContext, LevelSplit};

pub mod checks;
pub mod exact;

pub use checks::{
    bernoulli_family, best_measurable_policy, flags_level, generalisation_bound, generalisation_bound_check, lemma_checks, markov_check,
    optimality_conservation_gap, BoundReport, FamilyPoint, LemmaReport, MarkovReport, MeasurableSearch, ESTIMATOR_SLACK,
};
pub use exact::{ExactChain, ExactState, ExactTransition, ProbePolicy, ReducedMdp, Representation};

#[derive(Debug, thiserror::Error)]
pub enum TheoryError {
    #[error(transparent)]
    Cmdp(#[from] CmdpError),
    #[error(transparent)]
    Agent(#[from] crate::agents::AgentError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult { name: name.to_string(), passed, detail });
    }

    pub fn all_passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(0);
        let mut out = String::new();
        for c in &self.checks {
            let _ = writeln!(out, "{} {:width$}  {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(out, "{passed}/{} checks passed", self.checks.len());
        out
    }
}

/// Run every exact check on `levels` sampled assembly levels (γ = 1, so
/// optimal values count remaining parts).
pub fn verify_assembly(env: &Environment, levels: usize, seed: u64) -> Result<VerificationReport, TheoryError> {
    let cfg = *env.assembly_config().ok_or(CmdpError::UnsupportedEnvironment(env.kind()))?;
    let gamma = 1.0;
    let sampled: Vec<LevelContext> = env.sample_level_set(levels, seed, LevelSplit::Train)?;
    let weighted: Vec<(LevelContext, f64)> = sampled.iter().cloned().map(|l| (l, 1.0)).collect();
    let mut report = VerificationReport::default();

    // Markov certification across probe policies and representations.
    let reprs = [
        Representation::injective(),
        Representation::constant(),
        Representation::optimal_actor(),
        Representation::optimal_critic(),
        Representation::level_id(),
    ];
    let mut dpi_worst = f64::INFINITY;
    let mut injective_ok = true;
    for p in ProbePolicy::DEFAULT_SET {
        let chain = ExactChain::build(env, &weighted, gamma, |s| p.probs(s))?;
        for r in &reprs {
            let m = markov_check(&chain, r, &p.name());
            dpi_worst = dpi_worst.min(m.delta_inverse).min(m.delta_density);
            if r.name == "injective" {
                injective_ok &= m.certified();
            }
        }
    }
    report.push("data_processing", dpi_worst >= -checks::DPI_TOL, format!("smallest gap {dpi_worst:.3e}"));
    report.push("markov_injective", injective_ok, format!("certified under {} probe policies", ProbePolicy::DEFAULT_SET.len()));

    let optimal = ExactChain::build(env, &weighted, gamma, |s| ProbePolicy::Optimal.probs(s))?;
    let c = markov_check(&optimal, &Representation::constant(), "optimal");
    report.push(
        "markov_constant_rejected",
        !c.certified() && c.mi_inverse_x > checks::EXACT_TOL && (c.delta_inverse - c.mi_inverse_x).abs() <= checks::EXACT_TOL,
        format!("dI_inverse {:.4} of I((X,X');A) {:.4}", c.delta_inverse, c.mi_inverse_x),
    );
    let a = markov_check(&optimal, &Representation::optimal_actor(), "optimal");
    report.push(
        "markov_optimal_actor",
        a.delta_inverse.abs() <= checks::EXACT_TOL && a.delta_density > checks::EXACT_TOL,
        format!("dI_inverse {:.2e}, dI_density {:.4}", a.delta_inverse, a.delta_density),
    );

    // Optimal actor code.
    let p_f = cfg.defect_prob;
    let fam = bernoulli_family(&cfg, 6.min(cfg.max_parts), p_f);
    let fc = ExactChain::build(env, &fam, gamma, |s| ProbePolicy::Optimal.probs(s))?;
    let actor = Representation::optimal_actor();
    let mu = fc.latent_distribution(&actor);
    let mu1 = mu.get(&1).copied().unwrap_or(0.0);
    let i_zz = fc.transition_joint(&actor).mi(&[exact::T_Z], &[exact::T_ZN]);
    report.push("actor_stationary", (mu1 - p_f).abs() < 1e-12, format!("mu(z1) {mu1:.12} vs defect rate {p_f}"));
    report.push("actor_successor_independent", i_zz.abs() < 1e-12, format!("I(Z;Z') {i_zz:.3e}"));
    let all_good = ExactChain::build(env, &[(flags_level(&cfg, 0, &vec![false; cfg.max_parts], 0), 1.0)], gamma, |s| ProbePolicy::Uniform.probs(s))?;
    let codes: Vec<u64> = all_good.latent_distribution(&actor).into_keys().collect();
    report.push("actor_all_good", codes == [0], format!("codes {codes:?}"));
    let gap = optimality_conservation_gap(env, &sampled, gamma)?;
    report.push("actor_optimality_conservation", gap < 1e-12, format!("largest return deficit {gap:.3e}"));

    // Optimal critic code.
    let critic = Representation::optimal_critic();
    let max_n = sampled.iter().filter_map(|l| l.assembly()).map(|l| l.n_parts()).max().unwrap_or(0);
    let n_codes = optimal.latent_distribution(&critic).len();
    let sj = optimal.state_joint(&critic);
    let (i_zv, h_v) = (sj.mi(&[exact::S_Z], &[exact::S_V]), sj.entropy(&[exact::S_V]));
    report.push("critic_value_index", n_codes == max_n, format!("{n_codes} codes, longest level {max_n}"));
    report.push("critic_determines_value", (i_zv - h_v).abs() < 1e-12, format!("I(Z;V) {i_zv:.6} H(V) {h_v:.6}"));
    let i_cl = sj.mi(&[exact::S_Z], &[exact::S_L]);
    let i_al = optimal.state_joint(&actor).mi(&[exact::S_Z], &[exact::S_L]);
    report.push("critic_level_information", i_cl > i_al + checks::EXACT_TOL, format!("I(Z*_C;L) {i_cl:.4} > I(Z*_A;L) {i_al:.4}"));
    let search = best_measurable_policy(env, &weighted, &critic, gamma)?;
    report.push(
        "critic_incompatible",
        search.best_return < search.optimal_return - checks::EXACT_TOL,
        format!("best over {} policies {:.4} < optimal {:.4}", search.policies_searched, search.best_return, search.optimal_return),
    );

    // Lemmas.
    let lemmas = lemma_checks(&cfg, gamma)?;
    report.push("lemma1_heterogeneous", lemmas.heterogeneous_mi > checks::EXACT_TOL, format!("I(Z*_A;L) {:.4}", lemmas.heterogeneous_mi));
    report.push("lemma1_homogeneous", lemmas.homogeneous_mi.abs() <= checks::DPI_TOL, format!("I(Z*_A;L) {:.3e}", lemmas.homogeneous_mi));
    report.push("lemma1_identical", lemmas.identical_mi.abs() <= checks::DPI_TOL, format!("I(Z*_A;L) {:.3e}", lemmas.identical_mi));
    report.push(
        "lemma1_level_id",
        (lemmas.level_id_mi - lemmas.level_entropy).abs() <= checks::EXACT_TOL && (lemmas.level_entropy - lemmas.ln_levels).abs() <= checks::EXACT_TOL,
        format!("I(Z;L) {:.6} H(L) {:.6} ln|L| {:.6}", lemmas.level_id_mi, lemmas.level_entropy, lemmas.ln_levels),
    );
    let fam_text: Vec<String> = lemmas.family.iter().map(|p| format!("({:.3},{:.3})", p.level_specific, p.mi_level)).collect();
    report.push("lemma2_monotone", lemmas.monotone(), fam_text.join(" "));
    report.push("chain_rule", lemmas.chain_rule_error <= checks::EXACT_TOL, format!("largest error {:.3e}", lemmas.chain_rule_error));

    // Bound formula.
    let b = generalisation_bound(0.5, 2.0, 200);
    report.push("bound_formula", (b - 0.02f64.sqrt()).abs() < 1e-12 && generalisation_bound(0.0, 2.0, 200) == 0.0, format!("bound(I=0.5, D=2, |L|=200) {b:.6}"));
    Ok(report)
}
