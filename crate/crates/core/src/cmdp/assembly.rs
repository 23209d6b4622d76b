//! Assembly-line inspection environment.
//!
//! A level is an ordered list of parts. Each step the agent accepts (0) or
//! rejects (1) the part under inspection. Correct decisions earn `r_plus`,
//! mistakes `r_minus`; accepting a defective part ends the episode.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::seed::Rng;

pub const ACCEPT: usize = 0;
pub const REJECT: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssemblyConfig {
    pub min_parts: usize,
    pub max_parts: usize,
    pub spec_dim: usize,
    pub defect_prob: f64,
    pub r_plus: f64,
    pub r_minus: f64,
    /// Spec coordinates that decide defectiveness are kept at least this far
    /// from the decision boundary.
    pub margin: f64,
}

impl Default for AssemblyConfig {
    fn default() -> Self {
        Self { min_parts: 2, max_parts: 8, spec_dim: 4, defect_prob: 0.3, r_plus: 1.0, r_minus: -1.0, margin: 0.1 }
    }
}

impl AssemblyConfig {
    pub fn obs_dim(&self) -> usize {
        self.max_parts * (2 + self.spec_dim) + self.spec_dim
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.min_parts < 1 || self.min_parts > self.max_parts {
            return Err(format!("part range [{}, {}] is empty", self.min_parts, self.max_parts));
        }
        if self.spec_dim < 2 {
            return Err("spec_dim must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.defect_prob) {
            return Err("defect_prob must lie in [0, 1]".into());
        }
        if self.r_plus <= self.r_minus {
            return Err("r_plus must exceed r_minus".into());
        }
        if !(0.0..1.0).contains(&self.margin) {
            return Err("margin must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Defect rule shared by every level: a part is defective iff its first spec
/// coordinate is positive.
pub fn spec_is_defective(spec: &[f64]) -> bool {
    spec[0] > 0.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Part {
    pub spec: Vec<f64>,
    pub defective: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyLevel {
    pub parts: Vec<Part>,
}

impl AssemblyLevel {
    pub fn generate(cfg: &AssemblyConfig, rng: &mut Rng) -> Self {
        let n = rng.random_range(cfg.min_parts..=cfg.max_parts);
        let flags: Vec<bool> = (0..n).map(|_| rng.random_bool(cfg.defect_prob)).collect();
        Self::from_flags(cfg, &flags, rng)
    }

    /// Level with the given defect pattern; specs are drawn to match it.
    pub fn from_flags(cfg: &AssemblyConfig, flags: &[bool], rng: &mut Rng) -> Self {
        assert!(!flags.is_empty() && flags.len() <= cfg.max_parts, "part count out of range");
        let parts = flags.iter().map(|&d| Part { spec: draw_spec(cfg, d, rng), defective: d }).collect();
        Self { parts }
    }

    pub fn n_parts(&self) -> usize {
        self.parts.len()
    }

    /// Realised defect rate of this level.
    pub fn defect_rate(&self) -> f64 {
        self.parts.iter().filter(|p| p.defective).count() as f64 / self.parts.len() as f64
    }

    pub fn payload_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.parts.len() as u64).to_le_bytes());
        for p in &self.parts {
            out.push(p.defective as u8);
            for v in &p.spec {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

fn draw_spec(cfg: &AssemblyConfig, defective: bool, rng: &mut Rng) -> Vec<f64> {
    let mut spec: Vec<f64> = (0..cfg.spec_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    // The rule coordinate has magnitude in [margin, 1) and the sign of the flag.
    spec[0] = rng.random_range(cfg.margin..1.0) * if defective { 1.0 } else { -1.0 };
    debug_assert_eq!(spec_is_defective(&spec), defective);
    spec
}

/// Position within an assembly episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AssemblyPos {
    /// Part `i` is up for inspection.
    Inspect(usize),
    /// Episode over; parts `next..` are still on the line.
    Done { next: usize },
}

impl AssemblyPos {
    pub fn is_terminal(self) -> bool {
        matches!(self, AssemblyPos::Done { .. })
    }
}

pub fn observe(cfg: &AssemblyConfig, level: &AssemblyLevel, pos: AssemblyPos) -> Vec<f64> {
    let m = cfg.max_parts;
    let d = cfg.spec_dim;
    let mut f = vec![0.0; cfg.obs_dim()];
    let (current, first_on_line) = match pos {
        AssemblyPos::Inspect(i) => (Some(i), i),
        AssemblyPos::Done { next } => (None, next),
    };
    let specs = m;
    let mask = m + m * d;
    let cur = mask + m;
    if let Some(i) = current {
        f[i] = 1.0;
        f[cur..cur + d].copy_from_slice(&level.parts[i].spec);
    }
    for j in first_on_line..level.n_parts() {
        f[specs + j * d..specs + (j + 1) * d].copy_from_slice(&level.parts[j].spec);
        f[mask + j] = 1.0;
    }
    f
}

/// One transition from a non-terminal position: `(next, reward, done)`.
pub fn transition(cfg: &AssemblyConfig, level: &AssemblyLevel, i: usize, action: usize) -> (AssemblyPos, f64, bool) {
    let part = &level.parts[i];
    let correct = (action == REJECT) == part.defective;
    let reward = if correct { cfg.r_plus } else { cfg.r_minus };
    if part.defective && action == ACCEPT {
        return (AssemblyPos::Done { next: i + 1 }, reward, true);
    }
    if i + 1 == level.n_parts() {
        (AssemblyPos::Done { next: i + 1 }, reward, true)
    } else {
        (AssemblyPos::Inspect(i + 1), reward, false)
    }
}

pub fn optimal_action(level: &AssemblyLevel, i: usize) -> usize {
    if level.parts[i].defective {
        REJECT
    } else {
        ACCEPT
    }
}

/// V*(Inspect(i)) by backward induction over both actions.
pub fn optimal_value(cfg: &AssemblyConfig, level: &AssemblyLevel, i: usize, gamma: f64) -> f64 {
    let n = level.n_parts();
    let mut v_next = 0.0;
    let mut v = 0.0;
    for j in (i..n).rev() {
        let best = [ACCEPT, REJECT]
            .iter()
            .map(|&a| {
                let (next, r, done) = transition(cfg, level, j, a);
                debug_assert!(done || next == AssemblyPos::Inspect(j + 1));
                r + if done { 0.0 } else { gamma * v_next }
            })
            .fold(f64::NEG_INFINITY, f64::max);
        v = best;
        v_next = best;
    }
    v
}

/// Exact value of a stochastic policy from `Inspect(i)`; `pi(j)` gives the
/// action probabilities at part `j`.
pub fn policy_value(
    cfg: &AssemblyConfig,
    level: &AssemblyLevel,
    i: usize,
    gamma: f64,
    pi: impl Fn(usize) -> [f64; 2],
) -> f64 {
    let mut v_next = 0.0;
    let mut v = 0.0;
    for j in (i..level.n_parts()).rev() {
        let p = pi(j);
        v = [ACCEPT, REJECT]
            .iter()
            .map(|&a| {
                let (_, r, done) = transition(cfg, level, j, a);
                p[a] * (r + if done { 0.0 } else { gamma * v_next })
            })
            .sum();
        v_next = v;
    }
    v
}

/// All positions of a level: inspection states, the normal end, and one
/// early-stop terminal per defective part.
pub fn enumerate_positions(level: &AssemblyLevel) -> Vec<AssemblyPos> {
    let n = level.n_parts();
    let mut out: Vec<AssemblyPos> = (0..n).map(AssemblyPos::Inspect).collect();
    for (i, p) in level.parts.iter().enumerate() {
        if p.defective && i + 1 < n {
            out.push(AssemblyPos::Done { next: i + 1 });
        }
    }
    out.push(AssemblyPos::Done { next: n });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    fn level(flags: &[bool]) -> AssemblyLevel {
        AssemblyLevel::from_flags(&AssemblyConfig::default(), flags, &mut rng_from(0))
    }

    #[test]
    fn specs_respect_flags_and_margin() {
        let cfg = AssemblyConfig::default();
        let mut rng = rng_from(4);
        for _ in 0..200 {
            let l = AssemblyLevel::generate(&cfg, &mut rng);
            assert!((2..=8).contains(&l.n_parts()));
            for p in &l.parts {
                assert_eq!(spec_is_defective(&p.spec), p.defective);
                assert!(p.spec[0].abs() >= cfg.margin);
            }
        }
    }

    #[test]
    fn defect_frequency_matches_probability() {
        let cfg = AssemblyConfig::default();
        let mut rng = rng_from(9);
        let (mut bad, mut total) = (0usize, 0usize);
        for _ in 0..4000 {
            let l = AssemblyLevel::generate(&cfg, &mut rng);
            bad += l.parts.iter().filter(|p| p.defective).count();
            total += l.n_parts();
        }
        let rate = bad as f64 / total as f64;
        // ~20k Bernoulli(0.3) draws: 4 standard errors ≈ 0.013.
        assert!((rate - 0.3).abs() < 0.013, "{rate}");
    }

    #[test]
    fn rejecting_all_good_parts_is_penalised_each_step() {
        let cfg = AssemblyConfig::default();
        let l = level(&[false, false, false]);
        let mut pos = AssemblyPos::Inspect(0);
        let mut rewards = vec![];
        while let AssemblyPos::Inspect(i) = pos {
            let (next, r, done) = transition(&cfg, &l, i, REJECT);
            rewards.push(r);
            pos = next;
            assert_eq!(done, pos.is_terminal());
        }
        assert_eq!(rewards, vec![-1.0, -1.0, -1.0]);
        assert_eq!(pos, AssemblyPos::Done { next: 3 });
    }

    #[test]
    fn accepting_defective_part_ends_episode() {
        let cfg = AssemblyConfig::default();
        let l = level(&[true, false]);
        assert_eq!(transition(&cfg, &l, 0, ACCEPT), (AssemblyPos::Done { next: 1 }, -1.0, true));
        assert_eq!(transition(&cfg, &l, 0, REJECT), (AssemblyPos::Inspect(1), 1.0, false));
    }

    #[test]
    fn optimal_values_follow_the_recursion() {
        let cfg = AssemblyConfig::default();
        let l = level(&[false, false, false]);
        assert_eq!(optimal_value(&cfg, &l, 0, 1.0), 3.0);
        let l2 = level(&[false, true]);
        assert!((optimal_value(&cfg, &l2, 0, 0.5) - 1.5).abs() < 1e-15);
        assert_eq!(optimal_action(&l2, 1), REJECT);
    }

    #[test]
    fn optimal_policy_value_equals_optimal_value() {
        let cfg = AssemblyConfig::default();
        let l = level(&[false, true, true, false, true]);
        let v = policy_value(&cfg, &l, 0, 0.9, |j| if l.parts[j].defective { [0.0, 1.0] } else { [1.0, 0.0] });
        assert!((v - optimal_value(&cfg, &l, 0, 0.9)).abs() < 1e-12);
    }

    #[test]
    fn observation_layout() {
        let cfg = AssemblyConfig::default();
        let l = level(&[false, true]);
        let o = observe(&cfg, &l, AssemblyPos::Inspect(1));
        assert_eq!(o.len(), 52);
        assert_eq!(&o[0..8], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // part 0 already inspected: spec slot and mask cleared
        assert!(o[8..12].iter().all(|v| *v == 0.0));
        assert_eq!(&o[12..16], l.parts[1].spec.as_slice());
        assert_eq!(&o[40..48], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(&o[48..52], l.parts[1].spec.as_slice());
    }

    #[test]
    fn enumeration_counts() {
        let l = level(&[false, true]);
        // two inspection states, normal end (early stop after the last part coincides with it)
        assert_eq!(enumerate_positions(&l).len(), 3);
        let l = level(&[true, false, true]);
        assert_eq!(enumerate_positions(&l).len(), 3 + 1 + 1);
    }
}
