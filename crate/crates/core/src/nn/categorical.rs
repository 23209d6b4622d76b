//! Categorical action distribution parameterised by logits.

use rand::Rng as _;

use crate::seed::Rng;

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Categorical {
    log_probs: Vec<f64>,
}

impl Categorical {
    pub fn from_logits(logits: &[f64]) -> Self {
        let lse = logsumexp(logits);
        Self { log_probs: logits.iter().map(|l| l - lse).collect() }
    }

    pub fn n(&self) -> usize {
        self.log_probs.len()
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn log_prob(&self, action: usize) -> f64 {
        self.log_probs[action]
    }

    pub fn entropy(&self) -> f64 {
        -self
            .log_probs
            .iter()
            .map(|&l| {
                let p = l.exp();
                if p > 0.0 {
                    p * l
                } else {
                    0.0
                }
            })
            .sum::<f64>()
    }

    /// Inverse-CDF sampling from one uniform draw.
    pub fn sample(&self, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, l) in self.log_probs.iter().enumerate() {
            acc += l.exp();
            if u < acc {
                return i;
            }
        }
        // Rounding left `acc` slightly below 1: return the last action with mass.
        self.log_probs.iter().rposition(|l| l.exp() > 0.0).unwrap_or(self.n() - 1)
    }

    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.log_probs.iter().enumerate() {
            if *l > self.log_probs[best] {
                best = i;
            }
        }
        best
    }

    /// KL(self ‖ other).
    pub fn kl(&self, other: &Categorical) -> f64 {
        self.log_probs
            .iter()
            .zip(&other.log_probs)
            .map(|(&lp, &lq)| {
                let p = lp.exp();
                if p > 0.0 {
                    p * (lp - lq)
                } else {
                    0.0
                }
            })
            .sum()
    }

    /// ∂H/∂logits_j = −p_j (ln p_j + H).
    pub fn entropy_grad(&self) -> Vec<f64> {
        let h = self.entropy();
        self.log_probs
            .iter()
            .map(|&l| {
                let p = l.exp();
                if p > 0.0 {
                    -p * (l + h)
                } else {
                    0.0
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_maximise_entropy() {
        let d = Categorical::from_logits(&[0.3; 15]);
        assert!((d.entropy() - 15f64.ln()).abs() < 1e-12);
        assert!((d.entropy() - 2.708).abs() < 1e-3);
    }

    #[test]
    fn dominant_logit_is_deterministic() {
        let d = Categorical::from_logits(&[0.0, 1e6, 0.0]);
        assert!(d.entropy().abs() < 1e-12);
        let mut rng = rng_from(1);
        for _ in 0..100 {
            assert_eq!(d.sample(&mut rng), 1);
        }
        assert!(d.log_prob(0).is_finite());
    }

    #[test]
    fn empirical_frequencies_match_probabilities() {
        let d = Categorical::from_logits(&[0.2, -1.0, 1.3, 0.0]);
        let p = d.probs();
        let mut counts = [0usize; 4];
        let mut rng = rng_from(42);
        let n = 1_000_000;
        for _ in 0..n {
            counts[d.sample(&mut rng)] += 1;
        }
        let l1: f64 = counts.iter().zip(&p).map(|(c, q)| (*c as f64 / n as f64 - q).abs()).sum();
        assert!(l1 < 5e-3, "L1 = {l1}");
    }

    #[test]
    fn kl_matches_direct_summation() {
        let p = Categorical::from_logits(&[0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()]);
        let q = Categorical::from_logits(&[0.4f64.ln(), 0.4f64.ln(), 0.2f64.ln()]);
        let direct = 0.5 * (0.5f64 / 0.4).ln() + 0.3 * (0.3f64 / 0.4).ln() + 0.2 * (0.2f64 / 0.2).ln();
        assert!((p.kl(&q) - direct).abs() < 1e-12);
        assert!((direct - 0.02527).abs() < 5e-6);
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let logits = [0.4, -0.3, 1.2, 0.0, -2.0];
        let g = Categorical::from_logits(&logits).entropy_grad();
        let h = 1e-6;
        for j in 0..logits.len() {
            let mut p = logits;
            p[j] += h;
            let mut m = logits;
            m[j] -= h;
            let fd = (Categorical::from_logits(&p).entropy() - Categorical::from_logits(&m).entropy()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn probabilities_normalise_and_entropy_is_bounded(
            logits in proptest::collection::vec(-50.0f64..50.0, 2..12)
        ) {
            let d = Categorical::from_logits(&logits);
            let s: f64 = d.probs().iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let h = d.entropy();
            prop_assert!(h >= -1e-12 && h <= (logits.len() as f64).ln() + 1e-12);
            prop_assert!(d.log_probs().iter().all(|l| l.is_finite()));
        }
    }
}
