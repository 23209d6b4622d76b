//! Exact plug-in information quantities over finite joint distributions.

use std::collections::HashMap;

use ndarray::Array2;

use super::InfoError;

/// Plug-in I(X;Y) for a joint probability table (rows X, columns Y).
pub fn exact_mi_discrete(table: &Array2<f64>) -> Result<f64, InfoError> {
    if table.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(InfoError::InvalidTable("entries must be finite and non-negative".into()));
    }
    let total: f64 = table.sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(InfoError::InvalidTable(format!("entries sum to {total}, not 1")));
    }
    let px = table.sum_axis(ndarray::Axis(1));
    let py = table.sum_axis(ndarray::Axis(0));
    let mut mi = 0.0;
    for ((i, j), &p) in table.indexed_iter() {
        if p > 0.0 {
            mi += p * (p / (px[i] * py[j])).ln();
        }
    }
    Ok(mi)
}

/// Weighted joint distribution over tuples of discrete variables.
///
/// Each outcome is a vector of `u64` codes, one per variable. Weights need
/// not be normalised.
#[derive(Clone, Debug, Default)]
pub struct DiscreteJoint {
    n_vars: usize,
    mass: HashMap<Vec<u64>, f64>,
    total: f64,
}

impl DiscreteJoint {
    pub fn new(n_vars: usize) -> Self {
        Self { n_vars, mass: HashMap::new(), total: 0.0 }
    }

    pub fn add(&mut self, outcome: Vec<u64>, weight: f64) {
        assert_eq!(outcome.len(), self.n_vars, "outcome arity");
        assert!(weight >= 0.0 && weight.is_finite(), "weights must be finite and non-negative");
        if weight == 0.0 {
            return;
        }
        *self.mass.entry(outcome).or_insert(0.0) += weight;
        self.total += weight;
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn support_size(&self) -> usize {
        self.mass.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.total
    }

    /// Normalised marginal over `vars`.
    pub fn marginal(&self, vars: &[usize]) -> HashMap<Vec<u64>, f64> {
        let mut m: HashMap<Vec<u64>, f64> = HashMap::new();
        for (o, w) in &self.mass {
            let key: Vec<u64> = vars.iter().map(|&v| o[v]).collect();
            *m.entry(key).or_insert(0.0) += w / self.total;
        }
        m
    }

    /// Shannon entropy (nats) of the marginal over `vars`.
    pub fn entropy(&self, vars: &[usize]) -> f64 {
        let mut keys: Vec<(Vec<u64>, f64)> = self.marginal(vars).into_iter().collect();
        // Fixed summation order keeps results reproducible across runs.
        keys.sort_by(|a, b| a.0.cmp(&b.0));
        -keys.iter().filter(|(_, p)| *p > 0.0).map(|(_, p)| p * p.ln()).sum::<f64>()
    }

    /// I(A;B) = H(A) + H(B) − H(A,B).
    pub fn mi(&self, a: &[usize], b: &[usize]) -> f64 {
        let ab: Vec<usize> = a.iter().chain(b).copied().collect();
        self.entropy(a) + self.entropy(b) - self.entropy(&ab)
    }

    /// I(A;B|C) = H(A,C) + H(B,C) − H(A,B,C) − H(C).
    pub fn cmi(&self, a: &[usize], b: &[usize], c: &[usize]) -> f64 {
        let ac: Vec<usize> = a.iter().chain(c).copied().collect();
        let bc: Vec<usize> = b.iter().chain(c).copied().collect();
        let abc: Vec<usize> = a.iter().chain(b).chain(c).copied().collect();
        self.entropy(&ac) + self.entropy(&bc) - self.entropy(&abc) - self.entropy(c)
    }

    /// Outcomes with normalised probabilities, sorted by outcome.
    pub fn outcomes(&self) -> Vec<(Vec<u64>, f64)> {
        let mut v: Vec<(Vec<u64>, f64)> = self.mass.iter().map(|(o, w)| (o.clone(), w / self.total)).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn table_examples() {
        assert!(exact_mi_discrete(&array![[0.25, 0.25], [0.25, 0.25]]).unwrap().abs() < 1e-15);
        assert!((exact_mi_discrete(&array![[0.5, 0.0], [0.0, 0.5]]).unwrap() - 2f64.ln()).abs() < 1e-15);
        let v = exact_mi_discrete(&array![[0.4, 0.1], [0.1, 0.4]]).unwrap();
        let direct = 2.0 * 0.4 * 1.6f64.ln() + 2.0 * 0.1 * 0.4f64.ln();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.19274).abs() < 5e-6);
    }

    #[test]
    fn invalid_tables_are_rejected() {
        assert!(exact_mi_discrete(&array![[0.5, 0.6], [0.0, -0.1]]).is_err());
        assert!(exact_mi_discrete(&array![[0.5, 0.6], [0.0, 0.1]]).is_err());
    }

    #[test]
    fn joint_agrees_with_table() {
        let t = array![[0.4, 0.1], [0.1, 0.4]];
        let mut j = DiscreteJoint::new(2);
        for ((a, b), &p) in t.indexed_iter() {
            j.add(vec![a as u64, b as u64], p * 10.0);
        }
        assert!((j.mi(&[0], &[1]) - exact_mi_discrete(&t).unwrap()).abs() < 1e-14);
    }

    fn random_joint(weights: &[f64]) -> DiscreteJoint {
        // Three variables with 3 × 2 × 2 outcomes.
        let mut j = DiscreteJoint::new(3);
        for (idx, w) in weights.iter().enumerate() {
            j.add(vec![(idx % 3) as u64, ((idx / 3) % 2) as u64, (idx / 6) as u64], *w);
        }
        j
    }

    proptest! {
        #[test]
        fn chain_rule_decomposition(weights in proptest::collection::vec(0.01f64..1.0, 12)) {
            // I(Z;Y) = I(Z;Y|L) + I(Z;L) − I(Z;L|Y), variables (Z, Y, L) = (0, 1, 2)
            let j = random_joint(&weights);
            let lhs = j.mi(&[0], &[1]);
            let rhs = j.cmi(&[0], &[1], &[2]) + j.mi(&[0], &[2]) - j.cmi(&[0], &[2], &[1]);
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn mi_is_non_negative_and_bounded(weights in proptest::collection::vec(0.0f64..1.0, 12)) {
            prop_assume!(weights.iter().sum::<f64>() > 1e-6);
            let j = random_joint(&weights);
            let mi = j.mi(&[0], &[1, 2]);
            prop_assert!(mi >= -1e-12);
            prop_assert!(mi <= j.entropy(&[0]) + 1e-12);
        }
    }
}
