//! Summary statistics over seeds.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

/// z-value of a two-sided 95% normal interval.
pub const Z_95: f64 = 1.96;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance (n − 1 denominator).
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Standard error of the mean; `None` below two samples.
pub fn stderr(xs: &[f64]) -> Option<f64> {
    (xs.len() >= 2).then(|| (variance(xs) / xs.len() as f64).sqrt())
}

/// Half-width of the normal-approximation 95% interval.
pub fn ci95(xs: &[f64]) -> Option<f64> {
    stderr(xs).map(|s| Z_95 * s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub dof: f64,
    pub significant: bool,
}

/// Two-sided Welch t-test at level 0.05. Two constant samples give t = 0
/// when their means agree and an infinite t (significant) otherwise.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Option<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return None;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (variance(a) / na, variance(b) / nb);
    let diff = mean(a) - mean(b);
    if sa + sb == 0.0 {
        let t = if diff == 0.0 { 0.0 } else { diff.signum() * f64::INFINITY };
        return Some(WelchResult { t, dof: na + nb - 2.0, significant: diff != 0.0 });
    }
    let t = diff / (sa + sb).sqrt();
    let dof = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let crit = StudentsT::new(0.0, 1.0, dof).expect("positive dof").inverse_cdf(0.975);
    Some(WelchResult { t, dof, significant: t.abs() > crit })
}
