//! k-NN mutual-information estimators.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::knn::{count_within_brute, kth_distance_brute, KdTree, PointSet};
use super::InfoError;
use crate::seed::{mix64, rng_from};

/// Use the KD-tree when the joint dimension is at most this.
const KD_TREE_MAX_DIM: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Auto,
    Brute,
    KdTree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorOptions {
    pub k: usize,
    /// Relative magnitude of the tie-breaking jitter.
    pub jitter: f64,
    pub seed: u64,
    pub standardise: bool,
    pub backend: Backend,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self { k: 3, jitter: 1e-10, seed: 0, standardise: true, backend: Backend::Auto }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Raw estimate in nats; may be slightly negative.
    pub value: f64,
    pub k: usize,
    pub n: usize,
    pub warnings: Vec<String>,
}

impl MiEstimate {
    pub fn clamped(&self) -> f64 {
        self.value.max(0.0)
    }
}

/// ψ(m) for m = 0..=max (index 0 unused, set to NaN).
pub fn digamma_table(max: usize) -> Vec<f64> {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    let mut t = vec![f64::NAN; max + 1];
    if max >= 1 {
        t[1] = -EULER_GAMMA;
    }
    for m in 2..=max {
        t[m] = t[m - 1] + 1.0 / (m - 1) as f64;
    }
    t
}

fn content_hash(x: &Array2<f64>) -> u64 {
    let mut h = mix64(x.nrows() as u64 ^ ((x.ncols() as u64) << 32));
    for v in x.iter() {
        h = mix64(h ^ v.to_bits());
    }
    h
}

/// Standardise (optionally) and jitter each column; returns row-major data.
/// The jitter stream depends only on `seed` and the content of `x`, so the
/// same input always receives the same perturbation.
pub fn prepare(x: &Array2<f64>, opts: &EstimatorOptions) -> Result<Vec<f64>, InfoError> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(InfoError::NonFinite);
    }
    let (n, d) = x.dim();
    let mut out = x.as_standard_layout().into_owned();
    let mut scales = vec![1.0; d];
    for c in 0..d {
        let col = out.column(c);
        let mean = col.sum() / n as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        let std = if std > 0.0 { std } else { 1.0 };
        if opts.standardise {
            out.column_mut(c).mapv_inplace(|v| (v - mean) / std);
        } else {
            scales[c] = std;
        }
    }
    if opts.jitter > 0.0 {
        let mut rng = rng_from(opts.seed ^ content_hash(x));
        for row in out.rows_mut() {
            for (c, v) in row.into_iter().enumerate() {
                *v += opts.jitter * scales[c] * rng.random_range(-1.0..1.0);
            }
        }
    }
    Ok(out.into_raw_vec_and_offset().0)
}

fn use_tree(opts: &EstimatorOptions, dim: usize) -> bool {
    match opts.backend {
        Backend::Auto => dim <= KD_TREE_MAX_DIM,
        Backend::Brute => false,
        Backend::KdTree => true,
    }
}

/// KSG estimator (variant 1) for continuous `x` (n × dx) and `y` (n × dy).
pub fn ksg_mi_cc(x: &Array2<f64>, y: &Array2<f64>, opts: &EstimatorOptions) -> Result<MiEstimate, InfoError> {
    let n = x.nrows();
    if y.nrows() != n {
        return Err(InfoError::LengthMismatch { left: n, right: y.nrows() });
    }
    let k = opts.k;
    if k == 0 || n <= k {
        return Err(InfoError::TooFewSamples { n, k });
    }
    let (dx, dy) = (x.ncols(), y.ncols());
    let px = prepare(x, opts)?;
    let py = prepare(y, opts)?;
    let mut joint = Vec::with_capacity(n * (dx + dy));
    for i in 0..n {
        joint.extend_from_slice(&px[i * dx..(i + 1) * dx]);
        joint.extend_from_slice(&py[i * dy..(i + 1) * dy]);
    }
    let joint = PointSet::new(joint, n, dx + dy, vec![0..dx, dx..dx + dy]);
    let xs = PointSet::single_block(px, n, dx);
    let ys = PointSet::single_block(py, n, dy);
    let psi = digamma_table(n + 1);

    let counts: Vec<(usize, usize)> = if use_tree(opts, dx + dy) {
        let tj = KdTree::build(&joint, None);
        let tx = KdTree::build(&xs, None);
        let ty = KdTree::build(&ys, None);
        (0..n)
            .into_par_iter()
            .map(|i| {
                let eps = tj.kth_distance(i, k);
                (tx.count_within(i, eps), ty.count_within(i, eps))
            })
            .collect()
    } else {
        (0..n)
            .into_par_iter()
            .map_init(Vec::new, |buf, i| {
                // One pass: marginal distances give both the joint distance and the counts.
                buf.clear();
                for j in 0..n {
                    if j != i {
                        buf.push((xs.distance(i, j), ys.distance(i, j)));
                    }
                }
                let mut joint_d: Vec<f64> = buf.iter().map(|(a, b)| a.max(*b)).collect();
                let (_, eps, _) = joint_d.select_nth_unstable_by(k - 1, f64::total_cmp);
                let eps = *eps;
                let nx = buf.iter().filter(|(a, _)| *a < eps).count();
                let ny = buf.iter().filter(|(_, b)| *b < eps).count();
                (nx, ny)
            })
            .collect()
    };
    let mean: f64 = counts.iter().map(|&(nx, ny)| psi[nx + 1] + psi[ny + 1]).sum::<f64>() / n as f64;
    Ok(MiEstimate { value: psi[k] + psi[n] - mean, k, n, warnings: Vec::new() })
}

/// Mixed continuous/discrete estimator (Ross 2014) for continuous `x` and
/// discrete `labels`. Samples whose label occurs once are dropped; labels
/// with at most `k` samples use a reduced local k.
pub fn mi_cd(x: &Array2<f64>, labels: &[u64], opts: &EstimatorOptions) -> Result<MiEstimate, InfoError> {
    let n_all = x.nrows();
    if labels.len() != n_all {
        return Err(InfoError::LengthMismatch { left: n_all, right: labels.len() });
    }
    if opts.k == 0 || n_all <= opts.k {
        return Err(InfoError::TooFewSamples { n: n_all, k: opts.k });
    }
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(i);
    }
    let mut warnings = Vec::new();
    let singletons: Vec<u64> = groups.iter().filter(|(_, v)| v.len() == 1).map(|(l, _)| *l).collect();
    if !singletons.is_empty() {
        warnings.push(format!("{} singleton label(s) excluded", singletons.len()));
    }
    let reduced = groups.values().filter(|v| v.len() > 1 && v.len() <= opts.k).count();
    if reduced > 0 {
        warnings.push(format!("{reduced} label(s) with at most k samples use a reduced k"));
    }
    let keep: Vec<usize> = (0..n_all).filter(|&i| groups[&labels[i]].len() > 1).collect();
    let n = keep.len();
    if n <= opts.k {
        return Err(InfoError::TooFewSamples { n, k: opts.k });
    }
    let xk = x.select(ndarray::Axis(0), &keep);
    let dim = xk.ncols();
    let pts = PointSet::single_block(prepare(&xk, opts)?, n, dim);

    // Group membership in the filtered index space.
    let mut members: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (new_i, &old_i) in keep.iter().enumerate() {
        members.entry(labels[old_i]).or_default().push(new_i);
    }
    let psi = digamma_table(n + 1);
    let tree = use_tree(opts, dim);
    let full = if tree { Some(KdTree::build(&pts, None)) } else { None };

    let mut sum_k = 0.0;
    let mut sum_label = 0.0;
    let mut sum_m = 0.0;
    for idx in members.values() {
        let k_local = opts.k.min(idx.len() - 1);
        let label_tree = if tree { Some(KdTree::build(&pts, Some(idx))) } else { None };
        let ms: Vec<usize> = idx
            .par_iter()
            .map_init(Vec::new, |buf, &i| {
                let r = match &label_tree {
                    Some(t) => t.kth_distance(i, k_local),
                    None => kth_distance_brute(&pts, i, k_local, idx, buf),
                };
                let m = match &full {
                    Some(t) => t.count_within(i, r),
                    None => count_within_brute(&pts, i, r),
                };
                m + 1
            })
            .collect();
        sum_k += psi[k_local] * idx.len() as f64;
        sum_label += psi[idx.len()] * idx.len() as f64;
        sum_m += ms.iter().map(|&m| psi[m]).sum::<f64>();
    }
    let nf = n as f64;
    let value = psi[n] + sum_k / nf - sum_label / nf - sum_m / nf;
    Ok(MiEstimate { value, k: opts.k, n, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian_pair(n: usize, rho: f64, seed: u64) -> (Array2<f64>, Array2<f64>) {
        let mut rng = rng_from(seed);
        let mut x = Array2::zeros((n, 1));
        let mut y = Array2::zeros((n, 1));
        for i in 0..n {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            x[[i, 0]] = a;
            y[[i, 0]] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
        (x, y)
    }

    #[test]
    fn digamma_table_matches_statrs() {
        let t = digamma_table(5000);
        for m in [1usize, 2, 3, 10, 4097, 5000] {
            let r = statrs::function::gamma::digamma(m as f64);
            assert!((t[m] - r).abs() < 1e-10, "{m}: {} vs {r}", t[m]);
        }
    }

    #[test]
    fn correlated_gaussians() {
        let (x, y) = gaussian_pair(4096, 0.9, 1);
        let est = ksg_mi_cc(&x, &y, &EstimatorOptions::default()).unwrap();
        let truth = -0.5 * (1.0f64 - 0.81).ln();
        assert!((est.value - truth).abs() < 0.03, "{} vs {truth}", est.value);
    }

    #[test]
    fn independent_uniforms() {
        let mut rng = rng_from(5);
        let x = Array2::from_shape_fn((4096, 1), |_| rng.random::<f64>());
        let y = Array2::from_shape_fn((4096, 1), |_| rng.random::<f64>());
        let est = ksg_mi_cc(&x, &y, &EstimatorOptions::default()).unwrap();
        assert!(est.value.abs() < 0.02, "{}", est.value);
    }

    #[test]
    fn identical_variables_give_a_large_estimate() {
        let (x, _) = gaussian_pair(1024, 0.0, 2);
        let est = ksg_mi_cc(&x, &x, &EstimatorOptions::default()).unwrap();
        assert!(est.value > (1024f64).ln() / 2.0, "{}", est.value);
    }

    #[test]
    fn symmetric_in_arguments() {
        let (x, y) = gaussian_pair(700, 0.5, 3);
        let opts = EstimatorOptions::default();
        let a = ksg_mi_cc(&x, &y, &opts).unwrap().value;
        let b = ksg_mi_cc(&y, &x, &opts).unwrap().value;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn backends_agree_bit_for_bit() {
        let (x, y) = gaussian_pair(600, 0.7, 4);
        let brute = EstimatorOptions { backend: Backend::Brute, ..Default::default() };
        let tree = EstimatorOptions { backend: Backend::KdTree, ..Default::default() };
        assert_eq!(ksg_mi_cc(&x, &y, &brute).unwrap().value, ksg_mi_cc(&x, &y, &tree).unwrap().value);
        let labels: Vec<u64> = x.column(0).iter().map(|v| (*v > 0.3) as u64).collect();
        assert_eq!(mi_cd(&y, &labels, &brute).unwrap().value, mi_cd(&y, &labels, &tree).unwrap().value);
    }

    #[test]
    fn separated_clusters_recover_label_entropy() {
        let mut rng = rng_from(6);
        for n_labels in [2u64, 4] {
            let n = 4096;
            let labels: Vec<u64> = (0..n).map(|i| i as u64 % n_labels).collect();
            let x = Array2::from_shape_fn((n, 1), |(i, _)| {
                let z: f64 = StandardNormal.sample(&mut rng);
                labels[i] as f64 * 200.0 - 100.0 + z
            });
            let est = mi_cd(&x, &labels, &EstimatorOptions::default()).unwrap();
            let truth = (n_labels as f64).ln();
            assert!((est.value - truth).abs() < 0.03, "{} vs {truth}", est.value);
        }
    }

    #[test]
    fn independent_labels_give_zero() {
        let mut rng = rng_from(7);
        let n = 4096;
        let x = Array2::from_shape_fn((n, 2), |_| StandardNormal.sample(&mut rng));
        let labels: Vec<u64> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let est = mi_cd(&x, &labels, &EstimatorOptions::default()).unwrap();
        assert!(est.value.abs() < 0.02, "{}", est.value);
    }

    #[test]
    fn small_labels_warn_and_singletons_drop() {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let mut labels = vec![0u64; 12];
        labels[10] = 1;
        labels[11] = 2;
        labels[9] = 1;
        let est = mi_cd(&x, &labels, &EstimatorOptions::default()).unwrap();
        assert_eq!(est.n, 11);
        assert_eq!(est.warnings.len(), 2);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let x = Array2::zeros((3, 1));
        assert!(matches!(ksg_mi_cc(&x, &x, &EstimatorOptions::default()), Err(InfoError::TooFewSamples { .. })));
        let mut bad = Array2::zeros((10, 1));
        bad[[3, 0]] = f64::NAN;
        assert!(matches!(ksg_mi_cc(&bad, &bad, &EstimatorOptions::default()), Err(InfoError::NonFinite)));
    }

    #[test]
    fn constant_input_is_independent_of_everything() {
        let (x, _) = gaussian_pair(2048, 0.0, 9);
        let c = Array2::zeros((2048, 3));
        let est = ksg_mi_cc(&c, &x, &EstimatorOptions::default()).unwrap();
        assert!(est.value.abs() < 0.02, "{}", est.value);
        let labels: Vec<u64> = (0..2048).map(|i| (i % 2) as u64).collect();
        assert!(mi_cd(&c, &labels, &EstimatorOptions::default()).unwrap().value.abs() < 0.02);
    }
}
