//! Central finite-difference gradient checks.

use super::ParamSet;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Largest |analytic − numeric| / max(|analytic|, |numeric|, floor).
    pub max_rel_error: f64,
    /// Entry with the largest error: (network, tensor index, element).
    pub worst: Option<(String, usize, usize)>,
    pub checked: usize,
}

impl GradCheck {
    pub fn passes(&self, tol: f64) -> bool {
        self.checked > 0 && self.max_rel_error < tol
    }
}

/// Compare `grads` against central differences of `f` around `params`.
///
/// Every network in `params` is probed, so networks missing from `grads`
/// are checked against an analytic gradient of zero. At most `per_tensor`
/// evenly spaced elements of each tensor are perturbed.
pub fn gradcheck(params: &ParamSet, grads: &ParamSet, f: impl Fn(&ParamSet) -> f64, h: f64, per_tensor: usize, floor: f64) -> GradCheck {
    let mut out = GradCheck { max_rel_error: 0.0, worst: None, checked: 0 };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut work = params.clone();
    for name in names {
        let sizes: Vec<usize> = params.get(&name).expect("listed").tensors().map(<[f64]>::len).collect();
        for (ti, &len) in sizes.iter().enumerate() {
            let stride = (len / per_tensor.max(1)).max(1);
            for ei in (0..len).step_by(stride).take(per_tensor) {
                let analytic = grads
                    .get(&name)
                    .map(|g| g.tensors().nth(ti).expect("matching shapes")[ei])
                    .unwrap_or(0.0);
                let orig = params.get(&name).expect("listed").tensors().nth(ti).expect("tensor")[ei];
                let set = |w: &mut ParamSet, v: f64| {
                    w.get_mut(&name).expect("listed").tensors_mut().nth(ti).expect("tensor")[ei] = v;
                };
                set(&mut work, orig + h);
                let plus = f(&work);
                set(&mut work, orig - h);
                let minus = f(&work);
                set(&mut work, orig);
                let numeric = (plus - minus) / (2.0 * h);
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
                out.checked += 1;
                if rel >= out.max_rel_error {
                    out.max_rel_error = rel;
                    out.worst = Some((name.clone(), ti, ei));
                }
            }
        }
    }
    out
}
