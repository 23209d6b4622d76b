//! Adam with bias correction and global gradient-norm clipping.

use serde::{Deserialize, Serialize};

use super::{NnError, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Clip the global gradient norm to this value before the update.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 5e-4, beta1: 0.9, beta2: 0.999, epsilon: 1e-5, max_grad_norm: Some(0.5) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: ParamSet,
    pub second_moment: ParamSet,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self { config, step: 0, first_moment: ParamSet::new(), second_moment: ParamSet::new() }
    }
}

/// Apply one Adam update to every network present in `grads`.
/// Returns the gradient norm measured before clipping.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) -> Result<f64, NnError> {
    if !grads.all_finite() {
        return Err(NnError::NonFiniteGradient);
    }
    let norm = grads.global_norm();
    let clip = match state.config.max_grad_norm {
        Some(max) if norm > max => max / norm,
        _ => 1.0,
    };
    state.step += 1;
    let cfg = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    for (name, g) in grads.iter() {
        let p = params.get_mut(name).ok_or_else(|| NnError::UnknownParameter(name.to_string()))?;
        if !state.first_moment.contains(name) {
            state.first_moment.insert(name, p.zeros_like());
            state.second_moment.insert(name, p.zeros_like());
        }
        let m = state.first_moment.get_mut(name).expect("inserted above");
        let v = state.second_moment.get_mut(name).expect("inserted above");
        for (((pt, gt), mt), vt) in p.tensors_mut().zip(g.tensors()).zip(m.tensors_mut()).zip(v.tensors_mut()) {
            if pt.len() != gt.len() {
                return Err(NnError::ShapeMismatch { expected: pt.len(), got: gt.len() });
            }
            for i in 0..pt.len() {
                let gi = gt[i] * clip;
                mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * gi;
                vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = mt[i] / bc1;
                let v_hat = vt[i] / bc2;
                pt[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
    Ok(norm)
}
