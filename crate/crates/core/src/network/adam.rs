use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    pub m: ModelParams<F>,
    pub v: ModelParams<F>,
    pub step: u64,
}

impl<F: Real> AdamState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Tensors whose name is in `frozen` are
/// left untouched. A non-finite gradient aborts the step before anything
/// is modified.
pub fn adam_step<F: Real>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut AdamState<F>,
    cfg: &AdamConfig,
    frozen: &[&str],
) -> Result<()> {
    if let Some((name, _)) = grads.tensors().into_iter().find(|(_, g)| g.iter().any(|v| !v.is_finite())) {
        return Err(Error::Divergence(format!("non-finite gradient in {name}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let step_size = F::of(cfg.learning_rate * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t)));
    // Epsilon is applied to the uncorrected second moment, rescaled so the
    // update equals lr * m_hat / (sqrt(v_hat) + eps).
    let eps = F::of(cfg.epsilon * (1.0 - b2.powi(t)).sqrt());
    let (fb1, fb2) = (F::of(b1), F::of(b2));
    let (ob1, ob2) = (F::one() - fb1, F::one() - fb2);
    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut());
    for ((((name, p), (_, g)), (_, m)), (_, v)) in tensors {
        if frozen.contains(&name.as_str()) {
            continue;
        }
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = fb1 * m[i] + ob1 * gi;
            v[i] = fb2 * v[i] + ob2 * gi * gi;
            p[i] -= step_size * m[i] / (v[i].sqrt() + eps);
        }
    }
    Ok(())
}
