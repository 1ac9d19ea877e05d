use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::real::Real;
use super::QError;

/// Huber loss and its derivative with respect to `delta`.
pub fn huber(delta: f64, kappa: f64) -> (f64, f64) {
    if delta.abs() <= kappa {
        (0.5 * delta * delta, delta)
    } else {
        (kappa * (delta.abs() - 0.5 * kappa), kappa * delta.signum())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S = f32> {
    pub m: Vec<S>,
    pub v: Vec<S>,
    pub t: u64,
}

impl<S: Real> AdamState<S> {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![S::zero(); n], v: vec![S::zero(); n], t: 0 }
    }
}

/// One Adam step with bias correction.
///
/// `modules` partitions the parameters; a module whose gradient block is
/// entirely zero keeps its parameters (its moments still decay), so an update
/// driven by one head never moves the other.
pub fn adam_step<S: Real>(
    params: &mut [S],
    grads: &[S],
    state: &mut AdamState<S>,
    cfg: &AdamConfig,
    modules: &[Range<usize>],
) -> Result<(), QError> {
    let n = params.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(QError::ShapeMismatch(format!(
            "adam: params {n}, grads {}, moments {}/{}",
            grads.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.t += 1;
    let b1 = S::from_f64_lossy(cfg.beta1);
    let b2 = S::from_f64_lossy(cfg.beta2);
    let one = S::one();
    let t = state.t as i32;
    let c1 = S::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = S::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = S::from_f64_lossy(cfg.lr);
    let eps = S::from_f64_lossy(cfg.eps);
    let whole = [0..n];
    let modules = if modules.is_empty() { &whole[..] } else { modules };
    for r in modules {
        let active = grads[r.clone()].iter().any(|g| *g != S::zero());
        for i in r.clone() {
            let g = grads[i];
            state.m[i] = b1 * state.m[i] + (one - b1) * g;
            state.v[i] = b2 * state.v[i] + (one - b2) * g * g;
            if active {
                let mh = state.m[i] / c1;
                let vh = state.v[i] / c2;
                params[i] = params[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
    Ok(())
}
