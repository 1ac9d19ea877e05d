//! Central finite-difference check of [`super::backward`].

use super::net::{backward, forward, Heads, NetworkParams};
use super::tensor::Tensor;
use super::QError;
use crate::world::Primitive;

/// Floor on the denominator so parameters with (near) zero gradient compare
/// on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Maximum relative error between the analytic gradient of `Q_p(row, col)` and
/// central differences with step `eps`.
pub fn grad_check(
    params: &NetworkParams<f64>,
    input: &Tensor<f64>,
    p: Primitive,
    row: usize,
    col: usize,
    eps: f64,
) -> Result<f64, QError> {
    grad_check_with(params, input, p, row, col, eps, |_| {})
}

/// As [`grad_check`], letting `corrupt` alter the analytic gradient first.
pub fn grad_check_with(
    params: &NetworkParams<f64>,
    input: &Tensor<f64>,
    p: Primitive,
    row: usize,
    col: usize,
    eps: f64,
    corrupt: impl FnOnce(&mut [f64]),
) -> Result<f64, QError> {
    let trace = forward(params, input, Heads::Only(p))?;
    let mut analytic = backward(params, &trace, p, row, col, 1.0)?;
    corrupt(&mut analytic);
    let mut probe = params.clone();
    let loss = |q: &NetworkParams<f64>| -> Result<f64, QError> {
        Ok(forward(q, input, Heads::Only(p))?.q(p).expect("head").at(0, row, col))
    };
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = loss(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = loss(&probe)?;
        probe.data_mut()[i] = orig;
        worst = worst.max(relative_error(a, (up - down) / (2.0 * eps)));
    }
    Ok(worst)
}
