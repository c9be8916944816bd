//! Minimal reverse-mode differentiation over dense `f64` tensors.
//!
//! A [`Tape`] is built fresh for every forward pass. Operations append nodes
//! holding their forward value; [`Tape::backward`] replays the adjoints in
//! reverse and keeps the gradient of every node, so callers can read
//! gradients of intermediate activations as well as of parameters.

mod conv;
mod tape;
mod tensor;

pub use tape::{Gradients, ReluRule, Tape, Var};
pub use tensor::{ParamId, Parameter, Tensor};

pub(crate) use tape::{cumulative_scores, log_sum_exp};

use crate::error::{Error, Result};

/// Compares the tape gradient of a scalar function at `point` with central
/// differences of step `h`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let eval = |p: Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.input(p);
        let y = f(&mut tape, x)?;
        tape.value(y)
            .item()
            .ok_or_else(|| Error::Usage("grad_check function must return a scalar".into()))
    };

    let mut tape = Tape::new();
    let x = tape.input(point.clone());
    let y = f(&mut tape, x)?;
    let grads = tape.backward(y)?;
    let analytic = grads
        .get(x)
        .cloned()
        .unwrap_or_else(|| Tensor::zeros(point.shape()));

    let mut worst: f64 = 0.0;
    for i in 0..point.len() {
        let mut plus = point.clone();
        plus.data_mut()[i] += h;
        let mut minus = point.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_function_is_exact() {
        let point = Tensor::vector(vec![0.3, -1.5, 2.0]);
        let err = grad_check(
            |t, x| t.weighted_sum(x, vec![1.5, -2.0, 0.25]),
            &point,
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-10, "{err}");
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let point = Tensor::vector(vec![1.0, 2.0]);
        let err = grad_check(
            |t, x| {
                let z = t.scale(x, 0.0);
                Ok(t.sum(z))
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert_eq!(err, 0.0);
    }
}
