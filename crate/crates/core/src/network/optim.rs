use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamWState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

/// One bias-corrected AdamW update with decoupled weight decay:
/// `p ← p − lr·m̂/(√v̂+ε) − lr·wd·p`.
pub fn adamw_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamWState, lr: f64, opt: &AdamW) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Dimension {
            op: "adamw_step",
            lhs: vec![params.len()],
            rhs: vec![grads.len()],
        });
    }
    if state.m.is_empty() {
        state.m = grads.iter().map(|g| Tensor::zeros(g.shape())).collect();
        state.v = state.m.clone();
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].shape() != g.shape() {
            return Err(Error::Dimension {
                op: "adamw_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (pj, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = opt.beta1 * m[j] + (1.0 - opt.beta1) * gj;
            v[j] = opt.beta2 * v[j] + (1.0 - opt.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *pj -= lr * m_hat / (v_hat.sqrt() + opt.eps) + lr * opt.weight_decay * *pj;
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` once the monitored loss has
/// failed to improve for `patience` consecutive epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct ReduceOnPlateau {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl ReduceOnPlateau {
    pub fn new(factor: f64, patience: usize) -> Self {
        Self {
            factor,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's loss; returns the (possibly reduced) rate.
    pub fn step(&mut self, loss: f64, lr: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
            return lr;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            self.bad_epochs = 0;
            lr * self.factor
        } else {
            lr
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(p0: f64, g: f64, lr: f64, wd: f64, steps: usize) -> f64 {
        let mut p = Tensor::vector(vec![p0]);
        let grads = [Tensor::vector(vec![g])];
        let mut state = AdamWState::default();
        let opt = AdamW {
            weight_decay: wd,
            ..AdamW::default()
        };
        for _ in 0..steps {
            adamw_step(&mut [&mut p], &grads, &mut state, lr, &opt).unwrap();
        }
        p.data()[0]
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        assert_eq!(run(0.7, 0.0, 0.1, 0.0, 5), 0.7);
    }

    #[test]
    fn decay_only_step() {
        assert!((run(1.0, 0.0, 0.1, 0.01, 1) - 0.999).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes m̂/√v̂ = sign(g) on the first step
        assert!((run(0.0, 3.0, 0.01, 0.0, 1) + 0.01).abs() < 1e-9);
    }

    #[test]
    fn plateau_reduces_after_patience() {
        let mut s = ReduceOnPlateau::new(0.1, 2);
        assert_eq!(s.step(1.0, 1.0), 1.0);
        assert_eq!(s.step(1.0, 1.0), 1.0);
        assert!((s.step(1.5, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(s.step(0.5, 0.1), 0.1);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut p = Tensor::vector(vec![0.0]);
        let mut state = AdamWState::default();
        let r = adamw_step(&mut [&mut p], &[], &mut state, 0.1, &AdamW::default());
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }
}
