//! Momentum SGD with cosine learning-rate decay.

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar};

pub const MOMENTUM: f64 = 0.9;

/// `lr₀ · ½(1 + cos(π·step/total))`.
pub fn cosine_lr(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    base * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
}

/// `v ← μv + g; θ ← θ − lr·v`, applied to trainable tensors only.
pub struct Sgd<T: Scalar> {
    momentum: T,
    velocity: Vec<Matrix<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>, momentum: f64) -> Self {
        Self {
            momentum: T::lit(momentum),
            velocity: shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }

    pub fn step(&mut self, params: &mut [Matrix<T>], grads: &[Matrix<T>], trainable: &[bool], lr: f64) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() || trainable.len() != params.len() {
            return Err(Error::shape("optimizer: parameter, gradient and mask counts differ"));
        }
        let lr = T::lit(lr);
        for (((p, g), v), &on) in params.iter_mut().zip(grads).zip(&mut self.velocity).zip(trainable) {
            if !on {
                continue;
            }
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                *vv = self.momentum * *vv + gv;
                *pv = *pv - lr * *vv;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-15);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates_and_mask_is_respected() {
        let mut params = vec![Matrix::scalar(1.0f64), Matrix::scalar(1.0)];
        let grads = vec![Matrix::scalar(1.0), Matrix::scalar(1.0)];
        let mut opt = Sgd::new([(1, 1), (1, 1)], 0.5);
        opt.step(&mut params, &grads, &[true, false], 0.1).unwrap();
        opt.step(&mut params, &grads, &[true, false], 0.1).unwrap();
        assert!((params[0][(0, 0)] - (1.0 - 0.1 - 0.15)).abs() < 1e-15);
        assert_eq!(params[1][(0, 0)], 1.0);
    }
}
