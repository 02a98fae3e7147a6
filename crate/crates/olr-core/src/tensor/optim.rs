//! RMSProp optimizer.

use super::{Scalar, Tensor};
use crate::error::{OlrError, Result};

/// RMSProp with a running mean of squared gradients:
/// `ms = decay * ms + (1 - decay) * g^2`, `p -= lr * g / sqrt(ms + eps)`.
#[derive(Clone, Debug)]
pub struct RmsProp<S> {
    pub learning_rate: S,
    pub decay: S,
    pub epsilon: S,
    mean_square: Vec<Vec<S>>,
}

impl<S: Scalar> RmsProp<S> {
    pub fn new(learning_rate: S, decay: S, epsilon: S) -> Result<Self> {
        if learning_rate <= S::zero() {
            return Err(OlrError::Config("rmsprop learning rate must be positive".into()));
        }
        if decay <= S::zero() || decay >= S::one() {
            return Err(OlrError::Config("rmsprop decay must be in (0, 1)".into()));
        }
        if epsilon <= S::zero() {
            return Err(OlrError::Config("rmsprop epsilon must be positive".into()));
        }
        Ok(RmsProp { learning_rate, decay, epsilon, mean_square: Vec::new() })
    }

    /// Defaults: decay 0.9, epsilon 1e-8.
    pub fn with_lr(learning_rate: S) -> Result<Self> {
        Self::new(learning_rate, S::from_f64(0.9), S::from_f64(1e-8))
    }

    /// Per-parameter squared-gradient accumulators (empty before first step).
    pub fn mean_square(&self) -> &[Vec<S>] {
        &self.mean_square
    }

    /// One in-place update over aligned parameter/gradient lists.
    pub fn step(&mut self, params: &mut [&mut Tensor<S>], grads: &[Tensor<S>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(OlrError::Shape(format!(
                "rmsprop: {} parameter tensors vs {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        if self.mean_square.is_empty() {
            self.mean_square = params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        }
        if self.mean_square.len() != params.len() {
            return Err(OlrError::Shape(format!(
                "rmsprop: optimizer state holds {} tensors, got {}",
                self.mean_square.len(),
                params.len()
            )));
        }
        for ((p, g), ms) in params.iter_mut().zip(grads.iter()).zip(self.mean_square.iter_mut()) {
            if p.shape() != g.shape() {
                return Err(OlrError::Shape(format!(
                    "rmsprop: parameter shape {:?} vs gradient shape {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            let one_minus = S::one() - self.decay;
            for ((pv, &gv), m) in
                p.data_mut().iter_mut().zip(g.data().iter()).zip(ms.iter_mut())
            {
                *m = self.decay * *m + one_minus * gv * gv;
                *pv = *pv - self.learning_rate * gv / (*m + self.epsilon).sqrt();
            }
        }
        Ok(())
    }
}
