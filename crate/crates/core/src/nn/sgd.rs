//! Stochastic gradient descent with momentum and decoupled-from-penalty
//! weight decay.

use crate::nn::model::{Gradients, Model};
use crate::tensor::{Scalar, Tensor};

/// SGD state. The velocity buffers persist across steps and follow the
/// canonical parameter order.
#[derive(Debug, Clone)]
pub struct Sgd {
    momentum: Scalar,
    weight_decay: Scalar,
    velocity: Option<Vec<Tensor>>,
}

impl Sgd {
    pub fn new(momentum: Scalar, weight_decay: Scalar) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: None,
        }
    }

    pub fn momentum(&self) -> Scalar {
        self.momentum
    }

    pub fn weight_decay(&self) -> Scalar {
        self.weight_decay
    }

    pub fn velocity(&self) -> Option<&[Tensor]> {
        self.velocity.as_deref()
    }

    pub fn set_velocity(&mut self, velocity: Vec<Tensor>) {
        self.velocity = Some(velocity);
    }

    /// In-place update: `g = grad + wd*w; v = momentum*v + g; w -= lr*v`.
    pub fn step(&mut self, model: &mut Model, grads: &Gradients, lr: Scalar) {
        assert!(lr > 0.0, "learning rate must be positive");
        let velocity = self.velocity.get_or_insert_with(|| {
            grads
                .tensors()
                .iter()
                .map(|g| Tensor::zeros(g.shape().to_vec()))
                .collect()
        });
        assert_eq!(velocity.len(), grads.len(), "optimizer state mismatch");

        let momentum = self.momentum;
        let wd = self.weight_decay;
        let mut idx = 0usize;
        model.visit_params_mut(&mut |_, param| {
            let grad = &grads.tensors()[idx];
            assert_eq!(param.shape(), grad.shape(), "gradient shape mismatch");
            let vel = &mut velocity[idx];
            for ((w, &g), v) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(vel.data_mut())
            {
                let g = g + wd * *w;
                let d = if momentum != 0.0 {
                    *v = momentum * *v + g;
                    *v
                } else {
                    g
                };
                *w -= lr * d;
            }
            idx += 1;
        });
        assert_eq!(idx, grads.len(), "parameter walk mismatch");
    }
}
