//! Per-channel batch normalization.

use crate::tensor::{Scalar, Tensor};

/// Batch-norm layer over `[B, C, H, W]` activations. Train mode normalizes
/// with batch statistics; eval mode uses the running estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    name: String,
    scale: Tensor,
    shift: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    epsilon: Scalar,
    momentum: Scalar,
}

/// Saved batch statistics needed by the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache {
    mean: Vec<Scalar>,
    var: Vec<Scalar>,
    xhat: Vec<Scalar>,
}

/// Scale/shift gradients.
#[derive(Debug, Clone)]
pub struct BnGrads {
    pub scale: Tensor,
    pub shift: Tensor,
}

impl BatchNormLayer {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            scale: Tensor::full(vec![channels], 1.0),
            shift: Tensor::zeros(vec![channels]),
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::full(vec![channels], 1.0),
            epsilon: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn from_parts(
        name: impl Into<String>,
        scale: Tensor,
        shift: Tensor,
        running_mean: Tensor,
        running_var: Tensor,
        epsilon: Scalar,
    ) -> Self {
        let c = scale.len();
        assert!(shift.len() == c && running_mean.len() == c && running_var.len() == c);
        assert!(running_var.iter().all(|&v| v >= 0.0));
        assert!(epsilon > 0.0);
        Self {
            name: name.into(),
            scale,
            shift,
            running_mean,
            running_var,
            epsilon,
            momentum: 0.1,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &Tensor {
        &self.scale
    }

    pub fn scale_mut(&mut self) -> &mut Tensor {
        &mut self.scale
    }

    pub fn shift(&self) -> &Tensor {
        &self.shift
    }

    pub fn shift_mut(&mut self) -> &mut Tensor {
        &mut self.shift
    }

    pub fn running_mean(&self) -> &Tensor {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor {
        &self.running_var
    }

    pub fn epsilon(&self) -> Scalar {
        self.epsilon
    }

    /// Train-mode forward with batch statistics. Does not touch the running
    /// estimates; apply the returned cache via [`update_running`] once the
    /// step is committed.
    pub fn forward_train(&self, x: &Tensor) -> (Tensor, BnCache) {
        let (b, c, h, w) = dims(x);
        assert_eq!(c, self.channels(), "{}: channel mismatch", self.name);
        let m = (b * h * w) as Scalar;
        let hw = h * w;

        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for v in &x.data()[base..base + hw] {
                    mean[ci] += v;
                }
            }
        }
        for mv in &mut mean {
            *mv /= m;
        }
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for v in &x.data()[base..base + hw] {
                    let d = v - mean[ci];
                    var[ci] += d * d;
                }
            }
        }
        for vv in &mut var {
            *vv /= m;
        }

        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv = 1.0 / (var[ci] + self.epsilon).sqrt();
                let (g, s) = (self.scale.data()[ci], self.shift.data()[ci]);
                let base = (bi * c + ci) * hw;
                for o in base..base + hw {
                    let xh = (x.data()[o] - mean[ci]) * inv;
                    xhat[o] = xh;
                    y[o] = g * xh + s;
                }
            }
        }
        (
            Tensor::from_vec(x.shape().to_vec(), y),
            BnCache { mean, var, xhat },
        )
    }

    /// Eval-mode forward with running statistics.
    pub fn forward_eval(&self, x: &Tensor) -> Tensor {
        let (b, c, h, w) = dims(x);
        assert_eq!(c, self.channels(), "{}: channel mismatch", self.name);
        let hw = h * w;
        let mut y = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv = 1.0 / (self.running_var.data()[ci] + self.epsilon).sqrt();
                let (g, s) = (self.scale.data()[ci], self.shift.data()[ci]);
                let mu = self.running_mean.data()[ci];
                let base = (bi * c + ci) * hw;
                for o in base..base + hw {
                    y[o] = g * (x.data()[o] - mu) * inv + s;
                }
            }
        }
        Tensor::from_vec(x.shape().to_vec(), y)
    }

    /// Fold the cached batch statistics into the running estimates.
    pub fn update_running(&mut self, cache: &BnCache) {
        let mom = self.momentum;
        for (r, &bm) in self.running_mean.data_mut().iter_mut().zip(&cache.mean) {
            *r = (1.0 - mom) * *r + mom * bm;
        }
        for (r, &bv) in self.running_var.data_mut().iter_mut().zip(&cache.var) {
            *r = (1.0 - mom) * *r + mom * bv;
        }
    }

    /// Backward through the train-mode normalization (batch statistics are
    /// part of the graph).
    pub fn backward(&self, x: &Tensor, cache: &BnCache, dy: &Tensor) -> (Tensor, BnGrads) {
        let (b, c, h, w) = dims(x);
        let hw = h * w;
        let m = (b * h * w) as Scalar;

        let mut dscale = vec![0.0; c];
        let mut dshift = vec![0.0; c];
        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for bi in 0..b {
            for ci in 0..c {
                let base = (bi * c + ci) * hw;
                for o in base..base + hw {
                    let d = dy.data()[o];
                    sum_dy[ci] += d;
                    sum_dy_xhat[ci] += d * cache.xhat[o];
                }
            }
        }
        for ci in 0..c {
            dscale[ci] = sum_dy_xhat[ci];
            dshift[ci] = sum_dy[ci];
        }

        let mut dx = vec![0.0; x.len()];
        for bi in 0..b {
            for ci in 0..c {
                let inv = 1.0 / (cache.var[ci] + self.epsilon).sqrt();
                let g = self.scale.data()[ci];
                let mean_dy = sum_dy[ci] / m;
                let mean_dy_xhat = sum_dy_xhat[ci] / m;
                let base = (bi * c + ci) * hw;
                for o in base..base + hw {
                    dx[o] = g * inv * (dy.data()[o] - mean_dy - cache.xhat[o] * mean_dy_xhat);
                }
            }
        }
        (
            Tensor::from_vec(x.shape().to_vec(), dx),
            BnGrads {
                scale: Tensor::from_vec(vec![c], dscale),
                shift: Tensor::from_vec(vec![c], dshift),
            },
        )
    }
}

fn dims(x: &Tensor) -> (usize, usize, usize, usize) {
    let s = x.shape();
    assert_eq!(s.len(), 4, "batch-norm expects [B,C,H,W]");
    (s[0], s[1], s[2], s[3])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_output_is_standardized() {
        let bn = BatchNormLayer::new("bn", 1);
        let x = Tensor::from_vec(vec![2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let (y, cache) = bn.forward_train(&x);
        assert!((cache.mean[0] - 2.5).abs() < 1e-12);
        let mean_y: Scalar = y.data().iter().sum::<Scalar>() / 4.0;
        assert!(mean_y.abs() < 1e-12);
        let var_y: Scalar = y.data().iter().map(|v| v * v).sum::<Scalar>() / 4.0;
        assert!((var_y - 1.0).abs() < 1e-4); // epsilon softens it slightly
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNormLayer::new("bn", 1);
        let x = Tensor::from_vec(vec![1, 1, 1, 4], vec![2.0, 2.0, 2.0, 2.0]);
        let y0 = bn.forward_eval(&x);
        // fresh running stats: mean 0, var 1
        assert!((y0.data()[0] - 2.0 / (1.0 + 1e-5 as Scalar).sqrt()).abs() < 1e-12);
        let (_, cache) = bn.forward_train(&x);
        bn.update_running(&cache);
        assert!((bn.running_mean().data()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn running_var_stays_nonnegative() {
        let mut bn = BatchNormLayer::new("bn", 2);
        let x = Tensor::zeros(vec![3, 2, 2, 2]);
        let (_, cache) = bn.forward_train(&x);
        bn.update_running(&cache);
        assert!(bn.running_var().iter().all(|&v| v >= 0.0));
    }
}
