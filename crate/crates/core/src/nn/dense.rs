//! Fully connected classifier head.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Dense layer with weights `[out, in]` and bias `[out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    name: String,
    weights: Tensor,
    bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct DenseGrads {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl DenseLayer {
    pub fn new(name: impl Into<String>, weights: Tensor, bias: Tensor) -> Self {
        assert_eq!(weights.shape().len(), 2);
        assert_eq!(bias.shape(), &[weights.shape()[0]]);
        Self {
            name: name.into(),
            weights,
            bias,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias(&self) -> &Tensor {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Tensor {
        &mut self.bias
    }

    /// `[B, in] -> [B, out]`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (nin, nout) = (self.in_features(), self.out_features());
        if x.shape().len() != 2 || x.shape()[1] != nin {
            return Err(Error::Shape {
                layer: self.name.clone(),
                expected: format!("[B, {nin}]"),
                got: format!("{:?}", x.shape()),
            });
        }
        let b = x.shape()[0];
        let mut y = vec![0.0; b * nout];
        for bi in 0..b {
            let x_b = &x.data()[bi * nin..(bi + 1) * nin];
            let y_b = &mut y[bi * nout..(bi + 1) * nout];
            for (o, slot) in y_b.iter_mut().enumerate() {
                let w_o = &self.weights.data()[o * nin..(o + 1) * nin];
                let mut acc = self.bias.data()[o];
                for i in 0..nin {
                    acc += w_o[i] * x_b[i];
                }
                *slot = acc;
            }
        }
        Ok(Tensor::from_vec(vec![b, nout], y))
    }

    pub fn backward_batch(&self, x: &Tensor, dy: &Tensor) -> (Tensor, DenseGrads) {
        let (nin, nout) = (self.in_features(), self.out_features());
        let b = x.shape()[0];
        let mut dw = vec![0.0; nout * nin];
        let mut db = vec![0.0; nout];
        let mut dx = vec![0.0; b * nin];
        for bi in 0..b {
            let x_b = &x.data()[bi * nin..(bi + 1) * nin];
            let dy_b = &dy.data()[bi * nout..(bi + 1) * nout];
            let dx_b = &mut dx[bi * nin..(bi + 1) * nin];
            for o in 0..nout {
                let g = dy_b[o];
                db[o] += g;
                let dw_o = &mut dw[o * nin..(o + 1) * nin];
                let w_o = &self.weights.data()[o * nin..(o + 1) * nin];
                for i in 0..nin {
                    dw_o[i] += g * x_b[i];
                    dx_b[i] += g * w_o[i];
                }
            }
        }
        (
            Tensor::from_vec(vec![b, nin], dx),
            DenseGrads {
                weights: Tensor::from_vec(vec![nout, nin], dw),
                bias: Tensor::from_vec(vec![nout], db),
            },
        )
    }
}
