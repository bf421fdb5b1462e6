//! 2-D convolution layer: im2col forward, matching backward.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Samples per work unit when fanning a batch out across threads. Chunking is
/// fixed so gradient accumulation order never depends on thread count.
pub(crate) const BATCH_CHUNK: usize = 16;

/// Convolutional layer holding weights of shape `[N, C, k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    name: String,
    weights: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
    prunable: bool,
}

/// Weight/bias gradients produced by [`ConvLayer::backward_batch`].
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

impl ConvLayer {
    pub fn new(
        name: impl Into<String>,
        weights: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        padding: usize,
        prunable: bool,
    ) -> Self {
        assert_eq!(weights.shape().len(), 4, "conv weights must be [N,C,k,k]");
        assert_eq!(
            weights.shape()[2],
            weights.shape()[3],
            "only square kernels supported"
        );
        if let Some(b) = &bias {
            assert_eq!(b.shape(), &[weights.shape()[0]], "bias must have N entries");
        }
        assert!(stride >= 1, "stride must be >= 1");
        Self {
            name: name.into(),
            weights,
            bias,
            stride,
            padding,
            prunable,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    pub fn bias_mut(&mut self) -> Option<&mut Tensor> {
        self.bias.as_mut()
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn prunable(&self) -> bool {
        self.prunable
    }

    pub fn set_prunable(&mut self, prunable: bool) {
        self.prunable = prunable;
    }

    /// Number of filters (output channels).
    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Weight slab of one filter, flattened to `c*k*k` entries.
    pub fn filter(&self, n: usize) -> &[Scalar] {
        let ckk = self.in_channels() * self.kernel() * self.kernel();
        &self.weights.data()[n * ckk..(n + 1) * ckk]
    }

    /// Output spatial extent for an input of `h x w`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let k = self.kernel();
        let (eh, ew) = (h + 2 * self.padding, w + 2 * self.padding);
        if k > eh || k > ew {
            return Err(Error::Shape {
                layer: self.name.clone(),
                expected: format!("input at least {k}x{k} after padding {}", self.padding),
                got: format!("{h}x{w}"),
            });
        }
        Ok(((eh - k) / self.stride + 1, (ew - k) / self.stride + 1))
    }

    fn check_input(&self, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
        if shape.len() != 4 || shape[1] != self.in_channels() {
            return Err(Error::Shape {
                layer: self.name.clone(),
                expected: format!("[B, {}, h, w]", self.in_channels()),
                got: format!("{shape:?}"),
            });
        }
        Ok((shape[0], shape[1], shape[2], shape[3]))
    }

    /// Batched forward: `[B,C,H,W] -> [B,N,Ho,Wo]`.
    pub fn forward_batch(&self, x: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = self.check_input(x.shape())?;
        let (oh, ow) = self.output_hw(h, w)?;
        let n = self.out_channels();
        let k = self.kernel();
        let (in_sz, out_sz, ohw, ckk) = (c * h * w, n * oh * ow, oh * ow, c * k * k);

        let mut out = vec![0.0; b * out_sz];
        out.par_chunks_mut(BATCH_CHUNK * out_sz)
            .zip(x.data().par_chunks(BATCH_CHUNK * in_sz))
            .for_each(|(out_chunk, x_chunk)| {
                let mut cols = vec![0.0; ckk * ohw];
                for (y_s, x_s) in out_chunk.chunks_mut(out_sz).zip(x_chunk.chunks(in_sz)) {
                    self.im2col(x_s, h, w, oh, ow, &mut cols);
                    self.gemm_forward(&cols, ohw, y_s);
                }
            });
        Ok(Tensor::from_vec(vec![b, n, oh, ow], out))
    }

    /// Batched backward. Returns input gradient and parameter gradients.
    pub fn backward_batch(&self, x: &Tensor, dy: &Tensor) -> Result<(Tensor, ConvGrads)> {
        let (b, c, h, w) = self.check_input(x.shape())?;
        let (oh, ow) = self.output_hw(h, w)?;
        let n = self.out_channels();
        let k = self.kernel();
        let (in_sz, out_sz, ohw, ckk) = (c * h * w, n * oh * ow, oh * ow, c * k * k);
        debug_assert_eq!(dy.shape(), &[b, n, oh, ow]);

        let mut dx = vec![0.0; b * in_sz];
        let partials: Vec<(Vec<Scalar>, Vec<Scalar>)> = dx
            .par_chunks_mut(BATCH_CHUNK * in_sz)
            .zip(x.data().par_chunks(BATCH_CHUNK * in_sz))
            .zip(dy.data().par_chunks(BATCH_CHUNK * out_sz))
            .map(|((dx_chunk, x_chunk), dy_chunk)| {
                let mut dw = vec![0.0; n * ckk];
                let mut db = vec![0.0; n];
                let mut cols = vec![0.0; ckk * ohw];
                let mut dcols = vec![0.0; ckk * ohw];
                for ((dx_s, x_s), dy_s) in dx_chunk
                    .chunks_mut(in_sz)
                    .zip(x_chunk.chunks(in_sz))
                    .zip(dy_chunk.chunks(out_sz))
                {
                    self.im2col(x_s, h, w, oh, ow, &mut cols);
                    // dW += dy . cols^T, db += row sums of dy
                    let wdat = self.weights.data();
                    for ni in 0..n {
                        let dy_n = &dy_s[ni * ohw..(ni + 1) * ohw];
                        db[ni] += dy_n.iter().sum::<Scalar>();
                        for r in 0..ckk {
                            let col_r = &cols[r * ohw..(r + 1) * ohw];
                            let mut acc = 0.0;
                            for o in 0..ohw {
                                acc += dy_n[o] * col_r[o];
                            }
                            dw[ni * ckk + r] += acc;
                        }
                    }
                    // dcols = W^T . dy, then scatter back to dx
                    dcols.fill(0.0);
                    for ni in 0..n {
                        let dy_n = &dy_s[ni * ohw..(ni + 1) * ohw];
                        let w_n = &wdat[ni * ckk..(ni + 1) * ckk];
                        for (r, &wv) in w_n.iter().enumerate() {
                            if wv == 0.0 {
                                continue;
                            }
                            let dcol_r = &mut dcols[r * ohw..(r + 1) * ohw];
                            for o in 0..ohw {
                                dcol_r[o] += wv * dy_n[o];
                            }
                        }
                    }
                    self.col2im(&dcols, h, w, oh, ow, dx_s);
                }
                (dw, db)
            })
            .collect();

        let mut dw_total = vec![0.0; n * ckk];
        let mut db_total = vec![0.0; n];
        for (dw, db) in &partials {
            for (a, b) in dw_total.iter_mut().zip(dw) {
                *a += b;
            }
            for (a, b) in db_total.iter_mut().zip(db) {
                *a += b;
            }
        }
        let grads = ConvGrads {
            weights: Tensor::from_vec(self.weights.shape().to_vec(), dw_total),
            bias: self
                .bias
                .as_ref()
                .map(|_| Tensor::from_vec(vec![n], db_total)),
        };
        Ok((Tensor::from_vec(vec![b, c, h, w], dx), grads))
    }

    /// Unfold one sample into the `[C*k*k, Ho*Wo]` patch matrix.
    fn im2col(&self, x: &[Scalar], h: usize, w: usize, oh: usize, ow: usize, cols: &mut [Scalar]) {
        let k = self.kernel();
        let c = self.in_channels();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        for ci in 0..c {
            let x_c = &x[ci * h * w..(ci + 1) * h * w];
            for i in 0..k {
                for j in 0..k {
                    let row = &mut cols[((ci * k + i) * k + j) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + i as isize - p;
                        let seg = &mut row[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            seg.fill(0.0);
                            continue;
                        }
                        let x_row = &x_c[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, slot) in seg.iter_mut().enumerate() {
                            let ix = ox as isize * s + j as isize - p;
                            *slot = if ix >= 0 && ix < w as isize {
                                x_row[ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add the patch-matrix gradient back onto the input gradient.
    fn col2im(&self, dcols: &[Scalar], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [Scalar]) {
        let k = self.kernel();
        let c = self.in_channels();
        let (s, p) = (self.stride as isize, self.padding as isize);
        let ohw = oh * ow;
        dx.fill(0.0);
        for ci in 0..c {
            let dx_c = &mut dx[ci * h * w..(ci + 1) * h * w];
            for i in 0..k {
                for j in 0..k {
                    let row = &dcols[((ci * k + i) * k + j) * ohw..][..ohw];
                    for oy in 0..oh {
                        let iy = oy as isize * s + i as isize - p;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut dx_c[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = ox as isize * s + j as isize - p;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += row[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    fn gemm_forward(&self, cols: &[Scalar], ohw: usize, y: &mut [Scalar]) {
        let n = self.out_channels();
        let ckk = self.in_channels() * self.kernel() * self.kernel();
        let wdat = self.weights.data();
        for ni in 0..n {
            let y_n = &mut y[ni * ohw..(ni + 1) * ohw];
            y_n.fill(self.bias.as_ref().map_or(0.0, |b| b.data()[ni]));
            let w_n = &wdat[ni * ckk..(ni + 1) * ckk];
            for (r, &wv) in w_n.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let col_r = &cols[r * ohw..(r + 1) * ohw];
                for o in 0..ohw {
                    y_n[o] += wv * col_r[o];
                }
            }
        }
    }
}
