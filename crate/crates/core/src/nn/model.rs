//! Network assembly: plain and residual blocks, global pooling, classifier,
//! batched forward/backward, and softmax cross-entropy.

use crate::error::{Error, Result};
use crate::nn::batchnorm::{BatchNormLayer, BnCache, BnGrads};
use crate::nn::conv::{ConvGrads, ConvLayer};
use crate::nn::dense::{DenseGrads, DenseLayer};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Convolution, optional batch norm, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub conv: ConvLayer,
    pub bn: Option<BatchNormLayer>,
    pub relu: bool,
    pub stage: usize,
}

/// Two-conv basic block with an identity shortcut:
/// `relu(bn2(conv2(relu(bn1(conv1(x))))) + x)`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub bn1: BatchNormLayer,
    pub conv2: ConvLayer,
    pub bn2: BatchNormLayer,
    pub stage: usize,
}

#[derive(Debug, Clone)]
pub enum Block {
    Plain(ConvBlock),
    Residual(ResidualBlock),
}

impl Block {
    pub fn stage(&self) -> usize {
        match self {
            Block::Plain(b) => b.stage,
            Block::Residual(b) => b.stage,
        }
    }

    /// Convolutions in forward order.
    pub fn convs(&self) -> Vec<&ConvLayer> {
        match self {
            Block::Plain(b) => vec![&b.conv],
            Block::Residual(b) => vec![&b.conv1, &b.conv2],
        }
    }
}

/// Feed-forward model: conv/residual blocks, global average pool, dense head.
#[derive(Debug, Clone)]
pub struct Model {
    pub preset: String,
    pub input_shape: [usize; 3],
    pub classes: usize,
    /// Total stage count for per-stage pruning ratios (stem and classifier
    /// stages included).
    pub stage_count: usize,
    pub blocks: Vec<Block>,
    pub classifier: DenseLayer,
}

/// Per-parameter gradients in canonical parameter order (the order
/// [`Model::visit_params`] yields).
#[derive(Debug, Clone)]
pub struct Gradients {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|s| s.as_str()).zip(self.tensors.iter())
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &mut self.tensors[i])
    }
}

enum BlockCache {
    Plain {
        input: Tensor,
        conv_out: Option<Tensor>, // kept only when bn present
        bn: Option<BnCache>,
        out: Tensor,
    },
    Residual {
        input: Tensor,
        c1_out: Tensor,
        bn1: BnCache,
        r1_out: Tensor,
        c2_out: Tensor,
        bn2: BnCache,
        out: Tensor,
    },
}

struct ForwardCache {
    blocks: Vec<BlockCache>,
    gap_input_hw: (usize, usize),
    features: Tensor, // pooled [B, C], classifier input
}

enum BlockGrads {
    Plain {
        conv: ConvGrads,
        bn: Option<BnGrads>,
    },
    Residual {
        conv1: ConvGrads,
        bn1: BnGrads,
        conv2: ConvGrads,
        bn2: BnGrads,
    },
}

impl Model {
    /// Check channel chaining, residual identity compatibility, and
    /// batch-norm widths.
    pub fn validate(&self) -> Result<()> {
        let mut channels = self.input_shape[0];
        for block in &self.blocks {
            match block {
                Block::Plain(b) => {
                    check_chain(channels, &b.conv)?;
                    if let Some(bn) = &b.bn {
                        check_bn(&b.conv, bn)?;
                    }
                    channels = b.conv.out_channels();
                }
                Block::Residual(b) => {
                    check_chain(channels, &b.conv1)?;
                    check_chain(b.conv1.out_channels(), &b.conv2)?;
                    check_bn(&b.conv1, &b.bn1)?;
                    check_bn(&b.conv2, &b.bn2)?;
                    if b.conv2.out_channels() != channels {
                        return Err(Error::Structure {
                            producer: b.conv2.name().to_string(),
                            consumer: format!("{}.identity", b.conv1.name()),
                            detail: format!(
                                "residual add needs {} channels, conv produces {}",
                                channels,
                                b.conv2.out_channels()
                            ),
                        });
                    }
                    for conv in [&b.conv1, &b.conv2] {
                        if conv.stride() != 1 || 2 * conv.padding() + 1 != conv.kernel() {
                            return Err(Error::Structure {
                                producer: conv.name().to_string(),
                                consumer: "identity add".to_string(),
                                detail: "residual convs must preserve spatial dims".to_string(),
                            });
                        }
                    }
                }
            }
        }
        if self.classifier.in_features() != channels {
            return Err(Error::Structure {
                producer: "global average pool".to_string(),
                consumer: self.classifier.name().to_string(),
                detail: format!(
                    "classifier expects {} features, pool yields {}",
                    self.classifier.in_features(),
                    channels
                ),
            });
        }
        Ok(())
    }

    /// Batched forward pass to logits `[B, classes]`.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(self.forward_cached(batch, mode)?.0)
    }

    fn forward_cached(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let keep = mode == Mode::Train;
        let mut caches = Vec::with_capacity(if keep { self.blocks.len() } else { 0 });
        let mut x = batch.clone();
        for block in &self.blocks {
            match block {
                Block::Plain(b) => {
                    let conv_out = b.conv.forward_batch(&x)?;
                    let (bn_out, bn_cache) = match (&b.bn, mode) {
                        (Some(bn), Mode::Train) => {
                            let (y, c) = bn.forward_train(&conv_out);
                            (y, Some(c))
                        }
                        (Some(bn), Mode::Eval) => (bn.forward_eval(&conv_out), None),
                        (None, _) => (conv_out.clone(), None),
                    };
                    let out = if b.relu { relu(&bn_out) } else { bn_out };
                    if keep {
                        caches.push(BlockCache::Plain {
                            input: x,
                            conv_out: b.bn.as_ref().map(|_| conv_out),
                            bn: bn_cache,
                            out: out.clone(),
                        });
                    }
                    x = out;
                }
                Block::Residual(b) => {
                    let c1_out = b.conv1.forward_batch(&x)?;
                    let (bn1_out, bn1_cache) = bn_fwd(&b.bn1, &c1_out, mode);
                    let r1_out = relu(&bn1_out);
                    let c2_out = b.conv2.forward_batch(&r1_out)?;
                    let (bn2_out, bn2_cache) = bn_fwd(&b.bn2, &c2_out, mode);
                    if bn2_out.shape() != x.shape() {
                        return Err(Error::Structure {
                            producer: b.conv2.name().to_string(),
                            consumer: format!("{}.identity", b.conv1.name()),
                            detail: format!(
                                "residual add shapes {:?} vs {:?}",
                                bn2_out.shape(),
                                x.shape()
                            ),
                        });
                    }
                    let mut pre = bn2_out;
                    pre.add_assign(&x);
                    let out = relu(&pre);
                    if keep {
                        caches.push(BlockCache::Residual {
                            input: x,
                            c1_out,
                            bn1: bn1_cache.expect("train mode"),
                            r1_out,
                            c2_out,
                            bn2: bn2_cache.expect("train mode"),
                            out: out.clone(),
                        });
                    }
                    x = out;
                }
            }
        }
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let features = global_avg_pool(&x);
        let logits = self.classifier.forward_batch(&features)?;
        Ok((
            logits,
            ForwardCache {
                blocks: caches,
                gap_input_hw: (h, w),
                features,
            },
        ))
    }

    /// Forward (train mode), softmax cross-entropy against `labels`, and full
    /// backward pass. Updates batch-norm running statistics.
    pub fn backward(&mut self, batch: &Tensor, labels: &[usize]) -> Result<(Scalar, Gradients)> {
        let (logits, cache) = self.forward_cached(batch, Mode::Train)?;
        if !logits.all_finite() {
            let layer = self
                .first_nonfinite_layer(batch)
                .unwrap_or_else(|| "logits".to_string());
            return Err(Error::Numeric {
                context: layer,
                detail: "non-finite activation during forward pass".to_string(),
            });
        }
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels, self.classes)?;
        if !loss.is_finite() {
            return Err(Error::Numeric {
                context: self.classifier.name().to_string(),
                detail: format!("non-finite loss {loss}"),
            });
        }

        let (mut dfeat, dense_grads) = self.classifier.backward_batch(&cache.features, &dlogits);
        let (h, w) = cache.gap_input_hw;
        let mut dx = global_avg_pool_backward(&mut dfeat, h, w);

        let mut block_grads: Vec<Option<BlockGrads>> = (0..self.blocks.len()).map(|_| None).collect();
        for (idx, block) in self.blocks.iter().enumerate().rev() {
            let bc = &cache.blocks[idx];
            match (block, bc) {
                (
                    Block::Plain(b),
                    BlockCache::Plain {
                        input,
                        conv_out,
                        bn,
                        out,
                    },
                ) => {
                    let mut d = dx;
                    if b.relu {
                        apply_relu_mask(&mut d, out);
                    }
                    let (d_conv_out, bn_grads) = match (&b.bn, bn, conv_out) {
                        (Some(bn_layer), Some(bn_cache), Some(c_out)) => {
                            let (dz, g) = bn_layer.backward(c_out, bn_cache, &d);
                            (dz, Some(g))
                        }
                        _ => (d, None),
                    };
                    let (d_in, conv_grads) = b.conv.backward_batch(input, &d_conv_out)?;
                    block_grads[idx] = Some(BlockGrads::Plain {
                        conv: conv_grads,
                        bn: bn_grads,
                    });
                    dx = d_in;
                }
                (
                    Block::Residual(b),
                    BlockCache::Residual {
                        input,
                        c1_out,
                        bn1,
                        r1_out,
                        c2_out,
                        bn2,
                        out,
                    },
                ) => {
                    let mut d = dx;
                    apply_relu_mask(&mut d, out);
                    let d_identity = d.clone();
                    let (d_c2, bn2_grads) = b.bn2.backward(c2_out, bn2, &d);
                    let (mut d_r1, conv2_grads) = b.conv2.backward_batch(r1_out, &d_c2)?;
                    apply_relu_mask(&mut d_r1, r1_out);
                    let (d_c1, bn1_grads) = b.bn1.backward(c1_out, bn1, &d_r1);
                    let (mut d_in, conv1_grads) = b.conv1.backward_batch(input, &d_c1)?;
                    d_in.add_assign(&d_identity);
                    block_grads[idx] = Some(BlockGrads::Residual {
                        conv1: conv1_grads,
                        bn1: bn1_grads,
                        conv2: conv2_grads,
                        bn2: bn2_grads,
                    });
                    dx = d_in;
                }
                _ => unreachable!("cache kind matches block kind"),
            }
        }

        // Commit batch-norm running statistics now that the step is real.
        for (block, bc) in self.blocks.iter_mut().zip(cache.blocks.iter()) {
            match (block, bc) {
                (Block::Plain(b), BlockCache::Plain { bn: Some(c), .. }) => {
                    if let Some(bn) = &mut b.bn {
                        bn.update_running(c);
                    }
                }
                (Block::Residual(b), BlockCache::Residual { bn1, bn2, .. }) => {
                    b.bn1.update_running(bn1);
                    b.bn2.update_running(bn2);
                }
                _ => {}
            }
        }

        Ok((loss, self.assemble_gradients(block_grads, dense_grads)))
    }

    fn assemble_gradients(
        &self,
        block_grads: Vec<Option<BlockGrads>>,
        dense: DenseGrads,
    ) -> Gradients {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        let push_conv = |names: &mut Vec<String>, tensors: &mut Vec<Tensor>, conv: &ConvLayer, g: ConvGrads| {
            names.push(format!("{}.weight", conv.name()));
            tensors.push(g.weights);
            if let Some(b) = g.bias {
                names.push(format!("{}.bias", conv.name()));
                tensors.push(b);
            }
        };
        let push_bn = |names: &mut Vec<String>, tensors: &mut Vec<Tensor>, bn: &BatchNormLayer, g: BnGrads| {
            names.push(format!("{}.scale", bn.name()));
            tensors.push(g.scale);
            names.push(format!("{}.shift", bn.name()));
            tensors.push(g.shift);
        };
        for (block, grads) in self.blocks.iter().zip(block_grads) {
            match (block, grads.expect("every block visited")) {
                (Block::Plain(b), BlockGrads::Plain { conv, bn }) => {
                    push_conv(&mut names, &mut tensors, &b.conv, conv);
                    if let (Some(layer), Some(g)) = (&b.bn, bn) {
                        push_bn(&mut names, &mut tensors, layer, g);
                    }
                }
                (
                    Block::Residual(b),
                    BlockGrads::Residual {
                        conv1,
                        bn1,
                        conv2,
                        bn2,
                    },
                ) => {
                    push_conv(&mut names, &mut tensors, &b.conv1, conv1);
                    push_bn(&mut names, &mut tensors, &b.bn1, bn1);
                    push_conv(&mut names, &mut tensors, &b.conv2, conv2);
                    push_bn(&mut names, &mut tensors, &b.bn2, bn2);
                }
                _ => unreachable!(),
            }
        }
        names.push(format!("{}.weight", self.classifier.name()));
        tensors.push(dense.weights);
        names.push(format!("{}.bias", self.classifier.name()));
        tensors.push(dense.bias);
        Gradients { names, tensors }
    }

    /// Visit every parameter in canonical order (same order as `Gradients`).
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for block in &self.blocks {
            match block {
                Block::Plain(b) => {
                    visit_conv(&b.conv, f);
                    if let Some(bn) = &b.bn {
                        visit_bn(bn, f);
                    }
                }
                Block::Residual(b) => {
                    visit_conv(&b.conv1, f);
                    visit_bn(&b.bn1, f);
                    visit_conv(&b.conv2, f);
                    visit_bn(&b.bn2, f);
                }
            }
        }
        f(
            &format!("{}.weight", self.classifier.name()),
            self.classifier.weights(),
        );
        f(
            &format!("{}.bias", self.classifier.name()),
            self.classifier.bias(),
        );
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let classifier_name = self.classifier.name().to_string();
        for block in &mut self.blocks {
            match block {
                Block::Plain(b) => {
                    visit_conv_mut(&mut b.conv, f);
                    if let Some(bn) = &mut b.bn {
                        visit_bn_mut(bn, f);
                    }
                }
                Block::Residual(b) => {
                    visit_conv_mut(&mut b.conv1, f);
                    visit_bn_mut(&mut b.bn1, f);
                    visit_conv_mut(&mut b.conv2, f);
                    visit_bn_mut(&mut b.bn2, f);
                }
            }
        }
        f(
            &format!("{classifier_name}.weight"),
            self.classifier.weights_mut(),
        );
        f(
            &format!("{classifier_name}.bias"),
            self.classifier.bias_mut(),
        );
    }

    /// Total scalar parameter count (weights, biases, batch-norm affine).
    pub fn param_scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    /// Flattened parameter accessors for numeric oracles.
    pub fn get_flat_param(&self, index: usize) -> Scalar {
        let mut seen = 0;
        let mut value = None;
        self.visit_params(&mut |_, t| {
            if value.is_none() && index < seen + t.len() {
                value = Some(t.data()[index - seen]);
            }
            seen += t.len();
        });
        value.expect("parameter index in range")
    }

    pub fn set_flat_param(&mut self, index: usize, v: Scalar) {
        let mut seen = 0;
        let mut done = false;
        self.visit_params_mut(&mut |_, t| {
            if !done && index < seen + t.len() {
                t.data_mut()[index - seen] = v;
                done = true;
            }
            seen += t.len();
        });
        assert!(done, "parameter index in range");
    }

    /// Names of prunable conv layers in forward order.
    pub fn prunable_conv_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for block in &self.blocks {
            for conv in block.convs() {
                if conv.prunable() {
                    names.push(conv.name().to_string());
                }
            }
        }
        names
    }

    /// Eval-mode top-1 accuracy over a full image tensor.
    pub fn accuracy(&self, images: &Tensor, labels: &[usize], batch_size: usize) -> Result<Scalar> {
        let n = images.shape()[0];
        assert_eq!(n, labels.len());
        let sample = images.len() / n;
        let mut correct = 0usize;
        let mut start = 0usize;
        while start < n {
            let end = (start + batch_size).min(n);
            let chunk = Tensor::from_vec(
                {
                    let mut s = images.shape().to_vec();
                    s[0] = end - start;
                    s
                },
                images.data()[start * sample..end * sample].to_vec(),
            );
            let logits = self.forward(&chunk, Mode::Eval)?;
            for (bi, &label) in labels[start..end].iter().enumerate() {
                if argmax(&logits.data()[bi * self.classes..(bi + 1) * self.classes]) == label {
                    correct += 1;
                }
            }
            start = end;
        }
        Ok(correct as Scalar / n as Scalar)
    }

    /// Walk the forward pass layer by layer and name the first layer whose
    /// output contains a non-finite value. Diagnostic path only.
    fn first_nonfinite_layer(&self, batch: &Tensor) -> Option<String> {
        if !batch.all_finite() {
            return Some("input batch".to_string());
        }
        let mut x = batch.clone();
        for block in &self.blocks {
            match block {
                Block::Plain(b) => {
                    let y = b.conv.forward_batch(&x).ok()?;
                    if !y.all_finite() {
                        return Some(b.conv.name().to_string());
                    }
                    let y = match &b.bn {
                        Some(bn) => {
                            let (z, _) = bn.forward_train(&y);
                            if !z.all_finite() {
                                return Some(bn.name().to_string());
                            }
                            z
                        }
                        None => y,
                    };
                    x = if b.relu { relu(&y) } else { y };
                }
                Block::Residual(b) => {
                    let y = b.conv1.forward_batch(&x).ok()?;
                    if !y.all_finite() {
                        return Some(b.conv1.name().to_string());
                    }
                    let (y, _) = b.bn1.forward_train(&y);
                    if !y.all_finite() {
                        return Some(b.bn1.name().to_string());
                    }
                    let y2 = b.conv2.forward_batch(&relu(&y)).ok()?;
                    if !y2.all_finite() {
                        return Some(b.conv2.name().to_string());
                    }
                    let (mut y2, _) = b.bn2.forward_train(&y2);
                    if !y2.all_finite() {
                        return Some(b.bn2.name().to_string());
                    }
                    y2.add_assign(&x);
                    x = relu(&y2);
                }
            }
        }
        let pooled = global_avg_pool(&x);
        let logits = self.classifier.forward_batch(&pooled).ok()?;
        if !logits.all_finite() {
            return Some(self.classifier.name().to_string());
        }
        None
    }
}

fn visit_conv(conv: &ConvLayer, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{}.weight", conv.name()), conv.weights());
    if let Some(b) = conv.bias() {
        f(&format!("{}.bias", conv.name()), b);
    }
}

fn visit_conv_mut(conv: &mut ConvLayer, f: &mut dyn FnMut(&str, &mut Tensor)) {
    let name = conv.name().to_string();
    f(&format!("{name}.weight"), conv.weights_mut());
    if let Some(b) = conv.bias_mut() {
        f(&format!("{name}.bias"), b);
    }
}

fn visit_bn(bn: &BatchNormLayer, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{}.scale", bn.name()), bn.scale());
    f(&format!("{}.shift", bn.name()), bn.shift());
}

fn visit_bn_mut(bn: &mut BatchNormLayer, f: &mut dyn FnMut(&str, &mut Tensor)) {
    let name = bn.name().to_string();
    f(&format!("{name}.scale"), bn.scale_mut());
    f(&format!("{name}.shift"), bn.shift_mut());
}

fn bn_fwd(bn: &BatchNormLayer, x: &Tensor, mode: Mode) -> (Tensor, Option<BnCache>) {
    match mode {
        Mode::Train => {
            let (y, c) = bn.forward_train(x);
            (y, Some(c))
        }
        Mode::Eval => (bn.forward_eval(x), None),
    }
}

fn relu(x: &Tensor) -> Tensor {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    y
}

/// Zero the gradient wherever the forward output was zero (ReLU inactive).
fn apply_relu_mask(d: &mut Tensor, out: &Tensor) {
    for (g, &o) in d.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// `[B,C,H,W] -> [B,C]` spatial mean.
pub fn global_avg_pool(x: &Tensor) -> Tensor {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let hw = (h * w) as Scalar;
    let mut y = vec![0.0; b * c];
    for bi in 0..b {
        for ci in 0..c {
            let base = (bi * c + ci) * h * w;
            y[bi * c + ci] = x.data()[base..base + h * w].iter().sum::<Scalar>() / hw;
        }
    }
    Tensor::from_vec(vec![b, c], y)
}

fn global_avg_pool_backward(dfeat: &mut Tensor, h: usize, w: usize) -> Tensor {
    let (b, c) = (dfeat.shape()[0], dfeat.shape()[1]);
    let hw = (h * w) as Scalar;
    let mut dx = vec![0.0; b * c * h * w];
    for bi in 0..b {
        for ci in 0..c {
            let g = dfeat.data()[bi * c + ci] / hw;
            let base = (bi * c + ci) * h * w;
            dx[base..base + h * w].fill(g);
        }
    }
    Tensor::from_vec(vec![b, c, h, w], dx)
}

/// Mean softmax cross-entropy and its logits gradient.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
    classes: usize,
) -> Result<(Scalar, Tensor)> {
    let b = logits.shape()[0];
    assert_eq!(logits.shape(), &[b, classes]);
    assert_eq!(labels.len(), b);
    for &y in labels {
        if y >= classes {
            return Err(Error::Config(format!(
                "label {y} out of range for {classes} classes"
            )));
        }
    }
    let mut loss = 0.0;
    let mut dlogits = vec![0.0; b * classes];
    let inv_b = 1.0 / b as Scalar;
    for bi in 0..b {
        let row = &logits.data()[bi * classes..(bi + 1) * classes];
        let max = row.iter().cloned().fold(Scalar::NEG_INFINITY, Scalar::max);
        let mut denom = 0.0;
        for &v in row {
            denom += (v - max).exp();
        }
        let lse = max + denom.ln();
        loss += lse - row[labels[bi]];
        let drow = &mut dlogits[bi * classes..(bi + 1) * classes];
        for (ci, &v) in row.iter().enumerate() {
            drow[ci] = ((v - lse).exp() - if ci == labels[bi] { 1.0 } else { 0.0 }) * inv_b;
        }
    }
    Ok((loss * inv_b, Tensor::from_vec(vec![b, classes], dlogits)))
}

fn argmax(row: &[Scalar]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_chain(channels: usize, conv: &ConvLayer) -> Result<()> {
    if conv.in_channels() != channels {
        return Err(Error::Structure {
            producer: "previous layer".to_string(),
            consumer: conv.name().to_string(),
            detail: format!(
                "expects {} input channels, gets {channels}",
                conv.in_channels()
            ),
        });
    }
    Ok(())
}

fn check_bn(conv: &ConvLayer, bn: &BatchNormLayer) -> Result<()> {
    if bn.channels() != conv.out_channels() {
        return Err(Error::Structure {
            producer: conv.name().to_string(),
            consumer: bn.name().to_string(),
            detail: format!(
                "batch norm has {} channels, conv produces {}",
                bn.channels(),
                conv.out_channels()
            ),
        });
    }
    Ok(())
}
