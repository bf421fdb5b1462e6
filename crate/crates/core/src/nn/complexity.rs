//! Parameter and FLOPs accounting.
//!
//! Convention: one multiply-accumulate counts as 2 FLOPs; batch norm,
//! activations, and pooling are excluded. Speedup ratios are insensitive to
//! any convention shared between numerator and denominator.

use crate::error::Result;
use crate::nn::model::{Block, Model};

/// Total FLOPs of one forward pass over a single sample of `[C, H, W]`.
pub fn count_flops(model: &Model, input_shape: [usize; 3]) -> Result<u64> {
    let (mut h, mut w) = (input_shape[1], input_shape[2]);
    let mut total: u64 = 0;
    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                let (oh, ow) = b.conv.output_hw(h, w)?;
                total += conv_flops(&b.conv, oh, ow);
                h = oh;
                w = ow;
            }
            Block::Residual(b) => {
                // residual convs preserve spatial dims
                total += conv_flops(&b.conv1, h, w);
                total += conv_flops(&b.conv2, h, w);
            }
        }
    }
    total += 2 * (model.classifier.in_features() as u64) * (model.classifier.out_features() as u64);
    Ok(total)
}

fn conv_flops(conv: &crate::nn::conv::ConvLayer, oh: usize, ow: usize) -> u64 {
    2 * (conv.out_channels() as u64)
        * (conv.in_channels() as u64)
        * (conv.kernel() as u64).pow(2)
        * (oh as u64)
        * (ow as u64)
}

/// Total learnable scalars: conv weights and biases, batch-norm scale and
/// shift, dense weights and bias. Running statistics are buffers, not
/// parameters.
pub fn count_params(model: &Model) -> u64 {
    let mut total: u64 = 0;
    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                total += conv_params(&b.conv);
                if let Some(bn) = &b.bn {
                    total += 2 * bn.channels() as u64;
                }
            }
            Block::Residual(b) => {
                total += conv_params(&b.conv1) + 2 * b.bn1.channels() as u64;
                total += conv_params(&b.conv2) + 2 * b.bn2.channels() as u64;
            }
        }
    }
    total += (model.classifier.in_features() as u64 + 1) * model.classifier.out_features() as u64;
    total
}

fn conv_params(conv: &crate::nn::conv::ConvLayer) -> u64 {
    let w = conv.weights().len() as u64;
    w + conv.bias().map_or(0, |b| b.len() as u64)
}
