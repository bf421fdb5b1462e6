//! Desk-scale model presets: a plain three-conv net, a small residual net,
//! and a VGG-style stack. All are built with seeded Kaiming-uniform init.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{BatchNormLayer, Block, ConvBlock, ConvLayer, DenseLayer, Model, ResidualBlock};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct PresetOptions {
    pub classes: usize,
    pub input_shape: [usize; 3],
    /// Base width; preset widths scale with it.
    pub width: usize,
    /// Residual blocks per stage (toy-resnet only).
    pub blocks_per_stage: usize,
    pub seed: u64,
}

impl PresetOptions {
    pub fn new(classes: usize, input_shape: [usize; 3], seed: u64) -> Self {
        Self {
            classes,
            input_shape,
            width: 0, // 0 = preset default
            blocks_per_stage: 1,
            seed,
        }
    }
}

pub const PRESET_NAMES: [&str; 3] = ["mnist-cnn", "toy-resnet", "toy-vgg"];

/// Build a named preset. Unknown names are a configuration error.
pub fn build_preset(name: &str, opts: &PresetOptions) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = match name {
        "mnist-cnn" => mnist_cnn(opts, &mut rng),
        "toy-resnet" => toy_resnet(opts, &mut rng),
        "toy-vgg" => toy_vgg(opts, &mut rng),
        other => {
            return Err(Error::Config(format!(
                "unknown model preset `{other}` (expected one of {PRESET_NAMES:?})"
            )))
        }
    };
    model.validate()?;
    Ok(model)
}

/// Three plain conv+bias blocks (widths w, 2w, 2w), the first exempt from
/// pruning. No batch norm: filter L1 norms stay tied to channel output
/// scale, which is what the force regularizer sculpts and the pruner ranks.
fn mnist_cnn(opts: &PresetOptions, rng: &mut ChaCha8Rng) -> Model {
    let w = if opts.width == 0 { 16 } else { opts.width };
    let c_in = opts.input_shape[0];
    let widths = [w, 2 * w, 2 * w];
    let strides = [2, 2, 1];
    let mut blocks = Vec::new();
    let mut in_ch = c_in;
    for (i, (&n, &s)) in widths.iter().zip(&strides).enumerate() {
        let conv = ConvLayer::new(
            format!("conv{i}"),
            kaiming(vec![n, in_ch, 3, 3], in_ch * 9, rng),
            Some(Tensor::zeros(vec![n])),
            s,
            1,
            i != 0,
        );
        blocks.push(Block::Plain(ConvBlock {
            conv,
            bn: None,
            relu: true,
            stage: i,
        }));
        in_ch = n;
    }
    Model {
        preset: "mnist-cnn".to_string(),
        input_shape: opts.input_shape,
        classes: opts.classes,
        stage_count: widths.len() + 1,
        blocks,
        classifier: dense("fc", opts.classes, in_ch, rng),
    }
}

/// Stem conv, a residual stage at width w, a strided transition, a residual
/// stage at 2w. Only the first conv of each basic block is prunable; the
/// stem and transition define stage widths and stay intact.
fn toy_resnet(opts: &PresetOptions, rng: &mut ChaCha8Rng) -> Model {
    let w = if opts.width == 0 { 8 } else { opts.width };
    let c_in = opts.input_shape[0];
    let mut blocks = Vec::new();
    blocks.push(conv_bn_relu("conv0", w, c_in, 3, 2, 1, false, 0, rng));
    let mut idx = 1;
    for _ in 0..opts.blocks_per_stage {
        blocks.push(residual(&format!("block{idx}"), w, 1, rng));
        idx += 1;
    }
    blocks.push(conv_bn_relu(
        &format!("conv{idx}"),
        2 * w,
        w,
        3,
        2,
        1,
        false,
        2,
        rng,
    ));
    idx += 1;
    for _ in 0..opts.blocks_per_stage {
        blocks.push(residual(&format!("block{idx}"), 2 * w, 2, rng));
        idx += 1;
    }
    Model {
        preset: "toy-resnet".to_string(),
        input_shape: opts.input_shape,
        classes: opts.classes,
        stage_count: 4,
        blocks,
        classifier: dense("fc", opts.classes, 2 * w, rng),
    }
}

/// Five plain conv blocks, widths w/2w/2w/4w/4w, downsampling at 2 and 4.
fn toy_vgg(opts: &PresetOptions, rng: &mut ChaCha8Rng) -> Model {
    let w = if opts.width == 0 { 8 } else { opts.width };
    let c_in = opts.input_shape[0];
    let widths = [w, 2 * w, 2 * w, 4 * w, 4 * w];
    let strides = [1, 2, 1, 2, 1];
    let mut blocks = Vec::new();
    let mut in_ch = c_in;
    for (i, (&n, &s)) in widths.iter().zip(&strides).enumerate() {
        blocks.push(conv_bn_relu(
            &format!("conv{i}"),
            n,
            in_ch,
            3,
            s,
            1,
            i != 0,
            i,
            rng,
        ));
        in_ch = n;
    }
    Model {
        preset: "toy-vgg".to_string(),
        input_shape: opts.input_shape,
        classes: opts.classes,
        stage_count: widths.len() + 1,
        blocks,
        classifier: dense("fc", opts.classes, in_ch, rng),
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bn_relu(
    name: &str,
    n: usize,
    c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    prunable: bool,
    stage: usize,
    rng: &mut ChaCha8Rng,
) -> Block {
    let conv = ConvLayer::new(
        name,
        kaiming(vec![n, c, k, k], c * k * k, rng),
        None,
        stride,
        padding,
        prunable,
    );
    Block::Plain(ConvBlock {
        conv,
        bn: Some(BatchNormLayer::new(format!("{name}.bn"), n)),
        relu: true,
        stage,
    })
}

fn residual(name: &str, width: usize, stage: usize, rng: &mut ChaCha8Rng) -> Block {
    let fan_in = width * 9;
    let conv1 = ConvLayer::new(
        format!("{name}.conv1"),
        kaiming(vec![width, width, 3, 3], fan_in, rng),
        None,
        1,
        1,
        true,
    );
    let conv2 = ConvLayer::new(
        format!("{name}.conv2"),
        kaiming(vec![width, width, 3, 3], fan_in, rng),
        None,
        1,
        1,
        false,
    );
    Block::Residual(ResidualBlock {
        conv1,
        bn1: BatchNormLayer::new(format!("{name}.bn1"), width),
        conv2,
        bn2: BatchNormLayer::new(format!("{name}.bn2"), width),
        stage,
    })
}

fn dense(name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    DenseLayer::new(name, kaiming(vec![out, inp], inp, rng), Tensor::zeros(vec![out]))
}

fn kaiming(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as Scalar).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{count_flops, count_params, Mode};

    fn opts() -> PresetOptions {
        PresetOptions::new(10, [1, 28, 28], 7)
    }

    #[test]
    fn presets_build_and_forward() {
        for name in PRESET_NAMES {
            let model = build_preset(name, &opts()).unwrap();
            let x = Tensor::zeros(vec![2, 1, 28, 28]);
            let logits = model.forward(&x, Mode::Eval).unwrap();
            assert_eq!(logits.shape(), &[2, 10]);
            assert!(count_params(&model) > 0);
            assert!(count_flops(&model, model.input_shape).unwrap() > 0);
        }
    }

    #[test]
    fn same_seed_same_weights() {
        let a = build_preset("mnist-cnn", &opts()).unwrap();
        let b = build_preset("mnist-cnn", &opts()).unwrap();
        let mut equal = true;
        a.visit_params(&mut |name, t| {
            let mut found = false;
            b.visit_params(&mut |n2, t2| {
                if n2 == name {
                    found = true;
                    if t2.data() != t.data() {
                        equal = false;
                    }
                }
            });
            assert!(found);
        });
        assert!(equal);
    }

    #[test]
    fn mnist_cnn_widths_are_16_32_32() {
        let model = build_preset("mnist-cnn", &opts()).unwrap();
        let widths: Vec<usize> = model
            .blocks
            .iter()
            .flat_map(|b| b.convs())
            .map(|c| c.out_channels())
            .collect();
        assert_eq!(widths, vec![16, 32, 32]);
        let prunable: Vec<bool> = model
            .blocks
            .iter()
            .flat_map(|b| b.convs())
            .map(|c| c.prunable())
            .collect();
        assert_eq!(prunable, vec![false, true, true]);
    }

    #[test]
    fn toy_resnet_residual_rules() {
        let model = build_preset("toy-resnet", &opts()).unwrap();
        for block in &model.blocks {
            if let Block::Residual(b) = block {
                assert!(b.conv1.prunable());
                assert!(!b.conv2.prunable());
            }
        }
        assert_eq!(model.stage_count, 4);
    }

    #[test]
    fn unknown_preset_rejected() {
        assert!(build_preset("resnet-56", &opts()).is_err());
    }
}
