//! Shared helpers for the integration suites: seeded model builders and the
//! central finite-difference oracle.

#![allow(dead_code)]

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use electroprune::nn::{
    softmax_cross_entropy, BatchNormLayer, Block, ConvBlock, ConvLayer, DenseLayer, Mode, Model,
    ResidualBlock,
};
use electroprune::{Scalar, Tensor};

pub fn rand_tensor(shape: Vec<usize>, scale: Scalar, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(shape, data)
}

pub fn conv(
    name: &str,
    n: usize,
    c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    bias: bool,
    prunable: bool,
    rng: &mut ChaCha8Rng,
) -> ConvLayer {
    let scale = (6.0 / (c * k * k) as Scalar).sqrt();
    ConvLayer::new(
        name,
        rand_tensor(vec![n, c, k, k], scale, rng),
        bias.then(|| rand_tensor(vec![n], 0.1, rng)),
        stride,
        padding,
        prunable,
    )
}

pub fn dense(name: &str, out: usize, inp: usize, rng: &mut ChaCha8Rng) -> DenseLayer {
    let scale = (6.0 / inp as Scalar).sqrt();
    DenseLayer::new(
        name,
        rand_tensor(vec![out, inp], scale, rng),
        rand_tensor(vec![out], 0.1, rng),
    )
}

/// Randomized batch-norm parameters so gradient checks exercise non-default
/// scale/shift.
pub fn perturbed_bn(name: &str, channels: usize, rng: &mut ChaCha8Rng) -> BatchNormLayer {
    let scale = Tensor::from_vec(
        vec![channels],
        (0..channels).map(|_| rng.random_range(0.5..1.5)).collect(),
    );
    let shift = rand_tensor(vec![channels], 0.2, rng);
    BatchNormLayer::from_parts(
        name,
        scale,
        shift,
        Tensor::zeros(vec![channels]),
        Tensor::full(vec![channels], 1.0),
        1e-5,
    )
}

/// Two plain conv blocks (bias, no batch norm) into the classifier head.
pub fn model_plain_conv(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = vec![
        Block::Plain(ConvBlock {
            conv: conv("conv0", 3, 1, 3, 1, 1, true, false, &mut rng),
            bn: None,
            relu: true,
            stage: 0,
        }),
        Block::Plain(ConvBlock {
            conv: conv("conv1", 4, 3, 3, 2, 1, true, true, &mut rng),
            bn: None,
            relu: true,
            stage: 1,
        }),
    ];
    Model {
        preset: "test-plain".to_string(),
        input_shape: [1, 6, 6],
        classes: 3,
        stage_count: 3,
        blocks,
        classifier: dense("fc", 3, 4, &mut rng),
    }
}

/// Two conv+bn+relu blocks into the classifier head.
pub fn model_conv_bn(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = vec![
        Block::Plain(ConvBlock {
            conv: conv("conv0", 3, 1, 3, 1, 1, false, false, &mut rng),
            bn: Some(perturbed_bn("conv0.bn", 3, &mut rng)),
            relu: true,
            stage: 0,
        }),
        Block::Plain(ConvBlock {
            conv: conv("conv1", 4, 3, 3, 2, 1, false, true, &mut rng),
            bn: Some(perturbed_bn("conv1.bn", 4, &mut rng)),
            relu: true,
            stage: 1,
        }),
    ];
    Model {
        preset: "test-bn".to_string(),
        input_shape: [1, 6, 6],
        classes: 3,
        stage_count: 3,
        blocks,
        classifier: dense("fc", 3, 4, &mut rng),
    }
}

/// Stem conv+bn plus one residual basic block.
pub fn model_residual(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = vec![
        Block::Plain(ConvBlock {
            conv: conv("conv0", 4, 1, 3, 2, 1, false, false, &mut rng),
            bn: Some(perturbed_bn("conv0.bn", 4, &mut rng)),
            relu: true,
            stage: 0,
        }),
        Block::Residual(ResidualBlock {
            conv1: conv("block1.conv1", 4, 4, 3, 1, 1, false, true, &mut rng),
            bn1: perturbed_bn("block1.bn1", 4, &mut rng),
            conv2: conv("block1.conv2", 4, 4, 3, 1, 1, false, false, &mut rng),
            bn2: perturbed_bn("block1.bn2", 4, &mut rng),
            stage: 1,
        }),
    ];
    Model {
        preset: "test-residual".to_string(),
        input_shape: [1, 6, 6],
        classes: 3,
        stage_count: 3,
        blocks,
        classifier: dense("fc", 3, 4, &mut rng),
    }
}

pub fn rand_batch(model: &Model, b: usize, seed: u64) -> (Tensor, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [c, h, w] = model.input_shape;
    let x = rand_tensor(vec![b, c, h, w], 1.0, &mut rng);
    let labels = (0..b).map(|_| rng.random_range(0..model.classes)).collect();
    (x, labels)
}

/// Train-mode loss of the model on a fixed batch; the function the finite
/// differences probe.
pub fn train_loss(model: &Model, x: &Tensor, labels: &[usize]) -> Scalar {
    let logits = model.forward(x, Mode::Train).expect("forward");
    let (loss, _) = softmax_cross_entropy(&logits, labels, model.classes).expect("loss");
    loss
}

/// Worst relative error between a trainer step (momentum 0) and the
/// closed-form reconstruction `w - lr*(g_data + penalty_grad)` on a fixed
/// single-batch dataset.
pub fn replay_max_rel_error(alpha_e: Scalar, seed: u64) -> Scalar {
    use electroprune::data::synthetic_splits;
    use electroprune::nn::Sgd;
    use electroprune::presets::{build_preset, PresetOptions};
    use electroprune::trainer::{
        compute_fields, prunable_convs, train, LrPolicy, Regularizer, TrainConfig,
    };

    let batch_len = 16;
    let data = synthetic_splits(4, batch_len, 8, [1, 8, 8], seed.wrapping_add(1000));
    let model0 = build_preset(
        "mnist-cnn",
        &PresetOptions {
            width: 4,
            ..PresetOptions::new(4, [1, 8, 8], seed)
        },
    )
    .unwrap();

    let mut config = TrainConfig::new(LrPolicy::constant(0.05).unwrap());
    config.epochs = 1;
    config.batch_size = batch_len;
    config.momentum = 0.0;
    config.seed = seed;
    config.regularizer = Regularizer::Electrostatic;
    config.alpha_e = alpha_e;
    let lr = config.lr_policy.lr_at(0);

    let (batch, labels) = data.train.gather(&(0..batch_len).collect::<Vec<_>>());
    let mut grad_model = model0.clone();
    let (_, mut grads) = grad_model.backward(&batch, &labels).unwrap();
    let fields = compute_fields(&model0, config.k_e, 0);
    for conv in prunable_convs(&model0) {
        let field = &fields.iter().find(|(n, _)| n == conv.name()).unwrap().1;
        let pg =
            electroprune::electrostatics::penalty_gradient(conv, field, alpha_e, config.k_e);
        grads
            .get_mut(&format!("{}.weight", conv.name()))
            .unwrap()
            .add_assign(&pg);
    }
    let mut expected = model0.clone();
    let mut sgd = Sgd::new(0.0, 0.0);
    sgd.step(&mut expected, &grads, lr);

    let mut observed = model0.clone();
    train(&mut observed, &data, &config).unwrap();

    let mut expected_params = Vec::new();
    expected.visit_params(&mut |_, t| expected_params.push(t.clone()));
    let mut observed_params = Vec::new();
    observed.visit_params(&mut |_, t| observed_params.push(t.clone()));
    let mut initial_params = Vec::new();
    model0.visit_params(&mut |_, t| initial_params.push(t.clone()));

    let mut worst: Scalar = 0.0;
    for ((e, o), i) in expected_params
        .iter()
        .zip(&observed_params)
        .zip(&initial_params)
    {
        for ((ev, ov), iv) in e.data().iter().zip(o.data()).zip(i.data()) {
            let (de, db) = (ev - iv, ov - iv);
            let denom = de.abs().max(db.abs());
            if denom < 1e-15 {
                continue;
            }
            worst = worst.max((de - db).abs() / denom);
        }
    }
    worst
}

/// Worst relative disagreement between analytic gradients and central
/// finite differences over every parameter of the model.
///
/// Relative error uses `|fd - g| / max(|fd|, |g|)` with an absolute guard of
/// `1e-8` for parameters whose gradient is genuinely zero (dead paths).
pub fn max_fd_rel_error(model: &Model, x: &Tensor, labels: &[usize], h: Scalar) -> Scalar {
    let mut analytic_model = model.clone();
    let (_, grads) = analytic_model.backward(x, labels).expect("backward");
    let flat: Vec<Scalar> = grads
        .tensors()
        .iter()
        .flat_map(|t| t.data().iter().copied())
        .collect();

    let mut probe = model.clone();
    let n = probe.param_scalar_count();
    assert_eq!(n, flat.len());
    let mut worst = 0.0;
    for i in 0..n {
        let orig = probe.get_flat_param(i);
        probe.set_flat_param(i, orig + h);
        let up = train_loss(&probe, x, labels);
        probe.set_flat_param(i, orig - h);
        let down = train_loss(&probe, x, labels);
        probe.set_flat_param(i, orig);
        let fd = (up - down) / (2.0 * h);
        let g = flat[i];
        let denom = fd.abs().max(g.abs());
        if denom < 1e-8 {
            continue;
        }
        let rel = (fd - g).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    worst
}
