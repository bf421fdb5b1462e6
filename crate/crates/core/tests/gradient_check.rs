//! Central finite-difference verification of the analytic backward pass,
//! per layer type.

mod common;

use common::{max_fd_rel_error, model_conv_bn, model_plain_conv, model_residual, rand_batch};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[test]
fn plain_conv_with_bias_matches_finite_differences() {
    for seed in [1, 2, 3] {
        let model = model_plain_conv(seed);
        let (x, labels) = rand_batch(&model, 4, 90 + seed);
        let worst = max_fd_rel_error(&model, &x, &labels, H);
        assert!(worst < TOL, "seed {seed}: worst rel error {worst}");
    }
}

#[test]
fn conv_batchnorm_matches_finite_differences() {
    for seed in [4, 5, 6] {
        let model = model_conv_bn(seed);
        let (x, labels) = rand_batch(&model, 4, 90 + seed);
        let worst = max_fd_rel_error(&model, &x, &labels, H);
        assert!(worst < TOL, "seed {seed}: worst rel error {worst}");
    }
}

#[test]
fn residual_block_matches_finite_differences() {
    for seed in [7, 8, 9] {
        let model = model_residual(seed);
        let (x, labels) = rand_batch(&model, 4, 90 + seed);
        let worst = max_fd_rel_error(&model, &x, &labels, H);
        assert!(worst < TOL, "seed {seed}: worst rel error {worst}");
    }
}
