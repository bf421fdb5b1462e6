//! Minimal dense-tensor neural-network engine: layers, forward/backward,
//! loss, SGD, and complexity accounting.

pub mod batchnorm;
pub mod complexity;
pub mod conv;
pub mod dense;
pub mod model;
pub mod sgd;

pub use batchnorm::BatchNormLayer;
pub use complexity::{count_flops, count_params};
pub use conv::ConvLayer;
pub use dense::DenseLayer;
pub use model::{global_avg_pool, softmax_cross_entropy, Block, ConvBlock, Gradients, Mode, Model, ResidualBlock};
pub use sgd::Sgd;
