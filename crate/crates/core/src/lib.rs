//! Structured filter pruning for small convolutional networks.
//!
//! Training adds a charge-based force penalty over conv filters: each filter
//! gets a signed charge (sign of its weight signs times its L1 norm), the
//! largest-magnitude filter becomes the layer's source, and every other
//! charged filter feels a force proportional to the product of charge
//! magnitudes over the squared charge-space distance. Like-signed filters
//! are pushed toward zero weight; unlike-signed filters keep theirs. After
//! training, low-L1 filters are physically removed at per-stage or per-layer
//! ratios and the downstream channels are repaired, shrinking parameters and
//! FLOPs with little accuracy loss and no retraining between ratios.

pub mod checkpoint;
pub mod data;
pub mod electrostatics;
pub mod error;
pub mod nn;
pub mod presets;
pub mod pruner;
pub mod tensor;
pub mod trainer;

pub use error::{DataError, Error, Result};
pub use tensor::{Scalar, Tensor};
