//! Charge-based force regularization over convolution filters.
//!
//! Each filter of a prunable conv layer carries a signed charge: the sign of
//! the sum of its weight signs times its L1 magnitude. The largest-magnitude
//! filter acts as the layer's source. Every other charged filter feels a
//! force `k_e * |q_source| * |q_n| / r^2` where `r` is the charge-space
//! distance `|q_source - q_n|`. Like-signed filters sit close to the source
//! and are pushed hard toward zero; unlike-signed filters sit far away and
//! keep their weights. The force sum regularizes the training objective and
//! its closed-form gradient is `alpha_e * k_e * |q_source| / r^2 * sign(w)`
//! per weight, with the source and neutral filters exempt.

use crate::nn::{ConvLayer, Model};
use crate::tensor::{Scalar, Tensor};

/// Default Coulomb constant, matching the physical value in N·m²/C².
pub const COULOMB_CONSTANT: Scalar = 8.99e9;

/// Signed charge of one filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterCharge {
    /// Sign of the sum of elementwise weight signs: -1, 0, or +1.
    pub sign: i8,
    /// L1 norm of the filter weights.
    pub magnitude: Scalar,
    /// `sign * magnitude`.
    pub charge: Scalar,
}

/// Per-layer force field snapshot: source filter, distances, and force
/// magnitudes for every filter.
#[derive(Debug, Clone)]
pub struct LayerForceField {
    pub source_index: usize,
    pub source_charge: Scalar,
    pub charges: Vec<FilterCharge>,
    /// Raw charge-space distances (unclamped).
    pub distances: Vec<Scalar>,
    /// Force magnitudes; zero for the source and neutral filters.
    pub forces: Vec<Scalar>,
    pub coulomb_constant: Scalar,
    /// Optimization step (or epoch) at which this field was computed.
    pub timestamp: u64,
}

/// L1 magnitude of a filter slab.
pub fn filter_magnitude(weights: &[Scalar]) -> Scalar {
    weights.iter().map(|w| w.abs()).sum()
}

/// Sign of the sum of elementwise signs; exact zeros contribute nothing.
pub fn filter_sign(weights: &[Scalar]) -> i8 {
    let total: i64 = weights.iter().map(|w| sign_of(*w) as i64).sum();
    match total.cmp(&0) {
        std::cmp::Ordering::Greater => 1,
        std::cmp::Ordering::Less => -1,
        std::cmp::Ordering::Equal => 0,
    }
}

fn sign_of(w: Scalar) -> i8 {
    if w > 0.0 {
        1
    } else if w < 0.0 {
        -1
    } else {
        0
    }
}

/// Full charge of a filter: sign, L1 magnitude, and their product.
pub fn charge(weights: &[Scalar]) -> FilterCharge {
    let sign = filter_sign(weights);
    let magnitude = filter_magnitude(weights);
    FilterCharge {
        sign,
        magnitude,
        charge: sign as Scalar * magnitude,
    }
}

/// Index of the largest-magnitude filter; ties go to the lowest index.
pub fn select_source(charges: &[FilterCharge]) -> usize {
    assert!(!charges.is_empty(), "layer has no filters");
    let mut best = 0;
    for (i, c) in charges.iter().enumerate().skip(1) {
        if c.magnitude > charges[best].magnitude {
            best = i;
        }
    }
    best
}

/// Charge-space distance between two signed charges.
pub fn distance(q_source: Scalar, q_n: Scalar) -> Scalar {
    (q_source - q_n).abs()
}

/// Distance floor guarding the `r -> 0` singularity when a filter's charge
/// equals the source's. Scale-aware: proportional to the source magnitude.
pub fn min_distance(source_magnitude: Scalar) -> Scalar {
    1e-3 * source_magnitude.max(1.0)
}

/// Force magnitude on filter `n`. Zero for the source itself and for
/// neutral filters; otherwise `k_e * |q_source| * |q_n| / max(r, r_min)^2`.
pub fn force(
    q_source: &FilterCharge,
    q_n: &FilterCharge,
    n: usize,
    source_index: usize,
    k_e: Scalar,
) -> Scalar {
    assert!(k_e > 0.0, "coulomb constant must be positive");
    if n == source_index || q_n.sign == 0 {
        return 0.0;
    }
    let r = distance(q_source.charge, q_n.charge).max(min_distance(q_source.magnitude));
    k_e * q_source.magnitude * q_n.magnitude / (r * r)
}

/// Compute the full field for one conv layer.
pub fn layer_force_field(layer: &ConvLayer, k_e: Scalar, timestamp: u64) -> LayerForceField {
    let n = layer.out_channels();
    let charges: Vec<FilterCharge> = (0..n).map(|i| charge(layer.filter(i))).collect();
    let source_index = select_source(&charges);
    let source = charges[source_index];
    let distances: Vec<Scalar> = charges
        .iter()
        .map(|c| distance(source.charge, c.charge))
        .collect();
    let forces: Vec<Scalar> = charges
        .iter()
        .enumerate()
        .map(|(i, c)| force(&source, c, i, source_index, k_e))
        .collect();
    LayerForceField {
        source_index,
        source_charge: source.charge,
        charges,
        distances,
        forces,
        coulomb_constant: k_e,
        timestamp,
    }
}

impl LayerForceField {
    /// Sum of force magnitudes in this layer.
    pub fn force_sum(&self) -> Scalar {
        self.forces.iter().sum()
    }
}

/// Regularization penalty for a whole model: the sum of force magnitudes
/// across all prunable conv layers.
pub fn penalty(model: &Model, k_e: Scalar) -> Scalar {
    let mut total = 0.0;
    for block in &model.blocks {
        for conv in block.convs() {
            if conv.prunable() {
                total += layer_force_field(conv, k_e, 0).force_sum();
            }
        }
    }
    total
}

/// Closed-form penalty gradient for one layer under a frozen field.
///
/// For each weight `w` of a non-source, non-neutral filter `n`:
/// `alpha_e * k_e * |q_source| / max(r_n, r_min)^2 * sign(w)`.
/// `|q_source|` and `r_n` come from the field (treated as constants); the
/// weight sign is taken from the current weights.
pub fn penalty_gradient(
    layer: &ConvLayer,
    field: &LayerForceField,
    alpha_e: Scalar,
    k_e: Scalar,
) -> Tensor {
    let n = layer.out_channels();
    assert_eq!(field.charges.len(), n, "field does not match layer");
    let ckk = layer.in_channels() * layer.kernel() * layer.kernel();
    let source_mag = field.charges[field.source_index].magnitude;
    let r_min = min_distance(source_mag);
    let mut grad = vec![0.0; n * ckk];
    for ni in 0..n {
        if ni == field.source_index || field.charges[ni].sign == 0 {
            continue;
        }
        let r = field.distances[ni].max(r_min);
        let coeff = alpha_e * k_e * source_mag / (r * r);
        let w_n = layer.filter(ni);
        let g_n = &mut grad[ni * ckk..(ni + 1) * ckk];
        for (g, &w) in g_n.iter_mut().zip(w_n) {
            *g = coeff * sign_of(w) as Scalar;
        }
    }
    Tensor::from_vec(layer.weights().shape().to_vec(), grad)
}
