//! Training orchestration: charge-force training, the plain and
//! L1-regularized comparison arms, fine-tuning, and cost measurement.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::DataSplits;
use crate::electrostatics::{
    self, layer_force_field, penalty_gradient, LayerForceField, COULOMB_CONSTANT,
};
use crate::error::{Error, Result};
use crate::nn::{Block, Gradients, Model, Sgd};
use crate::tensor::{Scalar, Tensor};

/// Multi-step learning-rate policy: ordered `(start_epoch, lr)` milestones.
#[derive(Debug, Clone, PartialEq)]
pub struct LrPolicy {
    name: String,
    milestones: Vec<(usize, Scalar)>,
}

impl LrPolicy {
    pub fn new(name: impl Into<String>, milestones: Vec<(usize, Scalar)>) -> Result<Self> {
        if milestones.is_empty() || milestones[0].0 != 0 {
            return Err(Error::Config(
                "lr policy needs milestones starting at epoch 0".to_string(),
            ));
        }
        if milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config(
                "lr milestones must have strictly increasing epochs".to_string(),
            ));
        }
        if milestones.iter().any(|&(_, lr)| lr <= 0.0) {
            return Err(Error::Config("lr must be positive".to_string()));
        }
        Ok(Self {
            name: name.into(),
            milestones,
        })
    }

    /// Multi-step (0: 1e-1, 100: 1e-2, 150: 1e-3), 200-epoch schedule.
    pub fn p1() -> Self {
        Self::new("p1", vec![(0, 1e-1), (100, 1e-2), (150, 1e-3)]).unwrap()
    }

    /// Multi-step (0: 1e-2, 60: 1e-3, 90: 1e-4), 120-epoch schedule.
    pub fn p2() -> Self {
        Self::new("p2", vec![(0, 1e-2), (60, 1e-3), (90, 1e-4)]).unwrap()
    }

    pub fn constant(lr: Scalar) -> Result<Self> {
        Self::new(format!("const-{lr}"), vec![(0, lr)])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn milestones(&self) -> &[(usize, Scalar)] {
        &self.milestones
    }

    /// Learning rate of the latest milestone with start <= `epoch`.
    pub fn lr_at(&self, epoch: usize) -> Scalar {
        let mut lr = self.milestones[0].1;
        for &(start, value) in &self.milestones {
            if start <= epoch {
                lr = value;
            } else {
                break;
            }
        }
        lr
    }

    /// Compress a reference schedule onto fewer epochs, scaling milestones
    /// proportionally. The name records the scaling.
    pub fn rescaled(&self, reference_epochs: usize, epochs: usize) -> Result<Self> {
        assert!(reference_epochs > 0 && epochs > 0);
        let mut milestones: Vec<(usize, Scalar)> = Vec::new();
        for &(start, lr) in &self.milestones {
            let scaled = start * epochs / reference_epochs;
            match milestones.last_mut() {
                // collapsed milestones keep the later (smaller) lr
                Some(last) if last.0 == scaled => last.1 = lr,
                _ => milestones.push((scaled, lr)),
            }
        }
        Self::new(
            format!("{}@{}of{}", self.name, epochs, reference_epochs),
            milestones,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regularizer {
    None,
    Electrostatic,
    L1,
}

impl Regularizer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regularizer::None => "none",
            Regularizer::Electrostatic => "electrostatic",
            Regularizer::L1 => "l1",
        }
    }
}

/// How often the per-layer force fields are refreshed during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecomputeSchedule {
    PerStep,
    PerEpoch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitSource {
    Random,
    Pretrained(PathBuf),
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Force rate weighting the penalty against the data loss.
    pub alpha_e: Scalar,
    /// Coulomb constant; only the product `alpha_e * k_e` matters for the
    /// dynamics.
    pub k_e: Scalar,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_policy: LrPolicy,
    pub momentum: Scalar,
    pub weight_decay: Scalar,
    pub seed: u64,
    pub regularizer: Regularizer,
    pub l1_rate: Scalar,
    pub recompute: RecomputeSchedule,
    pub init: InitSource,
}

impl TrainConfig {
    pub fn new(lr_policy: LrPolicy) -> Self {
        Self {
            alpha_e: 0.0,
            k_e: COULOMB_CONSTANT,
            epochs: 1,
            batch_size: 64,
            lr_policy,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
            regularizer: Regularizer::None,
            l1_rate: 0.0,
            recompute: RecomputeSchedule::PerStep,
            init: InitSource::Random,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha_e < 0.0 || !self.alpha_e.is_finite() {
            return Err(Error::Config("alpha_e must be >= 0".to_string()));
        }
        if self.k_e <= 0.0 {
            return Err(Error::Config("k_e must be > 0".to_string()));
        }
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".to_string()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".to_string()));
        }
        if self.l1_rate < 0.0 {
            return Err(Error::Config("l1_rate must be >= 0".to_string()));
        }
        Ok(())
    }

    /// Canonical string for checkpoint digests.
    pub fn canonical_string(&self) -> String {
        format!(
            "alpha_e={:e};k_e={:e};epochs={};batch={};policy={}:{:?};mom={};wd={:e};seed={};reg={};l1={:e};recompute={:?};init={:?}",
            self.alpha_e,
            self.k_e,
            self.epochs,
            self.batch_size,
            self.lr_policy.name(),
            self.lr_policy.milestones(),
            self.momentum,
            self.weight_decay,
            self.seed,
            self.regularizer.as_str(),
            self.l1_rate,
            self.recompute,
            self.init,
        )
    }

    /// Whether the force path is live: electrostatic with a nonzero rate.
    /// A zero rate degenerates to plain training and is treated as such so
    /// `alpha_e = 0` reproduces the baseline bit for bit.
    fn electro_active(&self) -> bool {
        self.regularizer == Regularizer::Electrostatic && self.alpha_e > 0.0
    }

    fn l1_active(&self) -> bool {
        self.regularizer == Regularizer::L1 && self.l1_rate > 0.0
    }
}

/// One metrics row per epoch.
#[derive(Debug, Clone)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: Scalar,
    pub train_loss: Scalar,
    /// Raw regularizer value measured at epoch end: total force magnitude
    /// for the electrostatic arm, total prunable L1 for the l1 arm, 0 for
    /// plain training.
    pub penalty: Scalar,
    pub test_top1: Scalar,
    pub seconds: Scalar,
}

#[derive(Debug, Clone, Default)]
pub struct MetricLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricLog {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,penalty,test_top1,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.epoch, r.lr, r.train_loss, r.penalty, r.test_top1, r.seconds
            ));
        }
        out
    }

    pub fn final_top1(&self) -> Option<Scalar> {
        self.rows.last().map(|r| r.test_top1)
    }

    pub fn final_penalty(&self) -> Option<Scalar> {
        self.rows.last().map(|r| r.penalty)
    }
}

/// Result of a training run; the model itself is updated in place.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: MetricLog,
    pub optimizer: Sgd,
}

/// Train `model` on `data.train` under `config`, evaluating on `data.test`
/// each epoch.
///
/// Per step the electrostatic arm adds the closed-form force gradient of
/// each prunable conv layer to its data gradient; the l1 arm adds
/// `l1_rate * sign(w)` on prunable conv weights; plain training applies the
/// data gradient alone.
pub fn train(model: &mut Model, data: &DataSplits, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let mut sgd = Sgd::new(config.momentum, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = MetricLog::default();
    let mut step: u64 = 0;

    for epoch in 0..config.epochs {
        let start = Instant::now();
        let lr = config.lr_policy.lr_at(epoch);
        order.shuffle(&mut rng);

        let epoch_fields = if config.electro_active()
            && config.recompute == RecomputeSchedule::PerEpoch
        {
            Some(compute_fields(model, config.k_e, step))
        } else {
            None
        };

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (batch, labels) = data.train.gather(chunk);
            let (loss, mut grads) = model.backward(&batch, &labels).map_err(|e| match e {
                Error::Numeric { context, detail } => Error::Numeric {
                    context,
                    detail: diverged_hint(detail, config),
                },
                other => other,
            })?;
            if config.electro_active() {
                let fresh;
                let fields = match &epoch_fields {
                    Some(f) => f,
                    None => {
                        fresh = compute_fields(model, config.k_e, step);
                        &fresh
                    }
                };
                add_penalty_gradients(model, fields, config.alpha_e, config.k_e, &mut grads);
            } else if config.l1_active() {
                add_l1_gradients(model, config.l1_rate, &mut grads);
            }
            sgd.step(model, &grads, lr);
            step += 1;
            loss_sum += loss;
            batches += 1;
        }

        // penalty measured on the weights the epoch produced, so the final
        // row can be re-derived from the saved checkpoint
        let penalty_value = if config.electro_active() {
            electrostatics::penalty(model, config.k_e)
        } else if config.l1_active() {
            prunable_l1(model)
        } else {
            0.0
        };
        let test_top1 = model.accuracy(&data.test.images, &data.test.labels, config.batch_size.max(64))?;
        log.rows.push(EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / batches.max(1) as Scalar,
            penalty: penalty_value,
            test_top1,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(TrainOutcome {
        log,
        optimizer: sgd,
    })
}

/// Post-pruning recovery: plain training (no regularizer). Zero epochs
/// returns the model unchanged with an empty log.
pub fn finetune(model: &mut Model, data: &DataSplits, config: &TrainConfig) -> Result<TrainOutcome> {
    if config.epochs == 0 {
        return Ok(TrainOutcome {
            log: MetricLog::default(),
            optimizer: Sgd::new(config.momentum, config.weight_decay),
        });
    }
    let mut ft = config.clone();
    ft.regularizer = Regularizer::None;
    ft.alpha_e = 0.0;
    ft.l1_rate = 0.0;
    train(model, data, &ft)
}

/// Wall-clock comparison of the three training arms under one config.
#[derive(Debug, Clone)]
pub struct MethodTiming {
    pub method: &'static str,
    pub seconds: Scalar,
    pub final_top1: Scalar,
}

/// Train fresh copies of `model` with each method and record wall-clock
/// cost. Timings are reported, never asserted against external figures.
pub fn measure_training_cost(
    model: &Model,
    data: &DataSplits,
    config: &TrainConfig,
) -> Result<Vec<MethodTiming>> {
    let arms: [(&'static str, Regularizer); 3] = [
        ("baseline", Regularizer::None),
        ("l1", Regularizer::L1),
        ("electrostatic", Regularizer::Electrostatic),
    ];
    let mut out = Vec::new();
    for (name, reg) in arms {
        let mut m = model.clone();
        let mut cfg = config.clone();
        cfg.regularizer = reg;
        let start = Instant::now();
        let outcome = train(&mut m, data, &cfg)?;
        out.push(MethodTiming {
            method: name,
            seconds: start.elapsed().as_secs_f64(),
            final_top1: outcome.log.final_top1().unwrap_or(0.0),
        });
    }
    Ok(out)
}

/// Fields for every prunable conv layer, keyed by layer name.
pub fn compute_fields(model: &Model, k_e: Scalar, step: u64) -> Vec<(String, LayerForceField)> {
    let mut fields = Vec::new();
    for block in &model.blocks {
        for conv in block.convs() {
            if conv.prunable() {
                fields.push((
                    conv.name().to_string(),
                    layer_force_field(conv, k_e, step),
                ));
            }
        }
    }
    fields
}

fn add_penalty_gradients(
    model: &Model,
    fields: &[(String, LayerForceField)],
    alpha_e: Scalar,
    k_e: Scalar,
    grads: &mut Gradients,
) {
    for block in &model.blocks {
        for conv in block.convs() {
            if !conv.prunable() {
                continue;
            }
            let field = fields
                .iter()
                .find(|(name, _)| name == conv.name())
                .map(|(_, f)| f)
                .expect("field computed for every prunable layer");
            let pg = penalty_gradient(conv, field, alpha_e, k_e);
            grads
                .get_mut(&format!("{}.weight", conv.name()))
                .expect("gradient entry exists")
                .add_assign(&pg);
        }
    }
}

fn add_l1_gradients(model: &Model, rate: Scalar, grads: &mut Gradients) {
    for block in &model.blocks {
        for conv in block.convs() {
            if !conv.prunable() {
                continue;
            }
            let g = grads
                .get_mut(&format!("{}.weight", conv.name()))
                .expect("gradient entry exists");
            for (gv, &w) in g.data_mut().iter_mut().zip(conv.weights().data()) {
                if w > 0.0 {
                    *gv += rate;
                } else if w < 0.0 {
                    *gv -= rate;
                }
            }
        }
    }
}

/// Sum of L1 norms over prunable conv layers.
pub fn prunable_l1(model: &Model) -> Scalar {
    let mut total = 0.0;
    for block in &model.blocks {
        for conv in block.convs() {
            if conv.prunable() {
                total += conv.weights().sum_abs();
            }
        }
    }
    total
}

fn diverged_hint(detail: String, config: &TrainConfig) -> String {
    if config.electro_active() {
        format!("{detail}; training diverged (alpha_e={:e} may be too large)", config.alpha_e)
    } else {
        format!("{detail}; training diverged (check learning rate)")
    }
}

/// Helper for residual-aware iteration in tests and tooling.
pub fn prunable_convs(model: &Model) -> Vec<&crate::nn::ConvLayer> {
    let mut out = Vec::new();
    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                if b.conv.prunable() {
                    out.push(&b.conv);
                }
            }
            Block::Residual(b) => {
                if b.conv1.prunable() {
                    out.push(&b.conv1);
                }
                if b.conv2.prunable() {
                    out.push(&b.conv2);
                }
            }
        }
    }
    out
}

/// Snapshot of all parameters, for trajectory comparisons in tests.
pub fn snapshot_params(model: &Model) -> Vec<Tensor> {
    let mut out = Vec::new();
    model.visit_params(&mut |_, t| out.push(t.clone()));
    out
}
