//! Structural pruning: L1 filter ranking, keep-mask planning under stage
//! rules, physical excision with downstream channel repair, and speedup
//! accounting.

use std::collections::BTreeMap;

use crate::electrostatics::filter_magnitude;
use crate::error::{Error, Result};
use crate::nn::{count_flops, count_params, BatchNormLayer, Block, ConvLayer, DenseLayer, Model};
use crate::tensor::{Scalar, Tensor};

/// Pruning ratios, either one per model stage (residual-style) or one per
/// conv layer index (VGG-style).
#[derive(Debug, Clone, PartialEq)]
pub enum PruningRatios {
    PerStage(Vec<Scalar>),
    PerLayer(BTreeMap<usize, Scalar>),
}

impl PruningRatios {
    /// Uniform ratio over every prunable conv of `model`; exempt layers get 0.
    pub fn uniform(model: &Model, ratio: Scalar) -> Self {
        let mut map = BTreeMap::new();
        for (idx, conv) in all_convs(model).iter().enumerate() {
            map.insert(idx, if conv.prunable() { ratio } else { 0.0 });
        }
        PruningRatios::PerLayer(map)
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        let check_range = |r: Scalar| -> Result<()> {
            if !(0.0..1.0).contains(&r) || !r.is_finite() {
                return Err(Error::Config(format!(
                    "pruning ratio {r} outside [0, 1)"
                )));
            }
            Ok(())
        };
        match self {
            PruningRatios::PerStage(list) => {
                for &r in list {
                    check_range(r)?;
                }
                if list.len() != model.stage_count {
                    return Err(Error::Config(format!(
                        "per-stage ratio list has {} entries, model `{}` has {} stages",
                        list.len(),
                        model.preset,
                        model.stage_count
                    )));
                }
                // stage 0 (first conv) and the final stage (classifier) are
                // never pruned
                if list[0] != 0.0 || *list.last().unwrap() != 0.0 {
                    return Err(Error::Config(
                        "first and last stage ratios must be 0 (first conv and classifier are exempt)"
                            .to_string(),
                    ));
                }
                Ok(())
            }
            PruningRatios::PerLayer(map) => {
                let convs = all_convs(model);
                for (&idx, &r) in map {
                    check_range(r)?;
                    let Some(conv) = convs.get(idx) else {
                        return Err(Error::Config(format!(
                            "ratio given for conv layer {idx}, model `{}` has {} conv layers",
                            model.preset,
                            convs.len()
                        )));
                    };
                    if r > 0.0 && !conv.prunable() {
                        return Err(Error::Config(format!(
                            "conv layer {idx} (`{}`) is exempt from pruning but has ratio {r}",
                            conv.name()
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Ratio applying to a conv, given its flat index and stage.
    fn ratio_for(&self, conv_index: usize, stage: usize) -> Scalar {
        match self {
            PruningRatios::PerStage(list) => list.get(stage).copied().unwrap_or(0.0),
            PruningRatios::PerLayer(map) => map.get(&conv_index).copied().unwrap_or(0.0),
        }
    }
}

/// Keep decision for one prunable conv layer.
#[derive(Debug, Clone)]
pub struct LayerPlan {
    pub layer: String,
    /// Filter count before pruning.
    pub total: usize,
    /// Strictly increasing kept filter indices; never empty.
    pub keep: Vec<usize>,
    /// Provenance: the (index, l1) ranking the keep set was derived from,
    /// ascending by norm.
    pub ranks: Vec<(usize, Scalar)>,
}

/// Full pruning plan: per-layer keep sets plus the input-channel repairs
/// they force on downstream layers.
#[derive(Debug, Clone)]
pub struct PruningPlan {
    pub layers: Vec<LayerPlan>,
    /// Consumer layer name -> input-channel keep set.
    pub input_repairs: Vec<(String, Vec<usize>)>,
}

impl PruningPlan {
    pub fn keep_for(&self, layer: &str) -> Option<&LayerPlan> {
        self.layers.iter().find(|p| p.layer == layer)
    }

    /// Identity plans change nothing.
    pub fn is_identity(&self) -> bool {
        self.layers.iter().all(|p| p.keep.len() == p.total)
    }

    /// Plain-text audit document: one line per layer with kept indices.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# pruning plan: layer -> kept filter indices\n");
        for p in &self.layers {
            out.push_str(&format!(
                "{}\tkept {}/{}\t{}\n",
                p.layer,
                p.keep.len(),
                p.total,
                join_indices(&p.keep)
            ));
        }
        if !self.input_repairs.is_empty() {
            out.push_str("# input-channel repairs: layer -> kept input channels\n");
            for (name, keep) in &self.input_repairs {
                out.push_str(&format!("{}\tin {}\t{}\n", name, keep.len(), join_indices(keep)));
            }
        }
        out
    }
}

fn join_indices(v: &[usize]) -> String {
    v.iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Filters of a layer ordered by ascending L1 norm; equal norms keep index
/// order.
pub fn rank_filters(layer: &ConvLayer) -> Vec<(usize, Scalar)> {
    let mut ranks: Vec<(usize, Scalar)> = (0..layer.out_channels())
        .map(|i| (i, filter_magnitude(layer.filter(i))))
        .collect();
    ranks.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    ranks
}

/// Filters to remove for a ratio: `floor(ratio * n)`, always keeping at
/// least one.
fn pruned_count(ratio: Scalar, n: usize) -> usize {
    // small epsilon so exact decimal products (0.3 * 10) floor correctly
    let count = (ratio * n as Scalar + 1e-9).floor() as usize;
    count.min(n.saturating_sub(1))
}

/// Build a keep-mask plan for `model` under `ratios`.
pub fn build_plan(model: &Model, ratios: &PruningRatios) -> Result<PruningPlan> {
    ratios.validate(model)?;
    let mut layers = Vec::new();
    let mut input_repairs = Vec::new();
    // keep set flowing into the next layer; None = full width
    let mut current_keep: Option<Vec<usize>> = None;
    let mut conv_index = 0usize;

    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                if let Some(keep) = &current_keep {
                    input_repairs.push((b.conv.name().to_string(), keep.clone()));
                }
                current_keep = None;
                if b.conv.prunable() {
                    let plan = plan_layer(&b.conv, ratios.ratio_for(conv_index, b.stage))?;
                    if plan.keep.len() < plan.total {
                        current_keep = Some(plan.keep.clone());
                    }
                    layers.push(plan);
                }
                conv_index += 1;
            }
            Block::Residual(b) => {
                if let Some(keep) = &current_keep {
                    return Err(Error::Structure {
                        producer: format!("keep set of width {}", keep.len()),
                        consumer: b.conv1.name().to_string(),
                        detail: "residual identity input must keep full width".to_string(),
                    });
                }
                if b.conv1.prunable() {
                    let plan = plan_layer(&b.conv1, ratios.ratio_for(conv_index, b.stage))?;
                    if plan.keep.len() < plan.total {
                        input_repairs.push((b.conv2.name().to_string(), plan.keep.clone()));
                    }
                    layers.push(plan);
                }
                conv_index += 2;
                // conv2 restores the full stage width
                current_keep = None;
            }
        }
    }
    if let Some(keep) = &current_keep {
        input_repairs.push((model.classifier.name().to_string(), keep.clone()));
    }
    Ok(PruningPlan {
        layers,
        input_repairs,
    })
}

fn plan_layer(conv: &ConvLayer, ratio: Scalar) -> Result<LayerPlan> {
    let n = conv.out_channels();
    let ranks = rank_filters(conv);
    let pruned = pruned_count(ratio, n);
    if pruned >= n {
        return Err(Error::Plan(format!(
            "ratio {ratio} on `{}` would keep 0 of {n} filters",
            conv.name()
        )));
    }
    let mut keep: Vec<usize> = ranks[pruned..].iter().map(|(i, _)| *i).collect();
    keep.sort_unstable();
    Ok(LayerPlan {
        layer: conv.name().to_string(),
        total: n,
        keep,
        ranks,
    })
}

/// Apply a plan, producing a physically smaller model. The input model is
/// untouched.
pub fn apply_plan(model: &Model, plan: &PruningPlan) -> Result<Model> {
    let mut blocks = Vec::with_capacity(model.blocks.len());
    let mut current_keep: Option<Vec<usize>> = None;

    for block in &model.blocks {
        match block {
            Block::Plain(b) => {
                let out_keep = lookup_keep(plan, &b.conv)?;
                let conv = slice_conv(&b.conv, current_keep.as_deref(), out_keep.as_deref());
                let bn = b
                    .bn
                    .as_ref()
                    .map(|bn| slice_bn(bn, out_keep.as_deref()));
                current_keep = out_keep;
                blocks.push(Block::Plain(crate::nn::ConvBlock {
                    conv,
                    bn,
                    relu: b.relu,
                    stage: b.stage,
                }));
            }
            Block::Residual(b) => {
                if current_keep.is_some() {
                    return Err(Error::Structure {
                        producer: "upstream keep set".to_string(),
                        consumer: b.conv1.name().to_string(),
                        detail: "residual identity input must keep full width".to_string(),
                    });
                }
                let keep1 = lookup_keep(plan, &b.conv1)?;
                if lookup_keep(plan, &b.conv2)?.is_some() {
                    return Err(Error::Plan(format!(
                        "`{}` is the final conv of a basic block and cannot be pruned",
                        b.conv2.name()
                    )));
                }
                let conv1 = slice_conv(&b.conv1, None, keep1.as_deref());
                let bn1 = slice_bn(&b.bn1, keep1.as_deref());
                let conv2 = slice_conv(&b.conv2, keep1.as_deref(), None);
                blocks.push(Block::Residual(crate::nn::ResidualBlock {
                    conv1,
                    bn1,
                    conv2,
                    bn2: b.bn2.clone(),
                    stage: b.stage,
                }));
                current_keep = None;
            }
        }
    }

    let classifier = match &current_keep {
        Some(keep) => slice_dense_inputs(&model.classifier, keep),
        None => model.classifier.clone(),
    };
    let pruned = Model {
        preset: model.preset.clone(),
        input_shape: model.input_shape,
        classes: model.classes,
        stage_count: model.stage_count,
        blocks,
        classifier,
    };
    pruned.validate()?;
    Ok(pruned)
}

/// FLOPs ratio of base over pruned for one forward pass.
pub fn speedup(base: &Model, pruned: &Model, input_shape: [usize; 3]) -> Result<Scalar> {
    let base_flops = count_flops(base, input_shape)?;
    let pruned_flops = count_flops(pruned, input_shape)?;
    if pruned_flops == 0 {
        return Err(Error::Plan("pruned model has zero FLOPs".to_string()));
    }
    Ok(base_flops as Scalar / pruned_flops as Scalar)
}

/// One row of a pruning-ratio sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub ratio: Scalar,
    pub speedup: Scalar,
    pub params: u64,
    pub flops: u64,
    pub top1_no_ft: Scalar,
}

pub const SWEEP_CSV_HEADER: &str = "ratio,speedup,params,flops,top1_no_ft";

/// Prune one checkpoint at every grid ratio (uniform over prunable layers)
/// with no retraining in between, evaluating each pruned model as-is on
/// `test`.
pub fn ratio_sweep(
    model: &Model,
    test: &crate::data::Dataset,
    grid: &[Scalar],
    batch_size: usize,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(grid.len());
    for &ratio in grid {
        let ratios = PruningRatios::uniform(model, ratio);
        let plan = build_plan(model, &ratios)?;
        let pruned = apply_plan(model, &plan)?;
        rows.push(SweepRow {
            ratio,
            speedup: speedup(model, &pruned, model.input_shape)?,
            params: count_params(&pruned),
            flops: count_flops(&pruned, model.input_shape)?,
            top1_no_ft: pruned.accuracy(&test.images, &test.labels, batch_size)?,
        });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for r in rows {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.ratio, r.speedup, r.params, r.flops, r.top1_no_ft
        ));
    }
    csv
}

fn lookup_keep(plan: &PruningPlan, conv: &ConvLayer) -> Result<Option<Vec<usize>>> {
    let Some(lp) = plan.keep_for(conv.name()) else {
        if conv.prunable() {
            return Err(Error::Plan(format!(
                "plan has no entry for prunable layer `{}`",
                conv.name()
            )));
        }
        return Ok(None);
    };
    if lp.total != conv.out_channels() {
        return Err(Error::Plan(format!(
            "plan for `{}` was built for {} filters, layer has {}",
            conv.name(),
            lp.total,
            conv.out_channels()
        )));
    }
    if lp.keep.is_empty() || lp.keep.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Plan(format!(
            "keep set for `{}` must be non-empty and strictly increasing",
            conv.name()
        )));
    }
    if lp.keep.len() == lp.total {
        return Ok(None);
    }
    Ok(Some(lp.keep.clone()))
}

fn slice_conv(conv: &ConvLayer, in_keep: Option<&[usize]>, out_keep: Option<&[usize]>) -> ConvLayer {
    let (n, c, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
    let out_idx: Vec<usize> = match out_keep {
        Some(keep) => keep.to_vec(),
        None => (0..n).collect(),
    };
    let in_idx: Vec<usize> = match in_keep {
        Some(keep) => keep.to_vec(),
        None => (0..c).collect(),
    };
    let kk = k * k;
    let mut data = Vec::with_capacity(out_idx.len() * in_idx.len() * kk);
    for &ni in &out_idx {
        for &ci in &in_idx {
            let base = (ni * c + ci) * kk;
            data.extend_from_slice(&conv.weights().data()[base..base + kk]);
        }
    }
    let bias = conv.bias().map(|b| {
        Tensor::from_vec(
            vec![out_idx.len()],
            out_idx.iter().map(|&i| b.data()[i]).collect(),
        )
    });
    ConvLayer::new(
        conv.name(),
        Tensor::from_vec(vec![out_idx.len(), in_idx.len(), k, k], data),
        bias,
        conv.stride(),
        conv.padding(),
        conv.prunable(),
    )
}

fn slice_bn(bn: &BatchNormLayer, keep: Option<&[usize]>) -> BatchNormLayer {
    let Some(keep) = keep else {
        return bn.clone();
    };
    let pick = |t: &Tensor| {
        Tensor::from_vec(
            vec![keep.len()],
            keep.iter().map(|&i| t.data()[i]).collect(),
        )
    };
    BatchNormLayer::from_parts(
        bn.name(),
        pick(bn.scale()),
        pick(bn.shift()),
        pick(bn.running_mean()),
        pick(bn.running_var()),
        bn.epsilon(),
    )
}

fn slice_dense_inputs(dense: &DenseLayer, keep: &[usize]) -> DenseLayer {
    let (out, inp) = (dense.out_features(), dense.in_features());
    let mut data = Vec::with_capacity(out * keep.len());
    for o in 0..out {
        for &i in keep {
            data.push(dense.weights().data()[o * inp + i]);
        }
    }
    DenseLayer::new(
        dense.name(),
        Tensor::from_vec(vec![out, keep.len()], data),
        dense.bias().clone(),
    )
}

fn all_convs(model: &Model) -> Vec<&ConvLayer> {
    model.blocks.iter().flat_map(|b| b.convs()).collect()
}
