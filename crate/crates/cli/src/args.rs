//! Flag definitions and parsers for ratio strings and LR policies.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use electroprune::error::{Error, Result};
use electroprune::pruner::PruningRatios;
use electroprune::trainer::LrPolicy;

#[derive(Parser)]
#[command(
    name = "electroprune",
    version,
    about = "Train small CNNs under a charge-force sparsity regularizer, then prune filters"
)]
pub struct Cli {
    /// Output directory for checkpoints and CSVs.
    #[arg(long, global = true, env = "ELECTROPRUNE_OUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Train a model, writing a checkpoint and per-epoch metrics.csv.
    Train(TrainArgs),
    /// Fine-tune a checkpoint with plain SGD (no regularizer).
    Finetune(FinetuneArgs),
    /// Prune a checkpoint at fixed ratios; writes the pruned checkpoint,
    /// the keep-plan, and a size report.
    Prune(PruneArgs),
    /// Evaluate a checkpoint's top-1 accuracy.
    Eval(EvalArgs),
    /// Prune one checkpoint at every ratio in a grid; writes sweep.csv.
    Sweep(SweepArgs),
    /// Dump the per-filter norm/charge/force table to norms.csv.
    Inspect(InspectArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegArg {
    None,
    Electrostatic,
    L1,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RecomputeArg {
    PerStep,
    PerEpoch,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Synthetic,
    Mnist,
    Cifar10,
}

#[derive(Args, Clone)]
pub struct ModelOpts {
    /// Model preset.
    #[arg(long, default_value = "mnist-cnn")]
    pub model: String,

    /// Base width override (0 = preset default).
    #[arg(long, default_value_t = 0)]
    pub width: usize,

    /// Residual blocks per stage (toy-resnet).
    #[arg(long, default_value_t = 1)]
    pub blocks_per_stage: usize,
}

#[derive(Args, Clone)]
pub struct DataOpts {
    /// Dataset source.
    #[arg(long, value_enum, default_value_t = DatasetArg::Synthetic)]
    pub dataset: DatasetArg,

    /// Directory holding MNIST IDX or CIFAR-10 binary files.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,

    /// Cap on training samples (0 = use all). Applies to file datasets.
    #[arg(long, default_value_t = 0)]
    pub subset: usize,

    /// Synthetic task: class count.
    #[arg(long, default_value_t = 10)]
    pub classes: usize,

    /// Synthetic task: square image size.
    #[arg(long, default_value_t = 16)]
    pub image_size: usize,

    /// Synthetic task: training samples.
    #[arg(long, default_value_t = 4096)]
    pub train_samples: usize,

    /// Synthetic task: test samples.
    #[arg(long, default_value_t = 1024)]
    pub test_samples: usize,

    /// Synthetic task: generation seed (regenerate the same data for eval).
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,

    /// Synthetic task: class-prototype separation.
    #[arg(long, default_value_t = electroprune::data::DEFAULT_SEPARATION)]
    pub separation: f64,
}

#[derive(Args, Clone)]
pub struct TrainHyper {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,

    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,

    /// LR policy: `p1`, `p2`, `const:<lr>`, or explicit milestones
    /// `0:0.1,10:0.01,15:0.001`. `p1`/`p2` rescale onto --epochs.
    #[arg(long, default_value = "p1")]
    pub lr_policy: String,

    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,

    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelOpts,

    #[command(flatten)]
    pub data: DataOpts,

    #[command(flatten)]
    pub hyper: TrainHyper,

    /// Regularizer arm.
    #[arg(long, value_enum, default_value_t = RegArg::None)]
    pub reg: RegArg,

    /// Force rate weighting the penalty (electrostatic arm).
    #[arg(long, default_value_t = 0.0)]
    pub alpha_e: f64,

    /// Coulomb constant.
    #[arg(long, default_value_t = electroprune::electrostatics::COULOMB_CONSTANT)]
    pub k_e: f64,

    /// L1 regularization rate (l1 arm).
    #[arg(long, default_value_t = 1e-2)]
    pub l1_rate: f64,

    /// Force-field refresh schedule.
    #[arg(long, value_enum, default_value_t = RecomputeArg::PerStep)]
    pub recompute: RecomputeArg,

    /// Start from a checkpoint instead of random init.
    #[arg(long)]
    pub pretrained: Option<PathBuf>,

    /// Output basename (files: <out>.ckpt, <out>.metrics.csv).
    #[arg(long, default_value = "model")]
    pub out: String,
}

#[derive(Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataOpts,

    #[command(flatten)]
    pub hyper: TrainHyper,

    #[arg(long, default_value = "finetuned")]
    pub out: String,
}

#[derive(Args)]
pub struct PruneArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Per-stage list `0,0.52,0.52,0` or per-layer map `0:0,1-4:0.65`.
    #[arg(long)]
    pub ratios: String,

    #[arg(long, default_value = "pruned")]
    pub out: String,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataOpts,

    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
}

#[derive(Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    /// Comma-separated uniform ratios in [0, 1).
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub ratio_grid: String,

    #[command(flatten)]
    pub data: DataOpts,

    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,

    #[arg(long, default_value = "sweep")]
    pub out: String,
}

#[derive(Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[arg(long, default_value = "norms")]
    pub out: String,
}

/// Parse `0,0.52,0.52,0` (per stage) or `0:0,1-15:0.65` (per layer).
pub fn parse_ratios(text: &str) -> Result<PruningRatios> {
    let text = text.trim();
    if text.is_empty() {
        return Err(Error::Config("empty ratio list".to_string()));
    }
    if text.contains(':') {
        let mut map = BTreeMap::new();
        for part in text.split(',') {
            let (range, value) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad ratio entry `{part}`")))?;
            let ratio: f64 = value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad ratio value `{value}`")))?;
            let range = range.trim();
            let (lo, hi) = match range.split_once('-') {
                Some((a, b)) => (
                    parse_index(a)?,
                    parse_index(b)?,
                ),
                None => {
                    let i = parse_index(range)?;
                    (i, i)
                }
            };
            if hi < lo {
                return Err(Error::Config(format!("bad layer range `{range}`")));
            }
            for idx in lo..=hi {
                map.insert(idx, ratio);
            }
        }
        return Ok(PruningRatios::PerLayer(map));
    }
    let list = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad ratio value `{s}`")))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(PruningRatios::PerStage(list))
}

fn parse_index(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad layer index `{s}`")))
}

/// Parse an LR-policy flag, rescaling the named presets onto `epochs`.
pub fn parse_lr_policy(text: &str, epochs: usize) -> Result<LrPolicy> {
    match text {
        "p1" => {
            let p = LrPolicy::p1();
            if epochs == 200 {
                Ok(p)
            } else {
                p.rescaled(200, epochs)
            }
        }
        "p2" => {
            let p = LrPolicy::p2();
            if epochs == 120 {
                Ok(p)
            } else {
                p.rescaled(120, epochs)
            }
        }
        other => {
            if let Some(lr) = other.strip_prefix("const:") {
                let lr: f64 = lr
                    .parse()
                    .map_err(|_| Error::Config(format!("bad constant lr `{other}`")))?;
                return LrPolicy::constant(lr);
            }
            let milestones = other
                .split(',')
                .map(|pair| {
                    let (e, lr) = pair
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("bad milestone `{pair}`")))?;
                    let epoch: usize = e
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad milestone epoch `{e}`")))?;
                    let lr: f64 = lr
                        .trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("bad milestone lr `{lr}`")))?;
                    Ok((epoch, lr))
                })
                .collect::<Result<Vec<_>>>()?;
            LrPolicy::new(format!("custom:{other}"), milestones)
        }
    }
}

/// Parse a comma-separated ratio grid.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let v: f64 = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad grid value `{s}`")))?;
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("grid value {v} outside [0, 1)")));
            }
            Ok(v)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_stage_ratio_string() {
        let r = parse_ratios("0,0.52,0.52,0").unwrap();
        assert_eq!(
            r,
            PruningRatios::PerStage(vec![0.0, 0.52, 0.52, 0.0])
        );
    }

    #[test]
    fn per_layer_ratio_string_with_ranges() {
        let r = parse_ratios("0:0,1-3:0.65").unwrap();
        let PruningRatios::PerLayer(map) = r else {
            panic!("expected per-layer map")
        };
        assert_eq!(map.get(&0), Some(&0.0));
        assert_eq!(map.get(&1), Some(&0.65));
        assert_eq!(map.get(&3), Some(&0.65));
        assert_eq!(map.get(&4), None);
    }

    #[test]
    fn malformed_ratio_strings_fail() {
        assert!(parse_ratios("").is_err());
        assert!(parse_ratios("0,abc").is_err());
        assert!(parse_ratios("3-1:0.5").is_err());
    }

    #[test]
    fn lr_policy_presets_rescale() {
        let p = parse_lr_policy("p1", 20).unwrap();
        assert_eq!(p.milestones(), &[(0, 0.1), (10, 0.01), (15, 0.001)]);
        let exact = parse_lr_policy("p1", 200).unwrap();
        assert_eq!(exact.milestones(), &[(0, 0.1), (100, 0.01), (150, 0.001)]);
        let c = parse_lr_policy("const:0.05", 7).unwrap();
        assert_eq!(c.lr_at(6), 0.05);
        let custom = parse_lr_policy("0:0.2,5:0.02", 10).unwrap();
        assert_eq!(custom.lr_at(5), 0.02);
    }
}
