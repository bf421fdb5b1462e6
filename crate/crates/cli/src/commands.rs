//! Command implementations over the library crate.

use std::fs;
use std::path::{Path, PathBuf};

use electroprune::checkpoint::{config_digest, load_checkpoint, save_checkpoint, Checkpoint};
use electroprune::data::{
    load_cifar10_binary, load_mnist_dir, synthetic_task_with, DataSplits, Split,
};
use electroprune::electrostatics::{layer_force_field, COULOMB_CONSTANT};
use electroprune::error::{Error, Result};
use electroprune::nn::{count_flops, count_params, Model};
use electroprune::presets::{build_preset, PresetOptions};
use electroprune::pruner::{
    apply_plan, build_plan, ratio_sweep, speedup, sweep_csv, PruningPlan,
};
use electroprune::trainer::{
    finetune, train, InitSource, RecomputeSchedule, Regularizer, TrainConfig,
};

use crate::args::{
    parse_grid, parse_lr_policy, parse_ratios, DataOpts, DatasetArg, EvalArgs, FinetuneArgs,
    InspectArgs, PruneArgs, RecomputeArg, RegArg, SweepArgs, TrainArgs, TrainHyper,
};

pub fn load_data(opts: &DataOpts) -> Result<DataSplits> {
    match opts.dataset {
        DatasetArg::Synthetic => {
            let s = opts.image_size;
            let shape = [1, s, s];
            Ok(DataSplits {
                train: synthetic_task_with(
                    opts.classes,
                    opts.train_samples,
                    shape,
                    opts.data_seed,
                    Split::Train,
                    opts.separation,
                ),
                test: synthetic_task_with(
                    opts.classes,
                    opts.test_samples,
                    shape,
                    opts.data_seed,
                    Split::Test,
                    opts.separation,
                ),
            })
        }
        DatasetArg::Mnist => {
            let dir = data_dir(opts)?;
            let mut train = load_mnist_dir(&dir, Split::Train)?;
            let test = load_mnist_dir(&dir, Split::Test)?;
            if opts.subset > 0 {
                train = train.take(opts.subset);
            }
            Ok(DataSplits { train, test })
        }
        DatasetArg::Cifar10 => {
            let dir = data_dir(opts)?;
            let mut train = load_cifar10_binary(&dir, Split::Train)?;
            let test = load_cifar10_binary(&dir, Split::Test)?;
            if opts.subset > 0 {
                train = train.take(opts.subset);
            }
            Ok(DataSplits { train, test })
        }
    }
}

fn data_dir(opts: &DataOpts) -> Result<PathBuf> {
    opts.data_dir
        .clone()
        .ok_or_else(|| Error::Config("--data-dir is required for file datasets".to_string()))
}

fn train_config(hyper: &TrainHyper) -> Result<TrainConfig> {
    let mut config = TrainConfig::new(parse_lr_policy(&hyper.lr_policy, hyper.epochs)?);
    config.epochs = hyper.epochs;
    config.batch_size = hyper.batch_size;
    config.momentum = hyper.momentum;
    config.weight_decay = hyper.weight_decay;
    config.seed = hyper.seed;
    Ok(config)
}

fn check_compat(model: &Model, data: &DataSplits) -> Result<()> {
    let shape = data.train.sample_shape();
    if model.input_shape != shape || model.classes != data.train.classes {
        return Err(Error::Config(format!(
            "checkpoint expects input {:?} with {} classes, dataset provides {:?} with {}",
            model.input_shape, model.classes, shape, data.train.classes
        )));
    }
    Ok(())
}

pub fn cmd_train(out_dir: &Path, args: &TrainArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let shape = data.train.sample_shape();

    let mut config = train_config(&args.hyper)?;
    config.regularizer = match args.reg {
        RegArg::None => Regularizer::None,
        RegArg::Electrostatic => Regularizer::Electrostatic,
        RegArg::L1 => Regularizer::L1,
    };
    config.alpha_e = args.alpha_e;
    config.k_e = args.k_e;
    config.l1_rate = args.l1_rate;
    config.recompute = match args.recompute {
        RecomputeArg::PerStep => RecomputeSchedule::PerStep,
        RecomputeArg::PerEpoch => RecomputeSchedule::PerEpoch,
    };

    let mut model = match &args.pretrained {
        Some(path) => {
            config.init = InitSource::Pretrained(path.clone());
            let ckpt = load_checkpoint(path)?;
            check_compat(&ckpt.model, &data)?;
            ckpt.model
        }
        None => build_preset(
            &args.model.model,
            &PresetOptions {
                width: args.model.width,
                blocks_per_stage: args.model.blocks_per_stage,
                ..PresetOptions::new(data.train.classes, shape, args.hyper.seed)
            },
        )?,
    };

    let outcome = train(&mut model, &data, &config)?;
    let digest = config_digest(&config.canonical_string());

    fs::create_dir_all(out_dir).map_err(|e| Error::Config(format!("create out dir: {e}")))?;
    let ckpt_path = out_dir.join(format!("{}.ckpt", args.out));
    save_checkpoint(&ckpt_path, &model, Some(&outcome.optimizer), digest)?;
    let metrics_path = out_dir.join(format!("{}.metrics.csv", args.out));
    fs::write(&metrics_path, outcome.log.to_csv())
        .map_err(|e| Error::Config(format!("write metrics: {e}")))?;

    let last = outcome.log.rows.last().expect("at least one epoch");
    println!(
        "trained {} [{}] for {} epochs: top1 {:.4}, penalty {:.6e}",
        model.preset,
        config.regularizer.as_str(),
        config.epochs,
        last.test_top1,
        last.penalty
    );
    println!("checkpoint: {}", ckpt_path.display());
    println!("metrics:    {}", metrics_path.display());
    Ok(())
}

pub fn cmd_finetune(out_dir: &Path, args: &FinetuneArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    check_compat(&ckpt.model, &data)?;
    let mut model = ckpt.model;

    let mut config = train_config(&args.hyper)?;
    config.init = InitSource::Pretrained(args.checkpoint.clone());
    let outcome = finetune(&mut model, &data, &config)?;
    let digest = config_digest(&config.canonical_string());

    fs::create_dir_all(out_dir).map_err(|e| Error::Config(format!("create out dir: {e}")))?;
    let ckpt_path = out_dir.join(format!("{}.ckpt", args.out));
    save_checkpoint(&ckpt_path, &model, Some(&outcome.optimizer), digest)?;
    let metrics_path = out_dir.join(format!("{}.metrics.csv", args.out));
    fs::write(&metrics_path, outcome.log.to_csv())
        .map_err(|e| Error::Config(format!("write metrics: {e}")))?;

    match outcome.log.final_top1() {
        Some(top1) => println!("finetuned for {} epochs: top1 {:.4}", args.hyper.epochs, top1),
        None => println!("finetuned for 0 epochs: model unchanged"),
    }
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

/// Per-layer kept/pruned counts plus model-level size changes.
fn prune_report(base: &Model, pruned: &Model, plan: &PruningPlan) -> Result<String> {
    let mut out = String::new();
    out.push_str("layer            kept  pruned  total\n");
    for lp in &plan.layers {
        out.push_str(&format!(
            "{:<16} {:>4}  {:>6}  {:>5}\n",
            lp.layer,
            lp.keep.len(),
            lp.total - lp.keep.len(),
            lp.total
        ));
    }
    let shape = base.input_shape;
    let (p0, p1) = (count_params(base), count_params(pruned));
    let (f0, f1) = (count_flops(base, shape)?, count_flops(pruned, shape)?);
    let sp = speedup(base, pruned, shape)?;
    out.push_str(&format!("params: {p0} -> {p1} ({:.2}% kept)\n", 100.0 * p1 as f64 / p0 as f64));
    out.push_str(&format!("flops:  {f0} -> {f1} ({:.2}% kept)\n", 100.0 * f1 as f64 / f0 as f64));
    out.push_str(&format!("speedup: {sp:.2}x\n"));
    Ok(out)
}

pub fn cmd_prune(out_dir: &Path, args: &PruneArgs) -> Result<()> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let ratios = parse_ratios(&args.ratios)?;
    let plan = build_plan(&ckpt.model, &ratios)?;
    let pruned = apply_plan(&ckpt.model, &plan)?;
    let report = prune_report(&ckpt.model, &pruned, &plan)?;

    fs::create_dir_all(out_dir).map_err(|e| Error::Config(format!("create out dir: {e}")))?;
    let ckpt_path = out_dir.join(format!("{}.ckpt", args.out));
    save_checkpoint(&ckpt_path, &pruned, None, ckpt.config_digest)?;
    let plan_path = out_dir.join(format!("{}.plan.txt", args.out));
    fs::write(&plan_path, plan.to_text())
        .map_err(|e| Error::Config(format!("write plan: {e}")))?;
    let report_path = out_dir.join(format!("{}.report.txt", args.out));
    fs::write(&report_path, &report)
        .map_err(|e| Error::Config(format!("write report: {e}")))?;

    print!("{report}");
    println!("pruned checkpoint: {}", ckpt_path.display());
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    check_compat(&ckpt.model, &data)?;
    let top1 = ckpt
        .model
        .accuracy(&data.test.images, &data.test.labels, args.batch_size)?;
    println!("top1 {top1:.6}");
    println!(
        "{{\"checkpoint\":\"{}\",\"dataset\":\"{}\",\"top1\":{top1},\"samples\":{}}}",
        args.checkpoint.display(),
        dataset_name(&args.data),
        data.test.len()
    );
    Ok(())
}

fn dataset_name(opts: &DataOpts) -> &'static str {
    match opts.dataset {
        DatasetArg::Synthetic => "synthetic",
        DatasetArg::Mnist => "mnist",
        DatasetArg::Cifar10 => "cifar10",
    }
}

pub fn cmd_sweep(out_dir: &Path, args: &SweepArgs) -> Result<()> {
    let data = load_data(&args.data)?;
    let ckpt = load_checkpoint(&args.checkpoint)?;
    check_compat(&ckpt.model, &data)?;
    let grid = parse_grid(&args.ratio_grid)?;
    let rows = ratio_sweep(&ckpt.model, &data.test, &grid, args.batch_size)?;
    let csv = sweep_csv(&rows);

    fs::create_dir_all(out_dir).map_err(|e| Error::Config(format!("create out dir: {e}")))?;
    let path = out_dir.join(format!("{}.sweep.csv", args.out));
    fs::write(&path, &csv).map_err(|e| Error::Config(format!("write sweep: {e}")))?;
    println!("swept {} ratios from one checkpoint (no retraining)", grid.len());
    println!("sweep: {}", path.display());
    Ok(())
}

pub const NORMS_CSV_HEADER: &str =
    "layer,filter_index,l1,normalized_l1,sign,charge,distance,force,is_source";

/// Per-filter charge table for every prunable layer of a model.
pub fn norms_rows(model: &Model, k_e: f64) -> String {
    let mut csv = String::from(NORMS_CSV_HEADER);
    csv.push('\n');
    for block in &model.blocks {
        for conv in block.convs() {
            if !conv.prunable() {
                continue;
            }
            let field = layer_force_field(conv, k_e, 0);
            let max_l1 = field
                .charges
                .iter()
                .map(|c| c.magnitude)
                .fold(0.0_f64, f64::max);
            for (i, ch) in field.charges.iter().enumerate() {
                let normalized = if max_l1 > 0.0 { ch.magnitude / max_l1 } else { 0.0 };
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    conv.name(),
                    i,
                    ch.magnitude,
                    normalized,
                    ch.sign,
                    ch.charge,
                    field.distances[i],
                    field.forces[i],
                    (i == field.source_index) as u8
                ));
            }
        }
    }
    csv
}

pub fn cmd_inspect(out_dir: &Path, args: &InspectArgs) -> Result<()> {
    let ckpt: Checkpoint = load_checkpoint(&args.checkpoint)?;
    let csv = norms_rows(&ckpt.model, COULOMB_CONSTANT);

    fs::create_dir_all(out_dir).map_err(|e| Error::Config(format!("create out dir: {e}")))?;
    let path = out_dir.join(format!("{}.norms.csv", args.out));
    fs::write(&path, &csv).map_err(|e| Error::Config(format!("write norms: {e}")))?;
    println!("norms: {}", path.display());
    Ok(())
}
