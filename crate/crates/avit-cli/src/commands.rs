//! The `avit` command-line surface: argument types and the subcommand
//! implementations behind them.
//!
//! Output is line-oriented `key=value` records with fixed six-decimal floats,
//! so runs are comparable byte-for-byte. Runtime failures bubble up as
//! [`CliError`](crate::error::CliError); the binary maps them to exit 1,
//! while argument errors keep clap's usage text and exit 2.

use crate::checkpoint;
use crate::config::{load_config, RunConfig};
use crate::dataset::{self, NamedSample};
use crate::error::Result;
use crate::gradcheck;
use crate::input_err;
use crate::kfold::kfold_split;
use crate::netpbm;
use crate::synthetic;
use avit_core::check::{op_suite, OP_TOL};
use avit_core::data::Sample;
use avit_core::model::{Model, ModelCfg, Variant};
use avit_core::rng::Rng;
use avit_core::train::{evaluate, train_loop, TrainReport};
use avit_core::analysis::{count_params, estimate_flops};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Stream tag for train/validation splitting (the core loop uses 1 and 2,
/// the gradcheck prober uses 3).
const STREAM_SPLIT: u64 = 4;
/// Stream tag for deriving per-fold model seeds in cross-validation.
const STREAM_MODEL: u64 = 5;

#[derive(Parser, Debug)]
#[command(name = "avit", version, about = "Train and inspect compact lesion-segmentation models")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on the configured dataset and save checkpoints.
    Train {
        /// key=value run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to load before training
        #[arg(long)]
        init: Option<PathBuf>,
        /// Load only the checkpoint entries the model also has
        #[arg(long, requires = "init")]
        partial: bool,
    },
    /// Score a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint to evaluate
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (defaults to the config's data_dir)
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Write per-image probability maps as PGM files.
    Predict {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory (defaults to the config's data_dir)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Output directory (defaults to the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the parameter budget of the configured model.
    Params {
        /// Optional config; the default is the full-scale model
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the per-image compute estimate of the configured model.
    Flops {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Finite-difference gradient check on a 64-bit model (toy by default).
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Seeded k-fold cross-validation on the configured dataset.
    Cv {
        #[arg(long)]
        config: PathBuf,
        /// Number of folds
        #[arg(long, default_value_t = 5)]
        folds: usize,
        /// Fold/shuffle seed (defaults to the config's seed)
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a synthetic blob dataset as PPM/PGM pairs.
    MakeSynthetic {
        /// Number of samples
        #[arg(long)]
        n: usize,
        /// Square image size in pixels (multiple of 16)
        #[arg(long)]
        size: usize,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep lesion and background intensities disjoint
        #[arg(long)]
        easy: bool,
    },
}

/// Dispatches one parsed invocation.
pub fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Train { config, init, partial } => cmd_train(&config, init.as_deref(), partial),
        Command::Eval { config, ckpt, data } => cmd_eval(&config, &ckpt, data.as_deref()),
        Command::Predict { config, ckpt, data, out } => {
            cmd_predict(&config, &ckpt, data.as_deref(), out.as_deref())
        }
        Command::Params { config } => cmd_params(config.as_deref()),
        Command::Flops { config } => cmd_flops(config.as_deref()),
        Command::Gradcheck { config } => cmd_gradcheck(config.as_deref()),
        Command::Cv { config, folds, seed } => cmd_cv(&config, folds, seed),
        Command::MakeSynthetic { n, size, out, seed, easy } => {
            cmd_make_synthetic(n, size, &out, seed, easy)
        }
    }
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => load_config(p),
        None => Ok(RunConfig::default()),
    }
}

/// Deterministic 80/20 split of `samples` (at least one sample per side).
fn split_train_val(samples: &[NamedSample], seed: u64) -> Result<(Vec<Sample<f32>>, Vec<Sample<f32>>)> {
    let n = samples.len();
    if n < 2 {
        return Err(input_err!(
            "need at least 2 samples to split train/validation, found {n}"
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::derive_indexed(seed, &[STREAM_SPLIT]).shuffle(&mut order);
    let val_n = (n / 5).max(1);
    let (val_idx, train_idx) = order.split_at(val_n);
    let pick = |idx: &[usize]| idx.iter().map(|&i| samples[i].sample.clone()).collect();
    Ok((pick(train_idx), pick(val_idx)))
}

fn print_epochs(report: &TrainReport<f32>) {
    for r in &report.records {
        println!(
            "epoch={} lr={:.6} train_loss={:.6} val_dice={:.6} val_iou={:.6}",
            r.epoch, r.lr, r.train_loss, r.val_dice, r.val_iou
        );
    }
    println!(
        "best_epoch={} best_val_dice={:.6}",
        report.best_epoch, report.best_val_dice
    );
}

fn cmd_train(config: &Path, init: Option<&Path>, partial: bool) -> Result<()> {
    let run = load_config(config)?;
    let named = dataset::load_dataset(Path::new(&run.data_dir), run.model.image_size)?;
    let (train, val) = split_train_val(&named, run.seed)?;

    let mut model = Model::<f32>::build(run.model.clone(), run.seed)?;
    if let Some(ckpt) = init {
        let loaded = checkpoint::load_into(ckpt, &mut model, partial)?;
        println!("initialized={} from={}", loaded, ckpt.display());
    }

    let report = train_loop(&mut model, &train, &val, &run.train_config())?;
    print_epochs(&report);

    // Persist the best-validation snapshot, plus the backbone alone so other
    // variants can warm-start from it.
    model.restore_entries(&report.best_state)?;
    let out_dir = Path::new(&run.out_dir);
    std::fs::create_dir_all(out_dir)?;
    let model_path = out_dir.join("model.avck");
    checkpoint::save_model(&model, &model_path)?;
    let backbone_path = out_dir.join("backbone.avck");
    checkpoint::save_filtered(&model, "backbone.", &backbone_path)?;
    println!("saved={}", model_path.display());
    println!("saved={}", backbone_path.display());
    Ok(())
}

fn build_from_checkpoint(run: &RunConfig, ckpt: &Path) -> Result<Model<f32>> {
    let mut model = Model::<f32>::build(run.model.clone(), run.seed)?;
    checkpoint::load_into(ckpt, &mut model, false)?;
    Ok(model)
}

fn cmd_eval(config: &Path, ckpt: &Path, data: Option<&Path>) -> Result<()> {
    let run = load_config(config)?;
    let dir = data.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&run.data_dir));
    let named = dataset::load_dataset(&dir, run.model.image_size)?;
    if named.is_empty() {
        return Err(input_err!("no samples found under {}", dir.display()));
    }
    let mut model = build_from_checkpoint(&run, ckpt)?;
    let report = evaluate(&mut model, &dataset::plain(&named), run.batch)?;
    for (s, m) in named.iter().zip(&report.per_sample) {
        println!("sample={} dice={:.6} iou={:.6}", s.id, m.dice, m.iou);
    }
    println!(
        "n={} mean_dice={:.6} mean_iou={:.6}",
        report.per_sample.len(),
        report.mean.dice,
        report.mean.iou
    );
    Ok(())
}

fn cmd_predict(config: &Path, ckpt: &Path, data: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let run = load_config(config)?;
    let dir = data.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&run.data_dir));
    let named = dataset::load_dataset(&dir, run.model.image_size)?;
    if named.is_empty() {
        return Err(input_err!("no samples found under {}", dir.display()));
    }
    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&run.out_dir));
    std::fs::create_dir_all(&out_dir)?;

    let mut model = build_from_checkpoint(&run, ckpt)?;
    let s = run.model.image_size;
    for chunk in named.chunks(run.batch.max(1)) {
        let refs: Vec<&Sample<f32>> = chunk.iter().map(|n| &n.sample).collect();
        let (images, _) = avit_core::data::stack(&refs)?;
        let logits = model.infer_logits(&images)?;
        for (b, item) in chunk.iter().enumerate() {
            let plane = &logits.data()[b * s * s..(b + 1) * s * s];
            let bytes: Vec<u8> = plane
                .iter()
                .map(|&z| {
                    let p = 1.0 / (1.0 + (-f64::from(z)).exp());
                    (p * 255.0).round() as u8
                })
                .collect();
            let path = out_dir.join(format!("{}_prob.pgm", item.id));
            netpbm::write_pgm(&path, s, s, &bytes)?;
            println!("wrote={}", path.display());
        }
    }
    Ok(())
}

fn cmd_params(config: Option<&Path>) -> Result<()> {
    let run = load_run_config(config)?;
    // Counting goes through the spec list only; building the full model would
    // allocate and initialise every tensor just to read its shape.
    let report = count_params(&run.model)?;
    print!("{}", report.to_kv_lines());
    Ok(())
}

fn cmd_flops(config: Option<&Path>) -> Result<()> {
    let run = load_run_config(config)?;
    let report = estimate_flops(&run.model)?;
    print!("{}", report.to_kv_lines());
    Ok(())
}

fn cmd_gradcheck(config: Option<&Path>) -> Result<()> {
    let cfg: ModelCfg = match config {
        Some(p) => load_config(p)?.model,
        None => ModelCfg::toy(Variant::Avit),
    };
    let mut failed = false;

    let ops = op_suite(2, 1e-5, 17)?;
    let worst_op = ops
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .expect("op suite is non-empty");
    for op in &ops {
        if op.max_rel_err >= OP_TOL {
            println!("op={} max_rel_err={:.3e} FAIL", op.name, op.max_rel_err);
            failed = true;
        }
    }
    println!(
        "ops={} worst_op={} ops_max_rel_err={:.3e}",
        ops.len(),
        worst_op.name,
        worst_op.max_rel_err
    );

    for g in gradcheck::model_group_errors(&cfg, 17, 2)? {
        println!(
            "group={} tensors={} probes={} max_rel_err={:.3e} {}",
            g.group,
            g.tensors,
            g.probes,
            g.max_rel_err,
            if g.passed() { "ok" } else { "FAIL" }
        );
        failed |= !g.passed();
    }
    if failed {
        return Err(input_err!("gradient check failed (tolerance {OP_TOL:.0e})"));
    }
    println!("gradcheck=pass");
    Ok(())
}

fn cmd_cv(config: &Path, folds: usize, seed: Option<u64>) -> Result<()> {
    let run = load_config(config)?;
    let seed = seed.unwrap_or(run.seed);
    let named = dataset::load_dataset(Path::new(&run.data_dir), run.model.image_size)?;
    let folds_idx = kfold_split(named.len(), folds, seed)?;

    let mut rows = Vec::with_capacity(folds);
    for (f, (pool, test_idx)) in folds_idx.iter().enumerate() {
        if pool.len() < 2 {
            return Err(input_err!(
                "fold {f}: {} training samples are too few to split train/validation",
                pool.len()
            ));
        }
        let mut order = pool.clone();
        Rng::derive_indexed(seed, &[STREAM_SPLIT, f as u64]).shuffle(&mut order);
        let val_n = (order.len() / 5).max(1);
        let (val_idx, train_idx) = order.split_at(val_n);
        let pick = |idx: &[usize]| -> Vec<Sample<f32>> {
            idx.iter().map(|&i| named[i].sample.clone()).collect()
        };
        let (train, val, test) = (pick(train_idx), pick(val_idx), pick(test_idx));

        let model_seed = Rng::derive_indexed(seed, &[STREAM_MODEL, f as u64]).next_u64();
        let mut model = Model::<f32>::build(run.model.clone(), model_seed)?;
        let mut tc = run.train_config();
        tc.seed = model_seed;
        let report = train_loop(&mut model, &train, &val, &tc)?;
        model.restore_entries(&report.best_state)?;
        let eval = evaluate(&mut model, &test, run.batch)?;
        println!(
            "fold={f} test_n={} dice={:.6} iou={:.6}",
            test.len(),
            eval.mean.dice,
            eval.mean.iou
        );
        rows.push(eval.mean);
    }

    let k = rows.len() as f64;
    let mean = |v: &dyn Fn(&avit_core::metrics::SegMetrics) -> f64| {
        rows.iter().map(|r| v(r)).sum::<f64>() / k
    };
    let std = |m: f64, v: &dyn Fn(&avit_core::metrics::SegMetrics) -> f64| {
        (rows.iter().map(|r| (v(r) - m).powi(2)).sum::<f64>() / k).sqrt()
    };
    let (dm, im) = (mean(&|r| r.dice), mean(&|r| r.iou));
    println!(
        "cv_folds={} seed={} dice_mean={:.6} dice_std={:.6} iou_mean={:.6} iou_std={:.6}",
        folds,
        seed,
        dm,
        std(dm, &|r| r.dice),
        im,
        std(im, &|r| r.iou)
    );
    Ok(())
}

fn cmd_make_synthetic(n: usize, size: usize, out: &Path, seed: u64, easy: bool) -> Result<()> {
    let profile = if easy { synthetic::Profile::Easy } else { synthetic::Profile::Normal };
    let pairs = synthetic::generate(n, size, seed, profile)?;
    synthetic::write_dataset(out, &pairs)?;
    println!(
        "generated={n} size={size} seed={seed} easy={easy} out={}",
        out.display()
    );
    Ok(())
}
