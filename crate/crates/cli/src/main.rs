use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use btunet::data::{generate_synthetic, load_dataset, LoadedDataset, ShapeFamily, SynthSpec};
use btunet::harness::experiment::ExperimentContext;
use btunet::harness::{
    evaluate, model_from_checkpoint, run_experiment, Aggregation, Checkpoint, ExperimentConfig,
    MetricsReport, Phase,
};

#[derive(Parser)]
#[command(name = "btunet", version, about = "Barlow Twins pre-training and U-Net fine-tuning")]
struct Cli {
    /// Log level (error, warn, info, debug, trace); RUST_LOG overrides.
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Family {
    Ellipses,
    Blobs,
    Mixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic image/mask dataset.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.08)]
        noise: f64,
        #[arg(long, value_enum, default_value = "mixed")]
        family: Family,
    },
    /// Pre-train the encoder of the first configured variant and seed.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "pretrained.ckpt")]
        out: PathBuf,
    },
    /// Fine-tune from a pre-trained encoder on the first configured fraction
    /// and seed, then evaluate on the test split.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        encoder_ckpt: PathBuf,
        #[arg(long, default_value = "finetuned.ckpt")]
        out: PathBuf,
        /// Validation fold.
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Evaluate a fine-tuned checkpoint on every masked image of a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pooled: bool,
    },
    /// Run the full experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the report of an experiment directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log)).init();
    match cli.command {
        Command::Synth {
            count,
            size,
            out,
            seed,
            noise,
            family,
        } => {
            let spec = SynthSpec {
                family: match family {
                    Family::Ellipses => ShapeFamily::Ellipses,
                    Family::Blobs => ShapeFamily::Blobs,
                    Family::Mixed => ShapeFamily::Mixed,
                },
                noise,
                ..SynthSpec::new(count, size, seed)
            };
            let m = generate_synthetic(&spec, &out)
                .with_context(|| format!("writing synthetic data to {}", out.display()))?;
            m.save(out.join("manifest.json"))?;
            println!("wrote {} image/mask pairs to {}", m.records.len(), out.display());
        }
        Command::Pretrain { config, out } => {
            let ctx = context(&config)?;
            let (variant, seed) = (ctx.cfg.variants[0], ctx.cfg.seeds[0]);
            let outcome = ctx.pretrain(variant, seed)?;
            outcome.checkpoint.save(&out)?;
            println!(
                "pre-trained {variant} (seed {seed}) for {} epochs, best epoch {} loss {:.5}; saved {}",
                outcome.epoch_losses.len(),
                outcome.best_epoch,
                outcome.epoch_losses[outcome.best_epoch.max(1) - 1],
                out.display()
            );
        }
        Command::Finetune {
            config,
            encoder_ckpt,
            out,
            fold,
        } => {
            let ctx = context(&config)?;
            let ck = Checkpoint::load(&encoder_ckpt)
                .with_context(|| format!("loading {}", encoder_ckpt.display()))?;
            if ck.phase != Phase::Pretrain {
                log::warn!("{} is not a pre-training checkpoint", encoder_ckpt.display());
            }
            if fold >= ctx.cfg.folds_k {
                bail!("fold {fold} out of range for folds_k = {}", ctx.cfg.folds_k);
            }
            let (fraction, seed) = (ctx.cfg.fractions[0], ctx.cfg.seeds[0]);
            let (outcome, metrics) = ctx.run_cell(ck.arch.variant, Some(&ck), fraction, fold, seed)?;
            outcome.checkpoint.save(&out)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
            log::info!(
                "fine-tuned for {} epochs (best {}); saved {}",
                outcome.epochs_run(),
                outcome.best_epoch,
                out.display()
            );
        }
        Command::Eval { ckpt, data, pooled } => {
            let ck = Checkpoint::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let model = model_from_checkpoint(&ck)?;
            let m = load_dataset(&data)?;
            let loaded = LoadedDataset::load(&m, ck.arch.input_size, ck.arch.input_channels)?;
            let idx: Vec<usize> = (0..m.records.len()).filter(|&i| m.records[i].mask.is_some()).collect();
            if idx.is_empty() {
                bail!("no images with masks under {}", data.display());
            }
            let mode = if pooled { Aggregation::Pooled } else { Aggregation::PerImage };
            let metrics = evaluate(&model, &loaded.images(&idx)?, &loaded.masks(&idx)?, mode)?;
            println!("{}", serde_json::to_string_pretty(&metrics)?);
        }
        Command::Experiment { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run_experiment(&cfg, &out)?;
            for a in &report.aggregates {
                let fmt = |m: Option<btunet::harness::experiment::MeanStd>| {
                    m.map(|m| format!("{:.4} ± {:.4}", m.mean, m.std)).unwrap_or_else(|| "-".into())
                };
                println!(
                    "{:<10} bt={:<5} fraction={:<4} runs={} failed={} precision={} dc={} miou={}",
                    a.variant.as_str(),
                    a.bt,
                    a.fraction,
                    a.runs,
                    a.failed,
                    fmt(a.precision),
                    fmt(a.dc),
                    fmt(a.miou)
                );
            }
            println!("report written to {}", out.display());
        }
        Command::Report { input, format } => {
            let report = MetricsReport::load(&input)
                .with_context(|| format!("reading report from {}", input.display()))?;
            match format {
                Format::Csv => print!("{}", report.to_csv()),
                Format::Json => println!("{}", report.to_json()?),
            }
        }
    }
    Ok(())
}

fn context(config: &Path) -> Result<ExperimentContext> {
    let cfg = ExperimentConfig::load(config)?;
    Ok(ExperimentContext::new(cfg)?)
}
