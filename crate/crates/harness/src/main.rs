use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use htgnn_core::ModelKind;
use htgnn_harness::experiment::{predict_loads, simulate_dataset, Prepared};
use htgnn_harness::metrics::{evaluate, write_case_plot_csv};
use htgnn_harness::train::write_train_log;
use htgnn_harness::{run, Checkpoint, ExperimentConfig};
use htgnn_rig::dataset::{read_windows_csv, write_windows_csv};
use htgnn_rig::Dataset;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "htgnn", version, about = "Bearing-load virtual sensor: simulate, train, evaluate")]
struct Cli {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the data seed for `simulate` and the training seed for `train`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the condition grid and write a dataset directory.
    Simulate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Cut a dataset into standardized-length windows and write them as CSV.
    Preprocess {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes checkpoint.json and train_log.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "htgnn")]
        model: ModelKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on the test windows; writes metrics.csv,
    /// summary.csv and case_plot.csv.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate F_x and F_y (kN) for every window in a window CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        windows: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ExperimentConfig::default()),
    }
}

fn checksum(paths: &[PathBuf]) -> Result<String> {
    let mut hasher = Sha256::new();
    for p in paths {
        let mut buf = Vec::new();
        File::open(p)?.read_to_end(&mut buf)?;
        hasher.update(&buf);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let mut cfg = load_config(cli.config.as_deref())?;

    match cli.command {
        Command::Simulate { out } => {
            if let Some(seed) = cli.seed {
                cfg.data.seed = seed;
            }
            let dataset = simulate_dataset(&cfg)?;
            let files = dataset.save(&out)?;
            println!("{} cases written to {}", dataset.cases.len(), out.display());
            println!("sha256 {}", checksum(&files)?);
        }
        Command::Preprocess { data, out } => {
            let dataset = Dataset::load(&data)?;
            let prepared = Prepared::new(&dataset, &cfg)?;
            write_windows_csv(create(&out)?, &prepared.windows, &dataset.layout, cfg.preprocess.window)?;
            println!("{} windows written to {}", prepared.windows.len(), out.display());
        }
        Command::Train { data, model, out } => {
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            let dataset = Dataset::load(&data)?;
            let prepared = Prepared::new(&dataset, &cfg)?;
            let result = run(model, &prepared, &cfg)?;
            std::fs::create_dir_all(&out)?;
            result.checkpoint.save(&out.join("checkpoint.json"))?;
            write_train_log(create(&out.join("train_log.csv"))?, &result.report.epochs)?;
            println!(
                "best epoch {} (validation L1 {:.5}); checkpoint in {}",
                result.report.best_epoch,
                result.report.best_val_loss,
                out.display()
            );
            print!("{}", result.metrics);
        }
        Command::Evaluate { data, checkpoint, out } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let dataset = Dataset::load(&data)?;
            let prepared = Prepared::new(&dataset, &cfg)?;
            let test = prepared.select(&prepared.split.test);
            let predictions = predict_loads(&ckpt, &test, cfg.train.batch_size)?;
            let metrics = evaluate(&predictions, &test, &prepared.conditions)?;
            std::fs::create_dir_all(&out)?;
            metrics.write_cases_csv(create(&out.join("metrics.csv"))?)?;
            metrics.write_summary_csv(create(&out.join("summary.csv"))?)?;
            write_case_plot_csv(create(&out.join("case_plot.csv"))?, &predictions, &test)?;
            print!("{metrics}");
        }
        Command::Predict { checkpoint, windows } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let (window, samples) = read_windows_csv(BufReader::new(File::open(&windows)?), &ckpt.layout)?;
            if window != ckpt.architecture.window() {
                bail!("windows have length {window}, the model expects {}", ckpt.architecture.window());
            }
            let refs: Vec<_> = samples.iter().collect();
            println!("F_x,F_y");
            for [fx, fy] in predict_loads(&ckpt, &refs, 512)? {
                println!("{fx:.3},{fy:.3}");
            }
        }
    }
    Ok(())
}
