use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use qus_core::pipeline::{
    cmd_eval, cmd_featurize, cmd_finetune, cmd_map, cmd_simulate, cmd_train, EvalArgs, FinetuneArgs, MapArgs,
    ModelId, RunConfig, TrainArgs,
};
use qus_core::training::EpochRecord;
use qus_core::QusError;

/// Scatterer density classification of ultrasound envelope data.
#[derive(Debug, Parser)]
#[command(name = "qus", version)]
struct Cli {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every stochastic component; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Suppress per-epoch progress on stderr.
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate phantoms and write a patch dataset.
    Simulate,
    /// Compute envelope statistics for every split and fit the normalizer.
    Featurize {
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model: mlp, svm, rf or cnn1..cnn6.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: ModelId,
        /// Reuse a trained image-only checkpoint as the fusion CNN branch.
        #[arg(long)]
        cnn_branch: Option<PathBuf>,
        /// Reuse a trained MLP checkpoint as the fusion statistics branch.
        #[arg(long)]
        mlp_branch: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one dataset split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Sliding-window probability map of one frame file.
    Map {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        frame: PathBuf,
        /// Window overlap fraction, e.g. 0.5 or 0.875.
        #[arg(long)]
        overlap: Option<f64>,
    },
    /// Fine-tune a trained network on an adaptation dataset.
    Finetune {
        #[arg(long)]
        model: PathBuf,
        /// Adaptation dataset.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "train")]
        adapt_split: String,
        #[arg(long, default_value = "val")]
        val_split: String,
        /// Dataset holding the evaluation split that must stay unseen.
        #[arg(long)]
        eval_data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        eval_split: String,
    },
}

fn print_json(value: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), QusError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    let quiet = cli.quiet;
    let mut progress = |stage: &str, e: &EpochRecord| {
        if !quiet {
            eprintln!("{stage} epoch {} loss {:.4} val_auc {:.4}", e.epoch, e.train_loss, e.val_auc);
        }
    };
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate => {
            let m = cmd_simulate(&cfg, out)?;
            for (name, s) in &m.splits {
                println!("{name}: {} patches ({} fds, {} lds)", s.count, s.class_counts.fds, s.class_counts.lds);
            }
        }
        Command::Featurize { data } => {
            print_json(&cmd_featurize(&cfg, &data, out)?);
        }
        Command::Train { data, model, cnn_branch, mlp_branch } => {
            let args = TrainArgs { data, model, cnn_branch, mlp_branch };
            let m = cmd_train(&cfg, &args, out, &mut progress)?;
            print_json(&m.info["histories"]);
        }
        Command::Eval { model, data, split } => {
            print_json(&cmd_eval(&cfg, &EvalArgs { model, data, split }, out)?);
        }
        Command::Map { model, frame, overlap } => {
            let map = cmd_map(&cfg, &MapArgs { model, frame, overlap }, out)?;
            println!("{}x{} map, mean probability {:.4}", map.rows, map.cols, map.mean());
        }
        Command::Finetune { model, data, adapt_split, val_split, eval_data, eval_split } => {
            let args = FinetuneArgs { model, data, adapt_split, val_split, eval_data, eval_split };
            let m = cmd_finetune(&cfg, &args, out, &mut progress)?;
            print_json(&m.info.get("finetune"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
