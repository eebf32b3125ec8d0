//! CLI for the ckconv crate.
//!
//! Exit codes: 0 on success/pass, 1 on a failed check or runtime error,
//! 2 on usage or config errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ckconv::ablate::run_ablate;
use ckconv::config::RunConfig;
use ckconv::error::Error;
use ckconv::synth::{generate_dataset, write_dataset};
use ckconv::train::{cmd_eval, cmd_train};
use ckconv::verify::{run_gradcheck, run_oracle};

#[derive(Parser)]
#[command(name = "ckconv", about = "Cubic-kernel point convolution harness", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Path to a flat `section.key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (data.seed for gen-data/eval, train.seed for
    /// train/ablate, the suite seed for gradcheck/oracle).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for generated files.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset and write it as text files.
    GenData(Common),
    /// Train a classifier; persists the best checkpoint and metrics log.
    Train(Common),
    /// Evaluate a checkpoint (eval.checkpoint) on the configured dataset.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset split to evaluate.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Finite-difference gradient check over every module's parameters.
    Gradcheck(Common),
    /// Compare the fast CKConv path against the scalar-loop reference.
    Oracle(Common),
    /// Train the five normalization/attention variants and the v sweep.
    Ablate(Common),
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config {}: {e}", path.display()))
            })?;
            RunConfig::parse(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::GenData(common) => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.data_seed = seed;
            }
            let dataset = generate_dataset(&cfg.dataset_spec())?;
            std::fs::create_dir_all(&common.out)?;
            write_dataset(&common.out, &dataset)?;
            println!(
                "wrote {} train / {} test clouds to {}",
                dataset.train.len(),
                dataset.test.len(),
                common.out.display()
            );
            Ok(true)
        }
        Command::Train(common) => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.train_seed = seed;
            }
            let (report, ckpt) = cmd_train(&cfg, &common.out, &mut |r| println!("{}", r.format()))?;
            println!(
                "best_epoch={} best_oa={} wall_s={:.1}",
                report.best_epoch, report.best_oa, report.wall_seconds
            );
            println!("checkpoint: {}", ckpt.display());
            Ok(true)
        }
        Command::Eval { common, split } => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.data_seed = seed;
            }
            let (oa, macc) = cmd_eval(&cfg, &split)?;
            println!("split={split} oa={oa} macc={macc}");
            Ok(true)
        }
        Command::Gradcheck(common) => {
            let report = run_gradcheck(common.seed.unwrap_or(0))?;
            print!("{}", report.format());
            Ok(report.pass())
        }
        Command::Oracle(common) => {
            let cfg = load_config(&common)?;
            let report = run_oracle(common.seed.unwrap_or(0), cfg.oracle_trials)?;
            print!("{}", report.format());
            Ok(report.pass())
        }
        Command::Ablate(common) => {
            let mut cfg = load_config(&common)?;
            if let Some(seed) = common.seed {
                cfg.train_seed = seed;
            }
            let report = run_ablate(&cfg, &mut |row| {
                println!(
                    "model={} v={} norm={} lsa={} seed={} best_oa={}",
                    row.model,
                    row.v,
                    row.norm.as_str(),
                    row.lsa,
                    row.seed,
                    row.best_oa
                );
            })?;
            std::fs::create_dir_all(&common.out)?;
            let table_path = common.out.join("ablation.tsv");
            std::fs::write(&table_path, report.format_table())?;
            print!("{}", report.format_table());
            println!("table: {}", table_path.display());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::from(0),
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
