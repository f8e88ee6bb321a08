use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use char2char::cli::{
    cmd_augment, cmd_decode, cmd_evaluate, cmd_rerank, cmd_train, CliError, RunConfig,
};

/// Character-level MR-to-text generation with n-best re-ranking.
#[derive(Debug, Parser)]
#[command(name = "char2char", version)]
struct Args {
    /// key = value run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    beam_width: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Re-ranking mode: forward, reverse or classifier.
    #[arg(long, global = true)]
    mode: Option<String>,
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Override any config key, e.g. `--set epochs=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write omission and addition triplet files.
    Augment,
    /// Train a model and write its checkpoint.
    Train {
        /// forward, reverse or classifier.
        #[arg(long, default_value = "forward")]
        direction: String,
    },
    /// Beam-decode the input MRs and re-rank.
    Decode,
    /// Re-rank existing n-best files.
    Rerank,
    /// BLEU and slot coverage of the selected outputs.
    Evaluate,
}

fn config(args: &Args) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.beam_width {
        cfg.beam_width = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = &args.mode {
        cfg.mode = v.parse()?;
    }
    if let Some(v) = args.workers {
        cfg.workers = v;
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = v.clone();
    }
    Ok(cfg)
}

fn run(args: &Args) -> Result<(), CliError> {
    let cfg = config(args)?;
    match &args.command {
        Command::Augment => {
            let s = cmd_augment(&cfg)?;
            println!(
                "omission_rows={} addition_rows={}",
                s.omission_rows, s.addition_rows
            );
        }
        Command::Train { direction } => {
            let s = cmd_train(&cfg, direction.parse()?)?;
            println!(
                "checkpoint={} loss={:.6} accuracy={:.6}",
                s.checkpoint.display(),
                s.final_loss,
                s.final_accuracy
            );
        }
        Command::Decode | Command::Rerank => {
            let s = if matches!(args.command, Command::Decode) {
                cmd_decode(&cfg)?
            } else {
                cmd_rerank(&cfg)?
            };
            println!(
                "selected={} out_dir={}",
                s.selected.len(),
                cfg.out_dir.display()
            );
        }
        Command::Evaluate => {
            let s = cmd_evaluate(&cfg)?;
            print!("{}", s.bleu.to_key_value());
            print!("{}", s.coverage.to_key_value());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("char2char: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
