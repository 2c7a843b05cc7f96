use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stgvis::{commands, Config};

/// Video instance segmentation with a spatial-temporal graph network.
#[derive(Parser)]
#[command(name = "stgvis", version, after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset
    GenData(Args),
    /// Train a model and write a checkpoint
    Train(Args),
    /// Track every video and write the predictions file
    Infer(Args),
    /// Score predictions against the dataset annotations
    Eval(Args),
    /// Write per-frame overlays of the predicted masks
    Render(Args),
}

#[derive(clap::Args)]
struct Args {
    /// Config file of `key = value` lines
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

fn keys_help() -> String {
    let mut s = String::from("Config keys:\n");
    for (k, d) in stgvis::config::KEYS {
        s.push_str(&format!("  {k:<16} {d}\n"));
    }
    s
}

fn config(args: &Args) -> stgvis::Result<Config> {
    let mut cfg = match &args.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply_overrides(&args.overrides)?;
    Ok(cfg)
}

fn run(cli: Cli) -> stgvis::Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = config(&a)?;
            let d = commands::gen_data(&cfg)?;
            println!("wrote {} videos to {}", d.videos.len(), cfg.dataset.display());
        }
        Command::Train(a) => {
            let cfg = config(&a)?;
            commands::train(&cfg)?;
            println!("wrote {} and {}", cfg.checkpoint.display(), cfg.log.display());
        }
        Command::Infer(a) => {
            let cfg = config(&a)?;
            let p = commands::infer(&cfg)?;
            let n: usize = p.iter().map(|v| v.tubes.len()).sum();
            println!("wrote {n} tracks to {}", cfg.predictions.display());
        }
        Command::Eval(a) => {
            let cfg = config(&a)?;
            let r = commands::eval(&cfg)?;
            print!("{}", r.table());
        }
        Command::Render(a) => {
            let cfg = config(&a)?;
            let n = commands::render(&cfg)?;
            println!("wrote {n} frames to {}", cfg.render_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
