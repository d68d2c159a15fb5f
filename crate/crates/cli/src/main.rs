use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use patt_lab::{error_line, run, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    GenData,
    Train,
    Calibrate,
    Eval,
    Report,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Calibrate => "calibrate",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// Long-tailed OOD detection experiments on synthetic data.
#[derive(Debug, Parser)]
#[command(name = "patt-lab", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// `key = value` configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Root seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let result = RunConfig::load(&args.config).and_then(|mut cfg| {
        if let Some(out) = args.out {
            cfg.out_dir = out;
        }
        if let Some(seed) = args.seed {
            cfg.seed = seed;
        }
        run(args.command.name(), &cfg)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::from(2)
        }
    }
}
