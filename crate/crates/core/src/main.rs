use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use textfuse::cli::{run, Command, RunConfig};

/// Attention-fused CNN/BiLSTM text classifier.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// One of: prepare, train, evaluate, predict, gradcheck, baselines.
    command: String,

    /// key=value run configuration file.
    #[arg(long, short)]
    config: Option<PathBuf>,

    /// Extra key=value entries applied after the config file.
    #[arg(long = "override", short = 'o', value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(args: &Args) -> textfuse::Result<bool> {
    let cmd: Command = args.command.parse()?;
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for entry in &args.overrides {
        cfg.apply_override(entry)?;
    }
    let stdin = io::stdin();
    let stdout = io::stdout();
    run(cmd, &cfg, &mut stdin.lock(), &mut stdout.lock())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(2)
        }
    }
}
