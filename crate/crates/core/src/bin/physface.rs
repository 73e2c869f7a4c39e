use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use physface::pipeline::{run_command, Command, RunConfig};
use physface::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    GenCorpus,
    Train,
    Fit,
    Extract,
    Simulate,
    Evaluate,
    StudyResolution,
    Ablate,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenCorpus => Command::GenCorpus,
            Cmd::Train => Command::Train,
            Cmd::Fit => Command::Fit,
            Cmd::Extract => Command::Extract,
            Cmd::Simulate => Command::Simulate,
            Cmd::Evaluate => Command::Evaluate,
            Cmd::StudyResolution => Command::StudyResolution,
            Cmd::Ablate => Command::Ablate,
        }
    }
}

/// Train, fit, extract and simulate physical face models on the phantom corpus.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML run configuration layered over its `profile` (desk by default).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; defaults to runs/<command>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a config key, e.g. --set train.schedule.epochs=50
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command: Command = args.command.into();
    let mut overrides = args.overrides.clone();
    if let Some(s) = args.seed {
        overrides.push(format!("seed={s}"));
    }
    let result = RunConfig::load(args.config.as_deref(), &overrides).and_then(|cfg| {
        let out = args.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
        run_command(command, &cfg, &out).map(|s| (s, out))
    });
    match result {
        Ok((summary, out)) => {
            for line in &summary.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", summary.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(e) if e.is_config() => {
            eprintln!("input error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("numerical failure: {e}");
            ExitCode::from(3)
        }
    }
}
