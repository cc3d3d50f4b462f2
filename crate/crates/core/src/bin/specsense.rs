use std::error::Error as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use specsense::harness::{self, Command, RunOptions};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    /// Synthesize labeled IQ captures
    Generate,
    /// Featurize a directory of captures into a balanced dataset
    Extract,
    /// Energy detection and centralized LR/MLP reference accuracies
    Baseline,
    /// Federated scenarios with faulty sensors
    Fedsim,
    /// Plot-ready curves and a text summary from fedsim reports
    Report,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Generate => Command::Generate,
            Cmd::Extract => Command::Extract,
            Cmd::Baseline => Command::Baseline,
            Cmd::Fedsim => Command::Fedsim,
            Cmd::Report => Command::Report,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "specsense", version, about = "Federated spectrum sensing simulator")]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// TOML config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
    /// Master seed; overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Generate at full collection scale (10,000 noise / 1,000 per gain windows)
    #[arg(long)]
    paper_scale: bool,
    /// Input path; overrides the command's path in the config
    #[arg(long)]
    input: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let opts = RunOptions {
        config_path: cli.config,
        out_dir: cli.out,
        seed: cli.seed,
        paper_scale: cli.paper_scale,
        input: cli.input,
    };
    match harness::run(cli.command.into(), &opts) {
        Ok(outcome) => {
            if !outcome.summary.is_empty() {
                println!("{}", outcome.summary);
            }
            for a in &outcome.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut msg = format!("error: {e}");
            let mut src = e.source();
            while let Some(s) = src {
                // File wraps an error whose text is already in the message
                if !msg.contains(&s.to_string()) {
                    msg += &format!(": {s}");
                }
                src = s.source();
            }
            eprintln!("{msg}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
