use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use syncfin::commands::{classify_cmd, exit_code_for, forensic_cmd, run, worlds_cmd};

#[derive(Parser)]
#[command(name = "syncfin", version, about = "Deterministic simulator for a finality-signature gadget over a synchronous underlay")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and report safety, liveness and forensics.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds to sweep.
        #[arg(long, default_value_t = 1)]
        runs: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify the three protocols by running the scenario battery.
    Classify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Seeds per battery scenario.
        #[arg(long, default_value_t = 4)]
        runs: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analyse an evidence file and name the double signers.
    Forensic {
        #[arg(long)]
        evidence: PathBuf,
        /// Scenario supplying n and f.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record world 0 and replay the indistinguishable worlds.
    Worlds {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut stdout = std::io::stdout().lock();
    let result = match cli.command {
        Command::Run { config, seed, runs, out } => run(config.as_deref(), seed, runs, out.as_deref(), &mut stdout),
        Command::Classify { seed, runs, out } => classify_cmd(seed, runs, out.as_deref(), &mut stdout),
        Command::Forensic { evidence, config, out } => forensic_cmd(&evidence, config.as_deref(), out.as_deref(), &mut stdout),
        Command::Worlds { config, seed, out } => worlds_cmd(config.as_deref(), seed, out.as_deref(), &mut stdout),
    };
    let code = result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        exit_code_for(&e)
    });
    ExitCode::from(code as u8)
}
