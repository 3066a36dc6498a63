use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use loadgan_cli::{
    cmd_evaluate, cmd_generate, cmd_gradcheck, cmd_ingest, cmd_synthdata, cmd_train, CliResult,
    EvaluateArgs, GenerateArgs, IngestArgs, SynthArgs, TrainArgs, EXIT_INPUT,
};

/// Train and evaluate a recurrent GAN for daily residential load patterns.
#[derive(Parser)]
#[command(name = "loadgan", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn hourly meter readings into normalized daily profiles.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Optional JSON file with kept and dropped day counts.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a seeded mixture of archetype profiles.
    Synthdata {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run autoencoder, supervisor and joint training with checkpoint scoring.
    Train {
        #[arg(long)]
        profiles: PathBuf,
        /// JSON training config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Progress line every N epochs (0 for none).
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Sample profiles from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Compare generated profiles with real ones.
    Evaluate {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify backpropagation against finite differences on small networks.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Ingest { input, output, report } => {
            cmd_ingest(&IngestArgs { input, output, report }).map(drop)
        }
        Command::Synthdata { n, seed, output } => cmd_synthdata(&SynthArgs { n, seed, output }).map(drop),
        Command::Train { profiles, config, out_dir, log_every } => cmd_train(&TrainArgs {
            profiles,
            config,
            out_dir,
            log_every,
        })
        .map(drop),
        Command::Generate { checkpoint, n, seed, output } => cmd_generate(&GenerateArgs {
            checkpoint,
            n,
            seed,
            output,
        })
        .map(drop),
        Command::Evaluate { real, gen, out_dir, seed } => {
            cmd_evaluate(&EvaluateArgs { real, gen, out_dir, seed }).map(drop)
        }
        Command::Gradcheck { seed } => cmd_gradcheck(seed).map(drop),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
