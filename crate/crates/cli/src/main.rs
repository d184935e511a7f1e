use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simplegrowth_cli::{
    cmd_eval, cmd_gradcheck, cmd_interpolate, cmd_reconstruct, cmd_sample, cmd_train, parse_indices, CliError,
    DataSpec, EXIT_CONFIG, INTERPOLATION_STEPS,
};

#[derive(Parser)]
#[command(name = "simplegrowth", version, about = "Train and inspect SimpleGrowth autoencoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a run file, writing metrics.csv, model.sgck and run.log
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Originals beside eval-mode reconstructions as a PPM grid
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode the latent line between two images
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value = "0,1")]
        indices: String,
        #[arg(long, default_value_t = INTERPOLATION_STEPS)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode uniform random latents
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print SSIM, MS-SSIM and Fréchet distance as one key=value line
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: String,
        #[arg(long, default_value_t = 4096)]
        count: usize,
        #[arg(long, default_value = "raw_pool")]
        embedder: String,
    },
    /// Finite-difference check of every backward rule, layer and the model
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn data(s: &str) -> Result<DataSpec, CliError> {
    s.parse().map_err(|e| CliError {
        code: EXIT_CONFIG,
        message: format!("--data: {e}"),
    })
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Train { config, out } => cmd_train(&config, &out),
        Command::Reconstruct {
            checkpoint,
            data: d,
            count,
            out,
        } => cmd_reconstruct(&checkpoint, &data(&d)?, count, &out),
        Command::Interpolate {
            checkpoint,
            data: d,
            indices,
            steps,
            out,
        } => cmd_interpolate(&checkpoint, &data(&d)?, parse_indices(&indices)?, steps, &out),
        Command::Sample {
            checkpoint,
            count,
            seed,
            out,
        } => cmd_sample(&checkpoint, count, seed, &out),
        Command::Eval {
            checkpoint,
            data: d,
            count,
            embedder,
        } => cmd_eval(&checkpoint, &data(&d)?, count, &embedder),
        Command::Gradcheck { inject_fault } => cmd_gradcheck(inject_fault.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(text) => {
            println!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
