use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ddpm_cli::commands::{self, CommonArgs};

#[derive(Parser)]
#[command(
    name = "ddpm",
    about = "Conditional denoising-diffusion engine for paired image-to-image translation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Suppress progress output.
    #[arg(long)]
    quiet: bool,
}

impl Common {
    fn into_args(self) -> CommonArgs {
        CommonArgs {
            config: self.config,
            seed: self.seed,
            out: self.out,
            quiet: self.quiet,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes per-epoch checkpoints and a loss CSV.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a checkpoint on the test set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate images through the reverse process.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_images: usize,
        /// Timesteps whose states are recorded, e.g. `--save-at 199,100,0`.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        save_at: Vec<usize>,
    },
    /// Corrupt one image at the requested timesteps and write the strip.
    ForwardDemo {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        /// Timesteps to snapshot, e.g. `--timesteps 0,20,40`.
        #[arg(long, value_delimiter = ',')]
        timesteps: Vec<usize>,
        /// Replace the drawn noise with zeros (pure rescaling).
        #[arg(long)]
        noise_off: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, resume } => {
            commands::cmd_train(&common.into_args(), resume.as_deref())
        }
        Command::Eval { common, checkpoint } => {
            commands::cmd_eval(&common.into_args(), &checkpoint)
        }
        Command::Sample {
            common,
            checkpoint,
            n_images,
            save_at,
        } => commands::cmd_sample(&common.into_args(), &checkpoint, n_images, &save_at),
        Command::ForwardDemo {
            common,
            image,
            timesteps,
            noise_off,
        } => commands::cmd_forward_demo(&common.into_args(), &image, &timesteps, noise_off),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
