use beamalign_cli::config::{
    load_train_config, CalibrateConfig, ConfigError, ExperimentConfig, ExportConfig,
    ScatterConfig, SweepConfig,
};
use beamalign_cli::runner::{self, RunnerError};
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "beamalign",
    about = "Hierarchical beam alignment simulator: QSSR, baselines, and self-calibration"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte-Carlo experiment over (strategy, SNR, trial) cells.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Received power vs transmit aperture at fixed SNR.
    SweepAntennas {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// True vs predicted angle pairs at one SNR.
    Scatter {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train the estimator networks and write a checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Continue from the existing checkpoint at the same path.
        #[arg(long, default_value_t = false)]
        resume: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Self-calibrate under sampled impairments; writes the epoch trace.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Generate a channel ensemble in the interchange format.
    ExportChannels {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a channel file and report its contents.
    ImportChannels { file: PathBuf },
}

#[derive(Debug)]
enum AppError {
    Config(ConfigError),
    Runtime(RunnerError),
}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        Self::Config(e)
    }
}

impl From<RunnerError> for AppError {
    fn from(e: RunnerError) -> Self {
        Self::Runtime(e)
    }
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            workers,
            checkpoint,
        } => {
            let cfg = ExperimentConfig::load(&config, seed)?;
            let output = runner::run_experiment(&cfg, checkpoint.as_deref(), workers)?;
            runner::write_experiment(&out, &output)?;
            runner::print_summary(&output.summary);
            println!(
                "wrote {} trial rows to {} (summary: {})",
                output.records.len(),
                out.display(),
                runner::summary_path(&out).display()
            );
            Ok(())
        }
        Command::SweepAntennas {
            config,
            out,
            seed,
            workers,
            checkpoint,
        } => {
            let cfg = SweepConfig::load(&config, seed)?;
            let rows = runner::run_antenna_sweep(&cfg, checkpoint.as_deref(), workers)?;
            runner::write_summary(&out, &rows)?;
            runner::print_summary(&rows);
            println!("wrote {} summary rows to {}", rows.len(), out.display());
            Ok(())
        }
        Command::Scatter {
            config,
            out,
            seed,
            workers,
            checkpoint,
        } => {
            let cfg = ScatterConfig::load(&config, seed)?;
            let csv = runner::run_error_scatter(&cfg, checkpoint.as_deref(), workers)?;
            std::fs::write(&out, csv).map_err(RunnerError::Io)?;
            println!("wrote scatter rows to {}", out.display());
            Ok(())
        }
        Command::Train {
            config,
            checkpoint,
            resume,
            seed,
            workers,
        } => {
            let cfg = load_train_config(&config, seed, workers)?;
            runner::train_command(&cfg, &checkpoint, resume)?;
            Ok(())
        }
        Command::Calibrate {
            config,
            checkpoint,
            out,
            seed,
        } => {
            let cfg = CalibrateConfig::load(&config, seed)?;
            let (trace_csv, state) = runner::calibrate_command(&cfg, &checkpoint)?;
            std::fs::write(&out, trace_csv).map_err(RunnerError::Io)?;
            if let Some(state_out) = &cfg.state_out {
                beamalign::calibration::save_state(state_out, &state)
                    .map_err(RunnerError::Calibration)?;
                println!("calibration state written to {}", state_out.display());
            }
            println!("trace written to {}", out.display());
            Ok(())
        }
        Command::ExportChannels { config, out, seed } => {
            let cfg = ExportConfig::load(&config, seed)?;
            runner::export_command(&cfg, &out)?;
            println!(
                "wrote {} {}x{} channels to {}",
                cfg.count,
                cfg.n_rx,
                cfg.n_tx,
                out.display()
            );
            Ok(())
        }
        Command::ImportChannels { file } => {
            let report = runner::import_command(&file)?;
            println!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(AppError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(AppError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
