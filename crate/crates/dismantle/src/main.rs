use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dismantle::commands::{self, Common};

/// Screw detection and lattice calibration on synthetic data.
///
/// Exit status: 0 success, 2 an acceptance threshold failed, 1 error.
#[derive(Parser, Debug)]
#[command(name = "dismantle", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// JSON run configuration; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed, overriding the config's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl From<CommonArgs> for Common {
    fn from(a: CommonArgs) -> Self {
        Common {
            config: a.config,
            seed: a.seed,
            out: a.out,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write training patches, scene bundles and their manifests.
    SynthDataset(CommonArgs),
    /// Train the recall model and the precision ensemble.
    Train(CommonArgs),
    /// Detection recall, precision and center error on TEG scenes.
    EvalTeg {
        #[command(flatten)]
        common: CommonArgs,
        /// Directory with trained models (default: config, then <out>/models).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Collect the calibration lattice and write it.
    Calibrate(CommonArgs),
    /// Verify local and global-only mapping against the simulated world.
    EvalCalib(CommonArgs),
    /// Monte-Carlo over whole units: detection, mapping, placement budget.
    SimulateUnit {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        models: Option<PathBuf>,
        /// Lattice file from `calibrate`; collected afresh when omitted.
        #[arg(long)]
        lattice: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::SynthDataset(c) => commands::synth_dataset(&c.into()),
        Command::Train(c) => commands::train(&c.into()),
        Command::EvalTeg { common, models } => {
            commands::eval_teg(&common.into(), models.as_deref())
        }
        Command::Calibrate(c) => commands::calibrate(&c.into()),
        Command::EvalCalib(c) => commands::eval_calib(&c.into()),
        Command::SimulateUnit {
            common,
            models,
            lattice,
        } => commands::simulate_unit(&common.into(), models.as_deref(), lattice.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
