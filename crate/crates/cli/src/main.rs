use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hybrid_attitude_cli::{list_scenarios, prepare, run_scenario, Overrides, RunError};

#[derive(Parser)]
#[command(name = "hatt", version, about = "Hybrid attitude tracking scenario runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Tweaks {
    /// Noise seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Solver step in seconds.
    #[arg(long)]
    dt: Option<f64>,
    /// Simulated time in seconds.
    #[arg(long)]
    t_max: Option<f64>,
}

impl Tweaks {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            dt: self.dt,
            t_max: self.t_max,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario file or bundled scenario and write its artifacts.
    Run {
        /// Path to a scenario file, or the name of a bundled scenario.
        config: String,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        no_plots: bool,
        #[command(flatten)]
        tweaks: Tweaks,
    },
    /// List bundled scenarios.
    List,
    /// Check a scenario without running it.
    Validate {
        config: String,
        #[command(flatten)]
        tweaks: Tweaks,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<RunError>().map_or(2, RunError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::List => {
            for name in list_scenarios() {
                println!("{name}");
            }
            Ok(0)
        }
        Command::Validate { config, tweaks } => {
            let scenario = prepare(&config, &tweaks.overrides()).map_err(RunError::from)?;
            for w in &scenario.warnings {
                println!("warning: {w}");
            }
            println!("{}: ok ({} members)", scenario.name, scenario.members.len());
            Ok(0)
        }
        Command::Run {
            config,
            out_dir,
            no_plots,
            tweaks,
        } => {
            let scenario = prepare(&config, &tweaks.overrides()).map_err(RunError::from)?;
            let summary = run_scenario(&scenario, &out_dir, !no_plots)?;
            print!("{}", summary.text);
            println!("wrote {} files to {}", summary.files.len(), out_dir.join(&scenario.name).display());
            Ok(summary.exit_code() as u8)
        }
    }
}
