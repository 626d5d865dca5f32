use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use coupled_dr::experiments::{report, run_experiment, ExperimentConfig, ExperimentKind, Scale};
use coupled_dr::Error;

#[derive(Parser)]
#[command(name = "coupled-dr", version, about = "Coupled goal-oriented input-output dimension reduction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Desk,
    Full,
}

impl From<ScaleArg> for Scale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Desk => Scale::Desk,
            ScaleArg::Full => Scale::Full,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write CSV files plus manifest.json.
    Run {
        /// conddiff-goal, conddiff-sobol, conddiff-coupled, conddiff-convergence,
        /// conddiff-rank-sweep or burgers-boed
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        /// Preset for keys the config omits (overrides `scale` in the file).
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Parse and validate a config, then print it with all defaults filled in.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        scale: Option<ScaleArg>,
    },
    /// Summarize a finished run directory and check its file hashes.
    Report { dir: PathBuf },
}

fn exit_code(err: &Error) -> u8 {
    if err.is_config() {
        2
    } else {
        3
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run {
            experiment,
            config,
            scale,
            output_dir,
        } => {
            let kind: ExperimentKind = experiment.parse()?;
            let mut cfg = ExperimentConfig::from_file(&config, scale.map(Into::into))?;
            if let Some(dir) = output_dir {
                cfg.output_dir = dir;
            }
            let outcome = run_experiment(kind, &cfg)?;
            println!("{} finished; outputs in {}", kind, outcome.dir.display());
            for f in &outcome.manifest.files {
                println!("  {}", f.name);
            }
        }
        Command::Validate { config, scale } => {
            let cfg = ExperimentConfig::from_file(&config, scale.map(Into::into))?;
            print!("{}", cfg.to_toml());
        }
        Command::Report { dir } => print!("{}", report(&dir)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
