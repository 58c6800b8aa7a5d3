use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use metaswarm::config::{parse_config, Mode, RunConfig};
use metaswarm::runner::{self, RunOutcome};
use metaswarm::validate::{ExperimentSuiteConfig, EXPERIMENTS};
use metaswarm::Error;

const THREADS_ENV: &str = "METASWARM_THREADS";

#[derive(Debug, Parser)]
#[command(name = "metaswarm", version, about = "Aggregation-diffusion simulations and metastable mass exchange")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Execute the mode configured in a run file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run validation experiments; exits 1 if any fails.
    Validate {
        /// Experiment name or `all`.
        #[arg(long, default_value = "all")]
        experiment: String,
        /// Config whose `experiment` section supplies parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the experiment names.
    ListExperiments,
    /// Print a complete default config for a mode.
    PrintSchema {
        #[arg(long, default_value = "pde")]
        mode: String,
    },
}

fn configure_threads() -> Result<(), Error> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| Error::ConfigInconsistent(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::ConfigInconsistent(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    }
    Ok(())
}

fn report_outcome(outcome: &RunOutcome) {
    match outcome {
        RunOutcome::Simulation { files } => {
            for f in files {
                println!("wrote {f}");
            }
        }
        RunOutcome::Experiments(reports) => {
            for r in reports {
                print!("{}", r.summary());
            }
        }
    }
}

fn run(cli: Cli) -> Result<bool, Error> {
    match cli.command {
        Command::Run { config, seed, output } => {
            let mut cfg = parse_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            configure_threads()?;
            let outcome = runner::execute(&cfg)?;
            report_outcome(&outcome);
            Ok(outcome.passed())
        }
        Command::Validate { experiment, config, seed, output } => {
            let (suite, cfg_seed, cfg_out) = match config {
                Some(path) => {
                    let cfg = parse_config(&path)?;
                    let suite = cfg.experiment.as_ref().map(|e| e.suite()).unwrap_or_default();
                    (suite, cfg.seed, Some(cfg.output_dir))
                }
                None => (ExperimentSuiteConfig::default(), 0, None),
            };
            let names: Vec<&str> = if experiment == "all" {
                EXPERIMENTS.to_vec()
            } else if EXPERIMENTS.contains(&experiment.as_str()) {
                vec![experiment.as_str()]
            } else {
                return Err(Error::UnknownExperiment(experiment));
            };
            let dir = output.or(cfg_out).unwrap_or_else(|| PathBuf::from("output"));
            configure_threads()?;
            let reports = runner::run_experiments(&names, &suite, seed.unwrap_or(cfg_seed), &dir)?;
            let outcome = RunOutcome::Experiments(reports);
            report_outcome(&outcome);
            Ok(outcome.passed())
        }
        Command::ListExperiments => {
            for name in EXPERIMENTS {
                println!("{name}");
            }
            Ok(true)
        }
        Command::PrintSchema { mode } => {
            let mode = Mode::parse(&mode)?;
            print!("{}", RunConfig::default_for(mode).to_json()?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) if e.is_config_error() => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
