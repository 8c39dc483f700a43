use clap::{Args, Parser, Subcommand};
use refuel_core::checks::run_check_suite;
use refuel_core::harness::{
    compare_methods, discover_methods, gen_covariate_shift_mdp, gen_random_mdp, run_experiment, ExperimentConfig, RandomMdpSpec,
};
use refuel_core::io::{to_json_string, write_json};
use refuel_core::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Multi-turn policy optimization experiments on small layered MDPs.
#[derive(Parser)]
#[command(name = "refuel", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the self-check suite and print a JSON report.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate an instance as JSON.
    GenMdp {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Train the configured methods and write their artifacts.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Tabulate final metrics per method as CSV.
    Compare {
        #[command(flatten)]
        exp: Option<ExperimentArgs>,
        /// Read artifacts from this directory instead of a config.
        #[arg(long, conflicts_with = "config")]
        dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, env = "REFUEL_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenKind {
    /// Layered instance with random transitions and rewards.
    Random {
        #[arg(long)]
        horizon: usize,
        #[arg(long)]
        states: usize,
        #[arg(long)]
        actions: usize,
        #[arg(long)]
        branching: usize,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        reward_min: f64,
        #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
        reward_max: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stress instance for offline rollins, with its reference policy.
    CovariateShift {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        reference_out: Option<PathBuf>,
    },
}

enum Failure {
    Check,
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::MissingArtifact(_) => 3,
        Error::Json(j) if j.is_io() => 3,
        _ => 2,
    }
}

fn emit<S: serde::Serialize>(value: &S, out: Option<&Path>) -> Result<(), Error> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            print!("{}", to_json_string(value)?);
            Ok(())
        }
    }
}

fn load_config(args: &ExperimentArgs) -> Result<ExperimentConfig, Error> {
    let mut config = ExperimentConfig::from_path(&args.config).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("{}: {io}", args.config.display())),
        other => other,
    })?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(dir) = &args.output_dir {
        config.output_dir = dir.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Check { seed, out } => {
            let report = run_check_suite(seed)?;
            emit(&report, out.as_deref())?;
            for c in report.checks.iter().filter(|c| !c.passed) {
                eprintln!("check failed: {} measured {}", c.name, c.measured);
            }
            if !report.passed {
                return Err(Failure::Check);
            }
        }
        Command::GenMdp { kind } => match kind {
            GenKind::Random {
                horizon,
                states,
                actions,
                branching,
                reward_min,
                reward_max,
                seed,
                out,
            } => {
                let spec = RandomMdpSpec {
                    horizon,
                    states_per_turn: states,
                    actions,
                    branching,
                    reward_range: [reward_min, reward_max],
                    seed,
                };
                emit(&gen_random_mdp(&spec)?, out.as_deref())?;
            }
            GenKind::CovariateShift { seed, out, reference_out } => {
                let (mdp, reference) = gen_covariate_shift_mdp(seed);
                emit(&mdp, out.as_deref())?;
                if let Some(path) = reference_out {
                    write_json(&path, &reference)?;
                }
            }
        },
        Command::Run { exp } => {
            let config = load_config(&exp)?;
            let outcome = run_experiment(&config)?;
            for m in &outcome.methods {
                eprintln!(
                    "{}: final J {:.6}, {:.2}s",
                    m.method,
                    m.run.final_metrics().return_j,
                    m.wall_seconds
                );
            }
        }
        Command::Compare { exp, dir } => {
            let (dir, methods) = match (exp, dir) {
                (_, Some(dir)) => {
                    let methods = discover_methods(&dir);
                    (dir, methods)
                }
                (Some(exp), None) => {
                    let config = load_config(&exp)?;
                    let present = discover_methods(&config.output_dir);
                    if config.methods.iter().any(|m| !present.contains(m)) {
                        run_experiment(&config)?;
                    }
                    (config.output_dir.clone(), config.methods.clone())
                }
                (None, None) => return Err(Error::Config("compare needs --config or --dir".into()).into()),
            };
            if methods.is_empty() {
                return Err(Error::MissingArtifact(format!("no method artifacts under {}", dir.display())).into());
            }
            print!("{}", compare_methods(&dir, &methods)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check) => ExitCode::from(1),
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
