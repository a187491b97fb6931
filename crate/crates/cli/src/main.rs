use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dpfedsim_cli::config::ExperimentConfig;
use dpfedsim_cli::error::{CliError, Result};
use dpfedsim_cli::runner::{execute_run, resolve_run_dir};
use dpfedsim_cli::sweep::{run_sweep, SweepPlan, DEFAULT_LAMBDAS, DEFAULT_SPARSITIES};
use dpfedsim_cli::{report, runner};

#[derive(Parser)]
#[command(
    name = "dpfedsim",
    version,
    about = "Federated averaging simulator with user-level differential privacy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config and persist its metrics.
    Run {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        /// Output directory (overrides DPFEDSIM_OUT and the config).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Override the config's seed.
        #[arg(long, value_name = "U64")]
        seed: Option<u64>,
        /// Print the summary as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Find the smallest noise multiplier meeting a privacy target.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        #[arg(long)]
        rounds: u64,
        #[arg(long, value_name = "PROB")]
        sample_prob: f64,
        #[arg(long)]
        json: bool,
    },
    /// Run a (lambda x sparsity) grid with paired seeds.
    Sweep {
        #[arg(long, value_name = "PATH")]
        config: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Comma-separated regularization factors.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Comma-separated sparsity levels.
        #[arg(long, value_delimiter = ',')]
        sparsities: Option<Vec<f64>>,
        /// Comma-separated seeds, paired across cells.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        json: bool,
    },
    /// Tabulate finished runs into report.csv.
    Report {
        #[arg(long, value_name = "DIR")]
        metrics: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            out,
            seed,
            json,
        } => {
            let mut experiment = ExperimentConfig::from_file(&config)?;
            if let Some(seed) = seed {
                experiment.seed = seed;
            }
            let run_dir = resolve_run_dir(out.as_deref(), &experiment, &config);
            let base_dir = config
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            let artifacts = execute_run(&experiment, &base_dir, &run_dir)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&artifacts.summary)
                        .map_err(|e| CliError::runtime(e.to_string()))?
                );
            } else {
                let s = &artifacts.summary;
                println!("run finished: {}", artifacts.run_dir.display());
                println!("  rounds executed     {}", s.rounds_executed);
                println!("  resolved sigma      {}", s.resolved_sigma);
                match s.final_eval_accuracy {
                    Some(acc) => println!("  final eval accuracy {acc:.4}"),
                    None => println!("  final eval accuracy n/a"),
                }
                match s.final_train_loss {
                    Some(loss) => println!("  final train loss    {loss:.6}"),
                    None => println!("  final train loss    n/a"),
                }
                match s.epsilon_spent {
                    Some(eps) => println!("  epsilon spent       {eps:.4}"),
                    None => println!("  epsilon spent       none (zero noise)"),
                }
                println!("  wall time           {} ms", s.wall_time_ms);
            }
            Ok(())
        }
        Command::Calibrate {
            epsilon,
            delta,
            rounds,
            sample_prob,
            json,
        } => {
            let result = dpfedsim_core::calibrate_sigma(epsilon, delta, rounds, sample_prob)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&result)
                        .map_err(|e| CliError::runtime(e.to_string()))?
                );
            } else {
                println!("sigma                {}", result.sigma);
                println!("achieved epsilon     {}", result.achieved_epsilon);
                println!("bisection iterations {}", result.iterations);
            }
            Ok(())
        }
        Command::Sweep {
            config,
            out,
            lambdas,
            sparsities,
            seeds,
            json,
        } => {
            let experiment = ExperimentConfig::from_file(&config)?;
            let out_dir =
                out.unwrap_or_else(|| resolve_run_dir(None, &experiment, &config).join("sweep"));
            let base_dir = config
                .parent()
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("."));
            let plan = SweepPlan {
                base: &experiment,
                base_dir: &base_dir,
                out_dir: &out_dir,
                lambdas: lambdas.unwrap_or_else(|| DEFAULT_LAMBDAS.to_vec()),
                sparsities: sparsities.unwrap_or_else(|| DEFAULT_SPARSITIES.to_vec()),
                seeds: seeds.unwrap_or_else(|| vec![experiment.seed]),
            };
            let sweep_report = run_sweep(&plan)?;
            if json {
                println!(
                    "{}",
                    serde_json::to_string_pretty(&sweep_report)
                        .map_err(|e| CliError::runtime(e.to_string()))?
                );
            } else {
                println!(
                    "sweep finished: {} cells -> {}",
                    sweep_report.cells.len(),
                    out_dir.display()
                );
                for cell in &sweep_report.cells {
                    println!(
                        "  lambda {:<5} sparsity {:<5} {} acc {} gain {}",
                        cell.lambda,
                        cell.sparsity,
                        if cell.baseline {
                            "[baseline]"
                        } else {
                            "          "
                        },
                        cell.mean_final_accuracy
                            .map_or_else(|| String::from("n/a"), |v| format!("{v:.4}")),
                        cell.gain_vs_baseline
                            .map_or_else(|| String::from("n/a"), |v| format!("{v:+.4}")),
                    );
                }
            }
            Ok(())
        }
        Command::Report { metrics, out } => {
            let out_dir = out.unwrap_or_else(|| metrics.clone());
            let path = report::write_report(&metrics, &out_dir)?;
            println!(
                "report written: {} (version {})",
                path.display(),
                runner::VERSION
            );
            Ok(())
        }
    }
}
