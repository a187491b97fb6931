//! Executes one configured experiment and persists its run directory:
//! `resolved_config.json`, `metrics.jsonl` (one round per line), and
//! `summary.json`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dpfedsim_core::data::{partition, PartitionSpec};
use dpfedsim_core::federation::{run_experiment, ExperimentOutput};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::dataset::build_data;
use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Final line of a run, written as `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_train_loss: Option<f64>,
    pub final_eval_accuracy: Option<f64>,
    pub epsilon_spent: Option<f64>,
    pub resolved_sigma: f64,
    pub rounds_executed: u32,
    pub contributing_rounds: u32,
    pub wall_time_ms: u128,
    pub config_hash: String,
    pub version: String,
}

/// Wrapper stored as `resolved_config.json`; makes every run directory
/// self-describing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub resolved_delta: f64,
    pub version: String,
}

pub struct RunArtifacts {
    pub output: ExperimentOutput,
    pub summary: RunSummary,
    pub run_dir: PathBuf,
}

/// Runs the experiment described by `config` and writes the run directory.
/// `base_dir` anchors relative dataset paths (normally the config's parent).
pub fn execute_run(
    config: &ExperimentConfig,
    base_dir: &Path,
    run_dir: &Path,
) -> Result<RunArtifacts> {
    config.validate()?;
    let started = Instant::now();

    let plan = build_data(&config.data.source, config.seed, base_dir)?;
    let shards = partition(
        &plan.train,
        &PartitionSpec {
            scheme: config.data.partition,
            agents: config.train.agents,
            seed: config.seed,
        },
    )?;

    let output = run_experiment(
        &config.model_spec(),
        &config.train_config(),
        &config.dp_config(),
        &shards,
        plan.eval.as_ref().map(|d| d.samples.as_slice()),
    )?;

    let summary = RunSummary {
        final_train_loss: output.metrics.last().and_then(|m| m.train_loss),
        final_eval_accuracy: output.metrics.last().and_then(|m| m.eval_accuracy),
        epsilon_spent: output.metrics.iter().rev().find_map(|m| m.epsilon_spent),
        resolved_sigma: output.resolved_sigma,
        rounds_executed: output.metrics.len() as u32,
        contributing_rounds: output.metrics.iter().filter(|m| m.contributors > 0).count() as u32,
        wall_time_ms: started.elapsed().as_millis(),
        config_hash: config.content_hash(),
        version: VERSION.to_string(),
    };

    write_run_dir(config, &output, &summary, run_dir)?;
    Ok(RunArtifacts {
        output,
        summary,
        run_dir: run_dir.to_path_buf(),
    })
}

fn write_run_dir(
    config: &ExperimentConfig,
    output: &ExperimentOutput,
    summary: &RunSummary,
    run_dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;

    let resolved = ResolvedConfig {
        config: config.clone(),
        seed: config.seed,
        resolved_delta: config.dp_config().delta,
        version: VERSION.to_string(),
    };
    std::fs::write(
        run_dir.join("resolved_config.json"),
        serde_json::to_string_pretty(&resolved).map_err(|e| CliError::runtime(e.to_string()))?,
    )?;

    let mut metrics = std::fs::File::create(run_dir.join("metrics.jsonl"))?;
    for row in &output.metrics {
        let line = serde_json::to_string(row).map_err(|e| CliError::runtime(e.to_string()))?;
        writeln!(metrics, "{line}")?;
    }

    std::fs::write(
        run_dir.join("summary.json"),
        serde_json::to_string_pretty(summary).map_err(|e| CliError::runtime(e.to_string()))?,
    )?;
    Ok(())
}

/// Output directory precedence: explicit flag, then the `DPFEDSIM_OUT`
/// environment variable, then the config's `output_dir`, then a seed-tagged
/// directory under `runs/`.
pub fn resolve_run_dir(
    flag: Option<&Path>,
    config: &ExperimentConfig,
    config_path: &Path,
) -> PathBuf {
    if let Some(dir) = flag {
        return dir.to_path_buf();
    }
    if let Ok(dir) = std::env::var("DPFEDSIM_OUT") {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    if let Some(dir) = &config.output_dir {
        return dir.clone();
    }
    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| String::from("run"));
    PathBuf::from("runs").join(format!("{stem}-seed{}", config.seed))
}
