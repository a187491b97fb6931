//! Grid sweeps over the regularization factor and the sparsity, with paired
//! seeds per cell and a baseline row for reference.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::runner::{execute_run, RunSummary};

/// Default grids for the two swept knobs.
pub const DEFAULT_LAMBDAS: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];
pub const DEFAULT_SPARSITIES: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub sparsity: f64,
    pub baseline: bool,
    pub seeds: Vec<u64>,
    pub final_accuracies: Vec<Option<f64>>,
    pub mean_final_accuracy: Option<f64>,
    pub gain_vs_baseline: Option<f64>,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

pub struct SweepPlan<'a> {
    pub base: &'a ExperimentConfig,
    pub base_dir: &'a Path,
    pub out_dir: &'a Path,
    pub lambdas: Vec<f64>,
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
}

/// Runs the Cartesian grid plus a flagged (lambda = 0, sparsity = 0)
/// baseline cell, pairing seeds across cells. Cells whose run directory
/// already holds a summary with the same config hash are skipped, which
/// makes an interrupted sweep resumable.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    if plan.seeds.is_empty() {
        return Err(CliError::validation("sweep needs at least one seed"));
    }
    let mut grid: Vec<(f64, f64, bool)> = vec![(0.0, 0.0, true)];
    for &lambda in &plan.lambdas {
        for &sparsity in &plan.sparsities {
            if lambda == 0.0 && sparsity == 0.0 {
                continue;
            }
            grid.push((lambda, sparsity, false));
        }
    }

    let mut cells = Vec::with_capacity(grid.len());
    for (lambda, sparsity, baseline) in grid {
        let mut final_accuracies = Vec::with_capacity(plan.seeds.len());
        let mut skipped = 0usize;
        for &seed in &plan.seeds {
            let mut config = plan.base.clone();
            config.train.lambda = lambda;
            config.train.sparsity = sparsity;
            config.seed = seed;
            config.output_dir = None;
            let cell_dir = plan
                .out_dir
                .join(format!("cell_l{lambda}_c{sparsity}"))
                .join(format!("seed{seed}"));
            let hash = config.content_hash();
            match read_existing_summary(&cell_dir)? {
                Some(summary) if summary.config_hash == hash => {
                    skipped += 1;
                    final_accuracies.push(summary.final_eval_accuracy);
                    continue;
                }
                _ => {}
            }
            let artifacts = execute_run(&config, plan.base_dir, &cell_dir)?;
            final_accuracies.push(artifacts.summary.final_eval_accuracy);
        }
        let mean = mean_of(&final_accuracies);
        cells.push(SweepCell {
            lambda,
            sparsity,
            baseline,
            seeds: plan.seeds.clone(),
            final_accuracies,
            mean_final_accuracy: mean,
            gain_vs_baseline: None,
            skipped,
        });
    }

    let baseline_mean = cells
        .iter()
        .find(|c| c.baseline)
        .and_then(|c| c.mean_final_accuracy);
    for cell in &mut cells {
        cell.gain_vs_baseline = match (cell.mean_final_accuracy, baseline_mean) {
            (Some(a), Some(b)) => Some(a - b),
            _ => None,
        };
    }

    let report = SweepReport { cells };
    write_summary(&report, plan.out_dir)?;
    Ok(report)
}

fn read_existing_summary(cell_dir: &Path) -> Result<Option<RunSummary>> {
    let path = cell_dir.join("summary.json");
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    match serde_json::from_str(&text) {
        Ok(summary) => Ok(Some(summary)),
        // A mangled summary means the cell reruns.
        Err(_) => Ok(None),
    }
}

fn mean_of(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (present.len() == values.len() && !present.is_empty())
        .then(|| present.iter().sum::<f64>() / present.len() as f64)
}

fn write_summary(report: &SweepReport, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(
        out_dir.join("sweep_summary.json"),
        serde_json::to_string_pretty(report).map_err(|e| CliError::runtime(e.to_string()))?,
    )?;
    let mut csv = std::fs::File::create(out_dir.join("sweep_summary.csv"))?;
    writeln!(
        csv,
        "lambda,sparsity,baseline,mean_final_accuracy,gain_vs_baseline"
    )?;
    for cell in &report.cells {
        writeln!(
            csv,
            "{},{},{},{},{}",
            cell.lambda,
            cell.sparsity,
            cell.baseline,
            cell.mean_final_accuracy
                .map_or(String::new(), |v| v.to_string()),
            cell.gain_vs_baseline
                .map_or(String::new(), |v| v.to_string()),
        )?;
    }
    Ok(())
}
