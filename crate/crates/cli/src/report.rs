//! Tabulates finished runs into CSV: per-round norm-distribution quantiles,
//! accuracy curves, and the privacy-spend trajectory.

use std::io::Write;
use std::path::{Path, PathBuf};

use dpfedsim_core::federation::RoundMetrics;

use crate::error::{CliError, Result};

/// Finds every `metrics.jsonl` under `dir` (including `dir` itself holding
/// one directly), sorted by path for stable output.
pub fn find_metrics_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let direct = dir.join("metrics.jsonl");
    if direct.is_file() {
        found.push(direct);
    }
    walk(dir, &mut found)?;
    found.sort();
    found.dedup();
    Ok(found)
}

fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = match std::fs::read_dir(dir) {
        Ok(entries) => entries,
        Err(e) => {
            return Err(CliError::runtime(format!(
                "cannot read {}: {e}",
                dir.display()
            )))
        }
    };
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == "metrics.jsonl") {
            found.push(path);
        }
    }
    Ok(())
}

pub fn load_metrics(path: &Path) -> Result<Vec<RoundMetrics>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: RoundMetrics = serde_json::from_str(line)
            .map_err(|e| CliError::runtime(format!("{} line {}: {e}", path.display(), idx + 1)))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Writes `report.csv` under `out_dir`, one row per (run, round).
pub fn write_report(metrics_dir: &Path, out_dir: &Path) -> Result<PathBuf> {
    let files = find_metrics_files(metrics_dir)?;
    if files.is_empty() {
        return Err(CliError::runtime(format!(
            "no metrics.jsonl found under {}",
            metrics_dir.display()
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let out_path = out_dir.join("report.csv");
    let mut out = std::fs::File::create(&out_path)?;
    writeln!(
        out,
        "run,round,cohort_size,contributors,norm_min,norm_q25,norm_median,norm_q75,norm_max,\
         clip_fraction,alpha_bar,beta_bar,train_loss,eval_accuracy,epsilon"
    )?;
    for file in &files {
        let run = file
            .parent()
            .map(|p| {
                p.strip_prefix(metrics_dir)
                    .unwrap_or(p)
                    .to_string_lossy()
                    .replace(',', "_")
            })
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| String::from("."));
        for row in load_metrics(file)? {
            let mut norms = row.pre_clip_norms.clone();
            norms.sort_by(f64::total_cmp);
            writeln!(
                out,
                "{run},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                row.round,
                row.cohort_size,
                row.contributors,
                fmt(quantile(&norms, 0.0)),
                fmt(quantile(&norms, 0.25)),
                fmt(quantile(&norms, 0.5)),
                fmt(quantile(&norms, 0.75)),
                fmt(quantile(&norms, 1.0)),
                fmt_opt(row.clip_fraction),
                fmt_opt(row.alpha_bar),
                fmt_opt(row.beta_bar),
                fmt_opt(row.train_loss),
                fmt_opt(row.eval_accuracy),
                fmt_opt(row.epsilon_spent),
            )?;
        }
    }
    Ok(out_path)
}

fn fmt(value: f64) -> String {
    if value.is_finite() {
        value.to_string()
    } else {
        String::new()
    }
}

fn fmt_opt(value: Option<f64>) -> String {
    value.map_or_else(String::new, fmt)
}
