//! Dataset loading: synthetic generation and CSV files.
//!
//! CSV format: UTF-8, comma-separated, optional header row, real-valued
//! feature columns with an integer class label in the last column.

use std::path::Path;

use dpfedsim_core::data::Dataset;
use dpfedsim_core::nn::{Sample, Target};

use crate::config::SourceConfig;
use crate::error::{CliError, Result};

/// Train and (optional) evaluation sets ready for partitioning.
pub struct DataPlan {
    pub train: Dataset,
    pub eval: Option<Dataset>,
}

/// Builds the datasets a config asks for. CSV paths are resolved relative
/// to `base_dir` when they are not absolute.
pub fn build_data(source: &SourceConfig, seed: u64, base_dir: &Path) -> Result<DataPlan> {
    match source {
        SourceConfig::Synthetic {
            classes,
            dim,
            per_class_train,
            per_class_eval,
            separation,
        } => {
            // One generation covers train and eval so both share centroids;
            // the split is per class, train rows first.
            let total_per_class = per_class_train + per_class_eval;
            let full = dpfedsim_core::generate_synthetic(
                *classes,
                *dim,
                total_per_class,
                *separation,
                seed,
            )?;
            let mut train_samples = Vec::with_capacity(classes * per_class_train);
            let mut eval_samples = Vec::with_capacity(classes * per_class_eval);
            for (i, sample) in full.samples.into_iter().enumerate() {
                if i % total_per_class < *per_class_train {
                    train_samples.push(sample);
                } else {
                    eval_samples.push(sample);
                }
            }
            let train = Dataset {
                samples: train_samples,
                feature_dim: *dim,
                num_classes: *classes,
            };
            let eval = (*per_class_eval > 0).then_some(Dataset {
                samples: eval_samples,
                feature_dim: *dim,
                num_classes: *classes,
            });
            Ok(DataPlan { train, eval })
        }
        SourceConfig::Csv { path, eval_path } => {
            let train = load_csv(&resolve(base_dir, path))?;
            let eval = match eval_path {
                Some(p) => {
                    let eval = load_csv(&resolve(base_dir, p))?;
                    if eval.feature_dim != train.feature_dim {
                        return Err(CliError::validation(format!(
                            "eval file has {} features but train has {}",
                            eval.feature_dim, train.feature_dim
                        )));
                    }
                    Some(eval)
                }
                None => None,
            };
            Ok(DataPlan { train, eval })
        }
    }
}

fn resolve(base: &Path, path: &Path) -> std::path::PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Parses a CSV file into a dataset, rejecting non-finite values and ragged
/// rows with the offending line number.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let mut samples = Vec::new();
    let mut feature_dim = None;
    let mut max_label = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 2 {
            return Err(CliError::validation(format!(
                "{} line {line_no}: need at least one feature and a label",
                path.display()
            )));
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f.parse::<f64>()).collect();
        let values = match parsed {
            Ok(values) => values,
            Err(_) if idx == 0 => continue, // header row
            Err(_) => {
                return Err(CliError::validation(format!(
                    "{} line {line_no}: non-numeric field",
                    path.display()
                )));
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::validation(format!(
                "{} line {line_no}: non-finite value",
                path.display()
            )));
        }
        let dim = values.len() - 1;
        match feature_dim {
            None => feature_dim = Some(dim),
            Some(expected) if expected != dim => {
                return Err(CliError::validation(format!(
                    "{} line {line_no}: {dim} features, expected {expected}",
                    path.display()
                )));
            }
            _ => {}
        }
        let label_raw = values[dim];
        if label_raw < 0.0 || label_raw.fract() != 0.0 {
            return Err(CliError::validation(format!(
                "{} line {line_no}: label must be a non-negative integer, got {label_raw}",
                path.display()
            )));
        }
        let label = label_raw as usize;
        max_label = max_label.max(label);
        samples.push(Sample {
            features: values[..dim].to_vec(),
            target: Target::Class(label),
        });
    }
    if samples.is_empty() {
        return Err(CliError::validation(format!(
            "{}: no data rows found",
            path.display()
        )));
    }
    Ok(Dataset {
        feature_dim: feature_dim.unwrap(),
        num_classes: max_label + 1,
        samples,
    })
}
