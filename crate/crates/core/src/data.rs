//! Dataset synthesis and non-IID partitioning across agents.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nn::{Sample, Target};
use crate::rng::{
    next_gamma, next_index, next_standard_normal, shuffle, substream, STREAM_DATA, STREAM_PARTITION,
};

/// A labelled dataset with known dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub feature_dim: usize,
    pub num_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// One agent's local data.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentShard {
    pub agent_id: usize,
    pub samples: Vec<Sample>,
}

impl AgentShard {
    /// Local sample count n_i.
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// How to spread a dataset across agents.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum PartitionScheme {
    Iid,
    /// Label-skewed shards: per class, agent proportions drawn from a
    /// symmetric Dirichlet. Smaller alpha means more heterogeneity.
    Dirichlet {
        alpha: f64,
    },
    /// Each class goes wholesale to agent `class mod agents`.
    ByLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PartitionSpec {
    #[serde(flatten)]
    pub scheme: PartitionScheme,
    pub agents: usize,
    pub seed: u64,
}

impl PartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 {
            return Err(Error::config("partition needs at least one agent"));
        }
        if let PartitionScheme::Dirichlet { alpha } = self.scheme {
            if !(alpha > 0.0) {
                return Err(Error::config("dirichlet alpha must be positive"));
            }
        }
        Ok(())
    }
}

/// Gaussian class blobs: class k's centroid is drawn from
/// N(0, separation^2 I) and its samples scatter around it with unit
/// variance. `separation = 0` collapses every class onto the same blob.
pub fn generate_synthetic(
    classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::config("synthetic data needs at least 2 classes"));
    }
    if dim == 0 {
        return Err(Error::config(
            "synthetic feature dimension must be positive",
        ));
    }
    if !(separation >= 0.0) {
        return Err(Error::config("separation must be non-negative"));
    }
    let mut rng = substream(seed, &[STREAM_DATA]);
    let centroids: Vec<Vec<f64>> = (0..classes)
        .map(|_| {
            (0..dim)
                .map(|_| separation * next_standard_normal(&mut rng))
                .collect()
        })
        .collect();
    let mut samples = Vec::with_capacity(classes * per_class);
    for (label, centroid) in centroids.iter().enumerate() {
        for _ in 0..per_class {
            let features = centroid
                .iter()
                .map(|c| c + next_standard_normal(&mut rng))
                .collect();
            samples.push(Sample {
                features,
                target: Target::Class(label),
            });
        }
    }
    Ok(Dataset {
        samples,
        feature_dim: dim,
        num_classes: classes,
    })
}

/// Splits a dataset into per-agent shards.
///
/// Every sample lands in exactly one shard. Agents left empty by a skewed
/// draw are refilled by moving one random sample from a shard that can spare
/// it, so each agent that can be sampled holds at least one sample.
pub fn partition(dataset: &Dataset, spec: &PartitionSpec) -> Result<Vec<AgentShard>> {
    spec.validate()?;
    if dataset.is_empty() {
        return Err(Error::data("partition: dataset is empty"));
    }
    if spec.agents > dataset.len() {
        return Err(Error::config(format!(
            "cannot spread {} samples over {} agents",
            dataset.len(),
            spec.agents
        )));
    }
    let mut rng = substream(spec.seed, &[STREAM_PARTITION]);
    let n = dataset.len();
    let mut assignment: Vec<usize> = alloc::vec![0; n];

    match spec.scheme {
        PartitionScheme::Iid => {
            let mut order: Vec<usize> = (0..n).collect();
            shuffle(&mut rng, &mut order);
            for (slot, &sample_idx) in order.iter().enumerate() {
                assignment[sample_idx] = slot % spec.agents;
            }
        }
        PartitionScheme::Dirichlet { alpha } => {
            for class in 0..dataset.num_classes.max(1) {
                let weights: Vec<f64> = (0..spec.agents)
                    .map(|_| next_gamma(&mut rng, alpha))
                    .collect();
                let total: f64 = weights.iter().sum();
                // All-zero draws degenerate to a uniform pick.
                let cumulative: Vec<f64> = weights
                    .iter()
                    .scan(0.0, |acc, w| {
                        *acc += if total > 0.0 {
                            w / total
                        } else {
                            1.0 / spec.agents as f64
                        };
                        Some(*acc)
                    })
                    .collect();
                for (idx, sample) in dataset.samples.iter().enumerate() {
                    if sample_class(sample) != Some(class) {
                        continue;
                    }
                    let u = crate::rng::next_f64(&mut rng);
                    let agent = cumulative
                        .iter()
                        .position(|&c| u < c)
                        .unwrap_or(spec.agents - 1);
                    assignment[idx] = agent;
                }
            }
        }
        PartitionScheme::ByLabel => {
            for (idx, sample) in dataset.samples.iter().enumerate() {
                let class = sample_class(sample).unwrap_or(0);
                assignment[idx] = class % spec.agents;
            }
        }
    }

    let mut shards: Vec<AgentShard> = (0..spec.agents)
        .map(|agent_id| AgentShard {
            agent_id,
            samples: Vec::new(),
        })
        .collect();
    for (idx, &agent) in assignment.iter().enumerate() {
        shards[agent].samples.push(dataset.samples[idx].clone());
    }

    repair_empty_shards(&mut shards, &mut rng);
    Ok(shards)
}

fn sample_class(sample: &Sample) -> Option<usize> {
    match sample.target {
        Target::Class(label) => Some(label),
        Target::Real(_) => None,
    }
}

/// Moves one random sample from a donor shard (size >= 2) into each empty
/// shard. Callable only when the dataset has at least as many samples as
/// agents, which `partition` guarantees.
fn repair_empty_shards(shards: &mut [AgentShard], rng: &mut rand_chacha::ChaCha12Rng) {
    for i in 0..shards.len() {
        if !shards[i].is_empty() {
            continue;
        }
        let donors: Vec<usize> = shards
            .iter()
            .enumerate()
            .filter_map(|(j, s)| (s.len() >= 2).then_some(j))
            .collect();
        let donor = donors[next_index(rng, donors.len())];
        let take = next_index(rng, shards[donor].len());
        let sample = shards[donor].samples.swap_remove(take);
        shards[i].samples.push(sample);
    }
}

/// Mean total-variation distance between per-agent class histograms and the
/// global class histogram; 0 means every shard mirrors the global mix.
pub fn mean_label_divergence(shards: &[AgentShard], num_classes: usize) -> f64 {
    let mut global = alloc::vec![0.0f64; num_classes];
    let mut total = 0.0;
    for shard in shards {
        for sample in &shard.samples {
            if let Some(c) = sample_class(sample) {
                global[c] += 1.0;
                total += 1.0;
            }
        }
    }
    if total == 0.0 {
        return 0.0;
    }
    for g in &mut global {
        *g /= total;
    }
    let mut acc = 0.0;
    let mut counted = 0usize;
    for shard in shards {
        if shard.is_empty() {
            continue;
        }
        let mut local = alloc::vec![0.0f64; num_classes];
        for sample in &shard.samples {
            if let Some(c) = sample_class(sample) {
                local[c] += 1.0;
            }
        }
        let n = shard.len() as f64;
        let tv: f64 = local
            .iter()
            .zip(&global)
            .map(|(l, g)| (l / n - g).abs())
            .sum::<f64>()
            / 2.0;
        acc += tv;
        counted += 1;
    }
    acc / counted as f64
}
