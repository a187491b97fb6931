//! The server round loop with regularized, sparsified, clipped, and noised
//! local updates.
//!
//! Per round: Poisson-sample a cohort, run every cohort agent's local update
//! (regularized descent, utility-ranked sparsification, norm clipping,
//! per-agent Gaussian noise), average the uploads into the global model, and
//! advance the privacy ledger. All randomness flows through streams keyed by
//! `(experiment seed, round, agent)`, so results do not depend on the order
//! agents are evaluated in.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use rand_chacha::ChaCha12Rng;

use crate::accountant::{calibrate_sigma, PrivacyLedger};
use crate::blur::{blur_gradient, discount_trace, BlurConfig};
use crate::data::AgentShard;
use crate::dp::{add_gaussian_noise, clip, DpConfig};
use crate::error::{Error, Result};
use crate::lus::{build_mask, sparsify, utility_cost, SparsityConfig};
use crate::nn::{MlpModel, ModelSpec, Sample};
use crate::params::ParamVector;
use crate::rng::{
    next_f64, next_index, substream, STREAM_BATCH, STREAM_COHORT, STREAM_INIT, STREAM_NOISE,
};

/// Training-side knobs of one experiment.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub local_lr: f64,
    pub server_lr: f64,
    /// Local steps Q per selected agent per round.
    pub local_steps: u32,
    /// Communication rounds T.
    pub rounds: u32,
    pub batch_size: usize,
    /// BLUR regularization factor; zero disables it.
    pub lambda: f64,
    /// LUS sparsity c in [0, 1); zero disables it.
    pub sparsity: f64,
    /// Number of agents N; must match the shard list.
    pub num_agents: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.local_lr > 0.0) {
            return Err(Error::config("train.local_lr must be positive"));
        }
        if !(self.server_lr > 0.0) {
            return Err(Error::config("train.server_lr must be positive"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("train.local_steps must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size must be at least 1"));
        }
        if self.num_agents == 0 {
            return Err(Error::config("train.num_agents must be at least 1"));
        }
        if self.lambda < 0.0 {
            return Err(Error::config("train.lambda must be >= 0"));
        }
        if self.lambda * self.local_lr >= 1.0 {
            return Err(Error::config(format!(
                "train.lambda * train.local_lr must be < 1 (got {} * {} = {})",
                self.lambda,
                self.local_lr,
                self.lambda * self.local_lr
            )));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::config("train.sparsity must be in [0, 1)"));
        }
        Ok(())
    }
}

/// Everything one agent needs for its local pipeline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalUpdateConfig {
    pub local_lr: f64,
    pub local_steps: u32,
    pub batch_size: usize,
    pub lambda: f64,
    pub sparsity: f64,
    pub clip_threshold: f64,
    pub noise_multiplier: f64,
}

impl LocalUpdateConfig {
    fn from_parts(train: &TrainConfig, dp: &DpConfig, sigma: f64) -> Self {
        LocalUpdateConfig {
            local_lr: train.local_lr,
            local_steps: train.local_steps,
            batch_size: train.batch_size,
            lambda: train.lambda,
            sparsity: train.sparsity,
            clip_threshold: dp.clip_threshold,
            noise_multiplier: sigma,
        }
    }
}

/// Per-agent facts about one local update.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AgentMetrics {
    pub agent_id: usize,
    /// Update norm before sparsification.
    pub raw_norm: f64,
    /// Update norm after sparsification, before clipping.
    pub pre_clip_norm: f64,
    /// Sparsification norm ratio; 1 when the raw update had zero norm.
    pub beta: f64,
    /// Clip attenuation `min(1, S / pre_clip_norm)`.
    pub alpha: f64,
    pub clip_factor: f64,
    pub clipped: bool,
    /// Mean per-step discount factor over the local trajectory.
    pub mean_discount: f64,
    /// Local steps whose pre-step distance from the anchor exceeded S.
    pub active_steps: usize,
    pub zero_norm: bool,
}

/// The noised upload plus its metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentUpdate {
    pub noised: ParamVector,
    pub metrics: AgentMetrics,
}

/// One row of the per-round metrics series.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RoundMetrics {
    pub round: u32,
    /// Realized cohort size |P_t| (sampled, including any diverged agents).
    pub cohort_size: usize,
    /// Agents whose upload entered the aggregate.
    pub contributors: usize,
    pub raw_norms: Vec<f64>,
    pub pre_clip_norms: Vec<f64>,
    pub betas: Vec<f64>,
    pub clip_fraction: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub beta_bar: Option<f64>,
    pub mean_discount: Option<f64>,
    pub train_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    /// Cumulative privacy spend; absent while no noised release happened
    /// or when running with zero noise.
    pub epsilon_spent: Option<f64>,
    pub events: Vec<String>,
}

/// Final state of a finished experiment.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub model: MlpModel,
    pub metrics: Vec<RoundMetrics>,
    pub ledger: PrivacyLedger,
    /// Noise multiplier actually used (calibrated when a target epsilon was
    /// configured).
    pub resolved_sigma: f64,
}

/// Poisson cohort sampling: each agent joins independently with probability `p`.
pub fn sample_cohort(num_agents: usize, sample_prob: f64, rng: &mut ChaCha12Rng) -> Vec<usize> {
    (0..num_agents)
        .filter(|_| next_f64(rng) < sample_prob)
        .collect()
}

/// Attenuation diagnostics of one update: `beta = |sparsified| / |raw|`
/// (1 for a zero-norm raw update) and `alpha = min(1, S / |sparsified|)`.
pub fn update_diagnostics(raw_norm: f64, sparsified_norm: f64, clip_threshold: f64) -> (f64, f64) {
    let beta = if raw_norm > 0.0 {
        sparsified_norm / raw_norm
    } else {
        1.0
    };
    let alpha = (clip_threshold / sparsified_norm).min(1.0);
    (alpha, beta)
}

/// Runs one agent's full local pipeline and returns the noised upload, or
/// `None` when the local trajectory diverged to non-finite values.
pub fn local_update(
    global: &MlpModel,
    shard: &AgentShard,
    cfg: &LocalUpdateConfig,
    cohort_size: usize,
    batch_rng: &mut ChaCha12Rng,
    noise_rng: &mut ChaCha12Rng,
) -> Result<Option<AgentUpdate>> {
    if shard.is_empty() {
        return Err(Error::data(format!(
            "agent {} has an empty shard",
            shard.agent_id
        )));
    }
    let blur = BlurConfig {
        lambda: cfg.lambda,
        clip_threshold: cfg.clip_threshold,
    };
    blur.validate(cfg.local_lr)?;

    let anchor = global.params().clone();
    let mut local = global.clone();
    let mut step_norms = Vec::with_capacity(cfg.local_steps as usize);

    for _ in 0..cfg.local_steps {
        let offset = local.params().sub(&anchor)?;
        let distance = offset.l2_norm();
        step_norms.push(distance);

        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|_| shard.samples[next_index(batch_rng, shard.samples.len())].clone())
            .collect();
        let mut grad = local.backward(&batch)?;
        // Skip the regularizer entirely when it contributes nothing, so a
        // lambda = 0 run replays the unregularized arithmetic bit for bit.
        if blur.lambda > 0.0 && distance > blur.clip_threshold {
            grad.add_in_place(&blur_gradient(
                local.params(),
                &anchor,
                blur.clip_threshold,
                blur.lambda,
            )?)?;
        }
        let mut params = local.params().clone();
        params.axpy_in_place(-cfg.local_lr, &grad)?;
        if !params.is_finite() {
            return Ok(None);
        }
        local.set_params(params)?;
    }

    let raw = local.params().sub(&anchor)?;
    let raw_norm = raw.l2_norm();
    let zero_norm = raw_norm == 0.0;

    // Sparsification ranks coordinates by the first-order cost of zeroing
    // them, using the full-shard gradient at the final local weights.
    let sparsified = if cfg.sparsity > 0.0 {
        let full_grad = local.backward(&shard.samples)?;
        let costs = utility_cost(&full_grad, &raw)?;
        let mask = build_mask(
            &costs,
            &SparsityConfig {
                sparsity: cfg.sparsity,
            },
        )?;
        sparsify(&raw, &mask)?
    } else {
        raw.clone()
    };
    let pre_clip_norm = sparsified.l2_norm();
    let (alpha, beta) = update_diagnostics(raw_norm, pre_clip_norm, cfg.clip_threshold);

    let (clipped, clip_factor) = clip(&sparsified, cfg.clip_threshold)?;
    let noised = add_gaussian_noise(
        &clipped,
        cfg.clip_threshold,
        cfg.noise_multiplier,
        cohort_size,
        noise_rng,
    )?;

    let discounts = discount_trace(&step_norms, cfg.clip_threshold, cfg.lambda, cfg.local_lr)?;
    let mean_discount = discounts.iter().sum::<f64>() / discounts.len().max(1) as f64;
    let active_steps = step_norms
        .iter()
        .filter(|&&d| d > cfg.clip_threshold)
        .count();

    Ok(Some(AgentUpdate {
        noised,
        metrics: AgentMetrics {
            agent_id: shard.agent_id,
            raw_norm,
            pre_clip_norm,
            beta,
            alpha,
            clip_factor,
            clipped: clip_factor < 1.0,
            mean_discount,
            active_steps,
            zero_norm,
        },
    }))
}

/// Server aggregation: `global + server_lr * mean(updates)`.
pub fn aggregate(
    global: &ParamVector,
    updates: &[ParamVector],
    server_lr: f64,
) -> Result<ParamVector> {
    if updates.is_empty() {
        return Err(Error::config("aggregate: no updates to average"));
    }
    let mut mean = updates[0].clone();
    for update in &updates[1..] {
        mean.add_in_place(update)?;
    }
    mean.scale_in_place(1.0 / updates.len() as f64);
    let mut next = global.clone();
    next.axpy_in_place(server_lr, &mean)?;
    Ok(next)
}

/// Runs the full multi-round protocol.
///
/// Rounds with an empty cohort (or where every sampled agent diverged) leave
/// the model untouched and spend no privacy; they are recorded as events.
pub fn run_experiment(
    model_spec: &ModelSpec,
    train: &TrainConfig,
    dp: &DpConfig,
    shards: &[AgentShard],
    eval_set: Option<&[Sample]>,
) -> Result<ExperimentOutput> {
    train.validate()?;
    dp.validate()?;
    model_spec.validate()?;
    if shards.len() != train.num_agents {
        return Err(Error::config(format!(
            "train.num_agents is {} but {} shards were provided",
            train.num_agents,
            shards.len()
        )));
    }
    if shards.iter().any(|s| s.is_empty()) {
        return Err(Error::data(
            "every agent shard must hold at least one sample",
        ));
    }
    if dp.noise_multiplier.is_some_and(|s| s > 0.0) && !dp.clip_threshold.is_finite() {
        return Err(Error::config(
            "privacy.clip_threshold must be finite when noise is enabled",
        ));
    }

    let resolved_sigma = match (dp.noise_multiplier, dp.target_epsilon) {
        (Some(sigma), None) => sigma,
        (None, Some(eps)) => {
            if train.rounds == 0 {
                0.0
            } else {
                calibrate_sigma(eps, dp.delta, train.rounds as u64, dp.sample_prob)?.sigma
            }
        }
        _ => {
            return Err(Error::config(
                "privacy: exactly one of noise_multiplier and target_epsilon must be set",
            ))
        }
    };

    let mut model = model_spec.build(&mut substream(train.seed, &[STREAM_INIT]))?;
    validate_shards_against_model(&model, shards)?;

    let train_set: Vec<Sample> = shards
        .iter()
        .flat_map(|s| s.samples.iter().cloned())
        .collect();

    let local_cfg = LocalUpdateConfig::from_parts(train, dp, resolved_sigma);
    let mut ledger = PrivacyLedger::new(dp.delta)?;
    let mut metrics = Vec::with_capacity(train.rounds as usize);

    for round in 1..=train.rounds {
        let mut events = Vec::new();
        let cohort = sample_cohort(
            train.num_agents,
            dp.sample_prob,
            &mut substream(train.seed, &[STREAM_COHORT, round as u64]),
        );

        let mut updates = Vec::with_capacity(cohort.len());
        let mut agent_metrics = Vec::with_capacity(cohort.len());
        if cohort.is_empty() {
            events.push(String::from("empty_cohort: round skipped"));
        } else {
            for &agent in &cohort {
                let mut batch_rng =
                    substream(train.seed, &[STREAM_BATCH, round as u64, agent as u64]);
                let mut noise_rng =
                    substream(train.seed, &[STREAM_NOISE, round as u64, agent as u64]);
                match local_update(
                    &model,
                    &shards[agent],
                    &local_cfg,
                    cohort.len(),
                    &mut batch_rng,
                    &mut noise_rng,
                )? {
                    Some(update) => {
                        if update.metrics.zero_norm {
                            events.push(format!("agent {agent}: zero-norm update, beta set to 1"));
                        }
                        updates.push(update.noised);
                        agent_metrics.push(update.metrics);
                    }
                    None => {
                        events.push(format!(
                            "agent {agent}: diverged to non-finite values, excluded from aggregate"
                        ));
                    }
                }
            }
        }

        let contributors = updates.len();
        if contributors > 0 {
            let next = aggregate(model.params(), &updates, train.server_lr)?;
            model.set_params(next)?;
            if resolved_sigma > 0.0 {
                ledger.record_round(dp.sample_prob, resolved_sigma)?;
            }
        } else if !cohort.is_empty() {
            events.push(String::from("no contributors: round skipped"));
        }

        let epsilon_spent = if ledger.rounds() > 0 {
            Some(ledger.epsilon()?)
        } else {
            None
        };

        let train_loss = match model.forward_loss(&train_set) {
            Ok(loss) if loss.is_finite() => Some(loss),
            Ok(_) => {
                events.push(String::from("non-finite train loss"));
                None
            }
            Err(e) => return Err(e),
        };
        let eval_accuracy = match eval_set {
            Some(set) if !set.is_empty() => Some(model.accuracy(set)?),
            _ => None,
        };

        metrics.push(RoundMetrics {
            round,
            cohort_size: cohort.len(),
            contributors,
            raw_norms: agent_metrics.iter().map(|m| m.raw_norm).collect(),
            pre_clip_norms: agent_metrics.iter().map(|m| m.pre_clip_norm).collect(),
            betas: agent_metrics.iter().map(|m| m.beta).collect(),
            clip_fraction: mean_of(agent_metrics.iter().map(|m| f64::from(u8::from(m.clipped)))),
            alpha_bar: mean_of(agent_metrics.iter().map(|m| m.alpha)),
            beta_bar: mean_of(agent_metrics.iter().map(|m| m.beta)),
            mean_discount: mean_of(agent_metrics.iter().map(|m| m.mean_discount)),
            train_loss,
            eval_accuracy,
            epsilon_spent,
            events,
        });
    }

    Ok(ExperimentOutput {
        model,
        metrics,
        ledger,
        resolved_sigma,
    })
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for v in values {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn validate_shards_against_model(model: &MlpModel, shards: &[AgentShard]) -> Result<()> {
    for shard in shards {
        for sample in &shard.samples {
            if sample.features.len() != model.input_dim() {
                return Err(Error::config(format!(
                    "agent {}: feature length {} does not match model input {}",
                    shard.agent_id,
                    sample.features.len(),
                    model.input_dim()
                )));
            }
            if let crate::nn::Target::Class(label) = sample.target {
                if label >= model.output_dim() {
                    return Err(Error::data(format!(
                        "agent {}: class label {label} out of range for {} outputs",
                        shard.agent_id,
                        model.output_dim()
                    )));
                }
            }
        }
    }
    Ok(())
}
