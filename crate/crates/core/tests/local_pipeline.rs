//! End-to-end properties of the local update pipeline: equivalence with the
//! plain protocol when every knob is off, stage isolation when knobs toggle,
//! and the discounted-recursion behavior of the regularizer.

use dpfedsim_core::blur::blur_gradient;
use dpfedsim_core::data::AgentShard;
use dpfedsim_core::dp::{add_gaussian_noise, clip};
use dpfedsim_core::federation::{local_update, LocalUpdateConfig};
use dpfedsim_core::lus::{build_mask, sparsify, utility_cost, SparsityConfig};
use dpfedsim_core::nn::{Activation, LossKind, MlpModel, ModelSpec, Sample, Target};
use dpfedsim_core::params::ParamVector;
use dpfedsim_core::rng::{next_index, substream, STREAM_BATCH, STREAM_INIT, STREAM_NOISE};

fn classification_spec() -> ModelSpec {
    ModelSpec {
        layer_sizes: vec![4, 8, 3],
        activation: Activation::Relu,
        loss: LossKind::SoftmaxCrossEntropy,
    }
}

fn classification_shard(seed: u64, n: usize) -> AgentShard {
    let data = dpfedsim_core::data::generate_synthetic(3, 4, n / 3 + 1, 2.0, seed).unwrap();
    AgentShard {
        agent_id: 0,
        samples: data.samples.into_iter().take(n).collect(),
    }
}

/// Linear model with MSE loss: a quadratic local objective.
fn quadratic_setup(seed: u64, dim: usize) -> (MlpModel, AgentShard) {
    let spec = ModelSpec {
        layer_sizes: vec![dim, dim],
        activation: Activation::Identity,
        loss: LossKind::MeanSquaredError,
    };
    let model = spec.build(&mut substream(seed, &[STREAM_INIT])).unwrap();
    let mut rng = substream(seed, &[STREAM_INIT, 1]);
    let samples = (0..3 * dim)
        .map(|_| Sample {
            features: (0..dim)
                .map(|_| dpfedsim_core::rng::next_standard_normal(&mut rng) * 0.5)
                .collect(),
            target: Target::Real(
                (0..dim)
                    .map(|_| dpfedsim_core::rng::next_standard_normal(&mut rng))
                    .collect(),
            ),
        })
        .collect();
    (
        model,
        AgentShard {
            agent_id: 0,
            samples,
        },
    )
}

fn assert_bits_eq(a: &ParamVector, b: &ParamVector, what: &str) {
    for (x, y) in a.iter_values().zip(b.iter_values()) {
        assert_eq!(x.to_bits(), y.to_bits(), "{what}: {x} vs {y}");
    }
}

/// Replays the local pipeline stage by stage through the public pieces,
/// returning (raw delta, sparsified, clipped, noised).
fn replay_stages(
    model: &MlpModel,
    shard: &AgentShard,
    cfg: &LocalUpdateConfig,
    cohort_size: usize,
    seed: u64,
    round: u64,
    agent: u64,
) -> (ParamVector, ParamVector, ParamVector, ParamVector) {
    let mut batch_rng = substream(seed, &[STREAM_BATCH, round, agent]);
    let anchor = model.params().clone();
    let mut local = model.clone();
    for _ in 0..cfg.local_steps {
        let offset = local.params().sub(&anchor).unwrap();
        let distance = offset.l2_norm();
        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|_| shard.samples[next_index(&mut batch_rng, shard.samples.len())].clone())
            .collect();
        let mut grad = local.backward(&batch).unwrap();
        if cfg.lambda > 0.0 && distance > cfg.clip_threshold {
            grad.add_in_place(
                &blur_gradient(local.params(), &anchor, cfg.clip_threshold, cfg.lambda).unwrap(),
            )
            .unwrap();
        }
        let mut params = local.params().clone();
        params.axpy_in_place(-cfg.local_lr, &grad).unwrap();
        local.set_params(params).unwrap();
    }
    let raw = local.params().sub(&anchor).unwrap();
    let sparsified = if cfg.sparsity > 0.0 {
        let full_grad = local.backward(&shard.samples).unwrap();
        let costs = utility_cost(&full_grad, &raw).unwrap();
        let mask = build_mask(
            &costs,
            &SparsityConfig {
                sparsity: cfg.sparsity,
            },
        )
        .unwrap();
        sparsify(&raw, &mask).unwrap()
    } else {
        raw.clone()
    };
    let (clipped, _) = clip(&sparsified, cfg.clip_threshold).unwrap();
    let mut noise_rng = substream(seed, &[STREAM_NOISE, round, agent]);
    let noised = add_gaussian_noise(
        &clipped,
        cfg.clip_threshold,
        cfg.noise_multiplier,
        cohort_size,
        &mut noise_rng,
    )
    .unwrap();
    (raw, sparsified, clipped, noised)
}

#[test]
fn all_knobs_off_reproduces_vanilla_fedavg() {
    // Vanilla oracle: plain local SGD over the same batch stream, no
    // regularization, no masking, no clipping, no noise.
    let spec = classification_spec();
    let model = spec.build(&mut substream(3, &[STREAM_INIT])).unwrap();
    let shard = classification_shard(5, 18);
    let cfg = LocalUpdateConfig {
        local_lr: 0.07,
        local_steps: 12,
        batch_size: 5,
        lambda: 0.0,
        sparsity: 0.0,
        clip_threshold: f64::INFINITY,
        noise_multiplier: 0.0,
    };
    let update = local_update(
        &model,
        &shard,
        &cfg,
        4,
        &mut substream(9, &[STREAM_BATCH, 2, 1]),
        &mut substream(9, &[STREAM_NOISE, 2, 1]),
    )
    .unwrap()
    .unwrap();

    let mut rng = substream(9, &[STREAM_BATCH, 2, 1]);
    let anchor = model.params().clone();
    let mut vanilla = model.clone();
    for _ in 0..cfg.local_steps {
        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|_| shard.samples[next_index(&mut rng, shard.samples.len())].clone())
            .collect();
        let grad = vanilla.backward(&batch).unwrap();
        let mut params = vanilla.params().clone();
        params.axpy_in_place(-cfg.local_lr, &grad).unwrap();
        vanilla.set_params(params).unwrap();
    }
    let expected = vanilla.params().sub(&anchor).unwrap();
    assert_bits_eq(&update.noised, &expected, "vanilla equivalence");
    assert_eq!(update.metrics.beta, 1.0);
    assert_eq!(update.metrics.clip_factor, 1.0);
    assert_eq!(update.metrics.active_steps, 0);
}

#[test]
fn local_update_composes_its_public_stages_bit_for_bit() {
    let spec = classification_spec();
    let model = spec.build(&mut substream(11, &[STREAM_INIT])).unwrap();
    let shard = classification_shard(6, 21);
    let cfg = LocalUpdateConfig {
        local_lr: 0.05,
        local_steps: 10,
        batch_size: 4,
        lambda: 0.4,
        sparsity: 0.7,
        clip_threshold: 0.2,
        noise_multiplier: 0.8,
    };
    let update = local_update(
        &model,
        &shard,
        &cfg,
        3,
        &mut substream(13, &[STREAM_BATCH, 4, 2]),
        &mut substream(13, &[STREAM_NOISE, 4, 2]),
    )
    .unwrap()
    .unwrap();
    let (raw, sparsified, clipped, noised) = replay_stages(&model, &shard, &cfg, 3, 13, 4, 2);
    assert_bits_eq(&update.noised, &noised, "full pipeline");
    assert_eq!(update.metrics.raw_norm.to_bits(), raw.l2_norm().to_bits());
    assert_eq!(
        update.metrics.pre_clip_norm.to_bits(),
        sparsified.l2_norm().to_bits()
    );
    assert!(clipped.l2_norm() <= cfg.clip_threshold * (1.0 + 1e-12));
}

#[test]
fn each_knob_touches_only_its_stage() {
    let spec = classification_spec();
    let model = spec.build(&mut substream(21, &[STREAM_INIT])).unwrap();
    let shard = classification_shard(8, 24);
    let base = LocalUpdateConfig {
        local_lr: 0.05,
        local_steps: 8,
        batch_size: 4,
        lambda: 0.0,
        sparsity: 0.0,
        clip_threshold: 0.25,
        noise_multiplier: 0.0,
    };
    let (raw0, sp0, cl0, no0) = replay_stages(&model, &shard, &base, 2, 7, 1, 0);

    // Sparsification changes nothing upstream of the mask.
    let with_lus = LocalUpdateConfig {
        sparsity: 0.6,
        ..base
    };
    let (raw1, sp1, _, _) = replay_stages(&model, &shard, &with_lus, 2, 7, 1, 0);
    assert_bits_eq(&raw0, &raw1, "raw delta under sparsity toggle");
    assert!(sp1.l2_norm() <= sp0.l2_norm());

    // Noise changes nothing upstream of the noise draw.
    let with_noise = LocalUpdateConfig {
        noise_multiplier: 1.0,
        ..base
    };
    let (raw2, sp2, cl2, no2) = replay_stages(&model, &shard, &with_noise, 2, 7, 1, 0);
    assert_bits_eq(&raw0, &raw2, "raw delta under noise toggle");
    assert_bits_eq(&sp0, &sp2, "sparsified under noise toggle");
    assert_bits_eq(&cl0, &cl2, "clipped under noise toggle");
    assert_ne!(
        no0.iter_values().collect::<Vec<_>>(),
        no2.iter_values().collect::<Vec<_>>()
    );

    // Regularization changes the trajectory itself; with it off the noised
    // output equals the clipped stage exactly.
    assert_bits_eq(&no0, &cl0, "sigma 0 leaves the clipped update untouched");
    let with_blur = LocalUpdateConfig {
        lambda: 0.5,
        ..base
    };
    let (raw3, _, _, _) = replay_stages(&model, &shard, &with_blur, 2, 7, 1, 0);
    assert!(raw3.l2_norm() < raw0.l2_norm());
}

#[test]
fn discounted_recursion_matches_closed_form_on_quadratics() {
    // Full-batch gradient descent on a quadratic objective with the
    // regularizer active from the first step onward: the final update must
    // equal the unrolled sum -lr * sum_q (1 - lambda lr)^(Q-1-q) g_q.
    let local_lr = 0.1;
    for &lambda_lr in &[0.1, 0.5, 0.9] {
        let lambda = lambda_lr / local_lr;
        for &steps in &[5usize, 20, 50] {
            let (model, shard) = quadratic_setup(1000 + steps as u64, 6);
            let tiny_s = 1e-9;
            let anchor = model.params().clone();
            let mut local = model.clone();
            let mut grads: Vec<ParamVector> = Vec::with_capacity(steps);
            for _ in 0..steps {
                let offset = local.params().sub(&anchor).unwrap();
                let distance = offset.l2_norm();
                let mut grad = local.backward(&shard.samples).unwrap();
                grads.push(grad.clone());
                if distance > tiny_s {
                    grad.add_in_place(
                        &blur_gradient(local.params(), &anchor, tiny_s, lambda).unwrap(),
                    )
                    .unwrap();
                }
                let mut params = local.params().clone();
                params.axpy_in_place(-local_lr, &grad).unwrap();
                local.set_params(params).unwrap();
            }
            let iterated = local.params().sub(&anchor).unwrap();

            let base = 1.0 - lambda_lr;
            let mut unrolled = anchor.zeros_like();
            for (q, grad) in grads.iter().enumerate() {
                let coeff = -local_lr * base.powi((steps - 1 - q) as i32);
                unrolled.axpy_in_place(coeff, grad).unwrap();
            }
            let diff = iterated.sub(&unrolled).unwrap().l2_norm();
            let scale = iterated.l2_norm().max(1e-300);
            assert!(
                diff <= 1e-10 * scale,
                "lambda*lr {lambda_lr} Q {steps}: rel err {}",
                diff / scale
            );
        }
    }
}

#[test]
fn regularization_only_shrinks_quadratic_updates() {
    for seed in 0..10u64 {
        let (model, shard) = quadratic_setup(300 + seed, 5);
        let base = LocalUpdateConfig {
            local_lr: 0.1,
            local_steps: 25,
            batch_size: shard.samples.len(),
            lambda: 0.0,
            sparsity: 0.0,
            clip_threshold: 0.05,
            noise_multiplier: 0.0,
        };
        let free = local_update(
            &model,
            &shard,
            &base,
            1,
            &mut substream(seed, &[STREAM_BATCH, 1, 0]),
            &mut substream(seed, &[STREAM_NOISE, 1, 0]),
        )
        .unwrap()
        .unwrap();
        let reg = local_update(
            &model,
            &shard,
            &LocalUpdateConfig {
                lambda: 3.0,
                ..base
            },
            1,
            &mut substream(seed, &[STREAM_BATCH, 1, 0]),
            &mut substream(seed, &[STREAM_NOISE, 1, 0]),
        )
        .unwrap()
        .unwrap();
        assert!(
            reg.metrics.raw_norm <= free.metrics.raw_norm + 1e-15,
            "seed {seed}: {} vs {}",
            reg.metrics.raw_norm,
            free.metrics.raw_norm
        );
    }
}

#[test]
fn paired_seed_sparsification_shrinks_preclip_norm() {
    let spec = classification_spec();
    let model = spec.build(&mut substream(31, &[STREAM_INIT])).unwrap();
    let shard = classification_shard(17, 30);
    let base = LocalUpdateConfig {
        local_lr: 0.05,
        local_steps: 10,
        batch_size: 6,
        lambda: 0.0,
        sparsity: 0.0,
        clip_threshold: f64::INFINITY,
        noise_multiplier: 0.0,
    };
    for seed in 0..5u64 {
        let dense = local_update(
            &model,
            &shard,
            &base,
            1,
            &mut substream(seed, &[STREAM_BATCH, 1, 0]),
            &mut substream(seed, &[STREAM_NOISE, 1, 0]),
        )
        .unwrap()
        .unwrap();
        let sparse = local_update(
            &model,
            &shard,
            &LocalUpdateConfig {
                sparsity: 0.9,
                ..base
            },
            1,
            &mut substream(seed, &[STREAM_BATCH, 1, 0]),
            &mut substream(seed, &[STREAM_NOISE, 1, 0]),
        )
        .unwrap()
        .unwrap();
        assert!(sparse.metrics.pre_clip_norm <= dense.metrics.pre_clip_norm);
    }
}
