//! End-to-end training of summarizer and predictor on the reconstruction
//! loss. Each minibatch item is one environment, one target transition, and
//! a fresh context excluding the target; the checkpoint with the best
//! validation error is the one retained.

use crate::datastore::{sample_context_indices, DatasetCollection, EnvDataset, Split};
use crate::envsim::Transition;
use crate::error::CoreError;
use crate::numcore::{AdamState, Graph, Tensor};
use crate::rng::{derive_seed, Prng};

use super::{evaluate_mse, EncoderKind, LossKind, Model, ModelSpec};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-3,
            seed,
        }
    }
}

/// One metric-log line, written per epoch.
#[derive(Clone, Debug)]
pub struct MetricRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub seed: u64,
}

pub struct TrainResult {
    /// Parameters from the epoch with the best validation error.
    pub model: Model,
    /// Parameters as they stood after the last step.
    pub final_model: Model,
    pub metrics: Vec<MetricRow>,
    pub best_val_mse: f64,
    /// Smallest per-epoch mean training loss seen over the run.
    pub best_train_loss: f64,
}

pub fn train(
    spec: ModelSpec,
    collection: &DatasetCollection,
    cfg: &TrainConfig,
) -> Result<TrainResult, CoreError> {
    if collection.family != spec.family {
        return Err(CoreError::FamilyMismatch {
            expected: spec.family.name().into(),
            got: collection.family.name().into(),
        });
    }
    let needs_context = spec.encoder.uses_context() && spec.context_n > 0;
    let train_envs: Vec<&EnvDataset> = collection
        .envs_of(Split::Train)
        .into_iter()
        .filter(|e| {
            let min_len = if needs_context { 2 } else { 1 };
            e.transitions.len() >= min_len
        })
        .collect();
    if train_envs.is_empty() {
        return Err(CoreError::invalid("no usable training environments"));
    }
    if collection.envs_of(Split::Val).is_empty() {
        return Err(CoreError::invalid("validation split is empty"));
    }

    let stats = super::DataStats::fit(&train_envs, spec.family);
    let mut model = Model::init(spec, stats, cfg.seed)?;
    let mut adam = AdamState::new(&model.params, cfg.learning_rate);

    let total_transitions: usize = train_envs.iter().map(|e| e.transitions.len()).sum();
    let steps_per_epoch = total_transitions.div_ceil(cfg.batch_size).max(1);

    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut best_val = f64::INFINITY;
    let mut best_train = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut global_step = 0usize;

    let val_seed = derive_seed(cfg.seed, "val");
    for _epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        for _ in 0..steps_per_epoch {
            let batch_seed = derive_seed(cfg.seed, &format!("batch/{global_step}"));
            let mut rng = Prng::seed_from(batch_seed);
            let loss = train_step(&mut model, &mut adam, &train_envs, &mut rng, cfg)
                .map_err(|e| match e {
                    CoreError::NonFinite { .. } => CoreError::NanLoss {
                        step: global_step,
                        batch_seed,
                    },
                    other => other,
                })?;
            if !loss.is_finite() {
                return Err(CoreError::NanLoss {
                    step: global_step,
                    batch_seed,
                });
            }
            epoch_loss += loss;
            global_step += 1;
        }
        let train_loss = epoch_loss / steps_per_epoch as f64;
        best_train = best_train.min(train_loss);

        // fixed context draw across epochs: validation numbers stay
        // comparable, so checkpoint selection tracks the model rather than
        // the luck of the contexts
        let val_mse = evaluate_mse(&model, collection, Split::Val, model.spec.context_n, val_seed)?;
        metrics.push(MetricRow {
            step: global_step,
            train_loss,
            val_mse,
            seed: cfg.seed,
        });
        if val_mse < best_val {
            best_val = val_mse;
            best_params = model.params.clone();
        }
    }

    let final_model = model.clone();
    model.params = best_params;
    Ok(TrainResult {
        model,
        final_model,
        metrics,
        best_val_mse: best_val,
        best_train_loss: best_train,
    })
}

/// One optimizer step on a freshly sampled minibatch; returns the loss.
fn train_step(
    model: &mut Model,
    adam: &mut AdamState,
    train_envs: &[&EnvDataset],
    rng: &mut Prng,
    cfg: &TrainConfig,
) -> Result<f64, CoreError> {
    let spec = model.spec.clone();
    let b = cfg.batch_size;
    let sd = spec.family.state_dim();
    let ad = spec.family.action_dim();

    let mut sa_rows = Vec::with_capacity(b * (sd + ad));
    let mut target_rows = Vec::with_capacity(b * sd);
    let mut contexts: Vec<Vec<&Transition>> = Vec::with_capacity(b);
    let mut explicit_rows = Vec::new();

    for _ in 0..b {
        let env = train_envs[rng.below(train_envs.len())];
        let target_idx = rng.below(env.transitions.len());
        let target = &env.transitions[target_idx];
        sa_rows.extend(model.stats.state.normalize(&target.state));
        sa_rows.extend(model.stats.action.normalize(&target.action));
        target_rows.extend(model.stats.next_state.normalize(&target.next_state));
        match spec.encoder {
            EncoderKind::Explicit => explicit_rows.extend(env.params.normalized()),
            k if k.uses_context() && spec.context_n > 0 => {
                let picks = sample_context_indices(
                    env.transitions.len(),
                    spec.context_n,
                    Some(target_idx),
                    rng,
                );
                contexts.push(picks.iter().map(|&i| &env.transitions[i]).collect());
            }
            _ => {}
        }
    }

    let mut g = Graph::new();
    let bound = model.params.bind(&mut g);
    let sa = g.input(Tensor::new(vec![b, sd + ad], sa_rows)?);
    let target = g.input(Tensor::new(vec![b, sd], target_rows)?);

    let pred_in = match spec.encoder {
        EncoderKind::None => sa,
        EncoderKind::Explicit => {
            let z = g.input(Tensor::new(vec![b, spec.z_dim()], explicit_rows)?);
            g.concat_last(&[sa, z])?
        }
        _ if spec.context_n == 0 => {
            let z = g.input(Tensor::zeros(vec![b, spec.latent_dim]));
            g.concat_last(&[sa, z])?
        }
        _ => {
            let sets: Vec<&[&Transition]> = contexts.iter().map(|c| c.as_slice()).collect();
            let z = model.latent_matrix(&mut g, &bound, &sets)?;
            g.concat_last(&[sa, z])?
        }
    };
    let pred = model.predictor.forward(&mut g, &bound, pred_in)?;
    let loss = match spec.loss {
        LossKind::Mse => g.mse(pred, target)?,
        LossKind::L2 => g.l2_row_mean(pred, target)?,
    };
    let loss_value = g.value(loss).item();
    if !loss_value.is_finite() {
        return Err(CoreError::NonFinite {
            context: "training loss".into(),
        });
    }
    g.backward(loss)?;
    let grads = model.params.collect_grads(&g, &bound);
    adam.step(&mut model.params, &grads)?;
    Ok(loss_value)
}
