//! Raw-space prediction error of a model over one split: every transition is
//! a target once, with a freshly sampled context from its own environment.

use rayon::prelude::*;

use crate::datastore::{sample_context_indices, DatasetCollection, EnvDataset, Split};
use crate::envsim::Transition;
use crate::error::CoreError;
use crate::numcore::{Graph, Tensor};
use crate::rng::{derive_seed, Prng};

use super::{EncoderKind, Model};

/// Per-environment error summary; exposed for the results CSVs.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mse: f64,
    pub transitions: usize,
    pub per_env: Vec<(u64, f64)>,
}

/// Mean squared error (raw units, averaged over transitions and state
/// dimensions) of next-state prediction on a split, context size `context_n`.
pub fn evaluate_mse(
    model: &Model,
    collection: &DatasetCollection,
    split: Split,
    context_n: usize,
    seed: u64,
) -> Result<f64, CoreError> {
    Ok(evaluate(model, collection, split, context_n, seed)?.mse)
}

pub fn evaluate(
    model: &Model,
    collection: &DatasetCollection,
    split: Split,
    context_n: usize,
    seed: u64,
) -> Result<EvalReport, CoreError> {
    if collection.family != model.spec.family {
        return Err(CoreError::FamilyMismatch {
            expected: model.spec.family.name().into(),
            got: collection.family.name().into(),
        });
    }
    let envs = collection.envs_of(split);
    if envs.is_empty() {
        return Err(CoreError::invalid(format!(
            "split '{}' has no environments",
            split.name()
        )));
    }
    let per_env: Result<Vec<(u64, f64, usize)>, CoreError> = envs
        .par_iter()
        .map(|env| {
            let (sq, n) = env_squared_error(model, env, context_n, seed)?;
            Ok((env.env_id, sq, n))
        })
        .collect();
    let per_env = per_env?;
    let sd = model.spec.family.state_dim();
    let total_sq: f64 = per_env.iter().map(|(_, sq, _)| sq).sum();
    let total_n: usize = per_env.iter().map(|(_, _, n)| n).sum();
    Ok(EvalReport {
        mse: total_sq / (total_n * sd) as f64,
        transitions: total_n,
        per_env: per_env
            .into_iter()
            .map(|(id, sq, n)| (id, sq / (n * sd) as f64))
            .collect(),
    })
}

/// Summed squared error over one environment's transitions.
fn env_squared_error(
    model: &Model,
    env: &EnvDataset,
    context_n: usize,
    seed: u64,
) -> Result<(f64, usize), CoreError> {
    let n_trans = env.transitions.len();
    if n_trans == 0 {
        return Ok((0.0, 0));
    }
    let spec = &model.spec;
    let sd = spec.family.state_dim();

    // conditioning rows per transition
    let z_rows: Vec<Vec<f64>> = match spec.encoder {
        EncoderKind::None => vec![Vec::new(); n_trans],
        EncoderKind::Explicit => vec![env.params.normalized(); n_trans],
        _ => {
            let mut contexts: Vec<Vec<&Transition>> = Vec::with_capacity(n_trans);
            for t_idx in 0..n_trans {
                let mut rng =
                    Prng::seed_from(derive_seed(seed, &format!("ctx/{}/{}", env.env_id, t_idx)));
                let picks =
                    sample_context_indices(n_trans, context_n, Some(t_idx), &mut rng);
                contexts.push(picks.iter().map(|&i| &env.transitions[i]).collect());
            }
            if context_n == 0 || contexts.iter().any(|c| c.is_empty()) {
                vec![model.no_context_latent(); n_trans]
            } else {
                let mut g = Graph::new();
                let bound = model.params.bind_frozen(&mut g);
                let sets: Vec<&[&Transition]> = contexts.iter().map(|c| c.as_slice()).collect();
                let z = model.latent_matrix(&mut g, &bound, &sets)?;
                let zt = g.value(z);
                zt.check_finite("evaluation latents")?;
                (0..n_trans).map(|r| zt.row(r).to_vec()).collect()
            }
        }
    };

    let in_dim = spec.predictor_input_dim();
    let mut rows = Vec::with_capacity(n_trans * in_dim);
    for (t, z) in env.transitions.iter().zip(&z_rows) {
        rows.extend(model.stats.state.normalize(&t.state));
        rows.extend(model.stats.action.normalize(&t.action));
        rows.extend_from_slice(z);
    }
    let mut g = Graph::new();
    let bound = model.params.bind_frozen(&mut g);
    let x = g.input(Tensor::new(vec![n_trans, in_dim], rows)?);
    let pred = model.predictor.forward(&mut g, &bound, x)?;
    let pred = g.value(pred);
    pred.check_finite("evaluation predictions")?;

    let mut sq = 0.0;
    for (r, t) in env.transitions.iter().enumerate() {
        let raw = model.stats.next_state.denormalize(&pred.data()[r * sd..(r + 1) * sd]);
        for (p, y) in raw.iter().zip(&t.next_state) {
            sq += (p - y) * (p - y);
        }
    }
    Ok((sq, n_trans))
}
