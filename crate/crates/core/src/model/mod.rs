//! The context-conditioned model family: a context summarizer feeding an MLP
//! one-step predictor, plus the context-free and ground-truth-conditioned
//! baselines, all trained end-to-end on the reconstruction loss.

mod eval;
mod train;

pub use eval::{evaluate, evaluate_mse, EvalReport};
pub use train::{train, MetricRow, TrainConfig, TrainResult};

use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datastore::EnvDataset;
use crate::envsim::{EnvParams, Family, Transition};
use crate::error::CoreError;
use crate::nets::{AttentionSet, AttentionSpec, Lstm, LstmSpec, Mlp, MlpSpec};
use crate::numcore::{Bound, Graph, ParamSet, Tensor, Var};
use crate::rng::Prng;

/// How the model summarizes context, if at all.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Domain randomization: one context-free model across all environments.
    None,
    /// Shared per-tuple MLP, average-pooled.
    Avg,
    /// LSTM over the tuples in sampled order, last hidden state projected.
    Rnn,
    /// Single multi-head attention layer without positional encoding.
    Tfm,
    /// Conditioned on the true factor vector, normalized to [-1, 1].
    Explicit,
}

pub const ALL_ENCODERS: &[EncoderKind] = &[
    EncoderKind::None,
    EncoderKind::Avg,
    EncoderKind::Rnn,
    EncoderKind::Tfm,
    EncoderKind::Explicit,
];

impl EncoderKind {
    pub fn name(&self) -> &'static str {
        match self {
            EncoderKind::None => "none",
            EncoderKind::Avg => "avg",
            EncoderKind::Rnn => "rnn",
            EncoderKind::Tfm => "tfm",
            EncoderKind::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Result<EncoderKind, CoreError> {
        ALL_ENCODERS
            .iter()
            .copied()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                CoreError::invalid(format!(
                    "unknown encoder '{s}'; valid: none, avg, rnn, tfm, explicit"
                ))
            })
    }

    pub fn uses_context(&self) -> bool {
        matches!(self, EncoderKind::Avg | EncoderKind::Rnn | EncoderKind::Tfm)
    }
}

/// Loss on the normalized residual: squared (the reported metric) or the
/// plain euclidean norm.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mse,
    L2,
}

/// Architecture + training-time context size for one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub encoder: EncoderKind,
    pub latent_dim: usize,
    pub predictor_hidden: Vec<usize>,
    pub avg_hidden: usize,
    pub rnn_hidden: usize,
    pub rnn_layers: usize,
    pub tfm_width: usize,
    pub tfm_heads: usize,
    /// Context size used during training (inference accepts any size).
    pub context_n: usize,
    pub loss: LossKind,
}

impl ModelSpec {
    /// Standard configuration: two predictor layers of 256, latent 8, one-layer
    /// width-256 pooled encoder, two-layer LSTM of 256, attention of width
    /// 120 with 5 heads.
    pub fn defaults(family: Family, encoder: EncoderKind, context_n: usize) -> ModelSpec {
        ModelSpec {
            family,
            encoder,
            latent_dim: 8,
            predictor_hidden: vec![256, 256],
            avg_hidden: 256,
            rnn_hidden: 256,
            rnn_layers: 2,
            tfm_width: 120,
            tfm_heads: 5,
            context_n,
            loss: LossKind::Mse,
        }
    }

    /// Width of one flattened (s, a, s') context tuple.
    pub fn tuple_dim(&self) -> usize {
        2 * self.family.state_dim() + self.family.action_dim()
    }

    /// Width of the conditioning vector appended to the predictor input.
    pub fn z_dim(&self) -> usize {
        match self.encoder {
            EncoderKind::None => 0,
            EncoderKind::Explicit => self.family.factors().len(),
            _ => self.latent_dim,
        }
    }

    pub fn predictor_input_dim(&self) -> usize {
        self.family.state_dim() + self.family.action_dim() + self.z_dim()
    }
}

/// Per-dimension affine normalizer fitted on the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Normalizer {
        let mut mean = vec![0.0; dim];
        let mut count = 0usize;
        for row in rows.clone() {
            for (m, &v) in mean.iter_mut().zip(row) {
                *m += v;
            }
            count += 1;
        }
        let n = count.max(1) as f64;
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(row) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / n).sqrt().max(1e-8)).collect();
        Normalizer { mean, std }
    }

    pub fn identity(dim: usize) -> Normalizer {
        Normalizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(&v, (m, s))| v * s + m)
            .collect()
    }
}

/// Train-split statistics for states, actions, and outcomes. The networks
/// see standardized values; raw-space predictions are recovered by
/// denormalizing the head output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataStats {
    pub state: Normalizer,
    pub action: Normalizer,
    pub next_state: Normalizer,
}

impl DataStats {
    pub fn fit(train_envs: &[&EnvDataset], family: Family) -> DataStats {
        let states: Vec<&[f64]> = train_envs
            .iter()
            .flat_map(|e| e.transitions.iter().map(|t| t.state.as_slice()))
            .collect();
        let actions: Vec<&[f64]> = train_envs
            .iter()
            .flat_map(|e| e.transitions.iter().map(|t| t.action.as_slice()))
            .collect();
        let nexts: Vec<&[f64]> = train_envs
            .iter()
            .flat_map(|e| e.transitions.iter().map(|t| t.next_state.as_slice()))
            .collect();
        DataStats {
            state: Normalizer::fit(states.iter().copied(), family.state_dim()),
            action: Normalizer::fit(actions.iter().copied(), family.action_dim()),
            next_state: Normalizer::fit(nexts.iter().copied(), family.state_dim()),
        }
    }

    pub fn identity(family: Family) -> DataStats {
        DataStats {
            state: Normalizer::identity(family.state_dim()),
            action: Normalizer::identity(family.action_dim()),
            next_state: Normalizer::identity(family.state_dim()),
        }
    }

    /// Flattened, standardized (s, a, s') context tuple.
    pub fn tuple(&self, t: &Transition) -> Vec<f64> {
        let mut row = self.state.normalize(&t.state);
        row.extend(self.action.normalize(&t.action));
        row.extend(self.next_state.normalize(&t.next_state));
        row
    }
}

#[derive(Clone)]
enum EncoderNet {
    None,
    Avg(Mlp),
    Rnn(Lstm),
    Tfm(AttentionSet),
    Explicit,
}

/// A trained (or trainable) context-conditioned predictor.
#[derive(Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub stats: DataStats,
    pub params: ParamSet,
    predictor: Mlp,
    encoder: EncoderNet,
}

impl Model {
    pub fn init(spec: ModelSpec, stats: DataStats, seed: u64) -> Result<Model, CoreError> {
        let mut params = ParamSet::new();
        let mut rng = Prng::seed_from(crate::rng::derive_seed(seed, "model-init"));
        let tuple_dim = spec.tuple_dim();
        let encoder = match spec.encoder {
            EncoderKind::None => EncoderNet::None,
            EncoderKind::Explicit => EncoderNet::Explicit,
            EncoderKind::Avg => EncoderNet::Avg(Mlp::init(
                MlpSpec::new(tuple_dim, vec![spec.avg_hidden], spec.latent_dim)?,
                "enc",
                &mut params,
                &mut rng,
            )),
            EncoderKind::Rnn => EncoderNet::Rnn(Lstm::init(
                LstmSpec::new(tuple_dim, spec.rnn_hidden, spec.rnn_layers, spec.latent_dim)?,
                "enc",
                &mut params,
                &mut rng,
            )),
            EncoderKind::Tfm => EncoderNet::Tfm(AttentionSet::init(
                AttentionSpec::new(tuple_dim, spec.tfm_width, spec.tfm_heads, spec.latent_dim)?,
                "enc",
                &mut params,
                &mut rng,
            )),
        };
        let predictor = Mlp::init(
            MlpSpec::new(
                spec.predictor_input_dim(),
                spec.predictor_hidden.clone(),
                spec.family.state_dim(),
            )?,
            "pred",
            &mut params,
            &mut rng,
        );
        Ok(Model {
            spec,
            stats,
            params,
            predictor,
            encoder,
        })
    }

    /// The fixed no-context vector substituted when zero context points are
    /// available: all zeros.
    pub fn no_context_latent(&self) -> Vec<f64> {
        vec![0.0; self.spec.latent_dim]
    }

    /// Summarize one context set into a latent. Empty context yields the
    /// no-context vector. Not defined for the `none`/`explicit` kinds, whose
    /// conditioning does not come from context.
    pub fn encode(&self, context: &[&Transition]) -> Result<Vec<f64>, CoreError> {
        if !self.spec.encoder.uses_context() {
            return Err(CoreError::invalid(format!(
                "encoder kind '{}' does not summarize context",
                self.spec.encoder.name()
            )));
        }
        if context.is_empty() {
            return Ok(self.no_context_latent());
        }
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let z = self.latent_matrix(&mut g, &bound, &[context])?;
        let out = g.value(z);
        out.check_finite("encoded latent")?;
        Ok(out.row(0).to_vec())
    }

    /// Conditioning vector for prediction: encoded context, the normalized
    /// true factors for `explicit`, or nothing for `none`.
    pub fn conditioning(
        &self,
        context: &[&Transition],
        truth: Option<&EnvParams>,
    ) -> Result<Vec<f64>, CoreError> {
        match self.spec.encoder {
            EncoderKind::None => Ok(Vec::new()),
            EncoderKind::Explicit => {
                let p = truth.ok_or_else(|| {
                    CoreError::invalid("explicit conditioning requires the true factors")
                })?;
                if p.family() != self.spec.family {
                    return Err(CoreError::FamilyMismatch {
                        expected: self.spec.family.name().into(),
                        got: p.family().name().into(),
                    });
                }
                Ok(p.normalized())
            }
            _ => self.encode(context),
        }
    }

    /// Raw-space next-state prediction for one (s, a) under conditioning z.
    pub fn predict(&self, state: &[f64], action: &[f64], z: &[f64]) -> Result<Vec<f64>, CoreError> {
        let preds = self.predict_actions(state, std::slice::from_ref(&action.to_vec()), z)?;
        Ok(preds.into_iter().next().unwrap())
    }

    /// Raw-space predictions for many candidate actions at one state; the
    /// planner's inner loop.
    pub fn predict_actions(
        &self,
        state: &[f64],
        actions: &[Vec<f64>],
        z: &[f64],
    ) -> Result<Vec<Vec<f64>>, CoreError> {
        if z.len() != self.spec.z_dim() {
            return Err(CoreError::ShapeMismatch {
                op: "predict",
                lhs: vec![z.len()],
                rhs: vec![self.spec.z_dim()],
            });
        }
        let sd = self.spec.family.state_dim();
        let in_dim = self.spec.predictor_input_dim();
        let s_norm = self.stats.state.normalize(state);
        let mut rows = Vec::with_capacity(actions.len() * in_dim);
        for a in actions {
            rows.extend_from_slice(&s_norm);
            rows.extend(self.stats.action.normalize(a));
            rows.extend_from_slice(z);
        }
        let mut g = Graph::new();
        let bound = self.params.bind_frozen(&mut g);
        let x = g.input(Tensor::new(vec![actions.len(), in_dim], rows)?);
        let out = self.predictor.forward(&mut g, &bound, x)?;
        let out = g.value(out);
        out.check_finite("prediction")?;
        Ok((0..actions.len())
            .map(|r| self.stats.next_state.denormalize(&out.data()[r * sd..(r + 1) * sd]))
            .collect())
    }

    /// Latent matrix [b, latent_dim] for a batch of equal-size context sets,
    /// built on an existing graph. Used by training (trainable bind) and by
    /// encoding/evaluation (frozen bind).
    pub(crate) fn latent_matrix(
        &self,
        g: &mut Graph,
        bound: &Bound,
        contexts: &[&[&Transition]],
    ) -> Result<Var, CoreError> {
        let n = contexts.first().map_or(0, |c| c.len());
        if n == 0 || contexts.iter().any(|c| c.len() != n) {
            return Err(CoreError::invalid(
                "batched encoding requires equal nonzero context sizes",
            ));
        }
        let b = contexts.len();
        let w = self.spec.tuple_dim();
        match &self.encoder {
            EncoderNet::Avg(mlp) => {
                // one [b*n, w] pass, mean-pooled per set
                let mut rows = Vec::with_capacity(b * n * w);
                for set in contexts {
                    for t in *set {
                        rows.extend(self.stats.tuple(t));
                    }
                }
                let x = g.input(Tensor::new(vec![b * n, w], rows)?);
                let enc = mlp.forward(g, bound, x)?;
                let grouped = g.reshape(enc, vec![b, n, self.spec.latent_dim])?;
                g.mean_axis(grouped, 1)
            }
            EncoderNet::Rnn(lstm) => {
                let mut steps = Vec::with_capacity(n);
                for t_idx in 0..n {
                    let mut rows = Vec::with_capacity(b * w);
                    for set in contexts {
                        rows.extend(self.stats.tuple(set[t_idx]));
                    }
                    steps.push(g.input(Tensor::new(vec![b, w], rows)?));
                }
                lstm.forward_sequence(g, bound, &steps)
            }
            EncoderNet::Tfm(att) => {
                let mut per_set = Vec::with_capacity(b);
                for set in contexts {
                    let mut rows = Vec::with_capacity(n * w);
                    for t in *set {
                        rows.extend(self.stats.tuple(t));
                    }
                    let x = g.input(Tensor::new(vec![n, w], rows)?);
                    let z = att.forward_set(g, bound, x)?;
                    per_set.push(g.reshape(z, vec![1, self.spec.latent_dim])?);
                }
                concat_rows(g, &per_set)
            }
            _ => Err(CoreError::invalid(format!(
                "encoder kind '{}' has no context network",
                self.spec.encoder.name()
            ))),
        }
    }

    /// Save spec + stats + parameters as one JSONL checkpoint.
    pub fn save(&self, path: &Path) -> Result<(), CoreError> {
        let mut buf = Vec::new();
        let meta = CheckpointMeta {
            format: CHECKPOINT_FORMAT.into(),
            spec: self.spec.clone(),
            stats: self.stats.clone(),
        };
        serde_json::to_writer(&mut buf, &meta)?;
        buf.push(b'\n');
        self.params.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Model, CoreError> {
        let file = std::fs::File::open(path)?;
        let mut reader = std::io::BufReader::new(file);
        let mut first = String::new();
        reader.read_line(&mut first)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&first).map_err(|e| CoreError::MalformedRecord {
                index: 0,
                msg: e.to_string(),
            })?;
        if meta.format != CHECKPOINT_FORMAT {
            return Err(CoreError::invalid(format!(
                "unsupported checkpoint format '{}'",
                meta.format
            )));
        }
        let loaded = ParamSet::read_from(reader)?;
        let mut model = Model::init(meta.spec, meta.stats, 0)?;
        if loaded.len() != model.params.len() {
            return Err(CoreError::invalid(format!(
                "checkpoint has {} parameters, model expects {}",
                loaded.len(),
                model.params.len()
            )));
        }
        for i in 0..loaded.len() {
            let id = crate::numcore::ParamId(i);
            if loaded.name(id) != model.params.name(id)
                || loaded.get(id).shape() != model.params.get(id).shape()
            {
                return Err(CoreError::BadParameter {
                    name: loaded.name(id).to_string(),
                    msg: "name or shape does not match the model spec".into(),
                });
            }
            *model.params.get_mut(id) = loaded.get(id).clone();
        }
        Ok(model)
    }
}

const CHECKPOINT_FORMAT: &str = "iida-model-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    format: String,
    spec: ModelSpec,
    stats: DataStats,
}

/// Stack single-row [1, w] nodes into one [b, w] matrix.
fn concat_rows(g: &mut Graph, rows: &[Var]) -> Result<Var, CoreError> {
    // concat on the last axis after reshaping each row to [w, 1] would
    // transpose; instead reshape to [1, w] blocks and concatenate through a
    // flat [1, b*w] then reshape
    let flat = g.concat_last(rows)?;
    let w = g.value(rows[0]).numel();
    g.reshape(flat, vec![rows.len(), w])
}

impl ParamSet {
    /// Binds parameters as constants: forward-only graphs skip their grads.
    pub fn bind_frozen(&self, g: &mut Graph) -> Bound {
        Bound::from_vars(self.iter().map(|(_, t)| g.input(t.clone())).collect())
    }
}
