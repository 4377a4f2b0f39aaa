use crate::error::CoreError;
use crate::numcore::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::Prng;

/// Single multi-head attention layer over a set, no positional encoding.
/// Per-element outputs are mean-pooled and linearly projected to the latent,
/// which keeps the block permutation-invariant.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttentionSpec {
    pub input_dim: usize,
    pub model_width: usize,
    pub num_heads: usize,
    pub output_dim: usize,
}

impl AttentionSpec {
    pub fn new(
        input_dim: usize,
        model_width: usize,
        num_heads: usize,
        output_dim: usize,
    ) -> Result<Self, CoreError> {
        if input_dim == 0 || model_width == 0 || num_heads == 0 || output_dim == 0 {
            return Err(CoreError::invalid("attention dims must all be >= 1"));
        }
        if !model_width.is_multiple_of(num_heads) {
            return Err(CoreError::invalid(format!(
                "attention width {model_width} not divisible by {num_heads} heads"
            )));
        }
        Ok(AttentionSpec {
            input_dim,
            model_width,
            num_heads,
            output_dim,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.model_width / self.num_heads
    }
}

#[derive(Clone, Debug)]
struct Head {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    bq: ParamId,
    bk: ParamId,
    bv: ParamId,
}

#[derive(Clone, Debug)]
pub struct AttentionSet {
    pub spec: AttentionSpec,
    heads: Vec<Head>,
    out_w: ParamId,
    out_b: ParamId,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl AttentionSet {
    pub fn init(
        spec: AttentionSpec,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut Prng,
    ) -> AttentionSet {
        let hd = spec.head_dim();
        let mut heads = Vec::new();
        for h in 0..spec.num_heads {
            heads.push(Head {
                wq: params.add(format!("{prefix}.h{h}.wq"), Tensor::glorot(spec.input_dim, hd, rng)),
                bq: params.add(format!("{prefix}.h{h}.bq"), Tensor::zeros(vec![hd])),
                wk: params.add(format!("{prefix}.h{h}.wk"), Tensor::glorot(spec.input_dim, hd, rng)),
                bk: params.add(format!("{prefix}.h{h}.bk"), Tensor::zeros(vec![hd])),
                wv: params.add(format!("{prefix}.h{h}.wv"), Tensor::glorot(spec.input_dim, hd, rng)),
                bv: params.add(format!("{prefix}.h{h}.bv"), Tensor::zeros(vec![hd])),
            });
        }
        let out_w = params.add(
            format!("{prefix}.out_w"),
            Tensor::glorot(spec.model_width, spec.model_width, rng),
        );
        let out_b = params.add(format!("{prefix}.out_b"), Tensor::zeros(vec![spec.model_width]));
        let proj_w = params.add(
            format!("{prefix}.proj_w"),
            Tensor::glorot(spec.model_width, spec.output_dim, rng),
        );
        let proj_b = params.add(format!("{prefix}.proj_b"), Tensor::zeros(vec![spec.output_dim]));
        AttentionSet {
            spec,
            heads,
            out_w,
            out_b,
            proj_w,
            proj_b,
        }
    }

    /// Per-element attention outputs for a set x: [n, input_dim] -> [n, width].
    fn attend(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var, CoreError> {
        let scale = 1.0 / (self.spec.head_dim() as f64).sqrt();
        let mut head_outs = Vec::with_capacity(self.heads.len());
        for head in &self.heads {
            let q = g.matmul(x, bound.var(head.wq))?;
            let q = g.add(q, bound.var(head.bq))?;
            let k = g.matmul(x, bound.var(head.wk))?;
            let k = g.add(k, bound.var(head.bk))?;
            let v = g.matmul(x, bound.var(head.wv))?;
            let v = g.add(v, bound.var(head.bv))?;
            let scores = g.matmul_nt(q, k)?;
            let scores = g.scale(scores, scale);
            let weights = g.softmax_last(scores)?;
            head_outs.push(g.matmul(weights, v)?);
        }
        let cat = g.concat_last(&head_outs)?;
        let mixed = g.matmul(cat, bound.var(self.out_w))?;
        g.add(mixed, bound.var(self.out_b))
    }

    /// Full set encoder: x [n, input_dim] -> latent [output_dim] after mean
    /// pooling over the set.
    pub fn forward_set(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var, CoreError> {
        let shape = g.value(x).shape().to_vec();
        if shape.len() != 2 || shape[1] != self.spec.input_dim {
            return Err(CoreError::ShapeMismatch {
                op: "attention_set",
                lhs: shape,
                rhs: vec![0, self.spec.input_dim],
            });
        }
        if shape[0] == 0 {
            return Err(CoreError::invalid("attention_set: empty set"));
        }
        let per_element = self.attend(g, bound, x)?;
        let pooled = g.mean_axis(per_element, 0)?;
        let pooled = g.reshape(pooled, vec![1, self.spec.model_width])?;
        let out = g.matmul(pooled, bound.var(self.proj_w))?;
        let out = g.add(out, bound.var(self.proj_b))?;
        g.reshape(out, vec![self.spec.output_dim])
    }
}
