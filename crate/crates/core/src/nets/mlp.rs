use crate::error::CoreError;
use crate::numcore::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::Prng;

/// Feed-forward relu network layout. Hidden layers default to two of 256.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Result<Self, CoreError> {
        if input_dim == 0 || output_dim == 0 || hidden_dims.contains(&0) {
            return Err(CoreError::invalid("mlp dims must all be >= 1"));
        }
        Ok(MlpSpec {
            input_dim,
            hidden_dims,
            output_dim,
        })
    }

    pub fn two_layer_256(input_dim: usize, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden_dims: vec![256, 256],
            output_dim,
        }
    }
}

/// MLP with parameters registered in a shared [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Mlp {
    pub spec: MlpSpec,
    layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    pub fn init(spec: MlpSpec, prefix: &str, params: &mut ParamSet, rng: &mut Prng) -> Mlp {
        let mut layers = Vec::new();
        let mut in_dim = spec.input_dim;
        for (i, &h) in spec.hidden_dims.iter().chain([&spec.output_dim]).enumerate() {
            let w = params.add(format!("{prefix}.w{i}"), Tensor::glorot(in_dim, h, rng));
            let b = params.add(format!("{prefix}.b{i}"), Tensor::zeros(vec![h]));
            layers.push((w, b));
            in_dim = h;
        }
        Mlp { spec, layers }
    }

    /// x: [batch, input_dim] -> [batch, output_dim]. Linear output layer,
    /// relu between hidden layers.
    pub fn forward(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var, CoreError> {
        let got = g.value(x).shape().to_vec();
        if got.len() != 2 || got[1] != self.spec.input_dim {
            return Err(CoreError::ShapeMismatch {
                op: "mlp_forward",
                lhs: got,
                rhs: vec![0, self.spec.input_dim],
            });
        }
        let mut h = x;
        let n_layers = self.layers.len();
        for (i, &(w, b)) in self.layers.iter().enumerate() {
            h = g.matmul(h, bound.var(w))?;
            h = g.add(h, bound.var(b))?;
            if i + 1 < n_layers {
                h = g.relu(h);
            }
        }
        Ok(h)
    }
}
