use crate::error::CoreError;
use crate::numcore::{Bound, Graph, ParamId, ParamSet, Tensor, Var};
use crate::rng::Prng;

/// Stacked LSTM read as a set encoder: context tuples fed in arbitrary order
/// as a sequence, latent taken as a linear projection of the last hidden
/// state of the top layer.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LstmSpec {
    pub input_dim: usize,
    pub hidden_size: usize,
    pub num_layers: usize,
    pub output_dim: usize,
}

impl LstmSpec {
    pub fn new(
        input_dim: usize,
        hidden_size: usize,
        num_layers: usize,
        output_dim: usize,
    ) -> Result<Self, CoreError> {
        if input_dim == 0 || hidden_size == 0 || num_layers == 0 || output_dim == 0 {
            return Err(CoreError::invalid("lstm dims must all be >= 1"));
        }
        Ok(LstmSpec {
            input_dim,
            hidden_size,
            num_layers,
            output_dim,
        })
    }
}

/// One layer's gate parameters. Each gate has its own weight over
/// concat(x, h), which is equivalent to the usual fused 4H matrix.
#[derive(Clone, Debug)]
struct LstmLayer {
    // input, forget, cell, output
    w: [ParamId; 4],
    b: [ParamId; 4],
}

#[derive(Clone, Debug)]
pub struct Lstm {
    pub spec: LstmSpec,
    layers: Vec<LstmLayer>,
    proj_w: ParamId,
    proj_b: ParamId,
}

impl Lstm {
    pub fn init(spec: LstmSpec, prefix: &str, params: &mut ParamSet, rng: &mut Prng) -> Lstm {
        let mut layers = Vec::new();
        let h = spec.hidden_size;
        for l in 0..spec.num_layers {
            let in_dim = if l == 0 { spec.input_dim } else { h };
            let gate = |params: &mut ParamSet, rng: &mut Prng, name: &str| {
                (
                    params.add(
                        format!("{prefix}.l{l}.w_{name}"),
                        Tensor::glorot(in_dim + h, h, rng),
                    ),
                    params.add(format!("{prefix}.l{l}.b_{name}"), Tensor::zeros(vec![h])),
                )
            };
            let (wi, bi) = gate(params, rng, "i");
            let (wf, bf) = gate(params, rng, "f");
            let (wg, bg) = gate(params, rng, "g");
            let (wo, bo) = gate(params, rng, "o");
            layers.push(LstmLayer {
                w: [wi, wf, wg, wo],
                b: [bi, bf, bg, bo],
            });
        }
        let proj_w = params.add(
            format!("{prefix}.proj_w"),
            Tensor::glorot(h, spec.output_dim, rng),
        );
        let proj_b = params.add(format!("{prefix}.proj_b"), Tensor::zeros(vec![spec.output_dim]));
        Lstm {
            spec,
            layers,
            proj_w,
            proj_b,
        }
    }

    /// steps: time-major sequence of [batch, input_dim] nodes, length >= 1.
    /// Returns [batch, output_dim]: the projected last hidden state of the
    /// top layer. Initial hidden and cell states are zero.
    pub fn forward_sequence(
        &self,
        g: &mut Graph,
        bound: &Bound,
        steps: &[Var],
    ) -> Result<Var, CoreError> {
        if steps.is_empty() {
            return Err(CoreError::invalid("lstm: empty sequence"));
        }
        let batch = g.value(steps[0]).rows();
        for &s in steps {
            let shape = g.value(s).shape().to_vec();
            if shape != [batch, self.spec.input_dim] {
                return Err(CoreError::ShapeMismatch {
                    op: "lstm_sequence",
                    lhs: shape,
                    rhs: vec![batch, self.spec.input_dim],
                });
            }
        }
        let h_dim = self.spec.hidden_size;
        let zeros = g.input(Tensor::zeros(vec![batch, h_dim]));
        let mut h: Vec<Var> = vec![zeros; self.layers.len()];
        let mut c: Vec<Var> = vec![zeros; self.layers.len()];

        for &x_t in steps {
            let mut layer_in = x_t;
            for (l, layer) in self.layers.iter().enumerate() {
                let xh = g.concat_last(&[layer_in, h[l]])?;
                let gate = |g: &mut Graph, w: ParamId, b: ParamId| -> Result<Var, CoreError> {
                    let z = g.matmul(xh, bound.var(w))?;
                    g.add(z, bound.var(b))
                };
                let i_g = gate(g, layer.w[0], layer.b[0])?;
                let i_g = g.sigmoid(i_g);
                let f_g = gate(g, layer.w[1], layer.b[1])?;
                let f_g = g.sigmoid(f_g);
                let g_g = gate(g, layer.w[2], layer.b[2])?;
                let g_g = g.tanh(g_g);
                let o_g = gate(g, layer.w[3], layer.b[3])?;
                let o_g = g.sigmoid(o_g);

                let fc = g.mul(f_g, c[l])?;
                let ig = g.mul(i_g, g_g)?;
                let c_new = g.add(fc, ig)?;
                let c_tanh = g.tanh(c_new);
                let h_new = g.mul(o_g, c_tanh)?;
                c[l] = c_new;
                h[l] = h_new;
                layer_in = h_new;
            }
        }
        let top = h[self.layers.len() - 1];
        let out = g.matmul(top, bound.var(self.proj_w))?;
        g.add(out, bound.var(self.proj_b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck;

    fn build(spec: LstmSpec, seed: u64) -> (Lstm, ParamSet) {
        let mut params = ParamSet::new();
        let mut rng = Prng::seed_from(seed);
        let lstm = Lstm::init(spec, "lstm", &mut params, &mut rng);
        (lstm, params)
    }

    fn run(lstm: &Lstm, params: &ParamSet, seq: &[Tensor]) -> Tensor {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let steps: Vec<Var> = seq.iter().map(|t| g.input(t.clone())).collect();
        let o = lstm.forward_sequence(&mut g, &b, &steps).unwrap();
        g.value(o).clone()
    }

    #[test]
    fn empty_sequence_rejected() {
        let (lstm, params) = build(LstmSpec::new(3, 4, 1, 2).unwrap(), 1);
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        assert!(lstm.forward_sequence(&mut g, &b, &[]).is_err());
    }

    #[test]
    fn length_one_depends_only_on_that_element() {
        let (lstm, params) = build(LstmSpec::new(3, 4, 2, 2).unwrap(), 2);
        let x = Tensor::matrix(1, 3, vec![0.3, -0.4, 0.9]).unwrap();
        let a = run(&lstm, &params, std::slice::from_ref(&x));
        let b = run(&lstm, &params, &[x]);
        assert_eq!(a, b);
    }

    #[test]
    fn reversed_sequence_changes_output() {
        // order sensitivity is expected for this encoder
        let (lstm, params) = build(LstmSpec::new(2, 8, 2, 3).unwrap(), 3);
        let s1 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let s2 = Tensor::matrix(1, 2, vec![0.0, 1.0]).unwrap();
        let s3 = Tensor::matrix(1, 2, vec![-1.0, 0.5]).unwrap();
        let fwd = run(&lstm, &params, &[s1.clone(), s2.clone(), s3.clone()]);
        let rev = run(&lstm, &params, &[s3, s2, s1]);
        let diff: f64 = fwd
            .data()
            .iter()
            .zip(rev.data())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(diff > 1e-8, "reversed output unexpectedly identical");
    }

    #[test]
    fn zero_input_length_one_is_bias_determined() {
        // with x = 0 and zero initial state the first step's gates see only
        // the biases, so any two weight draws sharing biases agree
        let (lstm_a, params_a) = build(LstmSpec::new(3, 4, 2, 2).unwrap(), 10);
        let (lstm_b, mut params_b) = build(LstmSpec::new(3, 4, 2, 2).unwrap(), 11);
        // copy biases and the output projection from a to b
        for i in 0..params_a.len() {
            let id = ParamId(i);
            let name = params_a.name(id).to_string();
            if name.contains(".b_") || name.starts_with("lstm.proj") {
                *params_b.get_mut(id) = params_a.get(id).clone();
            }
        }
        let x = Tensor::matrix(1, 3, vec![0.0; 3]).unwrap();
        let a = run(&lstm_a, &params_a, std::slice::from_ref(&x));
        let b = run(&lstm_b, &params_b, &[x]);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (lstm, params) = build(LstmSpec::new(2, 3, 2, 2).unwrap(), 4);
        let mut rng = Prng::seed_from(77);
        let seq: Vec<Tensor> = (0..3)
            .map(|_| Tensor::matrix(2, 2, (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap())
            .collect();
        let y = Tensor::matrix(2, 2, (0..4).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();

        let loss = |p: &ParamSet| {
            let mut g = Graph::new();
            let b = p.bind(&mut g);
            let steps: Vec<Var> = seq.iter().map(|t| g.input(t.clone())).collect();
            let o = lstm.forward_sequence(&mut g, &b, &steps).unwrap();
            let yv = g.input(y.clone());
            let l = g.mse(o, yv).unwrap();
            g.value(l).item()
        };

        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let steps: Vec<Var> = seq.iter().map(|t| g.input(t.clone())).collect();
        let o = lstm.forward_sequence(&mut g, &b, &steps).unwrap();
        let yv = g.input(y.clone());
        let l = g.mse(o, yv).unwrap();
        g.backward(l).unwrap();
        let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| g.grad(b.var(ParamId(i)))).collect();

        let numeric = gradcheck::finite_difference_grads(&params, loss, 1e-5);
        let frac = gradcheck::agreement_fraction(&analytic, &numeric, 1e-4);
        assert!(frac > 0.99, "agreement {frac}");
    }
}
