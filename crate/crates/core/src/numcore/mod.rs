//! Dense f64 tensors, define-by-run reverse-mode autodiff over a fixed op
//! vocabulary, the Adam optimizer, and bit-exact parameter checkpoints.

mod adam;
pub mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::AdamState;
pub use graph::{Graph, Var};
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::{matmul_into, matmul_nt_into, matmul_tn_accum, Tensor};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Prng;

    /// MSE of a 1-hidden-layer net, evaluated forward-only; shared by the
    /// finite-difference checks below.
    fn small_net_loss(params: &ParamSet, x: &Tensor, y: &Tensor) -> f64 {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let h = g.matmul(xv, b.var(ParamId(0))).unwrap();
        let h = g.add(h, b.var(ParamId(1))).unwrap();
        let h = g.tanh(h);
        let o = g.matmul(h, b.var(ParamId(2))).unwrap();
        let o = g.add(o, b.var(ParamId(3))).unwrap();
        let l = g.mse(o, yv).unwrap();
        g.value(l).item()
    }

    #[test]
    fn wx_gradients_match_central_finite_differences() {
        // loss = mse(W x, y); analytic vs central differences at h = 1e-5
        let mut rng = Prng::seed_from(23);
        let mut params = ParamSet::new();
        let w = params.add("w", Tensor::glorot(3, 2, &mut rng));
        let x = Tensor::matrix(4, 3, (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let y = Tensor::matrix(4, 2, (0..8).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();

        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let o = g.matmul(xv, b.var(w)).unwrap();
        let l = g.mse(o, yv).unwrap();
        g.backward(l).unwrap();
        let analytic = vec![g.grad(b.var(w))];

        let numeric = gradcheck::finite_difference_grads(
            &params,
            |p| {
                let mut g = Graph::new();
                let b = p.bind(&mut g);
                let xv = g.input(x.clone());
                let yv = g.input(y.clone());
                let o = g.matmul(xv, b.var(w)).unwrap();
                let l = g.mse(o, yv).unwrap();
                g.value(l).item()
            },
            1e-5,
        );
        let frac = gradcheck::agreement_fraction(&analytic, &numeric, 1e-4);
        assert_eq!(frac, 1.0);
    }

    #[test]
    fn small_net_gradients_match_finite_differences() {
        let mut rng = Prng::seed_from(31);
        let mut params = ParamSet::new();
        params.add("w1", Tensor::glorot(4, 3, &mut rng));
        params.add("b1", Tensor::vector(vec![0.1, -0.2, 0.05]));
        params.add("w2", Tensor::glorot(3, 2, &mut rng));
        params.add("b2", Tensor::vector(vec![0.0, 0.3]));
        let x = Tensor::matrix(5, 4, (0..20).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
        let y = Tensor::matrix(5, 2, (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();

        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let xv = g.input(x.clone());
        let yv = g.input(y.clone());
        let h = g.matmul(xv, b.var(ParamId(0))).unwrap();
        let h = g.add(h, b.var(ParamId(1))).unwrap();
        let h = g.tanh(h);
        let o = g.matmul(h, b.var(ParamId(2))).unwrap();
        let o = g.add(o, b.var(ParamId(3))).unwrap();
        let l = g.mse(o, yv).unwrap();
        g.backward(l).unwrap();
        let analytic: Vec<Vec<f64>> = (0..params.len()).map(|i| g.grad(b.var(ParamId(i)))).collect();

        let numeric =
            gradcheck::finite_difference_grads(&params, |p| small_net_loss(p, &x, &y), 1e-5);
        let frac = gradcheck::agreement_fraction(&analytic, &numeric, 1e-4);
        assert!(frac > 0.99, "agreement {frac}");
    }

    #[test]
    fn forward_and_backward_are_deterministic() {
        let run = || {
            let mut rng = Prng::seed_from(7);
            let mut params = ParamSet::new();
            let w = params.add("w", Tensor::glorot(6, 4, &mut rng));
            let x = Tensor::matrix(2, 6, (0..12).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap();
            let y = Tensor::matrix(2, 4, vec![0.0; 8]).unwrap();
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let xv = g.input(x);
            let yv = g.input(y);
            let o = g.matmul(xv, b.var(w)).unwrap();
            let o = g.relu(o);
            let l = g.mse(o, yv).unwrap();
            g.backward(l).unwrap();
            (g.value(l).item().to_bits(), g.grad(b.var(w)).iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        assert_eq!(run(), run());
    }
}
