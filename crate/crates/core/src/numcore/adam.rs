use crate::error::CoreError;

use super::params::ParamSet;
use super::tensor::Tensor;

/// Adam optimizer state: per-parameter first/second moment buffers plus the
/// shared step counter and hyperparameters.
#[derive(Clone, Debug)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update in place. Rejects non-finite gradients
    /// before touching any parameter.
    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), CoreError> {
        assert_eq!(grads.len(), params.len(), "grads/params length mismatch");
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(CoreError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            g.check_finite(&format!("gradient of {name}"))?;
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, (_, p)) in params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let g = grads[i].data();
            for ((pj, mj), (vj, &gj)) in p
                .data_mut()
                .iter_mut()
                .zip(m.iter_mut())
                .zip(v.iter_mut().zip(g.iter()))
            {
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / bc1;
                let v_hat = *vj / bc2;
                *pj -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}
