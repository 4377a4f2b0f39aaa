use serde::{Deserialize, Serialize};

use crate::error::CoreError;
use crate::rng::Prng;

/// Dense row-major f64 tensor. Plain data; gradients live on the graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, CoreError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(CoreError::InvalidOperand {
                op: "tensor",
                msg: format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, CoreError> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Weight init: uniform in +-sqrt(6 / (fan_in + fan_out)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut Prng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
        Tensor {
            shape: vec![rows, cols],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.len() <= 1 || self.shape.is_empty()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} elements", self.data.len());
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, context: &str) -> Result<(), CoreError> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(CoreError::NonFinite {
                context: context.to_string(),
            })
        }
    }

    /// Reinterprets the buffer under a new shape of equal element count.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor, CoreError> {
        Tensor::new(shape, self.data.clone())
    }
}

/// 2D matrix product: [m,k] x [k,n] -> [m,n].
///
/// i-k-j loop order keeps the inner loop streaming over contiguous rows of
/// `b` and `out`, which is what lets LLVM vectorize it.
pub fn matmul_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    out.fill(0.0);
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &aik) in a_row.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += aik * bv;
            }
        }
    }
}

/// [m,k] x [n,k]^T -> [m,n]; used by attention scores and matmul backward.
pub fn matmul_nt_into(out: &mut [f64], a: &[f64], b: &[f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&av, &bv) in a_row.iter().zip(b_row.iter()) {
                acc += av * bv;
            }
            *o = acc;
        }
    }
}

/// [k,m]^T x [k,n] -> [m,n], accumulating into `out`; matmul backward wrt rhs.
pub fn matmul_tn_accum(out: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for kk in 0..k {
        let a_row = &a[kk * m..(kk + 1) * m];
        let b_row = &b[kk * n..(kk + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row.iter()) {
                *o += av * bv;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_product_must_match() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn matmul_identity() {
        // I3 * M = M for any 3xk M
        let eye = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let m = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut out = vec![0.0; 6];
        matmul_into(&mut out, &eye, &m, 3, 3, 2);
        assert_eq!(out, m);
    }

    #[test]
    fn matmul_known_product() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        let mut out = vec![0.0; 4];
        matmul_into(&mut out, &a, &b, 2, 2, 2);
        assert_eq!(out, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_variants_agree() {
        let mut rng = Prng::seed_from(11);
        let (m, k, n) = (4, 5, 3);
        let a: Vec<f64> = (0..m * k).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let mut c0 = vec![0.0; m * n];
        matmul_into(&mut c0, &a, &b, m, k, n);

        // b^T laid out as [n,k]
        let mut bt = vec![0.0; n * k];
        for r in 0..k {
            for c in 0..n {
                bt[c * k + r] = b[r * n + c];
            }
        }
        let mut c1 = vec![0.0; m * n];
        matmul_nt_into(&mut c1, &a, &bt, m, k, n);
        for (x, y) in c0.iter().zip(c1.iter()) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T laid out as [k,m]
        let mut at = vec![0.0; k * m];
        for r in 0..m {
            for c in 0..k {
                at[c * m + r] = a[r * k + c];
            }
        }
        let mut c2 = vec![0.0; m * n];
        matmul_tn_accum(&mut c2, &at, &b, k, m, n);
        for (x, y) in c0.iter().zip(c2.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn glorot_bound_respected() {
        let mut rng = Prng::seed_from(2);
        let t = Tensor::glorot(16, 48, &mut rng);
        let bound = (6.0 / 64.0f64).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        // not degenerate
        assert!(t.data().iter().any(|v| v.abs() > bound * 0.1));
    }
}
