//! Central finite-difference gradient oracle.
//!
//! Verification utility only: it evaluates the loss through the forward path
//! twice per coordinate and never consults the analytic backward pass it is
//! used to check.

use super::params::ParamSet;

/// Central finite differences of `loss` with respect to every coordinate of
/// every parameter, at step size `h`. Returns buffers aligned with the
/// parameter order of `params`.
pub fn finite_difference_grads<F>(params: &ParamSet, loss: F, h: f64) -> Vec<Vec<f64>>
where
    F: Fn(&ParamSet) -> f64,
{
    let mut work = params.clone();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let numel = params.get(super::ParamId(i)).numel();
        let mut g = Vec::with_capacity(numel);
        for j in 0..numel {
            let orig = work.get(super::ParamId(i)).data()[j];
            work.get_mut(super::ParamId(i)).data_mut()[j] = orig + h;
            let up = loss(&work);
            work.get_mut(super::ParamId(i)).data_mut()[j] = orig - h;
            let down = loss(&work);
            work.get_mut(super::ParamId(i)).data_mut()[j] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Fraction of coordinates where analytic and numeric gradients agree to
/// `rel_tol` relative error (with an absolute floor for near-zero pairs).
pub fn agreement_fraction(analytic: &[Vec<f64>], numeric: &[Vec<f64>], rel_tol: f64) -> f64 {
    let mut total = 0usize;
    let mut ok = 0usize;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.iter().zip(n) {
            total += 1;
            let denom = av.abs().max(nv.abs());
            if denom < 1e-7 || (av - nv).abs() / denom < rel_tol {
                ok += 1;
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        ok as f64 / total as f64
    }
}
