//! Finite-difference helpers shared by the layer tests.

use crate::tensor::Tensor;

pub const H: f64 = 1e-5;

/// Central differences of `f` w.r.t. every entry of `x`.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + H;
        let up = f(&probe);
        probe.data_mut()[i] = orig - H;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * H);
    }
    out
}

pub fn weighted_sum(out: &Tensor, weights: &Tensor) -> f64 {
    out.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
}

/// `|a - b| / max(1, |a|) <= tol` elementwise.
pub fn assert_close(analytic: &[f64], expected: &[f64], tol: f64) {
    assert_eq!(analytic.len(), expected.len());
    for (i, (a, b)) in analytic.iter().zip(expected).enumerate() {
        let err = (a - b).abs() / a.abs().max(1.0);
        assert!(err <= tol, "index {i}: {a} vs {b} (rel err {err:e} > {tol:e})");
    }
}
