//! Finite-difference helpers for unit tests.

use crate::domain::Matrix;

/// Central differences of `f` with respect to every entry of `at`.
pub fn central_difference(at: &Matrix, h: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for k in 0..at.as_slice().len() {
        let x = at.as_slice()[k];
        probe.as_mut_slice()[k] = x + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = x - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = x;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Largest entrywise `|a - b| / max(|a|, |b|, 1e-6)`.
pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
