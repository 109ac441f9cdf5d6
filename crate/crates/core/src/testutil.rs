//! Finite-difference helpers shared by unit tests.

use crate::tensor::Matrix;

pub const STEP: f64 = 1e-5;

/// Central-difference gradient of `f` with respect to every entry of `at`.
pub fn numeric_gradient(at: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
    let mut grad = Matrix::zeros(at.rows(), at.cols());
    for i in 0..at.len() {
        let mut plus = at.clone();
        plus.data_mut()[i] += STEP;
        let mut minus = at.clone();
        minus.data_mut()[i] -= STEP;
        grad.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * STEP);
    }
    grad
}

/// Largest `|a - b| / max(|a|, |b|, 1e-8)` over all entries.
pub fn max_rel_error(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}
