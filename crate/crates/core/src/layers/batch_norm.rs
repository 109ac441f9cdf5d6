use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Hyperparameters for [`BatchNorm`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchNormConfig {
    /// Weight of the old running statistic in each update, in `(0, 1)`.
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            epsilon: 1e-5,
        }
    }
}

impl BatchNormConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch-norm momentum must lie in (0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "batch-norm epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct BnCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

/// Per-column normalization without learnable scale or shift.
///
/// Train mode normalizes with the batch mean and population variance and
/// folds them into the running statistics; eval mode uses the running
/// statistics. Holds no trainable parameters.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    running_mean: Matrix,
    running_var: Matrix,
    config: BatchNormConfig,
    mode: Mode,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(features: usize, config: BatchNormConfig) -> Self {
        Self {
            running_mean: Matrix::zeros(1, features),
            running_var: Matrix::filled(1, features, 1.0),
            config,
            mode: Mode::Train,
            cache: None,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.cols()
    }

    pub fn config(&self) -> BatchNormConfig {
        self.config
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn running_mean(&self) -> &Matrix {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Matrix {
        &self.running_var
    }

    pub fn set_running_stats(&mut self, mean: Matrix, var: Matrix) -> Result<()> {
        let want = (1, self.features());
        if mean.shape() != want || var.shape() != want {
            return Err(Error::shape("set_running_stats", mean.shape(), var.shape()));
        }
        if var.data().iter().any(|&v| v < 0.0) {
            return Err(Error::Config(
                "running variance must be non-negative".into(),
            ));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.features() {
            return Err(Error::shape(
                "batchnorm_forward",
                x.shape(),
                self.running_mean.shape(),
            ));
        }
        Ok(())
    }

    fn normalize(x: &Matrix, mean: &[f64], inv_std: &[f64]) -> Result<Matrix> {
        let cols = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(inv_std) {
                *v = (*v - m) * s;
            }
        }
        Matrix::new(x.rows(), cols, data)
    }

    fn inv_std(&self, var: &[f64]) -> Vec<f64> {
        var.iter()
            .map(|v| 1.0 / (v + self.config.epsilon).sqrt())
            .collect()
    }

    /// Normalizes with the running statistics, whatever the mode.
    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        let inv_std = self.inv_std(self.running_var.data());
        Self::normalize(x, self.running_mean.data(), &inv_std)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        self.check_width(x)?;
        if self.mode == Mode::Eval {
            self.cache = None;
            return self.infer(x);
        }
        if x.rows() < 2 {
            return Err(Error::Config(
                "batch normalization in train mode needs at least 2 rows".into(),
            ));
        }
        let mean = x.col_mean();
        let var = x.col_var();
        let inv_std = self.inv_std(var.data());
        let out = Self::normalize(x, mean.data(), &inv_std)?;

        let m = self.config.momentum;
        let blend = |running: &mut Matrix, batch: &Matrix| {
            for (r, &b) in running.data_mut().iter_mut().zip(batch.data()) {
                *r = m * *r + (1.0 - m) * b;
            }
        };
        blend(&mut self.running_mean, &mean);
        blend(&mut self.running_var, &var);

        self.cache = Some(BnCache {
            normalized: out.clone(),
            inv_std,
        });
        Ok(out)
    }

    /// Exact gradient through the batch mean and variance:
    /// `dx = inv_std / n · (n·dy − Σdy − x̂·Σ(dy·x̂))` per column.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let cache = self
            .cache
            .take()
            .ok_or(Error::MissingCache("batchnorm_backward"))?;
        if grad_out.shape() != cache.normalized.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                grad_out.shape(),
                cache.normalized.shape(),
            ));
        }
        let n = grad_out.rows() as f64;
        let cols = grad_out.cols();
        let sum_dy = grad_out.col_sum();
        let sum_dy_xhat = grad_out.mul(&cache.normalized)?.col_sum();

        let mut data = vec![0.0; grad_out.len()];
        for (i, row) in data.chunks_exact_mut(cols).enumerate() {
            let dy = grad_out.row(i);
            let xhat = cache.normalized.row(i);
            for j in 0..cols {
                row[j] = cache.inv_std[j] / n
                    * (n * dy[j] - sum_dy.data()[j] - xhat[j] * sum_dy_xhat.data()[j]);
            }
        }
        Matrix::new(grad_out.rows(), cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{seeded_init, Init, RngState};
    use crate::testutil::{max_rel_error, numeric_gradient};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        seeded_init(rows, cols, Init::HeNormal, &mut RngState::new(seed))
            .scale(3.0)
            .unwrap()
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let mut bn = BatchNorm::new(2, BatchNormConfig::default());
        let x = Matrix::from_rows(&[[3.0, 1.0], [3.0, 2.0], [3.0, 5.0]]).unwrap();
        let y = bn.forward(&x).unwrap();
        for i in 0..3 {
            assert_eq!(y.get(i, 0), 0.0);
        }
    }

    #[test]
    fn train_output_statistics() {
        let eps = 1e-5;
        let mut bn = BatchNorm::new(8, BatchNormConfig::default());
        let x = random(64, 8, 1).map(|v| v + 2.0).unwrap();
        let var_in = x.col_var();
        let y = bn.forward(&x).unwrap();
        let mean = y.col_mean();
        let var = y.col_var();
        for j in 0..8 {
            assert!(mean.get(0, j).abs() < 1e-10);
            let expect = var_in.get(0, j) / (var_in.get(0, j) + eps);
            assert!((var.get(0, j) - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_with_identity_stats_is_near_identity() {
        let mut bn = BatchNorm::new(3, BatchNormConfig::default());
        bn.set_mode(Mode::Eval);
        let x = random(5, 3, 2);
        let y = bn.forward(&x).unwrap();
        let scale = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!(y.max_abs_diff(&x.scale(scale).unwrap()).unwrap() < 1e-15);
        assert!(y.max_abs_diff(&x).unwrap() < 1e-4);
        // eval mode caches nothing
        assert!(matches!(bn.backward(&y), Err(Error::MissingCache(_))));
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut bn = BatchNorm::new(1, BatchNormConfig::default());
        let x = Matrix::column_vector(&[1.0, 3.0]).unwrap();
        bn.forward(&x).unwrap();
        // mean 2, var 1: 0.9·0 + 0.1·2 and 0.9·1 + 0.1·1
        assert!((bn.running_mean().get(0, 0) - 0.2).abs() < 1e-15);
        assert!((bn.running_var().get(0, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_row_batch_and_width_mismatch() {
        let mut bn = BatchNorm::new(2, BatchNormConfig::default());
        assert!(bn.forward(&Matrix::zeros(1, 2)).is_err());
        assert!(bn.forward(&Matrix::zeros(4, 3)).is_err());
        bn.set_mode(Mode::Eval);
        assert!(bn.forward(&Matrix::zeros(1, 2)).is_ok());
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut bn = BatchNorm::new(4, BatchNormConfig::default());
        bn.forward(&random(8, 4, 3)).unwrap();
        assert_eq!(
            bn.backward(&Matrix::zeros(8, 4)).unwrap(),
            Matrix::zeros(8, 4)
        );
    }

    #[test]
    fn matches_finite_differences() {
        let x = random(8, 4, 4);
        let probe = random(8, 4, 5);
        let mut bn = BatchNorm::new(4, BatchNormConfig::default());
        bn.forward(&x).unwrap();
        let analytic = bn.backward(&probe).unwrap();
        let numeric = numeric_gradient(&x, |xp| {
            let mut fresh = BatchNorm::new(4, BatchNormConfig::default());
            fresh.forward(xp).unwrap().mul(&probe).unwrap().sum()
        });
        assert!(max_rel_error(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn gradient_columns_sum_to_zero() {
        let mut bn = BatchNorm::new(4, BatchNormConfig::default());
        bn.forward(&random(8, 4, 6)).unwrap();
        let g = bn.backward(&random(8, 4, 7)).unwrap();
        for s in g.col_sum().data() {
            assert!(s.abs() < 1e-8, "{s}");
        }
    }
}
