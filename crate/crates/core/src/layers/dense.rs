use crate::error::{Error, Result};
use crate::tensor::{seeded_init, Init, Matrix, RngState};

/// Fully connected layer computing `x · W + b`.
///
/// `W` is `fan_in × fan_out`; `b` is a `1 × fan_out` row broadcast over the batch.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: Matrix,
    bias: Matrix,
    grad_weight: Matrix,
    grad_bias: Matrix,
    input: Option<Matrix>,
}

impl Dense {
    /// Weights drawn from `init`, biases zero.
    pub fn new(fan_in: usize, fan_out: usize, init: Init, rng: &mut RngState) -> Self {
        let weight = seeded_init(fan_in, fan_out, init, rng);
        Self::from_parts(weight, Matrix::zeros(1, fan_out))
    }

    pub fn from_params(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape(
                "Dense::from_params",
                weight.shape(),
                bias.shape(),
            ));
        }
        Ok(Self::from_parts(weight, bias))
    }

    fn from_parts(weight: Matrix, bias: Matrix) -> Self {
        let grad_weight = Matrix::zeros(weight.rows(), weight.cols());
        let grad_bias = Matrix::zeros(1, bias.cols());
        Self {
            weight,
            bias,
            grad_weight,
            grad_bias,
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn weight(&self) -> &Matrix {
        &self.weight
    }

    pub fn bias(&self) -> &Matrix {
        &self.bias
    }

    pub fn grad_weight(&self) -> &Matrix {
        &self.grad_weight
    }

    pub fn grad_bias(&self) -> &Matrix {
        &self.grad_bias
    }

    pub fn weight_mut(&mut self) -> &mut Matrix {
        &mut self.weight
    }

    pub fn bias_mut(&mut self) -> &mut Matrix {
        &mut self.bias
    }

    pub(crate) fn grad_weight_mut(&mut self) -> &mut Matrix {
        &mut self.grad_weight
    }

    /// `(weight, grad_weight)` and `(bias, grad_bias)` borrowed together for optimizer steps.
    pub(crate) fn params_and_grads(&mut self) -> [(&mut Matrix, &Matrix); 2] {
        [
            (&mut self.weight, &self.grad_weight),
            (&mut self.bias, &self.grad_bias),
        ]
    }

    pub fn infer(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.fan_in() {
            return Err(Error::shape(
                "dense_forward",
                x.shape(),
                self.weight.shape(),
            ));
        }
        x.matmul(&self.weight)?.add_row(&self.bias)
    }

    pub fn forward(&mut self, x: &Matrix) -> Result<Matrix> {
        let out = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(out)
    }

    /// Sets `grad_W = xᵀ·grad_out` and `grad_b = Σ_rows grad_out`; returns `grad_out·Wᵀ`.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let x = self
            .input
            .as_ref()
            .ok_or(Error::MissingCache("dense_backward"))?;
        if grad_out.rows() != x.rows() || grad_out.cols() != self.fan_out() {
            return Err(Error::shape(
                "dense_backward",
                grad_out.shape(),
                (x.rows(), self.fan_out()),
            ));
        }
        let x = self.input.take().expect("checked above");
        self.grad_weight = x.transpose().matmul(grad_out)?;
        self.grad_bias = grad_out.col_sum();
        grad_out.matmul(&self.weight.transpose())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{max_rel_error, numeric_gradient};

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_params_give_zero_output() {
        let mut d = Dense::from_params(Matrix::zeros(3, 2), Matrix::zeros(1, 2)).unwrap();
        let x = m(&[&[1.0, -2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(d.forward(&x).unwrap(), Matrix::zeros(2, 2));
    }

    #[test]
    fn forward_hand_computed() {
        let mut d =
            Dense::from_params(m(&[&[1.0, 2.0], &[3.0, 4.0]]), m(&[&[10.0, 10.0]])).unwrap();
        assert_eq!(d.forward(&m(&[&[1.0, 1.0]])).unwrap(), m(&[&[14.0, 16.0]]));
        assert!(d.forward(&m(&[&[1.0, 1.0, 1.0]])).is_err());
    }

    #[test]
    fn backward_hand_chain_rule() {
        let mut d = Dense::from_params(m(&[&[3.0], &[4.0]]), Matrix::zeros(1, 1)).unwrap();
        d.forward(&m(&[&[1.0, 2.0]])).unwrap();
        let gin = d.backward(&m(&[&[1.0]])).unwrap();
        assert_eq!(d.grad_weight(), &m(&[&[1.0], &[2.0]]));
        assert_eq!(d.grad_bias(), &m(&[&[1.0]]));
        assert_eq!(gin, m(&[&[3.0, 4.0]]));
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut rng = RngState::new(2);
        let mut d = Dense::new(4, 3, Init::HeNormal, &mut rng);
        let x = seeded_init(5, 4, Init::HeNormal, &mut rng);
        d.forward(&x).unwrap();
        let gin = d.backward(&Matrix::zeros(5, 3)).unwrap();
        assert_eq!(gin, Matrix::zeros(5, 4));
        assert_eq!(d.grad_weight(), &Matrix::zeros(4, 3));
        assert_eq!(d.grad_bias(), &Matrix::zeros(1, 3));
    }

    #[test]
    fn backward_requires_cache_and_invalidates_it() {
        let mut rng = RngState::new(2);
        let mut d = Dense::new(2, 2, Init::HeNormal, &mut rng);
        assert!(matches!(
            d.backward(&Matrix::zeros(1, 2)),
            Err(Error::MissingCache(_))
        ));
        d.forward(&Matrix::zeros(1, 2)).unwrap();
        assert!(d.backward(&Matrix::zeros(2, 2)).is_err());
        d.forward(&Matrix::zeros(1, 2)).unwrap();
        d.backward(&Matrix::zeros(1, 2)).unwrap();
        assert!(matches!(
            d.backward(&Matrix::zeros(1, 2)),
            Err(Error::MissingCache(_))
        ));
    }

    #[test]
    fn matches_finite_differences() {
        let mut rng = RngState::new(5);
        let mut d = Dense::new(4, 3, Init::HeNormal, &mut rng);
        *d.bias_mut() = seeded_init(1, 3, Init::HeNormal, &mut rng);
        let x = seeded_init(5, 4, Init::HeNormal, &mut rng);
        let probe = seeded_init(5, 3, Init::HeNormal, &mut rng);
        // scalar objective: <probe, dense(x)>
        let objective = |d: &Dense, x: &Matrix| d.infer(x).unwrap().mul(&probe).unwrap().sum();

        d.forward(&x).unwrap();
        let gin = d.backward(&probe).unwrap();

        let num_x = numeric_gradient(&x, |xp| objective(&d, xp));
        assert!(max_rel_error(&gin, &num_x) < 1e-6);

        let num_w = numeric_gradient(d.weight(), |wp| {
            let probe_layer = Dense::from_params(wp.clone(), d.bias().clone()).unwrap();
            objective(&probe_layer, &x)
        });
        assert!(max_rel_error(d.grad_weight(), &num_w) < 1e-6);

        let num_b = numeric_gradient(d.bias(), |bp| {
            let probe_layer = Dense::from_params(d.weight().clone(), bp.clone()).unwrap();
            objective(&probe_layer, &x)
        });
        assert!(max_rel_error(d.grad_bias(), &num_b) < 1e-6);
    }
}
