use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Column-wise join of two equal-width inputs.
///
/// Unequal widths are rejected even though joining them is well defined:
/// both branches feeding a concatenation must have the same width.
#[derive(Debug, Clone, Default)]
pub struct Concat {
    split_at: Option<usize>,
}

impl Concat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infer(a: &Matrix, b: &Matrix) -> Result<Matrix> {
        if a.shape() != b.shape() {
            return Err(Error::shape("concat_forward", a.shape(), b.shape()));
        }
        a.hcat(b)
    }

    pub fn forward(&mut self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        let out = Self::infer(a, b)?;
        self.split_at = Some(a.cols());
        Ok(out)
    }

    /// Splits `grad_out` back into the gradients of the left and right inputs.
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
        let at = self
            .split_at
            .take()
            .ok_or(Error::MissingCache("concat_backward"))?;
        if grad_out.cols() != 2 * at {
            return Err(Error::shape(
                "concat_backward",
                grad_out.shape(),
                (grad_out.rows(), 2 * at),
            ));
        }
        grad_out.split_cols(at)
    }
}

/// Parameter-free skip connection: `x + skip`.
#[derive(Debug, Clone, Default)]
pub struct ResidualAdd {
    shape: Option<(usize, usize)>,
}

impl ResidualAdd {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn infer(x: &Matrix, skip: &Matrix) -> Result<Matrix> {
        if x.shape() != skip.shape() {
            return Err(Error::shape(
                "residual_add_forward",
                x.shape(),
                skip.shape(),
            ));
        }
        x.add(skip)
    }

    pub fn forward(&mut self, x: &Matrix, skip: &Matrix) -> Result<Matrix> {
        let out = Self::infer(x, skip)?;
        self.shape = Some(x.shape());
        Ok(out)
    }

    /// Returns the gradient for the main path and for the skip path (identical).
    pub fn backward(&mut self, grad_out: &Matrix) -> Result<(Matrix, Matrix)> {
        let shape = self
            .shape
            .take()
            .ok_or(Error::MissingCache("residual_add_backward"))?;
        if grad_out.shape() != shape {
            return Err(Error::shape(
                "residual_add_backward",
                grad_out.shape(),
                shape,
            ));
        }
        Ok((grad_out.clone(), grad_out.clone()))
    }
}
