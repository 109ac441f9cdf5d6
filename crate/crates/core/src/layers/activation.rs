use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// `max(0, x)` entrywise.
pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0)).expect("relu preserves finiteness")
}

/// Passes `grad_out` where the forward input was strictly positive; the
/// derivative at exactly zero is taken as zero.
pub fn relu_backward(grad_out: &Matrix, input: &Matrix) -> Result<Matrix> {
    let mask = input.map(|v| if v > 0.0 { 1.0 } else { 0.0 })?;
    grad_out.mul(&mask)
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(logistic).expect("sigmoid is bounded")
}

/// `grad_out · σ(1 − σ)` given the forward *output* `σ`.
pub fn sigmoid_backward(grad_out: &Matrix, output: &Matrix) -> Result<Matrix> {
    grad_out.mul(&output.map(|s| s * (1.0 - s))?)
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Matrix>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        self.input = Some(x.clone());
        relu(x)
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let input = self
            .input
            .take()
            .ok_or(Error::MissingCache("relu_backward"))?;
        relu_backward(grad_out, &input)
    }

    /// Cached forward input, if a forward pass is pending.
    pub fn cached_input(&self) -> Option<&Matrix> {
        self.input.as_ref()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    output: Option<Matrix>,
}

impl Sigmoid {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(&mut self, x: &Matrix) -> Matrix {
        let out = sigmoid(x);
        self.output = Some(out.clone());
        out
    }

    pub fn backward(&mut self, grad_out: &Matrix) -> Result<Matrix> {
        let out = self
            .output
            .take()
            .ok_or(Error::MissingCache("sigmoid_backward"))?;
        sigmoid_backward(grad_out, &out)
    }
}
