//! Binary cross-entropy and the L1 / L2 weight penalties.
//!
//! The L2 term carries a factor `α/2` and the L1 term a plain `α`:
//!
//! ```text
//! L2(W) = α/2 · Σ W²  + L(W)
//! L1(W) = α   · Σ |W| + L(W)
//! ```
//!
//! Penalties cover dense weight matrices only, never biases or batch-norm buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Predictions are clipped into `[CLIP, 1 − CLIP]` before taking logs.
pub const CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegMode {
    #[default]
    None,
    L1,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegularizationConfig {
    pub mode: RegMode,
    pub alpha: f64,
}

impl RegularizationConfig {
    pub fn new(mode: RegMode, alpha: f64) -> Result<Self> {
        let cfg = Self { mode, alpha };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "regularization alpha must be a finite non-negative number, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// Plain binary cross-entropy.
    pub data_loss: f64,
    /// Scaled weight penalty.
    pub penalty: f64,
    pub total_loss: f64,
}

fn check_targets(pred: &Matrix, target: &Matrix) -> Result<()> {
    if pred.shape() != target.shape() || pred.cols() != 1 {
        return Err(Error::shape("bce", pred.shape(), target.shape()));
    }
    if let Some(i) = target.data().iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Data(format!(
            "target row {i} is {}, expected 0 or 1",
            target.data()[i]
        )));
    }
    Ok(())
}

fn clip(p: f64) -> f64 {
    p.clamp(CLIP, 1.0 - CLIP)
}

/// Per-sample cross-entropy terms, in row order.
pub fn bce_terms(pred: &Matrix, target: &Matrix) -> Result<Vec<f64>> {
    check_targets(pred, target)?;
    Ok(pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = clip(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .collect())
}

/// Mean binary cross-entropy over the batch.
pub fn bce(pred: &Matrix, target: &Matrix) -> Result<f64> {
    let terms = bce_terms(pred, target)?;
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Gradient of [`bce`] with respect to the predictions: `(p − y) / (p(1 − p)·n)`
/// on clipped `p`.
pub fn bce_grad(pred: &Matrix, target: &Matrix) -> Result<Matrix> {
    check_targets(pred, target)?;
    let n = pred.rows() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &y)| {
            let p = clip(p);
            (p - y) / (p * (1.0 - p) * n)
        })
        .collect();
    Matrix::new(pred.rows(), 1, data)
}

/// Unscaled penalty Ω: `Σ W²` for L2, `Σ |W|` for L1, zero for none.
pub fn penalty(weights: &[&Matrix], cfg: &RegularizationConfig) -> f64 {
    let per_entry: fn(f64) -> f64 = match cfg.mode {
        RegMode::None => return 0.0,
        RegMode::L1 => f64::abs,
        RegMode::L2 => |w| w * w,
    };
    weights
        .iter()
        .map(|w| w.data().iter().map(|&v| per_entry(v)).sum::<f64>())
        .sum()
}

/// Adds the scaled penalty (`α/2·Ω` for L2, `α·Ω` for L1) to `data_loss`.
pub fn regularized_loss(
    data_loss: f64,
    weights: &[&Matrix],
    cfg: &RegularizationConfig,
) -> LossReport {
    let omega = penalty(weights, cfg);
    let penalty = match cfg.mode {
        RegMode::None => 0.0,
        RegMode::L1 => cfg.alpha * omega,
        RegMode::L2 => cfg.alpha / 2.0 * omega,
    };
    LossReport {
        data_loss,
        penalty,
        total_loss: data_loss + penalty,
    }
}

/// Gradient of the scaled penalty: `α·W` for L2, `α·sign(W)` for L1 with `sign(0) = 0`.
pub fn penalty_grad(weights: &[&Matrix], cfg: &RegularizationConfig) -> Vec<Matrix> {
    let alpha = cfg.alpha;
    weights
        .iter()
        .map(|w| {
            let g = match cfg.mode {
                RegMode::None => w.map(|_| 0.0),
                RegMode::L2 => w.map(|v| alpha * v),
                RegMode::L1 => w.map(|v| {
                    if v > 0.0 {
                        alpha
                    } else if v < 0.0 {
                        -alpha
                    } else {
                        0.0
                    }
                }),
            };
            g.expect("penalty gradient of finite weights is finite")
        })
        .collect()
}
