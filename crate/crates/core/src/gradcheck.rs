//! Whole-model finite-difference check of the regularized loss gradient.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::objective::{bce, bce_grad, RegMode};
use crate::tensor::{Matrix, RngState};

const GRADCHECK_STREAM: u64 = 4;

/// Maximum relative error accepted by a gradient check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// L1-penalized weights closer than this to zero are not compared.
pub const L1_EXCLUSION: f64 = 1e-3;
/// Absolute floor on the relative-error denominator.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub batch: usize,
    pub step: f64,
    /// Corrupt the backward pass to demonstrate the check fails.
    pub inject_fault: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            batch: 6,
            step: 1e-5,
            inject_fault: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub variant: Variant,
    pub max_rel_error: f64,
    /// Parameter entry with the largest error, e.g. `branch0.dense1.weight[2,1]`.
    pub worst_param: String,
    pub checked: usize,
    /// Entries whose ±step perturbation changed some ReLU's active set.
    pub skipped_kink: usize,
    /// L1-penalized weights within [`L1_EXCLUSION`] of zero.
    pub skipped_l1: usize,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < GRADCHECK_TOLERANCE
    }
}

/// `variant` at 3 inputs, width 4 and head width 4.
pub fn tiny_config(variant: Variant, seed: u64) -> ModelConfig {
    ModelConfig::new(variant)
        .with_dims(3, 4, 4)
        .with_seed(seed)
        .with_alpha(0.05)
}

pub fn gradient_check(model_cfg: &ModelConfig, seed: u64) -> Result<GradCheckReport> {
    gradient_check_with(model_cfg, seed, GradCheckOptions::default())
}

pub fn gradient_check_with(
    model_cfg: &ModelConfig,
    seed: u64,
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    if model_cfg.input_dim > 5 || model_cfg.hidden_width > 8 || model_cfg.head_width > 8 {
        return Err(Error::Config(
            "gradient checks need input <= 5 and widths <= 8".into(),
        ));
    }
    if !(2..=8).contains(&opts.batch) {
        return Err(Error::Config(
            "gradient check batch must lie in 2..=8".into(),
        ));
    }
    let mut model = Model::build(model_cfg.clone())?;
    if opts.inject_fault {
        model.inject_gradient_fault();
    }

    let mut rng = RngState::with_stream(seed, GRADCHECK_STREAM);
    let x = Matrix::new(
        opts.batch,
        model_cfg.input_dim,
        (0..opts.batch * model_cfg.input_dim)
            .map(|_| rng.normal())
            .collect(),
    )?;
    let y = Matrix::column_vector(&(0..opts.batch).map(|i| (i % 2) as f64).collect::<Vec<_>>())?;

    // Non-zero biases so their gradients are exercised away from the origin.
    let info = model.param_info();
    let mut theta = model.flat_params();
    let mut offset = 0;
    for p in &info {
        let n = p.shape.0 * p.shape.1;
        if p.penalty.is_none() {
            theta[offset..offset + n]
                .iter_mut()
                .for_each(|v| *v = 0.1 * rng.normal());
        }
        offset += n;
    }
    model.set_flat_params(&theta)?;

    let probs = model.forward(&x)?;
    let base_pattern = model.relu_pattern();
    model.backward(&bce_grad(&probs, &y)?)?;
    let analytic = model.flat_grads();

    let total_loss = |model: &mut Model, params: &[f64]| -> Result<(f64, Vec<bool>)> {
        model.set_flat_params(params)?;
        let p = model.forward(&x)?;
        let loss = model.loss_report(bce(&p, &y)?).total_loss;
        Ok((loss, model.relu_pattern()))
    };

    let mut report = GradCheckReport {
        variant: model_cfg.variant,
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked: 0,
        skipped_kink: 0,
        skipped_l1: 0,
    };
    let mut offset = 0;
    for p in &info {
        let l1 = p
            .penalty
            .is_some_and(|r| r.mode == RegMode::L1 && r.alpha > 0.0);
        for k in 0..p.shape.0 * p.shape.1 {
            let idx = offset + k;
            if l1 && theta[idx].abs() < L1_EXCLUSION {
                report.skipped_l1 += 1;
                continue;
            }
            let mut probe = theta.clone();
            probe[idx] = theta[idx] + opts.step;
            let (plus, pattern_plus) = total_loss(&mut model, &probe)?;
            probe[idx] = theta[idx] - opts.step;
            let (minus, pattern_minus) = total_loss(&mut model, &probe)?;
            if pattern_plus != base_pattern || pattern_minus != base_pattern {
                report.skipped_kink += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[idx];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if err > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = err;
                report.worst_param = format!("{}[{},{}]", p.name, k / p.shape.1, k % p.shape.1);
            }
        }
        offset += p.shape.0 * p.shape.1;
    }
    model.set_flat_params(&theta)?;
    Ok(report)
}
