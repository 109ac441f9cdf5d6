//! Mini-batch training loop, evaluation and history export.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SplitIndices};
use crate::error::{Error, Result};
use crate::layers::Mode;
use crate::model::{classify_probabilities, Model};
use crate::objective::{bce, bce_grad, bce_terms};
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::RngState;

const SHUFFLE_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            adam: AdamConfig::default(),
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2".into()));
        }
        self.adam.validate()
    }
}

/// Metrics for one epoch. Accuracies are percentages; losses are plain BCE.
/// Validation fields are absent when the split has no validation rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_penalty: f64,
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// Seconds spent in each epoch. Not exported, so history files stay reproducible.
    pub wall_time_secs: Vec<f64>,
}

impl TrainHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Mean BCE.
    pub loss: f64,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
    pub count: usize,
}

/// Splits shuffled indices into batches; a trailing batch of one row is
/// folded into the previous batch.
pub fn make_batches(order: &[usize], batch_size: usize) -> Vec<Vec<usize>> {
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("at least one batch").extend(tail);
    }
    batches
}

fn numerical(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite(_) | Error::NonFiniteGradient(_) => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

pub fn train(
    model: &mut Model,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    train_with(model, ds, split, cfg, |_| {})
}

/// As [`train`], calling `on_epoch` after each epoch's record is complete.
/// Leaves the model in eval mode.
pub fn train_with(
    model: &mut Model,
    ds: &Dataset,
    split: &SplitIndices,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainHistory> {
    cfg.validate()?;
    if model.config().input_dim != ds.n_features() {
        return Err(Error::Config(format!(
            "model expects {} features, dataset has {}",
            model.config().input_dim,
            ds.n_features()
        )));
    }
    if split.train.len() < 2 {
        return Err(Error::Config(
            "training partition needs at least 2 rows".into(),
        ));
    }
    let mut adam = AdamState::new(&model.param_shapes(), cfg.adam)?;
    let mut rng = RngState::with_stream(cfg.shuffle_seed, SHUFFLE_STREAM);
    let mut order = split.train.clone();
    let mut history = TrainHistory::default();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        model.set_mode(Mode::Train);
        rng.shuffle(&mut order);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, batch) in make_batches(&order, cfg.batch_size).iter().enumerate() {
            let batch_no = b + 1;
            let (x, y) = ds.rows(batch)?;
            let p = model
                .forward(&x)
                .map_err(|e| numerical(e, epoch, batch_no))?;
            let loss = bce(&p, &y)?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch_no,
                    loss,
                });
            }
            model
                .backward(&bce_grad(&p, &y)?)
                .map_err(|e| numerical(e, epoch, batch_no))?;
            adam.step(&mut model.param_slots())
                .map_err(|e| numerical(e, epoch, batch_no))?;

            loss_sum += loss * batch.len() as f64;
            correct += classify_probabilities(&p, 0.5)?
                .iter()
                .zip(y.data())
                .filter(|(&label, &target)| f64::from(label) == target)
                .count();
        }

        let n = order.len() as f64;
        model.set_mode(Mode::Eval);
        let val = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(model, ds, &split.val)?)
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_penalty: model.loss_report(0.0).penalty,
            train_acc: 100.0 * correct as f64 / n,
            val_loss: val.map(|v| v.loss),
            val_acc: val.map(|v| v.accuracy),
        };
        on_epoch(&record);
        history.records.push(record);
        history.wall_time_secs.push(started.elapsed().as_secs_f64());
    }
    Ok(history)
}

/// Mean BCE and accuracy at threshold 0.5 using eval-mode predictions.
pub fn evaluate(model: &Model, ds: &Dataset, indices: &[usize]) -> Result<Evaluation> {
    evaluate_at(model, ds, indices, 0.5)
}

/// As [`evaluate`] with an explicit decision threshold. Per-sample losses are
/// summed in index order, so the result does not depend on chunking.
pub fn evaluate_at(
    model: &Model,
    ds: &Dataset,
    indices: &[usize],
    threshold: f64,
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty index list".into()));
    }
    let mut terms = Vec::with_capacity(indices.len());
    let mut correct = 0usize;
    for chunk in indices.chunks(EVAL_CHUNK) {
        let (x, y) = ds.rows(chunk)?;
        let p = model.predict(&x)?;
        terms.extend(bce_terms(&p, &y)?);
        correct += classify_probabilities(&p, threshold)?
            .iter()
            .zip(y.data())
            .filter(|(&label, &target)| f64::from(label) == target)
            .count();
    }
    let count = indices.len();
    Ok(Evaluation {
        loss: terms.iter().sum::<f64>() / count as f64,
        accuracy: 100.0 * correct as f64 / count as f64,
        count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryFormat {
    Csv,
    Json,
}

pub const HISTORY_CSV_HEADER: &str = "epoch,train_loss,train_penalty,train_acc,val_loss,val_acc";

/// CSV with [`HISTORY_CSV_HEADER`] (absent validation values left empty).
pub fn history_csv(history: &TrainHistory) -> String {
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut out = String::from(HISTORY_CSV_HEADER);
    out.push('\n');
    for r in &history.records {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.epoch,
            r.train_loss,
            r.train_penalty,
            r.train_acc,
            opt(r.val_loss),
            opt(r.val_acc)
        ));
    }
    out
}

pub fn history_json(history: &TrainHistory) -> Result<String> {
    Ok(serde_json::to_string_pretty(&history.records)?)
}

pub fn export_history(history: &TrainHistory, path: &Path, format: HistoryFormat) -> Result<()> {
    if history.records.is_empty() {
        return Err(Error::Config("cannot export an empty history".into()));
    }
    let body = match format {
        HistoryFormat::Csv => history_csv(history),
        HistoryFormat::Json => history_json(history)?,
    };
    crate::write_atomic(path, body.as_bytes())
}
