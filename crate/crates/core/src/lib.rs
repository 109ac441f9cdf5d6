//! Feed-forward binary classifiers with hand-written backpropagation.
//!
//! The crate builds four architectures over tabular inputs (41 features by
//! default): an L1-regularized and an L2-regularized network with batch
//! normalization, a two-branch network joining both by concatenation, and a
//! residual variant of the two-branch network without batch normalization.
//! See [`model`] for the exact topologies.
//!
//! Everything is computed in `f64` on dense row-major [`Matrix`] values, with
//! explicit forward and backward passes per layer, so gradients can be
//! checked against central finite differences ([`gradcheck`]).
//!
//! ```
//! use regunet::{Model, ModelConfig, Variant};
//!
//! let model = Model::build(ModelConfig::new(Variant::ResidualConcat)).unwrap();
//! assert_eq!(model.param_count(), 1_750_273);
//! assert_eq!(model.branch_param_count(), 809_472);
//! ```

pub mod checkpoint;
pub mod data;
mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod objective;
pub mod optim;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

use std::io::Write;
use std::path::Path;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, DataRecord, CHECKPOINT_FORMAT};
pub use data::{
    load_csv, standardize, stratified_split, synthetic_dataset, Dataset, LoadReport, MissingPolicy,
    SplitIndices, Standardizer, SyntheticConfig,
};
pub use error::{Error, Result};
pub use gradcheck::{
    gradient_check, gradient_check_with, tiny_config, GradCheckOptions, GradCheckReport,
};
pub use layers::Mode;
pub use model::{Model, ModelConfig, Variant};
pub use objective::{RegMode, RegularizationConfig};
pub use optim::{AdamConfig, AdamState};
pub use tensor::{Matrix, RngState};
pub use train::{
    evaluate, export_history, train, EpochRecord, HistoryFormat, TrainConfig, TrainHistory,
};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| Path::new("."));
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("`{}` is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        file_name.to_string_lossy(),
        std::process::id()
    ));
    let mut f = std::fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
