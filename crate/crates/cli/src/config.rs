//! Run configuration: file values merged with command-line overrides.

use std::path::{Path, PathBuf};

use regunet::{MissingPolicy, Variant};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

pub const DEFAULT_LABEL: &str = "PCOS (Y/N)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    /// Drop rows with missing feature cells.
    #[default]
    None,
    /// Fill missing cells with the column median.
    Median,
}

impl From<Impute> for MissingPolicy {
    fn from(value: Impute) -> Self {
        match value {
            Impute::None => MissingPolicy::Drop,
            Impute::Median => MissingPolicy::Median,
        }
    }
}

/// Everything a training run depends on. Written to `resolved-config.json`
/// next to the outputs; passing that file back via `--config` repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub label: String,
    pub impute: Impute,
    pub synthetic: bool,
    pub n: usize,
    pub margin: f64,
    pub flip_rate: f64,
    pub variant: Variant,
    pub alpha: f64,
    pub hidden_width: usize,
    pub head_width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub out: PathBuf,
    /// Print a progress line every this many epochs; 0 disables it.
    pub log_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: None,
            label: DEFAULT_LABEL.to_string(),
            impute: Impute::None,
            synthetic: false,
            n: 500,
            margin: 0.5,
            flip_rate: 0.0,
            variant: Variant::ResidualConcat,
            alpha: 0.01,
            hidden_width: 512,
            head_width: 128,
            epochs: 200,
            batch_size: 32,
            lr: 0.001,
            val_fraction: 0.2,
            seed: 0,
            out: PathBuf::from("out"),
            log_every: 0,
        }
    }
}

impl RunConfig {
    /// Reads a JSON object or a flat `key = value` file. Keys match the
    /// field names above; `#` starts a comment line.
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            Value::Object(
                parse_key_values(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?,
            )
        };
        serde_json::from_value(value)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data, self.synthetic) {
            (None, false) => Err(CliError::Config(
                "either --data or --synthetic is required".into(),
            )),
            (Some(_), true) => Err(CliError::Config(
                "--data and --synthetic are mutually exclusive".into(),
            )),
            _ => Ok(()),
        }
    }
}

fn parse_key_values(text: &str) -> Result<Map<String, Value>, String> {
    let mut map = Map::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, raw) = line
            .split_once('=')
            .ok_or_else(|| format!("line {}: expected key = value", i + 1))?;
        let raw = raw.trim();
        let value = match raw {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => raw
                .parse::<u64>()
                .map(Value::from)
                .or_else(|_| raw.parse::<f64>().map(Value::from))
                .unwrap_or_else(|_| Value::String(raw.trim_matches('"').to_string())),
        };
        map.insert(key.trim().to_string(), value);
    }
    Ok(map)
}
