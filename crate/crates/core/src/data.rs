//! Tabular data: CSV ingestion, stratified splitting, z-score
//! standardization and a synthetic linearly separable generator.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

const SPLIT_STREAM: u64 = 1;
const SYNTHETIC_STREAM: u64 = 3;

/// Feature matrix, binary labels and optional standardization transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Matrix,
    feature_names: Vec<String>,
    standardization: Option<Standardizer>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, feature_names: Vec<String>) -> Result<Self> {
        if y.shape() != (x.rows(), 1) {
            return Err(Error::shape("Dataset::new", x.shape(), y.shape()));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::Data(format!(
                "{} feature names for {} columns",
                feature_names.len(),
                x.cols()
            )));
        }
        if let Some(i) = y.data().iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("label at row {i} is not 0 or 1")));
        }
        Ok(Self {
            x,
            y,
            feature_names,
            standardization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> Option<&Standardizer> {
        self.standardization.as_ref()
    }

    pub fn positives(&self) -> usize {
        self.y.data().iter().filter(|&&v| v == 1.0).count()
    }

    /// Features and labels of the given rows.
    pub fn rows(&self, indices: &[usize]) -> Result<(Matrix, Matrix)> {
        Ok((self.x.select_rows(indices)?, self.y.select_rows(indices)?))
    }

    /// Keeps only the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let (x, y) = self.rows(indices)?;
        Ok(Self {
            x,
            y,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        })
    }

    /// Applies a previously fitted transform. Fails if one was already applied.
    pub fn apply_standardizer(mut self, transform: Standardizer) -> Result<Dataset> {
        if self.standardization.is_some() {
            return Err(Error::Data("dataset is already standardized".into()));
        }
        self.x = transform.apply(&self.x)?;
        self.standardization = Some(transform);
        Ok(self)
    }

    /// Writes the dataset as CSV with the label in the last column.
    pub fn write_csv(&self, path: &Path, label_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.x.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(format!("{}", self.y.get(i, 0) as u8));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        crate::write_atomic(path, &bytes)
    }
}

/// Per-column z-score transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, floored at 1 for constant columns.
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix, rows: &[usize]) -> Result<Self> {
        let part = x.select_rows(rows)?;
        let mean = part.col_mean().into_data();
        let std = part
            .col_var()
            .into_data()
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.mean.len() {
            return Err(Error::Data(format!(
                "standardization expects {} features, data has {}",
                self.mean.len(),
                x.cols()
            )));
        }
        let cols = x.cols();
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(cols) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Matrix::new(x.rows(), cols, data)
    }
}

/// Fits a [`Standardizer`] on the training rows and applies it to every row.
pub fn standardize(ds: Dataset, fit_on: &SplitIndices) -> Result<Dataset> {
    if ds.standardization.is_some() {
        return Err(Error::Data("dataset is already standardized".into()));
    }
    let transform = Standardizer::fit(&ds.x, &fit_on.train)?;
    ds.apply_standardizer(transform)
}

/// Disjoint train/validation row indices, each sorted ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per-class proportional split with largest-remainder rounding; the
/// validation set has `round(n · val_fraction)` rows.
pub fn stratified_split(ds: &Dataset, val_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(val_fraction > 0.0 && val_fraction < 0.5) {
        return Err(Error::Config(format!(
            "validation fraction must lie in (0, 0.5), got {val_fraction}"
        )));
    }
    let mut classes: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, &y) in ds.y.data().iter().enumerate() {
        classes[y as usize].push(i);
    }
    for (label, members) in classes.iter().enumerate() {
        if members.is_empty() {
            return Err(Error::Data(format!("class {label} has no samples")));
        }
    }

    let n = ds.len() as f64;
    let total = (n * val_fraction).round() as usize;
    let quotas: Vec<f64> = classes
        .iter()
        .map(|c| c.len() as f64 * val_fraction)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut order: Vec<usize> = (0..2).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    let assigned: usize = take.iter().sum();
    for &c in order.iter().take(total.saturating_sub(assigned)) {
        take[c] = (take[c] + 1).min(classes[c].len());
    }

    let mut rng = RngState::with_stream(seed, SPLIT_STREAM);
    let mut train = Vec::with_capacity(ds.len());
    let mut val = Vec::with_capacity(total);
    for (members, k) in classes.iter_mut().zip(take) {
        rng.shuffle(members);
        val.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok(SplitIndices { train, val })
}

/// How `load_csv` treats blank or unparseable feature cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissingPolicy {
    /// Drop the whole row.
    #[default]
    Drop,
    /// Replace with the column median over parseable cells.
    Median,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub rows_read: usize,
    /// 1-based file line numbers (the header is line 1) of dropped rows.
    pub dropped_lines: Vec<usize>,
    pub imputed_cells: usize,
    /// Columns with no values at all, ignored.
    pub skipped_columns: Vec<String>,
}

impl LoadReport {
    pub fn rows_dropped(&self) -> usize {
        self.dropped_lines.len()
    }
}

fn parse_cell(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Reads a header-first CSV. Every non-label column with numeric content
/// becomes a feature, in header order.
pub fn load_csv(
    path: &Path,
    label_column: &str,
    policy: MissingPolicy,
) -> Result<(Dataset, LoadReport)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("label column `{label_column}` not found")))?;

    let records: Vec<csv::StringRecord> =
        reader.records().collect::<std::result::Result<_, _>>()?;
    let mut report = LoadReport {
        rows_read: records.len(),
        ..LoadReport::default()
    };

    let cell = |r: &csv::StringRecord, j: usize| r.get(j).unwrap_or("").to_string();

    let mut labels = Vec::with_capacity(records.len());
    for (k, r) in records.iter().enumerate() {
        let raw = cell(r, label_idx);
        if raw.is_empty() {
            labels.push(None);
            continue;
        }
        match parse_cell(&raw) {
            Some(v) if v == 0.0 || v == 1.0 => labels.push(Some(v)),
            _ => {
                return Err(Error::Data(format!(
                    "row {} (line {}): label `{raw}` is not 0 or 1",
                    k + 1,
                    k + 2
                )))
            }
        }
    }

    let mut names = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        if j == label_idx {
            continue;
        }
        let raw: Vec<String> = records.iter().map(|r| cell(r, j)).collect();
        let parsed: Vec<Option<f64>> = raw.iter().map(|s| parse_cell(s)).collect();
        let non_blank = raw.iter().filter(|s| !s.is_empty()).count();
        if non_blank == 0 {
            report.skipped_columns.push(name.clone());
            continue;
        }
        if parsed.iter().all(Option::is_none) {
            return Err(Error::Data(format!(
                "feature column `{name}` is not numeric"
            )));
        }
        names.push(name.clone());
        columns.push(parsed);
    }
    if columns.is_empty() {
        return Err(Error::Data("no numeric feature columns".into()));
    }

    if policy == MissingPolicy::Median {
        for col in &mut columns {
            let mut present: Vec<f64> = col.iter().flatten().copied().collect();
            present.sort_by(f64::total_cmp);
            let mid = present.len() / 2;
            let median = if present.len().is_multiple_of(2) {
                (present[mid - 1] + present[mid]) / 2.0
            } else {
                present[mid]
            };
            for v in col.iter_mut().filter(|v| v.is_none()) {
                *v = Some(median);
                report.imputed_cells += 1;
            }
        }
    }

    let mut data = Vec::new();
    let mut ys = Vec::new();
    for (k, label) in labels.iter().enumerate() {
        let row: Option<Vec<f64>> = columns.iter().map(|c| c[k]).collect();
        match (row, label) {
            (Some(row), Some(y)) => {
                data.extend(row);
                ys.push(*y);
            }
            _ => report.dropped_lines.push(k + 2),
        }
    }
    if ys.is_empty() {
        return Err(Error::Data(format!(
            "{} has no usable rows",
            path.display()
        )));
    }
    let x = Matrix::new(ys.len(), names.len(), data)?;
    let y = Matrix::column_vector(&ys)?;
    Ok((Dataset::new(x, y, names)?, report))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub dim: usize,
    /// Minimum distance of every point from the separating hyperplane.
    pub margin: f64,
    /// Probability that a label is flipped.
    pub flip_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 500,
            dim: 41,
            margin: 0.5,
            flip_rate: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    /// Unit normal of the separating hyperplane through the origin.
    pub normal: Vec<f64>,
    /// Rows whose label was flipped.
    pub flipped: Vec<usize>,
}

/// Gaussian points pushed at least `margin` away from a random hyperplane
/// through the origin, labelled by side, with a `flip_rate` share of labels flipped.
pub fn synthetic_dataset(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.n < 4 || cfg.dim == 0 {
        return Err(Error::Config(
            "synthetic data needs n >= 4 and dim >= 1".into(),
        ));
    }
    if !(cfg.margin > 0.0 && cfg.margin.is_finite()) {
        return Err(Error::Config(format!(
            "margin must be positive, got {}",
            cfg.margin
        )));
    }
    if !(0.0..0.5).contains(&cfg.flip_rate) {
        return Err(Error::Config(format!(
            "flip rate must lie in [0, 0.5), got {}",
            cfg.flip_rate
        )));
    }
    let mut rng = RngState::with_stream(cfg.seed, SYNTHETIC_STREAM);
    let raw: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let normal: Vec<f64> = raw.iter().map(|v| v / norm).collect();

    let mut data = Vec::with_capacity(cfg.n * cfg.dim);
    let mut labels = Vec::with_capacity(cfg.n);
    let mut flipped = Vec::new();
    for i in 0..cfg.n {
        let mut point: Vec<f64> = (0..cfg.dim).map(|_| rng.normal()).collect();
        let d: f64 = point.iter().zip(&normal).map(|(a, b)| a * b).sum();
        let side = if d >= 0.0 { 1.0 } else { -1.0 };
        for (p, w) in point.iter_mut().zip(&normal) {
            *p += side * cfg.margin * w;
        }
        let mut label = if side > 0.0 { 1.0 } else { 0.0 };
        if rng.bernoulli(cfg.flip_rate) {
            label = 1.0 - label;
            flipped.push(i);
        }
        data.extend(point);
        labels.push(label);
    }
    let names = (1..=cfg.dim).map(|j| format!("x{j}")).collect();
    let dataset = Dataset::new(
        Matrix::new(cfg.n, cfg.dim, data)?,
        Matrix::column_vector(&labels)?,
        names,
    )?;
    Ok(SyntheticData {
        dataset,
        normal,
        flipped,
    })
}
