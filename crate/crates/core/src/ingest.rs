//! Tabular data loading and preprocessing.
//!
//! A [`TabularDataset`] holds cells as text with per-column kinds;
//! [`clean_and_encode`] turns it into an all-numeric feature table via
//! missing-row removal, column drops, binary indicators, one-hot
//! encoding and (optionally) standardization. Time-series helpers build
//! future-exceedance labels and shifted train/test windows. Small
//! synthetic generators mimic the two benchmark tasks so everything
//! runs without external downloads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::ops::Range;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset has no rows")]
    Empty,
    #[error("row {row} has {got} cells, expected {expected}")]
    Ragged {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("unknown column '{0}'")]
    UnknownColumn(String),
    #[error("column '{column}' holds non-numeric value '{value}'")]
    NotNumeric { column: String, value: String },
    #[error("label column '{column}' holds non-binary value '{value}'")]
    NonBinaryLabel { column: String, value: String },
    #[error("series has missing (non-finite) values")]
    MissingInSeries,
    #[error("series needs at least 2 points to label by the next step")]
    SeriesTooShort,
    #[error("window plan needs {needed} rows, dataset has {available}")]
    WindowOverflow { needed: usize, available: usize },
    #[error("window plan fields must be positive")]
    DegenerateWindowPlan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Rectangular table of text cells with inferred column kinds.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    /// Row-major cells, `rows[r][c]` under `columns[c]`.
    pub rows: Vec<Vec<String>>,
    /// Column excluded from encoding and standardization, if any.
    pub label_column: Option<String>,
}

fn is_numeric_cell(cell: &str) -> bool {
    cell.trim().parse::<f64>().is_ok()
}

impl TabularDataset {
    /// Build from headers and rows; kinds are inferred per column
    /// (numeric iff every cell parses as a float).
    pub fn new(
        columns: Vec<String>,
        rows: Vec<Vec<String>>,
        label_column: Option<String>,
    ) -> Result<Self, IngestError> {
        if rows.is_empty() {
            return Err(IngestError::Empty);
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(IngestError::Ragged {
                    row: r,
                    got: row.len(),
                    expected: columns.len(),
                });
            }
        }
        if let Some(label) = &label_column {
            if !columns.contains(label) {
                return Err(IngestError::UnknownColumn(label.clone()));
            }
        }
        let kinds = (0..columns.len())
            .map(|c| {
                if rows.iter().all(|row| is_numeric_cell(&row[c])) {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            })
            .collect();
        Ok(Self {
            columns,
            kinds,
            rows,
            label_column,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, IngestError> {
        self.columns
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| IngestError::UnknownColumn(name.to_string()))
    }

    /// Parse the feature columns into a numeric matrix and the label
    /// column (if set) into 0/1.
    pub fn features_and_labels(&self) -> Result<(Vec<Vec<f64>>, Vec<u8>), IngestError> {
        let label_idx = match &self.label_column {
            Some(name) => Some(self.column_index(name)?),
            None => None,
        };
        let mut features = Vec::with_capacity(self.rows.len());
        let mut labels = Vec::new();
        for row in &self.rows {
            let mut f = Vec::with_capacity(row.len());
            for (c, cell) in row.iter().enumerate() {
                if Some(c) == label_idx {
                    labels.push(match cell.trim() {
                        "0" => 0,
                        "1" => 1,
                        other => {
                            return Err(IngestError::NonBinaryLabel {
                                column: self.columns[c].clone(),
                                value: other.to_string(),
                            })
                        }
                    });
                } else {
                    f.push(cell.trim().parse::<f64>().map_err(|_| {
                        IngestError::NotNumeric {
                            column: self.columns[c].clone(),
                            value: cell.clone(),
                        }
                    })?);
                }
            }
            features.push(f);
        }
        Ok((features, labels))
    }
}

pub fn read_csv(path: &Path, label_column: Option<&str>) -> Result<TabularDataset, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let columns: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.to_string())
        .collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        rows.push(record.iter().map(|c| c.to_string()).collect());
    }
    TabularDataset::new(columns, rows, label_column.map(|s| s.to_string()))
}

pub fn write_csv(dataset: &TabularDataset, path: &Path) -> Result<(), IngestError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(&dataset.columns)?;
    for row in &dataset.rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Map one categorical column to a 0/1 indicator of a single value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub column: String,
    pub positive_value: String,
}

/// Declarative preprocessing steps, applied in the order:
/// missing-row removal, column drops, indicators, one-hot encoding of
/// the remaining categoricals, standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessPlan {
    /// Cells equal to this token (or empty) count as missing.
    pub missing_sentinel: Option<String>,
    pub drop_columns: Vec<String>,
    pub indicators: Vec<IndicatorSpec>,
    pub one_hot: bool,
    pub standardize: bool,
    /// Standardization statistics are fit on the first `fit_rows` rows
    /// only (the training portion); `None` fits on everything.
    pub standardize_fit_rows: Option<usize>,
}

impl Default for PreprocessPlan {
    fn default() -> Self {
        Self {
            missing_sentinel: None,
            drop_columns: Vec::new(),
            indicators: Vec::new(),
            one_hot: true,
            standardize: true,
            standardize_fit_rows: None,
        }
    }
}

/// Per-column centering/scaling statistics, fit once and applied to any
/// portion so test data never leaks into the fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    /// Population (1/n) statistics per column; a constant column gets
    /// scale 1 so it is centered but not blown up.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let n = rows.len().max(1) as f64;
        let width = rows.first().map_or(0, |r| r.len());
        let mut means = vec![0.0; width];
        for row in rows {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scales = vec![0.0; width];
        for row in rows {
            for ((s, v), m) in scales.iter_mut().zip(row).zip(&means) {
                *s += (v - m) * (v - m) / n;
            }
        }
        for s in &mut scales {
            *s = s.sqrt();
            if *s == 0.0 {
                *s = 1.0;
            }
        }
        Self { means, scales }
    }

    pub fn apply(&self, rows: &mut [Vec<f64>]) {
        for row in rows {
            for ((v, m), s) in row.iter_mut().zip(&self.means).zip(&self.scales) {
                *v = (*v - *m) / *s;
            }
        }
    }
}

fn format_number(v: f64) -> String {
    // Shortest round-trip representation, so re-parsing is lossless.
    format!("{v}")
}

/// Apply a [`PreprocessPlan`], producing an all-numeric dataset. The
/// label column (if set) is carried through untouched by the one-hot
/// and standardization steps.
pub fn clean_and_encode(
    raw: &TabularDataset,
    plan: &PreprocessPlan,
) -> Result<TabularDataset, IngestError> {
    for name in &plan.drop_columns {
        raw.column_index(name)?;
    }
    for spec in &plan.indicators {
        raw.column_index(&spec.column)?;
    }
    if let Some(fit) = plan.standardize_fit_rows {
        if fit == 0 {
            return Err(IngestError::Empty);
        }
    }

    let is_missing = |cell: &str| {
        let t = cell.trim();
        t.is_empty() || plan.missing_sentinel.as_deref() == Some(t)
    };

    // 1. Drop rows with any missing cell, then 2. drop named columns.
    let kept_rows: Vec<&Vec<String>> = raw
        .rows
        .iter()
        .filter(|row| !row.iter().any(|c| is_missing(c)))
        .collect();
    if kept_rows.is_empty() {
        return Err(IngestError::Empty);
    }
    let kept_cols: Vec<usize> = (0..raw.columns.len())
        .filter(|c| !plan.drop_columns.contains(&raw.columns[*c]))
        .collect();

    // 3. Indicators turn a text column into 0/1 in place.
    let mut columns: Vec<String> = Vec::new();
    let mut cells: Vec<Vec<String>> = vec![Vec::new(); kept_rows.len()];
    let label = raw.label_column.clone();
    for &c in &kept_cols {
        let name = &raw.columns[c];
        let indicator = plan.indicators.iter().find(|s| &s.column == name);
        let is_label = label.as_deref() == Some(name.as_str());
        if let Some(spec) = indicator {
            columns.push(name.clone());
            for (r, row) in kept_rows.iter().enumerate() {
                let hit = row[c].trim() == spec.positive_value;
                cells[r].push(if hit { "1" } else { "0" }.to_string());
            }
        } else if plan.one_hot
            && !is_label
            && raw.kinds[c] == ColumnKind::Categorical
        {
            // 4. One-hot over the lexicographically sorted levels.
            let levels: BTreeSet<&str> =
                kept_rows.iter().map(|row| row[c].trim()).collect();
            for level in &levels {
                columns.push(format!("{name}={level}"));
                for (r, row) in kept_rows.iter().enumerate() {
                    let hit = row[c].trim() == *level;
                    cells[r].push(if hit { "1" } else { "0" }.to_string());
                }
            }
        } else {
            columns.push(name.clone());
            for (r, row) in kept_rows.iter().enumerate() {
                cells[r].push(row[c].trim().to_string());
            }
        }
    }

    let mut dataset = TabularDataset::new(columns, cells, label)?;

    // 5. Standardize all feature columns on the fit portion.
    if plan.standardize {
        let label_idx = match &dataset.label_column {
            Some(name) => Some(dataset.column_index(name)?),
            None => None,
        };
        let feature_cols: Vec<usize> = (0..dataset.columns.len())
            .filter(|c| Some(*c) != label_idx)
            .collect();
        let mut numeric: Vec<Vec<f64>> = Vec::with_capacity(dataset.rows.len());
        for row in &dataset.rows {
            let mut f = Vec::with_capacity(feature_cols.len());
            for &c in &feature_cols {
                f.push(row[c].parse::<f64>().map_err(|_| IngestError::NotNumeric {
                    column: dataset.columns[c].clone(),
                    value: row[c].clone(),
                })?);
            }
            numeric.push(f);
        }
        let fit = plan
            .standardize_fit_rows
            .unwrap_or(numeric.len())
            .min(numeric.len());
        let standardizer = Standardizer::fit(&numeric[..fit]);
        standardizer.apply(&mut numeric);
        for (row, values) in dataset.rows.iter_mut().zip(&numeric) {
            for (&c, v) in feature_cols.iter().zip(values) {
                row[c] = format_number(*v);
            }
        }
        // Every column is numeric now; refresh the kinds.
        for (c, kind) in dataset.kinds.iter_mut().enumerate() {
            let _ = c;
            *kind = ColumnKind::Numeric;
        }
    }
    Ok(dataset)
}

/// Binary labels from the next step of a series: `label[t] = 1` iff
/// `series[t + 1] > level`. The last point has no future value and is
/// dropped, so the output is one shorter than the input.
pub fn label_by_future_level(series: &[f64], level: f64) -> Result<Vec<u8>, IngestError> {
    if series.len() < 2 {
        return Err(IngestError::SeriesTooShort);
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(IngestError::MissingInSeries);
    }
    Ok(series[1..].iter().map(|v| (*v > level) as u8).collect())
}

/// Shifted train/test windows over a chronologically ordered dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowPlan {
    pub train_length: usize,
    pub test_length: usize,
    pub shift: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub train: Range<usize>,
    pub test: Range<usize>,
}

impl WindowPlan {
    /// `repeats` windows: window `k` trains on
    /// `[k·shift, k·shift + train_length)` and tests on the
    /// `test_length` rows immediately after.
    pub fn windows(&self, total_rows: usize) -> Result<Vec<Window>, IngestError> {
        if self.train_length == 0 || self.test_length == 0 || self.repeats == 0 {
            return Err(IngestError::DegenerateWindowPlan);
        }
        if self.repeats > 1 && self.shift == 0 {
            return Err(IngestError::DegenerateWindowPlan);
        }
        let needed = self.train_length + self.test_length + self.shift * (self.repeats - 1);
        if needed > total_rows {
            return Err(IngestError::WindowOverflow {
                needed,
                available: total_rows,
            });
        }
        Ok((0..self.repeats)
            .map(|k| {
                let start = k * self.shift;
                let split = start + self.train_length;
                Window {
                    train: start..split,
                    test: split..split + self.test_length,
                }
            })
            .collect())
    }
}

/// Two-Gaussian binary task in the plane: negatives around the origin,
/// positives around `(separation, separation)`, both unit-variance.
/// `pos_rate` controls the class imbalance.
pub fn synthetic_classification(
    n: usize,
    pos_rate: f64,
    separation: f64,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y = rng.gen_bool(pos_rate) as u8;
        let shift = if y == 1 { separation } else { 0.0 };
        features.push(vec![shift + gaussian(&mut rng), shift + gaussian(&mut rng)]);
        labels.push(y);
    }
    // Guarantee both classes are present for stratified splitting.
    if !labels.contains(&1) {
        let last = labels.len() - 1;
        labels[last] = 1;
        features[last] = vec![separation, separation];
    }
    if !labels.contains(&0) {
        labels[0] = 0;
        features[0] = vec![0.0, 0.0];
    }
    (features, labels)
}

/// Pollution-like hourly series: a positive autocorrelated baseline
/// with rare multiplicative spikes that push it over typical alert
/// levels. Spike frequency ~1.4% by default usage with `level` around
/// 400 and the defaults below.
pub fn synthetic_pollution_series(n: usize, spike_rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut series = Vec::with_capacity(n);
    let mut baseline = 120.0f64;
    for _ in 0..n {
        baseline = 0.95 * baseline + 0.05 * 120.0 + 10.0 * gaussian(&mut rng);
        baseline = baseline.max(1.0);
        let spike = if rng.gen_bool(spike_rate) {
            350.0 + 80.0 * rng.gen::<f64>()
        } else {
            0.0
        };
        series.push(baseline + spike);
    }
    series
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one value per call is plenty here.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
