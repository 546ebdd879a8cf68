//! Dataset ingestion and the per-column transforms that map raw records onto
//! instances `x ∈ [0,1]ⁿ`.
//!
//! Numeric columns: mean imputation, then an average-rank empirical CDF with
//! linear interpolation between knots. Categorical columns: additive-smoothed
//! target encoding, then the same quantile map over the encoded values.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CamError, Result};

pub const DEFAULT_SMOOTHING: f64 = 10.0;
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

/// Raw tabular data: text cells, binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct RawDataset {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub labels: Vec<u8>,
}

/// How to read a CSV into a [`RawDataset`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub label_column: String,
    /// Label value treated as the positive class. When absent labels must be 0/1.
    #[serde(default)]
    pub positive_label: Option<String>,
    /// Feature columns to keep, in order. Defaults to every non-label column.
    #[serde(default)]
    pub features: Option<Vec<String>>,
}

impl RawDataset {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>, labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(CamError::Dataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != columns.len()) {
            return Err(CamError::Dataset(format!(
                "row {i} has {} cells, expected {}",
                r.len(),
                columns.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(CamError::Label(format!("label {l} is not binary")));
        }
        Ok(RawDataset { columns, rows, labels })
    }

    pub fn from_csv(path: impl AsRef<Path>, spec: &DatasetSpec) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| CamError::io(path, e))?;
        Self::from_reader(file, spec)
    }

    pub fn from_reader<R: std::io::Read>(reader: R, spec: &DatasetSpec) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let label_idx = header
            .iter()
            .position(|h| *h == spec.label_column)
            .ok_or_else(|| CamError::Dataset(format!("label column `{}` not in header", spec.label_column)))?;
        let columns: Vec<String> = match &spec.features {
            Some(f) => f.clone(),
            None => header
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != label_idx)
                .map(|(_, h)| h.clone())
                .collect(),
        };
        let col_idx: Vec<usize> = columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h == c)
                    .ok_or_else(|| CamError::Dataset(format!("column `{c}` not in header")))
            })
            .collect::<Result<_>>()?;

        let mut rows = Vec::new();
        let mut raw_labels = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(col_idx.iter().map(|&i| rec.get(i).unwrap_or("").to_string()).collect());
            raw_labels.push(rec.get(label_idx).unwrap_or("").to_string());
        }
        let labels = parse_labels(&raw_labels, spec.positive_label.as_deref())?;
        RawDataset::new(columns, rows, labels)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn subset(&self, idx: &[usize]) -> RawDataset {
        RawDataset {
            columns: self.columns.clone(),
            rows: idx.iter().map(|&i| self.rows[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Removes rows in which every feature cell is missing. Returns the number dropped.
    pub fn drop_empty_rows(&mut self, sentinels: &[String]) -> usize {
        let before = self.rows.len();
        let keep: Vec<bool> = self
            .rows
            .iter()
            .map(|r| !r.iter().all(|c| is_missing(c, sentinels)))
            .collect();
        let mut k = keep.iter();
        self.rows.retain(|_| *k.next().unwrap());
        let mut k = keep.iter();
        self.labels.retain(|_| *k.next().unwrap());
        before - self.rows.len()
    }

    pub fn require_both_classes(&self, what: &str) -> Result<()> {
        let p = self.positives();
        if p == 0 || p == self.len() {
            return Err(CamError::UndefinedMetric(format!("{what} split contains a single class")));
        }
        Ok(())
    }
}

fn parse_labels(raw: &[String], positive: Option<&str>) -> Result<Vec<u8>> {
    match positive {
        Some(pos) => {
            let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
            if distinct.len() > 2 {
                return Err(CamError::Label(format!("more than two label values: {distinct:?}")));
            }
            if let Some(empty) = raw.iter().position(|l| l.is_empty()) {
                return Err(CamError::Label(format!("row {empty} has no label")));
            }
            Ok(raw.iter().map(|l| u8::from(l == pos)).collect())
        }
        None => raw
            .iter()
            .enumerate()
            .map(|(i, l)| match l.parse::<f64>() {
                Ok(0.0) => Ok(0),
                Ok(1.0) => Ok(1),
                _ => Err(CamError::Label(format!("row {i}: label `{l}` is not 0/1"))),
            })
            .collect(),
    }
}

/// Deterministic seeded 80-20 style split. Returns (train, eval) row indices.
pub fn split_indices(n: usize, seed: u64, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    idx.shuffle(&mut rng);
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let eval = idx.split_off(n_train.min(n));
    (idx, eval)
}

pub fn is_missing(cell: &str, sentinels: &[String]) -> bool {
    let cell = cell.trim();
    if cell.is_empty() {
        return true;
    }
    let as_num = cell.parse::<f64>().ok();
    if matches!(as_num, Some(v) if !v.is_finite()) {
        return true;
    }
    sentinels.iter().any(|s| {
        s == cell
            || match (as_num, s.parse::<f64>()) {
                (Some(a), Ok(b)) => a == b,
                _ => false,
            }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    #[serde(default)]
    pub column_kinds: BTreeMap<String, ColumnKind>,
    #[serde(default)]
    pub missing_sentinels: Vec<String>,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    /// Reserved: one-hot encoding of binned features. No binning scheme is defined, so enabling it is rejected.
    #[serde(default)]
    pub one_hot_binned: bool,
}

fn default_smoothing() -> f64 {
    DEFAULT_SMOOTHING
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            column_kinds: BTreeMap::new(),
            missing_sentinels: Vec::new(),
            smoothing: DEFAULT_SMOOTHING,
            one_hot_binned: false,
        }
    }
}

/// Average-rank empirical CDF over distinct training values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileMap {
    pub knots: Vec<f64>,
    pub cdf: Vec<f64>,
}

impl QuantileMap {
    /// `values` must be finite and nonempty.
    pub fn fit(values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mut knots = Vec::new();
        let mut cdf = Vec::new();
        let mut lo = 0;
        while lo < sorted.len() {
            let mut hi = lo;
            while hi < sorted.len() && sorted[hi] == sorted[lo] {
                hi += 1;
            }
            // mean 1-based rank of the tie block is (lo + 1 + hi) / 2; minus one half
            knots.push(sorted[lo]);
            cdf.push((lo + hi) as f64 / (2.0 * n));
            lo = hi;
        }
        QuantileMap { knots, cdf }
    }

    pub fn map(&self, v: f64) -> f64 {
        let first = self.knots[0];
        let last = *self.knots.last().unwrap();
        if v < first {
            return 0.0;
        }
        if v > last {
            return 1.0;
        }
        match self.knots.binary_search_by(|k| k.total_cmp(&v)) {
            Ok(i) => self.cdf[i],
            Err(i) => {
                let (x0, x1) = (self.knots[i - 1], self.knots[i]);
                let (y0, y1) = (self.cdf[i - 1], self.cdf[i]);
                y0 + (y1 - y0) * (v - x0) / (x1 - x0)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnTransform {
    Numeric {
        name: String,
        impute_mean: f64,
        quantiles: QuantileMap,
    },
    Categorical {
        name: String,
        prior: f64,
        encoding: BTreeMap<String, f64>,
        quantiles: QuantileMap,
    },
}

impl ColumnTransform {
    pub fn name(&self) -> &str {
        match self {
            ColumnTransform::Numeric { name, .. } | ColumnTransform::Categorical { name, .. } => name,
        }
    }

    pub fn kind(&self) -> ColumnKind {
        match self {
            ColumnTransform::Numeric { .. } => ColumnKind::Numeric,
            ColumnTransform::Categorical { .. } => ColumnKind::Categorical,
        }
    }

    fn transform(&self, cell: &str, sentinels: &[String]) -> f64 {
        match self {
            ColumnTransform::Numeric {
                impute_mean, quantiles, ..
            } => {
                let v = if is_missing(cell, sentinels) {
                    *impute_mean
                } else {
                    cell.trim().parse::<f64>().unwrap_or(*impute_mean)
                };
                quantiles.map(v)
            }
            ColumnTransform::Categorical {
                name,
                prior,
                encoding,
                quantiles,
            } => {
                let enc = if is_missing(cell, sentinels) {
                    *prior
                } else {
                    match encoding.get(cell.trim()) {
                        Some(&e) => e,
                        None => {
                            log::info!("column `{name}`: unseen category `{cell}` mapped to prior");
                            *prior
                        }
                    }
                };
                quantiles.map(enc)
            }
        }
    }
}

/// Fitted transforms, one per feature column, in dataset column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessModel {
    pub columns: Vec<ColumnTransform>,
    pub missing_sentinels: Vec<String>,
    pub smoothing: f64,
}

impl PreprocessModel {
    pub fn fit(train: &RawDataset, config: &PreprocessConfig) -> Result<Self> {
        if config.one_hot_binned {
            return Err(CamError::Config(
                "one_hot_binned is reserved: no binning scheme is defined for it".into(),
            ));
        }
        let mut data = train.clone();
        data.drop_empty_rows(&config.missing_sentinels);
        if data.is_empty() {
            return Err(CamError::Dataset("training split is empty".into()));
        }
        let sentinels = &config.missing_sentinels;
        let prior = data.positives() as f64 / data.len() as f64;

        let mut columns = Vec::with_capacity(data.columns.len());
        for (j, name) in data.columns.iter().enumerate() {
            let cells: Vec<&str> = data.rows.iter().map(|r| r[j].as_str()).collect();
            let present: Vec<&str> = cells.iter().copied().filter(|c| !is_missing(c, sentinels)).collect();
            if present.is_empty() {
                return Err(CamError::UnfittableColumn(name.clone()));
            }
            let kind = config.column_kinds.get(name).copied().unwrap_or_else(|| {
                if present.iter().all(|c| c.trim().parse::<f64>().is_ok()) {
                    ColumnKind::Numeric
                } else {
                    ColumnKind::Categorical
                }
            });
            let transform = match kind {
                ColumnKind::Numeric => {
                    let values: Vec<f64> = present
                        .iter()
                        .map(|c| {
                            c.trim().parse::<f64>().map_err(|_| {
                                CamError::Dataset(format!("column `{name}`: `{c}` is not numeric"))
                            })
                        })
                        .collect::<Result<_>>()?;
                    let mean = values.iter().sum::<f64>() / values.len() as f64;
                    let imputed: Vec<f64> = cells
                        .iter()
                        .map(|c| {
                            if is_missing(c, sentinels) {
                                mean
                            } else {
                                c.trim().parse().unwrap()
                            }
                        })
                        .collect();
                    ColumnTransform::Numeric {
                        name: name.clone(),
                        impute_mean: mean,
                        quantiles: QuantileMap::fit(&imputed),
                    }
                }
                ColumnKind::Categorical => {
                    let mut counts: BTreeMap<String, (f64, f64)> = BTreeMap::new();
                    for (c, &y) in cells.iter().zip(&data.labels) {
                        if is_missing(c, sentinels) {
                            continue;
                        }
                        let e = counts.entry(c.trim().to_string()).or_default();
                        e.0 += f64::from(y);
                        e.1 += 1.0;
                    }
                    let m = config.smoothing;
                    let encoding: BTreeMap<String, f64> = counts
                        .into_iter()
                        .map(|(k, (pos, n))| (k, (pos + m * prior) / (n + m)))
                        .collect();
                    let encoded: Vec<f64> = cells
                        .iter()
                        .map(|c| {
                            if is_missing(c, sentinels) {
                                prior
                            } else {
                                encoding[c.trim()]
                            }
                        })
                        .collect();
                    ColumnTransform::Categorical {
                        name: name.clone(),
                        prior,
                        encoding,
                        quantiles: QuantileMap::fit(&encoded),
                    }
                }
            };
            columns.push(transform);
        }
        Ok(PreprocessModel {
            columns,
            missing_sentinels: config.missing_sentinels.clone(),
            smoothing: config.smoothing,
        })
    }

    pub fn column_names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name().to_string()).collect()
    }

    /// Maps one raw record, in column order, onto `[0,1]ⁿ`.
    pub fn apply(&self, row: &[String]) -> Result<Vec<f64>> {
        if row.len() != self.columns.len() {
            return Err(CamError::Misaligned(format!(
                "record has {} values, model expects {}",
                row.len(),
                self.columns.len()
            )));
        }
        Ok(self
            .columns
            .iter()
            .zip(row)
            .map(|(t, cell)| t.transform(cell, &self.missing_sentinels))
            .collect())
    }

    /// Same as [`apply`](Self::apply) for a record keyed by column name.
    /// Every column must be present and no unknown names are allowed.
    pub fn apply_named(&self, record: &HashMap<String, String>) -> Result<Vec<f64>> {
        if let Some(extra) = record.keys().find(|k| !self.columns.iter().any(|c| c.name() == *k)) {
            return Err(CamError::Misaligned(format!("unknown feature `{extra}`")));
        }
        let row: Vec<String> = self
            .columns
            .iter()
            .map(|c| {
                record
                    .get(c.name())
                    .cloned()
                    .ok_or_else(|| CamError::Misaligned(format!("missing feature `{}`", c.name())))
            })
            .collect::<Result<_>>()?;
        self.apply(&row)
    }

    pub fn transform_dataset(&self, data: &RawDataset) -> Result<Vec<Vec<f64>>> {
        if data.columns != self.column_names() {
            return Err(CamError::Misaligned("dataset columns differ from the fitted columns".into()));
        }
        data.rows.iter().map(|r| self.apply(r)).collect()
    }
}

/// Writes transformed instances as a CSV of floats with the label last.
pub fn write_transformed_csv<W: std::io::Write>(
    out: W,
    columns: &[String],
    instances: &[Vec<f64>],
    labels: &[u8],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = columns.to_vec();
    header.push("label".into());
    w.write_record(&header)?;
    for (x, y) in instances.iter().zip(labels) {
        let mut rec: Vec<String> = x.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CamError::io("<csv output>", e))?;
    Ok(())
}
