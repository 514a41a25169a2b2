//! Dataset generation, CSV ingestion, splitting, and standardization.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An in-memory dataset: inputs `x` (n x q), targets `y` (n x d).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub feature_names: Option<Vec<String>>,
    pub target_names: Option<Vec<String>>,
    /// Free-form provenance tag ("full", "train", "test", ...).
    pub tag: String,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 || self.x.ncols() == 0 || self.y.ncols() == 0 {
            return Err(Error::Data("dataset must have n, q, d >= 1".into()));
        }
        if self.x.nrows() != self.y.nrows() {
            return Err(Error::Data(format!(
                "inputs have {} rows, targets {}",
                self.x.nrows(),
                self.y.nrows()
            )));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data(
                "dataset contains NaN or infinite values".into(),
            ));
        }
        Ok(())
    }

    /// Column means of the targets (used as the RRMSE baseline).
    pub fn target_means(&self) -> DVector<f64> {
        let n = self.y.nrows() as f64;
        DVector::from_fn(self.y.ncols(), |j, _| self.y.column(j).sum() / n)
    }

    /// Scalar targets as a vector; errors when d > 1.
    pub fn scalar_targets(&self) -> Result<DVector<f64>> {
        if self.y.ncols() != 1 {
            return Err(Error::Data(format!(
                "expected scalar targets, got d = {}",
                self.y.ncols()
            )));
        }
        Ok(DVector::from_column_slice(self.y.column(0).as_slice()))
    }
}

/// The regression surface used by the robust-regression benchmark:
/// `0.1 e^(4 x1) + 4 / (1 + e^(-20 (x2 - 0.5))) + 3 x3 + 2 x4 + x5`.
pub fn friedman_function(x: &[f64]) -> f64 {
    0.1 * (4.0 * x[0]).exp()
        + 4.0 / (1.0 + (-20.0 * (x[1] - 0.5)).exp())
        + 3.0 * x[2]
        + 2.0 * x[3]
        + x[4]
}

/// Synthetic robust-regression dataset in dimension 10: `n_clean` inputs
/// uniform on the unit cube plus `n_outlier` inputs from `N(1.5, 0.25 I)`
/// (input-space outliers only; every target is the same surface plus
/// `N(0, noise_sd^2)` noise). Deterministic given the seed.
pub fn gen_friedman_robust(
    n_clean: usize,
    n_outlier: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    let n = n_clean + n_outlier;
    if n == 0 {
        return Err(Error::Data("need at least one sample".into()));
    }
    let q = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::zeros(n, q);
    for i in 0..n_clean {
        for j in 0..q {
            x[(i, j)] = rng.random::<f64>();
        }
    }
    for i in n_clean..n {
        for j in 0..q {
            let g: f64 = rng.sample(StandardNormal);
            x[(i, j)] = 1.5 + 0.5 * g;
        }
    }
    let mut y = DMatrix::zeros(n, 1);
    for i in 0..n {
        let point: Vec<f64> = x.row(i).iter().copied().collect();
        let eps: f64 = rng.sample(StandardNormal);
        y[(i, 0)] = friedman_function(&point) + noise_sd * eps;
    }
    Ok(Dataset {
        x,
        y,
        feature_names: None,
        target_names: None,
        tag: "full".into(),
    })
}

/// How to pick target columns out of a CSV file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSelector {
    /// Columns with these header names become targets.
    Names(Vec<String>),
    /// The last k columns become targets.
    LastK(usize),
}

/// Load a rectangular numeric CSV with a header row.
pub fn load_csv(path: &Path, targets: &TargetSelector) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let width = headers.len();
    if width == 0 {
        return Err(Error::Data("CSV has no columns".into()));
    }

    let target_idx: Vec<usize> = match targets {
        TargetSelector::Names(names) => {
            let mut idx = Vec::new();
            for name in names {
                let pos = headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::Data(format!("unknown target column '{name}'")))?;
                idx.push(pos);
            }
            idx
        }
        TargetSelector::LastK(k) => {
            if *k == 0 || *k >= width {
                return Err(Error::Data(format!(
                    "target count {k} must be in 1..{width}"
                )));
            }
            (width - k..width).collect()
        }
    };
    if target_idx.is_empty() {
        return Err(Error::Data("no target columns selected".into()));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (row_no, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != width {
            return Err(Error::Data(format!(
                "row {} has {} fields, expected {width}",
                row_no + 2,
                record.len()
            )));
        }
        let mut row = Vec::with_capacity(width);
        for (col, field) in record.iter().enumerate() {
            let value: f64 = field.trim().parse().map_err(|_| {
                Error::Data(format!(
                    "row {}, column '{}': cannot parse '{}' as a number",
                    row_no + 2,
                    headers[col],
                    field
                ))
            })?;
            if !value.is_finite() {
                return Err(Error::Data(format!(
                    "row {}, column '{}': non-finite value",
                    row_no + 2,
                    headers[col]
                )));
            }
            row.push(value);
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV has no data rows".into()));
    }

    let n = rows.len();
    let d = target_idx.len();
    let q = width - d;
    if q == 0 {
        return Err(Error::Data(
            "every column is a target; no features left".into(),
        ));
    }
    let is_target = |c: usize| target_idx.contains(&c);
    let feature_cols: Vec<usize> = (0..width).filter(|c| !is_target(*c)).collect();

    let mut x = DMatrix::zeros(n, q);
    let mut y = DMatrix::zeros(n, d);
    for (i, row) in rows.iter().enumerate() {
        for (jx, &c) in feature_cols.iter().enumerate() {
            x[(i, jx)] = row[c];
        }
        for (jy, &c) in target_idx.iter().enumerate() {
            y[(i, jy)] = row[c];
        }
    }
    Ok(Dataset {
        x,
        y,
        feature_names: Some(feature_cols.iter().map(|&c| headers[c].clone()).collect()),
        target_names: Some(target_idx.iter().map(|&c| headers[c].clone()).collect()),
        tag: "full".into(),
    })
}

/// Write a dataset back out (features then targets), full float precision.
pub fn write_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let q = ds.x.ncols();
    let d = ds.y.ncols();
    let feature_names: Vec<String> = match &ds.feature_names {
        Some(names) => names.clone(),
        None => (0..q).map(|j| format!("x{j}")).collect(),
    };
    let target_names: Vec<String> = match &ds.target_names {
        Some(names) => names.clone(),
        None => (0..d).map(|j| format!("y{j}")).collect(),
    };
    let header: Vec<String> = feature_names.into_iter().chain(target_names).collect();
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row: Vec<String> = Vec::with_capacity(q + d);
        for j in 0..q {
            row.push(format!("{}", ds.x[(i, j)]));
        }
        for j in 0..d {
            row.push(format!("{}", ds.y[(i, j)]));
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Split into disjoint train/test parts; `|test| = round(n * test_fraction)`.
/// The shuffled index partition is deterministic per seed; indices are kept
/// in ascending order within each part.
pub fn split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    ds.validate()?;
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "test fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let n = ds.n();
    let n_test = ((n as f64) * test_fraction).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::InvalidParameter(format!(
            "test fraction {test_fraction} leaves an empty split for n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut test_idx: Vec<usize> = order[..n_test].to_vec();
    let mut train_idx: Vec<usize> = order[n_test..].to_vec();
    test_idx.sort_unstable();
    train_idx.sort_unstable();
    Ok((
        take_rows(ds, &train_idx, "train"),
        take_rows(ds, &test_idx, "test"),
    ))
}

fn take_rows(ds: &Dataset, idx: &[usize], tag: &str) -> Dataset {
    let mut x = DMatrix::zeros(idx.len(), ds.x.ncols());
    let mut y = DMatrix::zeros(idx.len(), ds.y.ncols());
    for (r, &i) in idx.iter().enumerate() {
        x.set_row(r, &ds.x.row(i));
        y.set_row(r, &ds.y.row(i));
    }
    Dataset {
        x,
        y,
        feature_names: ds.feature_names.clone(),
        target_names: ds.target_names.clone(),
        tag: tag.into(),
    }
}

/// Per-column affine transform fitted on training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub x_mean: Vec<f64>,
    pub x_scale: Vec<f64>,
    pub y_mean: Option<Vec<f64>>,
    pub y_scale: Option<Vec<f64>>,
}

/// Center and scale features by training statistics only, applying the same
/// transform to the test part. Zero-variance columns keep scale 1 (with a
/// warning). `include_y` additionally standardizes the targets.
pub fn standardize(
    train: &Dataset,
    test: &Dataset,
    include_y: bool,
) -> Result<(Dataset, Dataset, Scaler)> {
    train.validate()?;
    test.validate()?;
    if train.x.ncols() != test.x.ncols() || train.y.ncols() != test.y.ncols() {
        return Err(Error::DimensionMismatch(
            "train and test shapes disagree".into(),
        ));
    }
    let (x_mean, x_scale) = column_stats(&train.x);
    let mut train_out = train.clone();
    let mut test_out = test.clone();
    apply(&mut train_out.x, &x_mean, &x_scale);
    apply(&mut test_out.x, &x_mean, &x_scale);

    let (y_mean, y_scale) = if include_y {
        let (m, s) = column_stats(&train.y);
        apply(&mut train_out.y, &m, &s);
        apply(&mut test_out.y, &m, &s);
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    Ok((
        train_out,
        test_out,
        Scaler {
            x_mean,
            x_scale,
            y_mean,
            y_scale,
        },
    ))
}

fn column_stats(m: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = m.nrows() as f64;
    let mut means = Vec::with_capacity(m.ncols());
    let mut scales = Vec::with_capacity(m.ncols());
    for j in 0..m.ncols() {
        let mean = m.column(j).sum() / n;
        let var = m
            .column(j)
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        let sd = var.sqrt();
        if sd < 1e-12 {
            log::warn!("column {j} has zero variance; leaving scale at 1");
            scales.push(1.0);
        } else {
            scales.push(sd);
        }
        means.push(mean);
    }
    (means, scales)
}

fn apply(m: &mut DMatrix<f64>, means: &[f64], scales: &[f64]) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] = (m[(i, j)] - means[j]) / scales[j];
        }
    }
}
