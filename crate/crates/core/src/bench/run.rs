//! Experiment execution: cross-validation, sweep replicates, output files,
//! and sketch-certification diagnostics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as index_sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{DatasetSpec, ExperimentConfig, RobustLoss, SweepEntry, TaskSpec};
use crate::data::{gen_friedman_robust, load_csv, split, standardize, Dataset};
use crate::error::{Error, Result};
use crate::kernels::{KernelSpec, OutputMatrix};
use crate::losses::{arrmse, crossing_loss, pinball_test_loss, relative_mse, rrmse, LossSpec};
use crate::sketch::SketchOperator;
use crate::solver::{
    fit_exact_multioutput, fit_exact_scalar, fit_multioutput_sketched, fit_scalar_sketched,
    predict, AdamConfig, FittedModel,
};
use crate::spectrum::{k_satisfiable, spectral_profile, theorem_c, KSatisfiability};

/// Hyperparameters selected before the sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChosenHyperparams {
    pub sigma2: f64,
    pub lambda: f64,
    /// kappa or epsilon for the robust task.
    pub loss_param: Option<f64>,
    /// gamma of the quantile output matrix.
    pub gamma: Option<f64>,
    /// Mean CV metric of the winning combination (absent when CV was skipped).
    pub cv_metric: Option<f64>,
}

/// Per-replicate outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub entry_index: usize,
    pub entry: String,
    pub replicate: usize,
    pub seed: u64,
    pub metrics: BTreeMap<String, f64>,
    pub fit_seconds: f64,
    pub sketch_apply_seconds: f64,
    pub error: Option<String>,
}

/// Per-entry aggregate over successful replicates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryAggregate {
    pub entry_index: usize,
    pub entry: String,
    pub kind: String,
    pub s: usize,
    pub p_or_m: String,
    pub replicates_ok: usize,
    pub replicates_failed: usize,
    pub metric_means: BTreeMap<String, f64>,
    pub metric_sds: BTreeMap<String, f64>,
    pub fit_seconds_mean: f64,
    pub fit_seconds_sd: f64,
    pub sketch_apply_seconds_mean: f64,
}

/// Everything a run produced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub n_train: usize,
    pub n_test: usize,
    pub chosen: ChosenHyperparams,
    pub rows: Vec<ReplicateRow>,
    pub aggregates: Vec<EntryAggregate>,
}

impl RunRecord {
    /// True when no replicate of any entry produced metrics.
    pub fn all_failed(&self) -> bool {
        self.rows.iter().all(|r| r.error.is_some())
    }

    /// Primary metric name for this record's task.
    pub fn primary_metric(&self) -> &'static str {
        primary_metric(&self.config.task)
    }
}

pub(crate) fn primary_metric(task: &TaskSpec) -> &'static str {
    match task {
        TaskSpec::RobustScalar { .. } => "relative_mse",
        TaskSpec::JointQuantile { .. } => "pinball_loss",
        TaskSpec::MultiOutputRidge => "arrmse",
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` of sweep entry `entry`, derived from the base.
pub fn replicate_seed(base: u64, entry: usize, rep: usize) -> u64 {
    splitmix64(base ^ splitmix64(((entry as u64) << 32) | rep as u64))
}

fn load_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    let ds = match spec {
        DatasetSpec::Friedman {
            n_clean,
            n_outlier,
            noise_sd,
            seed,
        } => gen_friedman_robust(*n_clean, *n_outlier, *noise_sd, *seed)?,
        DatasetSpec::Csv {
            path,
            target_columns,
            ..
        } => load_csv(path, target_columns)?,
    };
    ds.validate()?;
    Ok(ds)
}

/// Median pairwise squared distance over a subsample of at most 500 rows.
pub fn median_heuristic(x: &DMatrix<f64>, seed: u64) -> f64 {
    let n = x.nrows();
    let m = n.min(500);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx: Vec<usize> = if m == n {
        (0..n).collect()
    } else {
        index_sample(&mut rng, n, m).into_vec()
    };
    let mut dists = Vec::with_capacity(m * (m - 1) / 2);
    for a in 0..m {
        for b in (a + 1)..m {
            let mut sq = 0.0;
            for j in 0..x.ncols() {
                let d = x[(idx[a], j)] - x[(idx[b], j)];
                sq += d * d;
            }
            dists.push(sq);
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dists[dists.len() / 2].max(1e-12)
}

/// A fully resolved fitting recipe for one task.
#[derive(Clone, Debug)]
struct ResolvedTask {
    kernel: KernelSpec,
    lambda: f64,
    loss: LossSpec,
    /// Output matrix for the multi-output paths; `None` selects the scalar
    /// feature-map path.
    output: Option<OutputMatrix>,
    levels: Option<Vec<f64>>,
}

impl ResolvedTask {
    fn build(
        task: &TaskSpec,
        sigma2: f64,
        lambda: f64,
        loss_param: Option<f64>,
        gamma: Option<f64>,
        output_dim: usize,
    ) -> Result<Self> {
        let kernel = KernelSpec::Gaussian { bandwidth: sigma2 };
        match task {
            TaskSpec::RobustScalar { loss } => {
                let param = loss_param
                    .ok_or_else(|| Error::Config("robust task needs a loss parameter".into()))?;
                let loss = match loss {
                    RobustLoss::Huber => LossSpec::Huber { kappa: param },
                    RobustLoss::EpsSvr => LossSpec::EpsInsensitive { epsilon: param },
                };
                Ok(ResolvedTask {
                    kernel,
                    lambda,
                    loss,
                    output: None,
                    levels: None,
                })
            }
            TaskSpec::JointQuantile { levels } => {
                let g = gamma.ok_or_else(|| Error::Config("quantile task needs gamma".into()))?;
                Ok(ResolvedTask {
                    kernel,
                    lambda,
                    loss: LossSpec::Pinball {
                        levels: levels.clone(),
                    },
                    output: Some(OutputMatrix::quantile_gaussian(g, levels)?),
                    levels: Some(levels.clone()),
                })
            }
            TaskSpec::MultiOutputRidge => Ok(ResolvedTask {
                kernel,
                lambda,
                loss: LossSpec::Square,
                output: Some(OutputMatrix::identity(output_dim)?),
                levels: None,
            }),
        }
    }

    fn fit(
        &self,
        train: &Dataset,
        sketch: Option<&SketchOperator>,
        adam: &AdamConfig,
    ) -> Result<FittedModel> {
        match (&self.output, sketch) {
            (None, Some(op)) => fit_scalar_sketched(
                &self.kernel,
                &train.x,
                &train.scalar_targets()?,
                &self.loss,
                self.lambda,
                op,
                adam,
            ),
            (None, None) => fit_exact_scalar(
                &self.kernel,
                &train.x,
                &train.scalar_targets()?,
                &self.loss,
                self.lambda,
                adam,
            ),
            (Some(output), Some(op)) => fit_multioutput_sketched(
                &self.kernel,
                &train.x,
                &train.y,
                output,
                &self.loss,
                self.lambda,
                op,
                adam,
            ),
            (Some(output), None) => fit_exact_multioutput(
                &self.kernel,
                &train.x,
                &train.y,
                output,
                &self.loss,
                self.lambda,
                adam,
            ),
        }
    }

    fn evaluate(
        &self,
        model: &FittedModel,
        test: &Dataset,
        train_means: &DVector<f64>,
        task: &TaskSpec,
    ) -> Result<BTreeMap<String, f64>> {
        let preds = predict(model, &test.x)?;
        let mut out = BTreeMap::new();
        match task {
            TaskSpec::RobustScalar { .. } => {
                out.insert("relative_mse".into(), relative_mse(&preds, &test.y)?);
            }
            TaskSpec::JointQuantile { .. } => {
                let levels = self.levels.as_ref().expect("quantile task has levels");
                out.insert(
                    "pinball_loss".into(),
                    pinball_test_loss(&preds, &test.y, levels)?,
                );
                out.insert("crossing_loss".into(), crossing_loss(&preds)?);
            }
            TaskSpec::MultiOutputRidge => {
                let per_target = rrmse(&preds, &test.y, train_means)?;
                for (t, v) in per_target.iter().enumerate() {
                    out.insert(format!("rrmse_t{t}"), *v);
                }
                out.insert("arrmse".into(), arrmse(&preds, &test.y, train_means)?);
            }
        }
        Ok(out)
    }
}

/// Build the CV grid for the task: (sigma2, lambda, loss_param, gamma).
fn cv_grid(config: &ExperimentConfig, median_sq: f64) -> Vec<(f64, f64, Option<f64>, Option<f64>)> {
    let mut combos = Vec::new();
    for factor in &config.cv.sigma2_factors {
        let sigma2 = factor * median_sq;
        for &lambda in &config.cv.lambda_grid {
            match &config.task {
                TaskSpec::RobustScalar { .. } => {
                    for &param in &config.cv.loss_param_grid {
                        combos.push((sigma2, lambda, Some(param), None));
                    }
                }
                TaskSpec::JointQuantile { .. } => {
                    for &gamma in &config.cv.gamma_grid {
                        combos.push((sigma2, lambda, None, Some(gamma)));
                    }
                }
                TaskSpec::MultiOutputRidge => combos.push((sigma2, lambda, None, None)),
            }
        }
    }
    combos
}

fn fold_partition(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    order.shuffle(&mut rng);
    let mut parts = vec![Vec::new(); folds];
    for (pos, idx) in order.into_iter().enumerate() {
        parts[pos % folds].push(idx);
    }
    for p in parts.iter_mut() {
        p.sort_unstable();
    }
    parts
}

fn subset(ds: &Dataset, idx: &[usize], tag: &str) -> Dataset {
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

fn cv_sketch_for(config: &ExperimentConfig, n_fit: usize) -> Result<Option<SketchOperator>> {
    let entry = config.cv.sketch.clone().unwrap_or(SweepEntry {
        family: super::config::SweepFamily::Gaussian,
        s: 50,
        p: None,
        m: None,
    });
    match entry.to_kind()? {
        None => Ok(None),
        Some(kind) => {
            let s = entry.s.min(n_fit.saturating_sub(1)).max(1);
            Ok(Some(SketchOperator::generate(
                kind,
                s,
                n_fit,
                splitmix64(config.cv.seed),
            )?))
        }
    }
}

/// Pick hyperparameters by k-fold CV on the training part. With a single
/// grid point the folds are skipped.
fn cross_validate(config: &ExperimentConfig, train: &Dataset) -> Result<ChosenHyperparams> {
    let median_sq = median_heuristic(&train.x, config.cv.seed);
    let combos = cv_grid(config, median_sq);
    if combos.len() == 1 {
        let (sigma2, lambda, loss_param, gamma) = combos[0];
        return Ok(ChosenHyperparams {
            sigma2,
            lambda,
            loss_param,
            gamma,
            cv_metric: None,
        });
    }

    let folds = fold_partition(train.n(), config.cv.folds, config.cv.seed);
    let cv_adam = AdamConfig {
        epochs: config.cv.adam_epochs,
        seed: splitmix64(config.cv.seed ^ 1),
        ..config.adam.clone()
    };
    let metric_name = primary_metric(&config.task);

    let scored: Vec<(usize, f64)> = combos
        .par_iter()
        .enumerate()
        .map(|(ci, &(sigma2, lambda, loss_param, gamma))| {
            let mut total = 0.0;
            let mut used = 0;
            for fold in &folds {
                let val = subset(train, fold, "cv-val");
                let fit_idx: Vec<usize> = (0..train.n()).filter(|i| !fold.contains(i)).collect();
                let fit = subset(train, &fit_idx, "cv-fit");
                let task = match ResolvedTask::build(
                    &config.task,
                    sigma2,
                    lambda,
                    loss_param,
                    gamma,
                    train.y.ncols().max(1),
                ) {
                    Ok(t) => t,
                    Err(_) => return (ci, f64::INFINITY),
                };
                let sketch = match cv_sketch_for(config, fit.n()) {
                    Ok(s) => s,
                    Err(_) => return (ci, f64::INFINITY),
                };
                let model = match task.fit(&fit, sketch.as_ref(), &cv_adam) {
                    Ok(m) => m,
                    Err(_) => continue,
                };
                let means = fit.target_means();
                match task.evaluate(&model, &val, &means, &config.task) {
                    Ok(metrics) => {
                        total += metrics[metric_name];
                        used += 1;
                    }
                    Err(_) => continue,
                }
            }
            if used == 0 {
                (ci, f64::INFINITY)
            } else {
                (ci, total / used as f64)
            }
        })
        .collect();

    let best = scored
        .iter()
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal))
        .ok_or_else(|| Error::Config("empty CV grid".into()))?;
    if !best.1.is_finite() {
        return Err(Error::Numerical(
            "every cross-validation combination failed".into(),
        ));
    }
    let (sigma2, lambda, loss_param, gamma) = combos[best.0];
    Ok(ChosenHyperparams {
        sigma2,
        lambda,
        loss_param,
        gamma,
        cv_metric: Some(best.1),
    })
}

/// Execute the configured sweep. Replicates run in parallel; each owns a seed
/// derived from `(base_seed, entry, replicate)`. Per-replicate solver errors
/// are recorded and the run continues.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord> {
    config.validate()?;
    if config.standardize_y && !config.standardize_x {
        return Err(Error::Config("standardize_y requires standardize_x".into()));
    }
    let ds = load_dataset(&config.dataset)?;
    let (train_raw, test_raw) = split(&ds, config.test_fraction, config.split_seed)?;
    let (train, test) = if config.standardize_x {
        let (tr, te, _) = standardize(&train_raw, &test_raw, config.standardize_y)?;
        (tr, te)
    } else {
        (train_raw, test_raw)
    };
    for entry in &config.sweep {
        entry.validate(train.n())?;
    }
    match &config.task {
        TaskSpec::RobustScalar { .. } => {
            if train.y.ncols() != 1 {
                return Err(Error::Config(
                    "robust scalar task needs d = 1 targets".into(),
                ));
            }
        }
        TaskSpec::JointQuantile { .. } => {
            if train.y.ncols() != 1 {
                return Err(Error::Config(
                    "joint quantile regression needs a scalar target column".into(),
                ));
            }
        }
        TaskSpec::MultiOutputRidge => {}
    }

    let chosen = cross_validate(config, &train)?;
    let task = ResolvedTask::build(
        &config.task,
        chosen.sigma2,
        chosen.lambda,
        chosen.loss_param,
        chosen.gamma,
        train.y.ncols().max(1),
    )?;
    let train_means = train.target_means();

    let jobs: Vec<(usize, usize)> = (0..config.sweep.len())
        .flat_map(|e| (0..config.replicates).map(move |r| (e, r)))
        .collect();

    let mut rows: Vec<ReplicateRow> = jobs
        .par_iter()
        .map(|&(e, r)| run_one(config, &task, &train, &test, &train_means, e, r))
        .collect();
    rows.sort_by_key(|row| (row.entry_index, row.replicate));

    let aggregates = aggregate(config, &rows);
    Ok(RunRecord {
        config: config.clone(),
        n_train: train.n(),
        n_test: test.n(),
        chosen,
        rows,
        aggregates,
    })
}

fn run_one(
    config: &ExperimentConfig,
    task: &ResolvedTask,
    train: &Dataset,
    test: &Dataset,
    train_means: &DVector<f64>,
    entry_index: usize,
    replicate: usize,
) -> ReplicateRow {
    let entry = &config.sweep[entry_index];
    let seed = replicate_seed(config.base_seed, entry_index, replicate);
    let mut row = ReplicateRow {
        entry_index,
        entry: entry.label(),
        replicate,
        seed,
        metrics: BTreeMap::new(),
        fit_seconds: 0.0,
        sketch_apply_seconds: 0.0,
        error: None,
    };

    let adam = AdamConfig {
        seed: splitmix64(seed ^ 0xADA0),
        ..config.adam.clone()
    };

    let sketch = match entry.to_kind() {
        Ok(None) => None,
        Ok(Some(kind)) => match SketchOperator::generate(kind, entry.s, train.n(), seed) {
            Ok(op) => Some(op),
            Err(e) => {
                row.error = Some(format!("sketch generation: {e}"));
                return row;
            }
        },
        Err(e) => {
            row.error = Some(format!("sweep entry: {e}"));
            return row;
        }
    };

    // standalone measurement of the sketched Gram products
    if let Some(op) = &sketch {
        let t0 = Instant::now();
        let left = op.sketch_gram_left(&task.kernel, &train.x);
        let both = op.sketch_gram_both(&task.kernel, &train.x);
        row.sketch_apply_seconds = t0.elapsed().as_secs_f64();
        if let Err(e) = left.and(both) {
            row.error = Some(format!("sketch application: {e}"));
            return row;
        }
    }

    let t0 = Instant::now();
    let model = match task.fit(train, sketch.as_ref(), &adam) {
        Ok(m) => m,
        Err(e) => {
            row.error = Some(format!("fit: {e}"));
            return row;
        }
    };
    row.fit_seconds = t0.elapsed().as_secs_f64();

    match task.evaluate(&model, test, train_means, &config.task) {
        Ok(metrics) => row.metrics = metrics,
        Err(e) => row.error = Some(format!("evaluation: {e}")),
    }
    row
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn aggregate(config: &ExperimentConfig, rows: &[ReplicateRow]) -> Vec<EntryAggregate> {
    let mut out = Vec::new();
    for (e, entry) in config.sweep.iter().enumerate() {
        let ok: Vec<&ReplicateRow> = rows
            .iter()
            .filter(|r| r.entry_index == e && r.error.is_none())
            .collect();
        let failed = rows
            .iter()
            .filter(|r| r.entry_index == e && r.error.is_some())
            .count();
        let mut metric_means = BTreeMap::new();
        let mut metric_sds = BTreeMap::new();
        if let Some(first) = ok.first() {
            for key in first.metrics.keys() {
                let values: Vec<f64> = ok.iter().map(|r| r.metrics[key]).collect();
                let (m, s) = mean_sd(&values);
                metric_means.insert(key.clone(), m);
                metric_sds.insert(key.clone(), s);
            }
        }
        let fit_times: Vec<f64> = ok.iter().map(|r| r.fit_seconds).collect();
        let (fit_mean, fit_sd) = mean_sd(&fit_times);
        let sk_times: Vec<f64> = ok.iter().map(|r| r.sketch_apply_seconds).collect();
        let (sk_mean, _) = mean_sd(&sk_times);
        out.push(EntryAggregate {
            entry_index: e,
            entry: entry.label(),
            kind: match entry.to_kind() {
                Ok(Some(kind)) => kind.label(),
                _ => "unsketched".into(),
            },
            s: entry.s,
            p_or_m: entry.p_or_m(),
            replicates_ok: ok.len(),
            replicates_failed: failed,
            metric_means,
            metric_sds,
            fit_seconds_mean: if fit_times.is_empty() {
                f64::NAN
            } else {
                fit_mean
            },
            fit_seconds_sd: if fit_times.is_empty() {
                f64::NAN
            } else {
                fit_sd
            },
            sketch_apply_seconds_mean: if sk_times.is_empty() {
                f64::NAN
            } else {
                sk_mean
            },
        });
    }
    out
}

/// Write `<stem>.record.json`, `<stem>.metrics.csv` (no timings, byte-stable
/// across reruns) and `<stem>.timings.csv`. Returns the written paths.
pub fn write_outputs(record: &RunRecord, stem: &Path) -> Result<Vec<PathBuf>> {
    let stem_str = stem.to_string_lossy();
    let record_path = PathBuf::from(format!("{stem_str}.record.json"));
    let metrics_path = PathBuf::from(format!("{stem_str}.metrics.csv"));
    let timings_path = PathBuf::from(format!("{stem_str}.timings.csv"));
    if let Some(parent) = record_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&record_path, serde_json::to_string_pretty(record)?)?;

    let mut metrics = String::from("entry_index,entry,replicate,seed,metric,value\n");
    for row in &record.rows {
        for (key, value) in &row.metrics {
            metrics.push_str(&format!(
                "{},{},{},{},{},{}\n",
                row.entry_index, row.entry, row.replicate, row.seed, key, value
            ));
        }
    }
    std::fs::write(&metrics_path, metrics)?;

    let mut timings =
        String::from("entry_index,entry,replicate,seed,fit_seconds,sketch_apply_seconds,error\n");
    for row in &record.rows {
        timings.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.entry_index,
            row.entry,
            row.replicate,
            row.seed,
            row.fit_seconds,
            row.sketch_apply_seconds,
            row.error.clone().unwrap_or_default()
        ));
    }
    std::fs::write(&timings_path, timings)?;
    Ok(vec![record_path, metrics_path, timings_path])
}

// --- sketch diagnostics -----------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EntryDiagnostics {
    pub entry: String,
    pub c: f64,
    pub results: Vec<(u64, KSatisfiability)>,
    pub holds_count: usize,
}

/// Spectral certification report for the sweep's sketches on (a subsample
/// of) the training Gram matrix.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SketchDiagReport {
    pub n_used: usize,
    pub sigma2: f64,
    pub delta_n_sq: f64,
    pub d_n: usize,
    pub entries: Vec<EntryDiagnostics>,
}

impl SketchDiagReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "spectral profile: n = {}, sigma2 = {:.6}, delta_n^2 = {:.6e}, d_n = {}\n",
            self.n_used, self.sigma2, self.delta_n_sq, self.d_n
        ));
        for e in &self.entries {
            out.push_str(&format!(
                "{}: c = {:.4}, satisfied {}/{} seeds\n",
                e.entry,
                e.c,
                e.holds_count,
                e.results.len()
            ));
            for (seed, r) in &e.results {
                out.push_str(&format!(
                    "  seed {seed}: lhs1 = {:.4} (<= 0.5), lhs2 = {:.4} (<= {:.4}) -> {}\n",
                    r.lhs1,
                    r.lhs2,
                    e.c * self.delta_n_sq.sqrt(),
                    if r.holds { "holds" } else { "fails" }
                ));
            }
        }
        out
    }
}

/// Run the spectrum-module certification checks for every sketched sweep
/// entry, on at most `max_n` training rows.
pub fn sketch_diagnostics(config: &ExperimentConfig, max_n: usize) -> Result<SketchDiagReport> {
    config.validate()?;
    let ds = load_dataset(&config.dataset)?;
    let (train_raw, test_raw) = split(&ds, config.test_fraction, config.split_seed)?;
    let (train, _) = if config.standardize_x {
        let (tr, te, _) = standardize(&train_raw, &test_raw, false)?;
        (tr, te)
    } else {
        (train_raw, test_raw)
    };
    let n_used = train.n().min(max_n).min(crate::spectrum::MAX_PROFILE_SIZE);
    let idx: Vec<usize> = (0..n_used).collect();
    let sub = subset(&train, &idx, "diag");
    let sigma2 = median_heuristic(&sub.x, config.cv.seed) * config.cv.sigma2_factors[0];
    let kernel = KernelSpec::Gaussian { bandwidth: sigma2 };
    let gram = kernel.gram(&sub.x)?;
    let profile = spectral_profile(&gram)?;

    let mut entries = Vec::new();
    for (e, entry) in config.sweep.iter().enumerate() {
        let Some(kind) = entry.to_kind()? else {
            continue;
        };
        if entry.s >= n_used {
            entries.push(EntryDiagnostics {
                entry: format!("{} (skipped: s >= n = {n_used})", entry.label()),
                c: f64::NAN,
                results: Vec::new(),
                holds_count: 0,
            });
            continue;
        }
        let p = match &kind {
            crate::sketch::SketchKind::PSparsifiedRademacher { p }
            | crate::sketch::SketchKind::PSparsifiedGaussian { p } => *p,
            _ => 1.0,
        };
        let c = theorem_c(p)?;
        let mut results = Vec::new();
        let mut holds_count = 0;
        for rep in 0..config.replicates {
            let seed = replicate_seed(config.base_seed, e, rep);
            let op = SketchOperator::generate(kind.clone(), entry.s, n_used, seed)?;
            let out = k_satisfiable(&op, &profile, c)?;
            if out.holds {
                holds_count += 1;
            }
            results.push((seed, out));
        }
        entries.push(EntryDiagnostics {
            entry: entry.label(),
            c,
            results,
            holds_count,
        });
    }
    Ok(SketchDiagReport {
        n_used,
        sigma2,
        delta_n_sq: profile.delta_n_sq,
        d_n: profile.d_n,
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config::{CvConfig, SweepFamily};

    fn fast_cv() -> CvConfig {
        CvConfig {
            sigma2_factors: vec![1.0],
            lambda_grid: vec![1e-3],
            loss_param_grid: vec![1.0],
            gamma_grid: vec![1.0],
            ..Default::default()
        }
    }

    fn smoke_config() -> ExperimentConfig {
        ExperimentConfig {
            name: "smoke".into(),
            dataset: DatasetSpec::Friedman {
                n_clean: 120,
                n_outlier: 0,
                noise_sd: 1.0,
                seed: 5,
            },
            task: TaskSpec::RobustScalar {
                loss: RobustLoss::Huber,
            },
            cv: fast_cv(),
            sweep: vec![
                SweepEntry::unsketched(),
                SweepEntry {
                    family: SweepFamily::Psr,
                    s: 10,
                    p: Some(0.5),
                    m: None,
                },
            ],
            replicates: 2,
            base_seed: 42,
            adam: AdamConfig {
                epochs: 20,
                ..Default::default()
            },
            standardize_x: true,
            standardize_y: false,
            test_fraction: 0.3,
            split_seed: 1,
            output: None,
        }
    }

    #[test]
    fn smoke_run_produces_rows_and_aggregates() {
        let record = run_experiment(&smoke_config()).unwrap();
        assert_eq!(record.rows.len(), 4);
        assert_eq!(record.aggregates.len(), 2);
        assert!(record.rows.iter().all(|r| r.error.is_none()));
        assert!(record
            .rows
            .iter()
            .all(|r| r.metrics.contains_key("relative_mse")));
        assert!(!record.all_failed());
        // unsketched entries report zero sketch time
        assert_eq!(record.rows[0].sketch_apply_seconds, 0.0);
    }

    #[test]
    fn single_baseline_single_replicate() {
        let mut config = smoke_config();
        config.sweep = vec![SweepEntry::unsketched()];
        config.replicates = 1;
        let record = run_experiment(&config).unwrap();
        assert_eq!(record.rows.len(), 1);
        assert_eq!(record.aggregates.len(), 1);
        assert_eq!(record.aggregates[0].replicates_ok, 1);
    }

    #[test]
    fn aggregates_recompute_from_rows() {
        let record = run_experiment(&smoke_config()).unwrap();
        for agg in &record.aggregates {
            let ok: Vec<&ReplicateRow> = record
                .rows
                .iter()
                .filter(|r| r.entry_index == agg.entry_index && r.error.is_none())
                .collect();
            for (key, &mean) in &agg.metric_means {
                let values: Vec<f64> = ok.iter().map(|r| r.metrics[key]).collect();
                let (m, s) = mean_sd(&values);
                assert!((m - mean).abs() <= 1e-12);
                assert!((s - agg.metric_sds[key]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn metrics_identical_across_reruns() {
        let config = smoke_config();
        let a = run_experiment(&config).unwrap();
        let b = run_experiment(&config).unwrap();
        // metric values are bit-identical; only timings may differ
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.metrics, rb.metrics);
            assert_eq!(ra.seed, rb.seed);
        }
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("first");
        let p2 = dir.path().join("second");
        write_outputs(&a, &p1).unwrap();
        write_outputs(&b, &p2).unwrap();
        let m1 = std::fs::read(dir.path().join("first.metrics.csv")).unwrap();
        let m2 = std::fs::read(dir.path().join("second.metrics.csv")).unwrap();
        assert_eq!(m1, m2);
    }

    #[test]
    fn quantile_task_smoke() {
        let mut config = smoke_config();
        config.task = TaskSpec::JointQuantile {
            levels: vec![0.1, 0.5, 0.9],
        };
        config.sweep = vec![SweepEntry {
            family: SweepFamily::SubSampling,
            s: 15,
            p: None,
            m: None,
        }];
        config.replicates = 1;
        let record = run_experiment(&config).unwrap();
        assert!(record.rows[0].error.is_none(), "{:?}", record.rows[0].error);
        assert!(record.rows[0].metrics.contains_key("pinball_loss"));
        assert!(record.rows[0].metrics.contains_key("crossing_loss"));
    }

    #[test]
    fn multioutput_task_smoke() {
        // synthesize a 2-target CSV on disk
        let ds = gen_friedman_robust(80, 0, 1.0, 3).unwrap();
        let two = Dataset {
            y: {
                let mut y = DMatrix::zeros(80, 2);
                y.set_column(0, &ds.y.column(0));
                let shifted = ds.y.column(0) * 0.5;
                y.set_column(1, &shifted);
                y
            },
            ..ds
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mtr.csv");
        crate::data::write_csv(&two, &path).unwrap();

        let mut config = smoke_config();
        config.dataset = DatasetSpec::Csv {
            path,
            target_columns: crate::data::TargetSelector::LastK(2),
            name: Some("toy".into()),
        };
        config.task = TaskSpec::MultiOutputRidge;
        config.sweep = vec![SweepEntry {
            family: SweepFamily::Psg,
            s: 12,
            p: Some(0.3),
            m: None,
        }];
        config.replicates = 1;
        let record = run_experiment(&config).unwrap();
        assert!(record.rows[0].error.is_none(), "{:?}", record.rows[0].error);
        assert!(record.rows[0].metrics.contains_key("arrmse"));
        assert!(record.rows[0].metrics.contains_key("rrmse_t0"));
        assert!(record.rows[0].metrics.contains_key("rrmse_t1"));
    }

    #[test]
    fn cv_picks_from_grid() {
        let mut config = smoke_config();
        config.cv.lambda_grid = vec![1e-4, 1e-2];
        config.cv.adam_epochs = 10;
        let record = run_experiment(&config).unwrap();
        assert!(config.cv.lambda_grid.contains(&record.chosen.lambda));
        assert!(record.chosen.cv_metric.is_some());
    }

    #[test]
    fn failed_sketch_recorded_not_fatal() {
        let mut config = smoke_config();
        // degenerate sparsity: sketch generation fails, baseline still runs
        config.sweep = vec![
            SweepEntry {
                family: SweepFamily::Psr,
                s: 1,
                p: Some(1e-12),
                m: None,
            },
            SweepEntry::unsketched(),
        ];
        config.replicates = 1;
        let record = run_experiment(&config).unwrap();
        assert!(record.rows[0].error.is_some());
        assert!(record.rows[1].error.is_none());
        assert!(!record.all_failed());
        assert_eq!(record.aggregates[0].replicates_failed, 1);
    }

    #[test]
    fn sketch_diag_smoke() {
        let mut config = smoke_config();
        config.sweep = vec![SweepEntry {
            family: SweepFamily::Gaussian,
            s: 30,
            p: None,
            m: None,
        }];
        config.replicates = 2;
        let report = sketch_diagnostics(&config, 84).unwrap();
        assert_eq!(report.n_used, 84);
        assert!(report.d_n >= 1);
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.entries[0].results.len(), 2);
        let text = report.to_text();
        assert!(text.contains("spectral profile"));
    }
}
