//! Experiment configuration schema (JSON or TOML).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::TargetSelector;
use crate::error::{Error, Result};
use crate::sketch::SketchKind;
use crate::solver::AdamConfig;

/// Where the data comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Synthetic robust-regression data (10 input dimensions).
    Friedman {
        n_clean: usize,
        n_outlier: usize,
        noise_sd: f64,
        seed: u64,
    },
    /// Numeric CSV with a header row.
    Csv {
        path: PathBuf,
        target_columns: TargetSelector,
        #[serde(default)]
        name: Option<String>,
    },
}

/// Which experiment protocol to run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskSpec {
    /// Scalar regression with a robust loss; reports test relative MSE.
    RobustScalar { loss: RobustLoss },
    /// Joint quantile regression with the pinball loss and a quantile output
    /// matrix; reports test pinball and crossing losses.
    JointQuantile { levels: Vec<f64> },
    /// Multi-output ridge with an identity output matrix; reports per-target
    /// RRMSE and ARRMSE.
    MultiOutputRidge,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobustLoss {
    Huber,
    EpsSvr,
}

/// One sweep entry: a sketch family with its size, or the unsketched
/// baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    pub family: SweepFamily,
    #[serde(default)]
    pub s: usize,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub m: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepFamily {
    Unsketched,
    Psr,
    Psg,
    Gaussian,
    Rademacher,
    SubSampling,
    Accumulation,
    CountSketch,
}

impl SweepEntry {
    pub fn unsketched() -> Self {
        SweepEntry {
            family: SweepFamily::Unsketched,
            s: 0,
            p: None,
            m: None,
        }
    }

    pub fn is_unsketched(&self) -> bool {
        matches!(self.family, SweepFamily::Unsketched)
    }

    /// Resolve to a concrete sketch kind; `None` for the baseline.
    pub fn to_kind(&self) -> Result<Option<SketchKind>> {
        let kind = match self.family {
            SweepFamily::Unsketched => return Ok(None),
            SweepFamily::Psr => SketchKind::PSparsifiedRademacher {
                p: self.p.ok_or_else(|| miss("psr", "p"))?,
            },
            SweepFamily::Psg => SketchKind::PSparsifiedGaussian {
                p: self.p.ok_or_else(|| miss("psg", "p"))?,
            },
            SweepFamily::Gaussian => SketchKind::Gaussian,
            SweepFamily::Rademacher => SketchKind::Rademacher,
            SweepFamily::SubSampling => SketchKind::SubSampling,
            SweepFamily::Accumulation => SketchKind::Accumulation {
                m: self.m.ok_or_else(|| miss("accumulation", "m"))?,
            },
            SweepFamily::CountSketch => SketchKind::CountSketch,
        };
        Ok(Some(kind))
    }

    pub fn label(&self) -> String {
        match self.to_kind() {
            Ok(None) => "unsketched".into(),
            Ok(Some(kind)) => format!("{} s={}", kind.label(), self.s),
            Err(_) => format!("{:?} (invalid)", self.family),
        }
    }

    /// The p-or-m column used by reports.
    pub fn p_or_m(&self) -> String {
        match (self.p, self.m) {
            (Some(p), _) => format!("{p}"),
            (None, Some(m)) => format!("{m}"),
            (None, None) => "-".into(),
        }
    }

    pub fn validate(&self, n_train: usize) -> Result<()> {
        if self.is_unsketched() {
            return Ok(());
        }
        self.to_kind()?;
        if self.s == 0 {
            return Err(Error::Config(format!(
                "sweep entry {:?} needs a sketch size s >= 1",
                self.family
            )));
        }
        if self.s >= n_train {
            return Err(Error::Config(format!(
                "sweep entry {:?}: s = {} must be below the training size {}",
                self.family, self.s, n_train
            )));
        }
        Ok(())
    }
}

fn miss(family: &str, field: &str) -> Error {
    Error::Config(format!("sweep family '{family}' requires field '{field}'"))
}

/// Cross-validation settings. With every grid at a single point the fold loop
/// is skipped entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub folds: usize,
    /// Multipliers of the median-heuristic squared bandwidth.
    pub sigma2_factors: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    /// kappa (Huber) or epsilon (eps-SVR) candidates.
    pub loss_param_grid: Vec<f64>,
    /// gamma candidates for the quantile output matrix.
    pub gamma_grid: Vec<f64>,
    /// Sketch used while cross-validating; defaults to a Gaussian sketch of
    /// size 50 (capped below the fold size).
    pub sketch: Option<SweepEntry>,
    /// Epoch budget for CV fits (hyperparameter ranking tolerates a coarser
    /// optimization than the final fits).
    pub adam_epochs: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            folds: 5,
            sigma2_factors: vec![0.1, 0.5, 1.0, 2.0, 10.0],
            lambda_grid: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.0464158883361278, 0.1],
            loss_param_grid: vec![0.1, 0.5, 1.0, 2.0],
            gamma_grid: vec![0.1, 1.0, 10.0],
            sketch: None,
            adam_epochs: 30,
            seed: 0,
        }
    }
}

/// Full experiment description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSpec,
    pub task: TaskSpec,
    #[serde(default)]
    pub cv: CvConfig,
    pub sweep: Vec<SweepEntry>,
    pub replicates: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "default_true")]
    pub standardize_x: bool,
    #[serde(default)]
    pub standardize_y: bool,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    /// Output stem; `<stem>.record.json`, `<stem>.metrics.csv` and
    /// `<stem>.timings.csv` are written next to it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_true() -> bool {
    true
}

fn default_test_fraction() -> f64 {
    0.3
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.sweep.is_empty() {
            return Err(Error::Config(
                "sweep must contain at least one entry".into(),
            ));
        }
        for entry in &self.sweep {
            entry.to_kind()?;
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
        }
        if self.cv.folds < 2 {
            return Err(Error::Config("cv.folds must be >= 2".into()));
        }
        match &self.task {
            TaskSpec::JointQuantile { levels } => {
                crate::losses::LossSpec::Pinball {
                    levels: levels.clone(),
                }
                .validate()?;
                if self.cv.gamma_grid.is_empty() {
                    return Err(Error::Config("gamma_grid must not be empty".into()));
                }
            }
            TaskSpec::RobustScalar { .. } => {
                if self.cv.loss_param_grid.is_empty() {
                    return Err(Error::Config("loss_param_grid must not be empty".into()));
                }
            }
            TaskSpec::MultiOutputRidge => {}
        }
        if self.cv.sigma2_factors.is_empty() || self.cv.lambda_grid.is_empty() {
            return Err(Error::Config(
                "sigma2_factors and lambda_grid must not be empty".into(),
            ));
        }
        self.adam.validate()?;
        Ok(())
    }

    /// Parse from JSON or TOML text based on the file extension.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let config: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("TOML parse error: {e}")))?,
            other => {
                return Err(Error::Config(format!(
                    "config file must end in .json or .toml, got {other:?}"
                )))
            }
        };
        config.validate()?;
        Ok(config)
    }
}
