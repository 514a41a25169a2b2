//! Loss families with value and subgradient evaluators, plus evaluation
//! metrics.
//!
//! All families are convex in the prediction. Huber, the epsilon-insensitive
//! loss, and the pinball loss are Lipschitz; the square loss is Lipschitz
//! only on bounded domains. Values are expressed through the residual
//! `u = z - y`, except the pinball loss which uses the quantile convention
//! `r = y 1_d - z` (target minus prediction, a scalar target broadcast
//! against the d quantile predictions) so that ascending levels estimate
//! ascending conditional quantiles. At kinks the subgradient picks the
//! minimal-norm element, so a solver sitting at an optimum takes a zero step.

use nalgebra::{DMatrix, DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss family with its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossSpec {
    /// `l(z, y) = ||z - y||^2 / 2`.
    Square,
    /// `l(z, y) = ||u||^2/2` if `||u|| <= kappa`, else `kappa (||u|| - kappa/2)`.
    Huber { kappa: f64 },
    /// `l(z, y) = max(0, ||u|| - epsilon)`.
    EpsInsensitive { epsilon: f64 },
    /// `l(z, y) = sum_j tau_j r_j [r_j >= 0] + (tau_j - 1) r_j [r_j < 0]`
    /// with `r = y 1_d - z` for strictly increasing levels `tau` in (0, 1);
    /// the j-th prediction estimates the tau_j conditional quantile.
    Pinball { levels: Vec<f64> },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::Square => Ok(()),
            LossSpec::Huber { kappa } => {
                if !(*kappa > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "Huber kappa must be positive, got {kappa}"
                    )));
                }
                Ok(())
            }
            LossSpec::EpsInsensitive { epsilon } => {
                if !(*epsilon >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "epsilon must be >= 0, got {epsilon}"
                    )));
                }
                Ok(())
            }
            LossSpec::Pinball { levels } => {
                if levels.is_empty() {
                    return Err(Error::InvalidParameter(
                        "pinball needs at least one level".into(),
                    ));
                }
                for w in levels.windows(2) {
                    if !(w[0] < w[1]) {
                        return Err(Error::InvalidParameter(
                            "pinball levels must be strictly increasing".into(),
                        ));
                    }
                }
                if !(levels[0] > 0.0 && *levels.last().unwrap() < 1.0) {
                    return Err(Error::InvalidParameter(
                        "pinball levels must lie in (0, 1)".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// Lipschitz constant of `z -> l(z, y)` in dimension `d`, `None` for the
    /// square loss (Lipschitz only on bounded domains).
    pub fn lipschitz_constant(&self, d: usize) -> Option<f64> {
        match self {
            LossSpec::Square => None,
            LossSpec::Huber { kappa } => Some(*kappa),
            LossSpec::EpsInsensitive { .. } => Some(1.0),
            LossSpec::Pinball { levels } => {
                let worst = levels.iter().map(|t| t.max(1.0 - t)).fold(0.0f64, f64::max);
                Some(worst * (d as f64).sqrt())
            }
        }
    }

    /// For the pinball loss, the required prediction dimension.
    pub fn prediction_dim(&self) -> Option<usize> {
        match self {
            LossSpec::Pinball { levels } => Some(levels.len()),
            _ => None,
        }
    }

    fn residual(&self, z: &DVectorView<f64>, y: &DVectorView<f64>) -> Result<DVector<f64>> {
        match self {
            // quantile convention: r = y 1_d - z
            LossSpec::Pinball { levels } => {
                if z.len() != levels.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "pinball expects {} predictions, got {}",
                        levels.len(),
                        z.len()
                    )));
                }
                if y.len() == 1 {
                    Ok(DVector::from_fn(z.len(), |j, _| y[0] - z[j]))
                } else if y.len() == z.len() {
                    Ok(y - z)
                } else {
                    Err(Error::DimensionMismatch(format!(
                        "pinball target must be scalar or match {} levels, got {}",
                        levels.len(),
                        y.len()
                    )))
                }
            }
            _ => {
                if z.len() != y.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "prediction has dimension {}, target {}",
                        z.len(),
                        y.len()
                    )));
                }
                Ok(z - y)
            }
        }
    }

    /// Loss value `l(z, y) >= 0`.
    pub fn value(&self, z: &DVectorView<f64>, y: &DVectorView<f64>) -> Result<f64> {
        self.validate()?;
        let u = self.residual(z, y)?;
        Ok(match self {
            LossSpec::Square => 0.5 * u.norm_squared(),
            LossSpec::Huber { kappa } => {
                let nu = u.norm();
                if nu <= *kappa {
                    0.5 * nu * nu
                } else {
                    kappa * (nu - 0.5 * kappa)
                }
            }
            LossSpec::EpsInsensitive { epsilon } => (u.norm() - epsilon).max(0.0),
            LossSpec::Pinball { levels } => levels
                .iter()
                .zip(u.iter())
                .map(|(&t, &r)| if r >= 0.0 { t * r } else { (t - 1.0) * r })
                .sum(),
        })
    }

    /// Scalar fast path of [`LossSpec::value`] for d = 1 losses.
    pub fn value_scalar(&self, z: f64, y: f64) -> Result<f64> {
        self.validate()?;
        let u = z - y;
        Ok(match self {
            LossSpec::Square => 0.5 * u * u,
            LossSpec::Huber { kappa } => {
                if u.abs() <= *kappa {
                    0.5 * u * u
                } else {
                    kappa * (u.abs() - 0.5 * kappa)
                }
            }
            LossSpec::EpsInsensitive { epsilon } => (u.abs() - epsilon).max(0.0),
            LossSpec::Pinball { levels } => {
                if levels.len() != 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "scalar pinball path needs exactly one level, got {}",
                        levels.len()
                    )));
                }
                let r = -u; // quantile convention: r = y - z
                if r >= 0.0 {
                    levels[0] * r
                } else {
                    (levels[0] - 1.0) * r
                }
            }
        })
    }

    /// Scalar fast path of [`LossSpec::subgradient`] for d = 1 losses.
    pub fn subgradient_scalar(&self, z: f64, y: f64) -> Result<f64> {
        self.validate()?;
        let u = z - y;
        Ok(match self {
            LossSpec::Square => u,
            LossSpec::Huber { kappa } => {
                if u.abs() <= *kappa {
                    u
                } else {
                    kappa * u.signum()
                }
            }
            LossSpec::EpsInsensitive { epsilon } => {
                if u.abs() <= *epsilon || u == 0.0 {
                    0.0
                } else {
                    u.signum()
                }
            }
            LossSpec::Pinball { levels } => {
                if levels.len() != 1 {
                    return Err(Error::DimensionMismatch(format!(
                        "scalar pinball path needs exactly one level, got {}",
                        levels.len()
                    )));
                }
                let r = -u;
                if r > 0.0 {
                    -levels[0]
                } else if r < 0.0 {
                    1.0 - levels[0]
                } else {
                    0.0
                }
            }
        })
    }

    /// An element of the subdifferential of `z -> l(z, y)`.
    pub fn subgradient(&self, z: &DVectorView<f64>, y: &DVectorView<f64>) -> Result<DVector<f64>> {
        self.validate()?;
        let u = self.residual(z, y)?;
        Ok(match self {
            LossSpec::Square => u,
            LossSpec::Huber { kappa } => {
                let nu = u.norm();
                if nu <= *kappa {
                    u
                } else {
                    u * (*kappa / nu)
                }
            }
            LossSpec::EpsInsensitive { epsilon } => {
                let nu = u.norm();
                if nu <= *epsilon || nu == 0.0 {
                    DVector::zeros(u.len())
                } else {
                    u / nu
                }
            }
            // d/dz of tau r [r >= 0] + (tau - 1) r [r < 0] with r = y - z
            LossSpec::Pinball { levels } => DVector::from_fn(u.len(), |j, _| {
                let r = u[j];
                if r > 0.0 {
                    -levels[j]
                } else if r < 0.0 {
                    1.0 - levels[j]
                } else {
                    0.0
                }
            }),
        })
    }
}

/// Evaluation metric selector. `Rrmse` yields one value per target; every
/// other kind yields a single value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    RelativeMse,
    PinballTestLoss { levels: Vec<f64> },
    CrossingLoss,
    Rrmse,
    Arrmse,
}

/// Dispatch a metric. `baseline` carries the per-target training means
/// required by `Rrmse`/`Arrmse`.
pub fn metric(
    kind: &Metric,
    predictions: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    baseline: Option<&DVector<f64>>,
) -> Result<Vec<f64>> {
    match kind {
        Metric::RelativeMse => Ok(vec![relative_mse(predictions, targets)?]),
        Metric::PinballTestLoss { levels } => {
            Ok(vec![pinball_test_loss(predictions, targets, levels)?])
        }
        Metric::CrossingLoss => Ok(vec![crossing_loss(predictions)?]),
        Metric::Rrmse => {
            let base = baseline.ok_or_else(|| {
                Error::InvalidParameter("RRMSE needs per-target training means".into())
            })?;
            Ok(rrmse(predictions, targets, base)?.iter().copied().collect())
        }
        Metric::Arrmse => {
            let base = baseline.ok_or_else(|| {
                Error::InvalidParameter("ARRMSE needs per-target training means".into())
            })?;
            Ok(vec![arrmse(predictions, targets, base)?])
        }
    }
}

fn check_same_shape(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<()> {
    if predictions.shape() != targets.shape() {
        return Err(Error::DimensionMismatch(format!(
            "predictions are {:?}, targets are {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    Ok(())
}

/// `sum (yhat - y)^2 / sum (y - mean(y))^2` over all entries.
pub fn relative_mse(predictions: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<f64> {
    check_same_shape(predictions, targets)?;
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let denom: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    if denom == 0.0 {
        return Err(Error::Data("targets have zero variance".into()));
    }
    let num: f64 = predictions
        .iter()
        .zip(targets.iter())
        .map(|(p, y)| (p - y) * (p - y))
        .sum();
    Ok(num / denom)
}

/// Total pinball loss over test points: predictions are `n x d` quantile
/// estimates, targets a scalar column.
pub fn pinball_test_loss(
    predictions: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    levels: &[f64],
) -> Result<f64> {
    let spec = LossSpec::Pinball {
        levels: levels.to_vec(),
    };
    spec.validate()?;
    if predictions.ncols() != levels.len() {
        return Err(Error::DimensionMismatch(format!(
            "expected {} quantile columns, got {}",
            levels.len(),
            predictions.ncols()
        )));
    }
    if targets.ncols() != 1 || targets.nrows() != predictions.nrows() {
        return Err(Error::DimensionMismatch(
            "pinball targets must be a single column matching predictions".into(),
        ));
    }
    let mut total = 0.0;
    for i in 0..predictions.nrows() {
        let z = predictions.row(i).transpose();
        let y = targets.row(i).transpose();
        total += spec.value(&z.as_view(), &y.as_view())?;
    }
    Ok(total)
}

/// Mean over test points of `sum_j max(0, q_j - q_{j+1})`: hinge penalties on
/// adjacent quantile columns, zero iff the predicted quantiles never cross.
pub fn crossing_loss(predictions: &DMatrix<f64>) -> Result<f64> {
    if predictions.ncols() < 2 {
        return Err(Error::DimensionMismatch(
            "crossing loss needs at least two quantile columns".into(),
        ));
    }
    let n = predictions.nrows();
    if n == 0 {
        return Err(Error::Data("no test points".into()));
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..predictions.ncols() - 1 {
            total += (predictions[(i, j)] - predictions[(i, j + 1)]).max(0.0);
        }
    }
    Ok(total / n as f64)
}

/// Per-target relative RMSE against the training-mean predictor:
/// `sqrt(sum_i (yhat_it - y_it)^2 / sum_i (mean_t - y_it)^2)`.
pub fn rrmse(
    predictions: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    train_means: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_same_shape(predictions, targets)?;
    let d = targets.ncols();
    if train_means.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "need {} per-target training means, got {}",
            d,
            train_means.len()
        )));
    }
    let mut out = DVector::zeros(d);
    for t in 0..d {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..targets.nrows() {
            let e = predictions[(i, t)] - targets[(i, t)];
            num += e * e;
            let b = train_means[t] - targets[(i, t)];
            den += b * b;
        }
        if den == 0.0 {
            return Err(Error::Data(format!(
                "target {t} equals the training mean on every test point"
            )));
        }
        out[t] = (num / den).sqrt();
    }
    Ok(out)
}

/// Mean of [`rrmse`] over targets.
pub fn arrmse(
    predictions: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    train_means: &DVector<f64>,
) -> Result<f64> {
    let per_target = rrmse(predictions, targets, train_means)?;
    Ok(per_target.iter().sum::<f64>() / per_target.len() as f64)
}
