//! Concrete ERM objectives consumed by the ADAM driver.
//!
//! Both problems share the shape
//! `(1/n) sum_i loss([F theta]_i, y_i) + (lambda/2) * quad(theta)`:
//! rows of `features` feed the loss, and the quadratic penalty is either a
//! plain squared norm (the feature-map path) or a `theta^T R theta` form with
//! an explicit matrix (representer parameterizations, where `R` is `S K S^T`
//! or `K`). The multi-output variant learns a matrix of coefficients against
//! an output matrix `M`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::solver::adam::ErmProblem;

/// Scalar-output objective
/// `(1/n) sum_i loss(<theta, f_i>, y_i) + (lambda/2) quad(theta)`.
#[derive(Clone, Debug)]
pub struct ScalarErmProblem {
    /// `n x m`; row i is the feature vector of sample i.
    pub features: DMatrix<f64>,
    pub targets: DVector<f64>,
    pub loss: LossSpec,
    pub lambda: f64,
    /// `None` penalizes `||theta||^2`; `Some(R)` penalizes `theta^T R theta`.
    pub reg: Option<DMatrix<f64>>,
}

impl ScalarErmProblem {
    pub fn new(
        features: DMatrix<f64>,
        targets: DVector<f64>,
        loss: LossSpec,
        lambda: f64,
        reg: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        loss.validate()?;
        if let Some(d) = loss.prediction_dim() {
            if d != 1 {
                return Err(Error::DimensionMismatch(format!(
                    "scalar problem needs a 1-dimensional loss, got d = {d}"
                )));
            }
        }
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        if features.nrows() != targets.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} targets",
                features.nrows(),
                targets.len()
            )));
        }
        if let Some(r) = &reg {
            if r.nrows() != features.ncols() || r.ncols() != features.ncols() {
                return Err(Error::DimensionMismatch(
                    "regularizer shape must match the parameter dimension".into(),
                ));
            }
        }
        Ok(ScalarErmProblem {
            features,
            targets,
            loss,
            lambda,
            reg,
        })
    }

    fn quad(&self, params: &DVector<f64>) -> f64 {
        match &self.reg {
            None => params.norm_squared(),
            Some(r) => (r * params).dot(params),
        }
    }

    fn quad_grad(&self, params: &DVector<f64>) -> DVector<f64> {
        match &self.reg {
            None => params.clone(),
            Some(r) => r * params,
        }
    }
}

impl ErmProblem for ScalarErmProblem {
    fn dim(&self) -> usize {
        self.features.ncols()
    }

    fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    fn objective(&self, params: &DVector<f64>) -> Result<f64> {
        let preds = &self.features * params;
        let n = self.n_samples() as f64;
        let mut total = 0.0;
        for i in 0..self.features.nrows() {
            total += self.loss.value_scalar(preds[i], self.targets[i])?;
        }
        Ok(total / n + 0.5 * self.lambda * self.quad(params))
    }

    fn batch_subgradient(&self, params: &DVector<f64>, batch: &[usize]) -> Result<DVector<f64>> {
        let mut grad = self.quad_grad(params) * self.lambda;
        let w = 1.0 / batch.len() as f64;
        for &i in batch {
            let pred = self.features.row(i).transpose().dot(params);
            let g = self.loss.subgradient_scalar(pred, self.targets[i])?;
            let gw = g * w;
            for j in 0..grad.len() {
                grad[j] += gw * self.features[(i, j)];
            }
        }
        Ok(grad)
    }
}

/// Multi-output objective
/// `(1/n) sum_i loss([F Gamma M]_{i:}, y_i) + (lambda/2) tr(R Gamma M Gamma^T)`
/// over the flattened (column-major) coefficient matrix `Gamma`.
#[derive(Clone, Debug)]
pub struct MultiOutputErmProblem {
    /// `n x m`; row i feeds prediction i.
    pub features: DMatrix<f64>,
    /// `n x d_y` targets; a single column with a pinball loss broadcasts the
    /// scalar target across quantile levels.
    pub targets: DMatrix<f64>,
    pub loss: LossSpec,
    pub lambda: f64,
    /// `m x m` quadratic form (`S K S^T` sketched, `K` exact).
    pub reg: DMatrix<f64>,
    /// `d x d` output matrix `M`.
    pub output: DMatrix<f64>,
}

impl MultiOutputErmProblem {
    pub fn new(
        features: DMatrix<f64>,
        targets: DMatrix<f64>,
        loss: LossSpec,
        lambda: f64,
        reg: DMatrix<f64>,
        output: DMatrix<f64>,
    ) -> Result<Self> {
        loss.validate()?;
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter("lambda must be positive".into()));
        }
        let d = output.nrows();
        if output.ncols() != d {
            return Err(Error::DimensionMismatch(
                "output matrix must be square".into(),
            ));
        }
        if features.nrows() != targets.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature rows but {} target rows",
                features.nrows(),
                targets.nrows()
            )));
        }
        if reg.nrows() != features.ncols() || reg.ncols() != features.ncols() {
            return Err(Error::DimensionMismatch(
                "regularizer shape must match the parameter dimension".into(),
            ));
        }
        match loss.prediction_dim() {
            Some(need) => {
                if need != d {
                    return Err(Error::DimensionMismatch(format!(
                        "loss expects {need} outputs, output matrix has {d}"
                    )));
                }
                if targets.ncols() != 1 && targets.ncols() != d {
                    return Err(Error::DimensionMismatch(
                        "pinball targets must be scalar or match the level count".into(),
                    ));
                }
            }
            None => {
                if targets.ncols() != d {
                    return Err(Error::DimensionMismatch(format!(
                        "targets have {} columns, output matrix has {d}",
                        targets.ncols()
                    )));
                }
            }
        }
        Ok(MultiOutputErmProblem {
            features,
            targets,
            loss,
            lambda,
            reg,
            output,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    pub fn gamma_from_params(&self, params: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.features.ncols(), self.output_dim(), params.as_slice())
    }

    /// Objective evaluated directly on the coefficient matrix.
    pub fn objective_matrix(&self, gamma: &DMatrix<f64>) -> Result<f64> {
        let n = self.features.nrows();
        let preds = &self.features * gamma * &self.output; // n x d
        let mut total = 0.0;
        for i in 0..n {
            let z = preds.row(i).transpose();
            let y = self.targets.row(i).transpose();
            total += self.loss.value(&z.as_view(), &y.as_view())?;
        }
        // tr(R Gamma M Gamma^T) = <R Gamma M, Gamma>
        let rgm = &self.reg * gamma * &self.output;
        let quad = rgm
            .iter()
            .zip(gamma.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
        Ok(total / n as f64 + 0.5 * self.lambda * quad)
    }

    /// Full-objective subgradient with respect to the coefficient matrix.
    pub fn subgradient_matrix(
        &self,
        gamma: &DMatrix<f64>,
        batch: &[usize],
    ) -> Result<DMatrix<f64>> {
        let m = self.features.ncols();
        let d = self.output_dim();
        let w = 1.0 / batch.len() as f64;
        let mut rows = DMatrix::zeros(batch.len(), m);
        for (b, &i) in batch.iter().enumerate() {
            rows.set_row(b, &self.features.row(i));
        }
        let preds = &rows * gamma * &self.output; // |B| x d
        let mut g = DMatrix::zeros(batch.len(), d);
        for (b, &i) in batch.iter().enumerate() {
            let z = preds.row(b).transpose();
            let y = self.targets.row(i).transpose();
            let gi = self.loss.subgradient(&z.as_view(), &y.as_view())?;
            g.set_row(b, &gi.transpose());
        }
        let loss_grad = rows.transpose() * g * &self.output * w;
        let reg_grad = &self.reg * gamma * &self.output * self.lambda;
        Ok(loss_grad + reg_grad)
    }
}

impl ErmProblem for MultiOutputErmProblem {
    fn dim(&self) -> usize {
        self.features.ncols() * self.output_dim()
    }

    fn n_samples(&self) -> usize {
        self.features.nrows()
    }

    fn objective(&self, params: &DVector<f64>) -> Result<f64> {
        self.objective_matrix(&self.gamma_from_params(params))
    }

    fn batch_subgradient(&self, params: &DVector<f64>, batch: &[usize]) -> Result<DVector<f64>> {
        let grad = self.subgradient_matrix(&self.gamma_from_params(params), batch)?;
        Ok(DVector::from_column_slice(grad.as_slice()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn scalar_gradient_matches_finite_differences() {
        let n = 7;
        let m = 4;
        let features = rand_mat(n, m, 1);
        let targets = DVector::from_fn(n, |i, _| (i as f64 * 0.37).sin());
        let reg_base = rand_mat(m, m, 2);
        let reg = &reg_base * reg_base.transpose();
        for (loss, reg) in [
            (LossSpec::Square, None),
            (LossSpec::Huber { kappa: 0.7 }, Some(reg.clone())),
            (LossSpec::EpsInsensitive { epsilon: 0.2 }, None),
        ] {
            let problem =
                ScalarErmProblem::new(features.clone(), targets.clone(), loss, 0.3, reg).unwrap();
            let theta = DVector::from_fn(m, |j, _| 0.3 * (j as f64 + 1.0));
            let batch: Vec<usize> = (0..n).collect();
            let g = problem.batch_subgradient(&theta, &batch).unwrap();
            let h = 1e-6;
            for j in 0..m {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[j] += h;
                tm[j] -= h;
                let fd =
                    (problem.objective(&tp).unwrap() - problem.objective(&tm).unwrap()) / (2.0 * h);
                assert!(
                    (fd - g[j]).abs() <= 1e-5,
                    "coordinate {j}: fd {fd} vs {}",
                    g[j]
                );
            }
        }
    }

    #[test]
    fn multioutput_gradient_matches_finite_differences() {
        let n = 4;
        let s = 2;
        let d = 2;
        let features = rand_mat(n, s, 3);
        let targets = rand_mat(n, d, 4);
        let reg_base = rand_mat(s, s, 5);
        let reg = &reg_base * reg_base.transpose();
        let out_base = rand_mat(d, d, 6);
        let output = &out_base * out_base.transpose();
        let problem = MultiOutputErmProblem::new(
            features,
            targets,
            LossSpec::Huber { kappa: 0.9 },
            0.2,
            reg,
            output,
        )
        .unwrap();
        let params = DVector::from_fn(s * d, |j, _| 0.2 * ((j + 1) as f64).sin());
        let batch: Vec<usize> = (0..n).collect();
        let g = problem.batch_subgradient(&params, &batch).unwrap();
        let h = 1e-6;
        for j in 0..s * d {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[j] += h;
            pm[j] -= h;
            let fd =
                (problem.objective(&pp).unwrap() - problem.objective(&pm).unwrap()) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-5,
                "coordinate {j}: fd {fd} vs {}",
                g[j]
            );
        }
    }

    #[test]
    fn shape_validation() {
        let features = rand_mat(5, 3, 1);
        let targets = DVector::zeros(4);
        assert!(
            ScalarErmProblem::new(features.clone(), targets, LossSpec::Square, 0.1, None).is_err()
        );
        let targets = DVector::zeros(5);
        assert!(ScalarErmProblem::new(
            features.clone(),
            targets.clone(),
            LossSpec::Square,
            0.0,
            None
        )
        .is_err());
        let bad_reg = DMatrix::zeros(2, 2);
        assert!(
            ScalarErmProblem::new(features, targets, LossSpec::Square, 0.1, Some(bad_reg)).is_err()
        );

        let features = rand_mat(5, 3, 2);
        let targets = rand_mat(5, 2, 3);
        let reg = DMatrix::identity(3, 3);
        let output = DMatrix::identity(3, 3); // wrong: targets have d = 2
        assert!(
            MultiOutputErmProblem::new(features, targets, LossSpec::Square, 0.1, reg, output)
                .is_err()
        );
    }
}
