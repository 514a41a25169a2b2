//! ADAM stochastic subgradient descent over a flat parameter vector.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// ADAM hyperparameters. Defaults are the usual ones with the batch capped at
/// the sample count when fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 256,
            epochs: 100,
            seed: 0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) {
            return Err(Error::InvalidParameter(
                "ADAM step size must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidParameter(
                "ADAM betas must lie in [0, 1)".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// A finite-sum objective that ADAM can descend: `dim` parameters, `n_samples`
/// loss terms plus a deterministic regularizer folded into the subgradient.
pub trait ErmProblem {
    fn dim(&self) -> usize;
    fn n_samples(&self) -> usize;
    fn objective(&self, params: &DVector<f64>) -> Result<f64>;
    fn batch_subgradient(&self, params: &DVector<f64>, batch: &[usize]) -> Result<DVector<f64>>;
}

/// Summary of one optimization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Objective at the zero initializer (the loss of the zero function).
    pub initial_objective: f64,
    /// Best full objective seen at any epoch boundary; the returned
    /// parameters attain it.
    pub final_objective: f64,
    pub epochs_run: usize,
}

/// Run ADAM from a zero initializer with deterministic minibatch shuffling.
/// Returns the best iterate by full objective, evaluated once per epoch.
pub fn run_adam<P: ErmProblem>(problem: &P, cfg: &AdamConfig) -> Result<(DVector<f64>, FitReport)> {
    cfg.validate()?;
    let dim = problem.dim();
    let n = problem.n_samples();
    if n == 0 {
        return Err(Error::Data("cannot fit on an empty sample".into()));
    }
    let batch = cfg.batch_size.min(n);

    let mut params: DVector<f64> = DVector::zeros(dim);
    let mut m: DVector<f64> = DVector::zeros(dim);
    let mut v: DVector<f64> = DVector::zeros(dim);
    let mut t: u64 = 0;

    let initial = problem.objective(&params)?;
    let mut best = params.clone();
    let mut best_obj = initial;
    let mut recent = vec![initial];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let grad = problem.batch_subgradient(&params, chunk)?;
            t += 1;
            let b1t = 1.0 - cfg.beta1.powi(t as i32);
            let b2t = 1.0 - cfg.beta2.powi(t as i32);
            for j in 0..dim {
                let g: f64 = grad[j];
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat: f64 = m[j] / b1t;
                let v_hat: f64 = v[j] / b2t;
                let step: f64 = cfg.step_size * m_hat / (v_hat.sqrt() + cfg.epsilon);
                params[j] -= step;
            }
        }
        let obj = problem.objective(&params)?;
        if !obj.is_finite() {
            return Err(Error::Numerical(format!(
                "objective diverged at epoch {epoch}: {obj}; recent objectives {recent:?}"
            )));
        }
        recent.push(obj);
        if recent.len() > 4 {
            recent.remove(0);
        }
        if obj < best_obj {
            best_obj = obj;
            best.copy_from(&params);
        }
    }

    Ok((
        best,
        FitReport {
            initial_objective: initial,
            final_objective: best_obj,
            epochs_run: cfg.epochs,
        },
    ))
}
