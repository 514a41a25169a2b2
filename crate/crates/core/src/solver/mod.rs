//! Sketched and unsketched ERM solvers for scalar and decomposable
//! multi-output kernel machines.
//!
//! The scalar sketched path reduces the problem to an `r`-dimensional ridge
//! through the feature maps induced by the sketch: with eigenpairs of
//! `S K S^T` in descending order and `Ktilde_r = U_r D_r^(-1/2)`, the map
//! `z_S(x) = Ktilde_r^T S (k(x, x_1), ..., k(x, x_n))^T` turns the sketched
//! kernel objective into a linear one with an isotropic penalty, and the two
//! problems share their optimal value. The multi-output path learns the
//! `s x d` coefficient matrix directly; output-matrix algebra stays blockwise
//! (the `n d x n d` Kronecker Gram is never formed). Losses may be nonsmooth,
//! so everything descends by ADAM on subgradients; the square loss
//! additionally has a closed-form sketched solve used as a reference.

mod adam;
pub mod problems;

pub use adam::{run_adam, AdamConfig, ErmProblem, FitReport};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{output_matrix, KernelSpec, OutputMatrix, OutputMatrixKind};
use crate::losses::LossSpec;
use crate::sketch::{SketchOperator, SketchRecord};
use problems::{MultiOutputErmProblem, ScalarErmProblem};

/// Relative eigenvalue / singular-value cutoff used for ranks and
/// pseudo-inverses.
pub const RANK_TOL: f64 = 1e-10;

/// Eigenstructure of `S K S^T` plus the sketched Gram factor needed to build
/// feature maps.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMapState {
    /// Eigenvalues of `S K S^T`, non-increasing (all `s` of them).
    pub eigenvalues: DVector<f64>,
    /// `U_r D_r^(-1/2)`, `s x r`.
    pub ktilde_r: DMatrix<f64>,
    /// `S K`, `s x n`.
    pub sk: DMatrix<f64>,
}

impl FeatureMapState {
    pub fn rank(&self) -> usize {
        self.ktilde_r.ncols()
    }

    /// Feature vectors of the training points, one column per point (`r x n`).
    pub fn training_features(&self) -> DMatrix<f64> {
        self.ktilde_r.transpose() * &self.sk
    }
}

/// Eigendecompose `S K S^T`, discard eigenvalues at or below
/// `rank_tol * mu_1`, and assemble the feature-map state.
pub fn build_feature_maps(
    sketch: &SketchOperator,
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    rank_tol: f64,
) -> Result<FeatureMapState> {
    let sks = sketch.sketch_gram_both(spec, x)?;
    let sk = sketch.sketch_gram_left(spec, x)?;
    feature_maps_from_products(sks, sk, rank_tol)
}

pub(crate) fn feature_maps_from_products(
    sks: DMatrix<f64>,
    sk: DMatrix<f64>,
    rank_tol: f64,
) -> Result<FeatureMapState> {
    let s = sks.nrows();
    let eig = sks.symmetric_eigen();
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let eigenvalues = DVector::from_fn(s, |i, _| eig.eigenvalues[order[i]]);
    let top = eigenvalues[0];
    if !(top > 0.0) {
        return Err(Error::Numerical(
            "S K S^T is numerically zero; the sketched subspace is empty".into(),
        ));
    }
    let cutoff = rank_tol * top;
    let r = eigenvalues.iter().take_while(|&&m| m > cutoff).count();
    if r == 0 {
        return Err(Error::Numerical("rank of S K S^T is zero".into()));
    }
    let mut ktilde = DMatrix::zeros(s, r);
    for c in 0..r {
        let scale = 1.0 / eigenvalues[c].sqrt();
        let col = eig.eigenvectors.column(order[c]) * scale;
        ktilde.set_column(c, &col);
    }
    Ok(FeatureMapState {
        eigenvalues,
        ktilde_r: ktilde,
        sk,
    })
}

/// `z_S(x) = Ktilde_r^T S (k(x, x_1), ..., k(x, x_n))^T`. Through the
/// decomposed sketch this needs only `s'` kernel evaluations against `x`.
pub fn featurize(
    state: &FeatureMapState,
    sketch: &SketchOperator,
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    x: &[f64],
) -> Result<DVector<f64>> {
    if sketch.s() != state.sk.nrows() {
        return Err(Error::DimensionMismatch(
            "feature-map state was built from a different sketch size".into(),
        ));
    }
    let u = sketch.apply_kernel_vector(spec, x_train, x)?;
    Ok(state.ktilde_r.transpose() * u)
}

/// A fitted kernel machine, sufficient for prediction.
#[derive(Clone, Debug)]
pub struct FittedModel {
    pub kind: ModelKind,
    pub kernel: KernelSpec,
    pub x_train: DMatrix<f64>,
    pub lambda: f64,
    pub report: FitReport,
}

#[derive(Clone, Debug)]
pub enum ModelKind {
    /// Scalar sketched model in feature-map parameterization:
    /// `f(x) = omega^T z_S(x)`.
    ScalarSketched {
        omega: DVector<f64>,
        state: FeatureMapState,
        sketch: SketchOperator,
    },
    /// Multi-output sketched model: `f(x) = M Gamma^T S k_x`.
    MultiOutputSketched {
        gamma: DMatrix<f64>,
        sketch: SketchOperator,
        output: OutputMatrix,
    },
    /// Unsketched scalar model: `f(x) = alpha^T k_x`.
    ScalarExact { alpha: DVector<f64> },
    /// Unsketched multi-output model: `f(x) = M A^T k_x`.
    MultiOutputExact {
        coeff: DMatrix<f64>,
        output: OutputMatrix,
    },
}

impl FittedModel {
    pub fn output_dim(&self) -> usize {
        match &self.kind {
            ModelKind::ScalarSketched { .. } | ModelKind::ScalarExact { .. } => 1,
            ModelKind::MultiOutputSketched { output, .. }
            | ModelKind::MultiOutputExact { output, .. } => output.dim(),
        }
    }

    fn predict_one(&self, x: &[f64]) -> Result<DVector<f64>> {
        match &self.kind {
            ModelKind::ScalarSketched {
                omega,
                state,
                sketch,
            } => {
                let z = featurize(state, sketch, &self.kernel, &self.x_train, x)?;
                Ok(DVector::from_element(1, omega.dot(&z)))
            }
            ModelKind::MultiOutputSketched {
                gamma,
                sketch,
                output,
            } => {
                let u = sketch.apply_kernel_vector(&self.kernel, &self.x_train, x)?;
                Ok(&output.matrix * (gamma.transpose() * u))
            }
            ModelKind::ScalarExact { alpha } => {
                let kx = self.kernel.kernel_vector(&self.x_train, x)?;
                Ok(DVector::from_element(1, alpha.dot(&kx)))
            }
            ModelKind::MultiOutputExact { coeff, output } => {
                let kx = self.kernel.kernel_vector(&self.x_train, x)?;
                Ok(&output.matrix * (coeff.transpose() * kx))
            }
        }
    }
}

/// Predict on the rows of `x_new`; returns an `n_new x d` matrix (`d = 1` for
/// scalar models). Batch evaluation applies the per-point path to each row,
/// so it matches a hand-written loop exactly.
pub fn predict(model: &FittedModel, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_new.ncols() != model.x_train.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "new points have dimension {}, training data has {}",
            x_new.ncols(),
            model.x_train.ncols()
        )));
    }
    let n = x_new.nrows();
    let d = model.output_dim();
    let rows: Vec<Result<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let point: Vec<f64> = x_new.row(i).iter().copied().collect();
            model.predict_one(&point)
        })
        .collect();
    let mut out = DMatrix::zeros(n, d);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for j in 0..d {
            out[(i, j)] = row[j];
        }
    }
    Ok(out)
}

fn check_scalar_loss(loss: &LossSpec) -> Result<()> {
    loss.validate()?;
    if let Some(d) = loss.prediction_dim() {
        if d != 1 {
            return Err(Error::DimensionMismatch(format!(
                "scalar fit requires a 1-dimensional loss, got d = {d}"
            )));
        }
    }
    Ok(())
}

/// Fit a scalar sketched kernel machine by ADAM on the feature-map problem.
pub fn fit_scalar_sketched(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: &LossSpec,
    lambda: f64,
    sketch: &SketchOperator,
    adam: &AdamConfig,
) -> Result<FittedModel> {
    check_scalar_loss(loss)?;
    let state = build_feature_maps(sketch, spec, x, RANK_TOL)?;
    // rows of the design are z_S(x_i)
    let features = state.sk.transpose() * &state.ktilde_r; // n x r
    let problem = ScalarErmProblem::new(features, y.clone(), loss.clone(), lambda, None)?;
    let (omega, report) = run_adam(&problem, adam)?;
    Ok(FittedModel {
        kind: ModelKind::ScalarSketched {
            omega,
            state,
            sketch: sketch.clone(),
        },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report,
    })
}

/// Closed-form sketched kernel ridge regression:
/// `gamma = (S K K S^T + lambda n S K S^T)^+ S K y`.
pub fn solve_krr_sketched(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    sketch: &SketchOperator,
) -> Result<FittedModel> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let sk = sketch.sketch_gram_left(spec, x)?;
    let sks = sketch.sketch_gram_both(spec, x)?;
    let gamma = solve_krr_from_products(&sk, &sks, y, lambda)?;

    let problem = ScalarErmProblem::new(
        sk.transpose(),
        y.clone(),
        LossSpec::Square,
        lambda,
        Some(sks),
    )?;
    let initial = problem.objective(&DVector::zeros(sketch.s()))?;
    let final_objective = problem.objective(&gamma)?;

    let output = output_matrix(&OutputMatrixKind::Identity { dim: 1 })?;
    Ok(FittedModel {
        kind: ModelKind::MultiOutputSketched {
            gamma: DMatrix::from_column_slice(sketch.s(), 1, gamma.as_slice()),
            sketch: sketch.clone(),
            output,
        },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report: FitReport {
            initial_objective: initial,
            final_objective,
            epochs_run: 0,
        },
    })
}

/// The linear-algebra core of the closed-form sketched ridge, on explicit
/// `S K` and `S K S^T` products.
pub(crate) fn solve_krr_from_products(
    sk: &DMatrix<f64>,
    sks: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if sk.ncols() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "S K has {} columns but y has {} entries",
            sk.ncols(),
            y.len()
        )));
    }
    let n = y.len() as f64;
    let a = sk * sk.transpose() + sks * (lambda * n);
    let b = sk * y;
    let sigma_max = a.clone().singular_values().max();
    let pinv = a
        .pseudo_inverse(RANK_TOL * sigma_max.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Numerical(format!("pseudo-inverse failed: {e}")))?;
    Ok(pinv * b)
}

/// Fit a multi-output sketched kernel machine (decomposable kernel `k M`) by
/// ADAM directly on the `s x d` coefficient matrix.
#[allow(clippy::too_many_arguments)]
pub fn fit_multioutput_sketched(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    output: &OutputMatrix,
    loss: &LossSpec,
    lambda: f64,
    sketch: &SketchOperator,
    adam: &AdamConfig,
) -> Result<FittedModel> {
    let sk = sketch.sketch_gram_left(spec, x)?;
    let sks = sketch.sketch_gram_both(spec, x)?;
    let problem = MultiOutputErmProblem::new(
        sk.transpose(),
        y.clone(),
        loss.clone(),
        lambda,
        sks,
        output.matrix.clone(),
    )?;
    let (params, report) = run_adam(&problem, adam)?;
    let gamma = problem.gamma_from_params(&params);
    Ok(FittedModel {
        kind: ModelKind::MultiOutputSketched {
            gamma,
            sketch: sketch.clone(),
            output: output.clone(),
        },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report,
    })
}

/// Unsketched scalar baseline: ADAM over the full representer coefficients.
pub fn fit_exact_scalar(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    loss: &LossSpec,
    lambda: f64,
    adam: &AdamConfig,
) -> Result<FittedModel> {
    check_scalar_loss(loss)?;
    let k = spec.gram(x)?;
    let problem = ScalarErmProblem::new(k.clone(), y.clone(), loss.clone(), lambda, Some(k))?;
    let (alpha, report) = run_adam(&problem, adam)?;
    Ok(FittedModel {
        kind: ModelKind::ScalarExact { alpha },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report,
    })
}

/// Unsketched multi-output baseline.
pub fn fit_exact_multioutput(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    output: &OutputMatrix,
    loss: &LossSpec,
    lambda: f64,
    adam: &AdamConfig,
) -> Result<FittedModel> {
    let k = spec.gram(x)?;
    let problem = MultiOutputErmProblem::new(
        k.clone(),
        y.clone(),
        loss.clone(),
        lambda,
        k,
        output.matrix.clone(),
    )?;
    let (params, report) = run_adam(&problem, adam)?;
    let coeff = problem.gamma_from_params(&params);
    Ok(FittedModel {
        kind: ModelKind::MultiOutputExact {
            coeff,
            output: output.clone(),
        },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report,
    })
}

/// Closed-form unsketched kernel ridge: `alpha = (K + lambda n I)^-1 y`.
/// Reference implementation for tests and cross-validation fast paths.
pub fn solve_krr_exact(
    spec: &KernelSpec,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
) -> Result<FittedModel> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let k = spec.gram(x)?;
    let n = y.len() as f64;
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda * n;
    }
    let chol = nalgebra::linalg::Cholesky::new(a)
        .ok_or_else(|| Error::SingularMatrix("K + lambda n I is not positive definite".into()))?;
    let alpha = chol.solve(y);
    let problem = ScalarErmProblem::new(k.clone(), y.clone(), LossSpec::Square, lambda, Some(k))?;
    let initial = problem.objective(&DVector::zeros(y.len()))?;
    let final_objective = problem.objective(&alpha)?;
    Ok(FittedModel {
        kind: ModelKind::ScalarExact { alpha },
        kernel: spec.clone(),
        x_train: x.clone(),
        lambda,
        report: FitReport {
            initial_objective: initial,
            final_objective,
            epochs_run: 0,
        },
    })
}

// --- serialization ---------------------------------------------------------

/// Column-major dense matrix payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixRecord {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRecord {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::Serialization(format!(
                "matrix record claims {}x{} but holds {} values",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_column_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientRecord {
    ScalarSketched {
        omega: Vec<f64>,
        eigenvalues: Vec<f64>,
        ktilde_r: MatrixRecord,
        sketch: SketchRecord,
    },
    MultiOutputSketched {
        gamma: MatrixRecord,
        sketch: SketchRecord,
        output: OutputMatrixKind,
    },
    ScalarExact {
        alpha: Vec<f64>,
    },
    MultiOutputExact {
        coeff: MatrixRecord,
        output: OutputMatrixKind,
    },
}

/// JSON-serializable model record. Prediction additionally requires the
/// original training inputs, which are checked against a stored hash.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub x_train_hash: String,
    pub n_train: usize,
    pub coefficients: CoefficientRecord,
    pub report: FitReport,
}

/// FNV-1a over the dimensions and raw bit patterns of the entries.
pub fn training_input_hash(x: &DMatrix<f64>) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let feed = |h: &mut u64, bytes: &[u8]| {
        for &b in bytes {
            *h ^= b as u64;
            *h = h.wrapping_mul(0x100000001b3);
        }
    };
    feed(&mut h, &(x.nrows() as u64).to_le_bytes());
    feed(&mut h, &(x.ncols() as u64).to_le_bytes());
    for v in x.iter() {
        feed(&mut h, &v.to_bits().to_le_bytes());
    }
    format!("{h:016x}")
}

impl FittedModel {
    pub fn to_record(&self) -> ModelRecord {
        let coefficients = match &self.kind {
            ModelKind::ScalarSketched {
                omega,
                state,
                sketch,
            } => CoefficientRecord::ScalarSketched {
                omega: omega.iter().copied().collect(),
                eigenvalues: state.eigenvalues.iter().copied().collect(),
                ktilde_r: MatrixRecord::from_matrix(&state.ktilde_r),
                sketch: sketch.record().clone(),
            },
            ModelKind::MultiOutputSketched {
                gamma,
                sketch,
                output,
            } => CoefficientRecord::MultiOutputSketched {
                gamma: MatrixRecord::from_matrix(gamma),
                sketch: sketch.record().clone(),
                output: output.provenance.clone(),
            },
            ModelKind::ScalarExact { alpha } => CoefficientRecord::ScalarExact {
                alpha: alpha.iter().copied().collect(),
            },
            ModelKind::MultiOutputExact { coeff, output } => CoefficientRecord::MultiOutputExact {
                coeff: MatrixRecord::from_matrix(coeff),
                output: output.provenance.clone(),
            },
        };
        ModelRecord {
            kernel: self.kernel.clone(),
            lambda: self.lambda,
            x_train_hash: training_input_hash(&self.x_train),
            n_train: self.x_train.nrows(),
            coefficients,
            report: self.report.clone(),
        }
    }

    /// Rebuild a model from its record and the original training inputs.
    /// Sketches are regenerated from their seeds, so predictions reproduce
    /// the original model bit for bit.
    pub fn from_record(record: &ModelRecord, spec_x_train: DMatrix<f64>) -> Result<FittedModel> {
        let hash = training_input_hash(&spec_x_train);
        if hash != record.x_train_hash {
            return Err(Error::Data(format!(
                "training inputs do not match the model record (hash {hash}, expected {})",
                record.x_train_hash
            )));
        }
        let kind = match &record.coefficients {
            CoefficientRecord::ScalarSketched {
                omega,
                eigenvalues,
                ktilde_r,
                sketch,
            } => {
                let sketch = SketchOperator::from_record(sketch)?;
                let sk = sketch.sketch_gram_left(&record.kernel, &spec_x_train)?;
                ModelKind::ScalarSketched {
                    omega: DVector::from_vec(omega.clone()),
                    state: FeatureMapState {
                        eigenvalues: DVector::from_vec(eigenvalues.clone()),
                        ktilde_r: ktilde_r.to_matrix()?,
                        sk,
                    },
                    sketch,
                }
            }
            CoefficientRecord::MultiOutputSketched {
                gamma,
                sketch,
                output,
            } => ModelKind::MultiOutputSketched {
                gamma: gamma.to_matrix()?,
                sketch: SketchOperator::from_record(sketch)?,
                output: output_matrix(output)?,
            },
            CoefficientRecord::ScalarExact { alpha } => ModelKind::ScalarExact {
                alpha: DVector::from_vec(alpha.clone()),
            },
            CoefficientRecord::MultiOutputExact { coeff, output } => ModelKind::MultiOutputExact {
                coeff: coeff.to_matrix()?,
                output: output_matrix(output)?,
            },
        };
        Ok(FittedModel {
            kind,
            kernel: record.kernel.clone(),
            x_train: spec_x_train,
            lambda: record.lambda,
            report: record.report.clone(),
        })
    }
}
