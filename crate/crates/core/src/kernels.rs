//! Scalar kernels, Gram-matrix evaluation, and output matrices for
//! decomposable matrix-valued kernels.
//!
//! Points are the rows of an `n x q` matrix. Gram evaluation is available in
//! full ([`KernelSpec::gram`]) and row-block form ([`KernelSpec::gram_rows`]);
//! the row-block form is what lets sub-sampled sketches avoid materializing
//! the full Gram matrix. A decomposable matrix-valued kernel is represented by
//! a scalar [`KernelSpec`] together with an [`OutputMatrix`] `M`; its Gram
//! matrix `K (x) M` (Kronecker) is never formed explicitly.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar kernel family. All evaluations are symmetric in their arguments and
/// nonnegative on the diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    /// `k(x, x') = exp(-||x - x'||^2 / bandwidth)`, bandwidth > 0.
    /// Satisfies `k(x, x) = 1`.
    Gaussian { bandwidth: f64 },
    /// `k(x, x') = (<x, x'> + offset)^degree`, degree >= 1, offset >= 0.
    Polynomial { degree: u32, offset: f64 },
    /// `k(x, x') = 1 + min(x, x')` for scalar inputs in [0, 1].
    SobolevFirstOrder,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                if !(bandwidth > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "gaussian bandwidth must be positive, got {bandwidth}"
                    )));
                }
            }
            KernelSpec::Polynomial { degree, offset } => {
                if degree < 1 {
                    return Err(Error::InvalidParameter(
                        "polynomial degree must be >= 1".into(),
                    ));
                }
                if !(offset >= 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "polynomial offset must be >= 0, got {offset}"
                    )));
                }
            }
            KernelSpec::SobolevFirstOrder => {}
        }
        Ok(())
    }

    /// Evaluate `k(x, x')`.
    pub fn eval(&self, x: &[f64], x_prime: &[f64]) -> Result<f64> {
        self.validate()?;
        if x.len() != x_prime.len() {
            return Err(Error::DimensionMismatch(format!(
                "kernel inputs have lengths {} and {}",
                x.len(),
                x_prime.len()
            )));
        }
        if matches!(self, KernelSpec::SobolevFirstOrder) && x.len() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "Sobolev kernel requires scalar inputs, got dimension {}",
                x.len()
            )));
        }
        Ok(self.eval_unchecked(x, x_prime))
    }

    /// Entry evaluation shared by every Gram path. The arithmetic is exactly
    /// symmetric in (x, x'): squared differences and products commute
    /// bitwise, so sliced and mirrored Gram entries agree to 0 ulp.
    #[inline]
    fn eval_unchecked(&self, x: &[f64], x_prime: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let mut sq = 0.0;
                for (a, b) in x.iter().zip(x_prime) {
                    let d = a - b;
                    sq += d * d;
                }
                (-sq / bandwidth).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let mut dot = 0.0;
                for (a, b) in x.iter().zip(x_prime) {
                    dot += a * b;
                }
                (dot + offset).powi(degree as i32)
            }
            KernelSpec::SobolevFirstOrder => 1.0 + x[0].min(x_prime[0]),
        }
    }

    /// Full `n x n` Gram matrix of the rows of `x`. Symmetric by
    /// construction: each pair is evaluated once and mirrored.
    pub fn gram(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.validate_points(x)?;
        let n = x.nrows();
        let pts = row_major_points(x);
        let q = x.ncols();
        let rows: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let xi = &pts[i * q..(i + 1) * q];
                (i..n)
                    .map(|j| self.eval_unchecked(xi, &pts[j * q..(j + 1) * q]))
                    .collect()
            })
            .collect();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for (off, &v) in rows[i].iter().enumerate() {
                let j = i + off;
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }

    /// Rows `indices` of the Gram matrix, as an `|indices| x n` matrix.
    /// Bit-identical to slicing the full Gram matrix.
    pub fn gram_rows(&self, x: &DMatrix<f64>, indices: &[usize]) -> Result<DMatrix<f64>> {
        self.validate_points(x)?;
        let n = x.nrows();
        for &i in indices {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
        }
        let pts = row_major_points(x);
        let q = x.ncols();
        let rows: Vec<Vec<f64>> = indices
            .par_iter()
            .map(|&i| {
                let xi = &pts[i * q..(i + 1) * q];
                (0..n)
                    .map(|j| self.eval_unchecked(xi, &pts[j * q..(j + 1) * q]))
                    .collect()
            })
            .collect();
        let mut out = DMatrix::zeros(indices.len(), n);
        for (r, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                out[(r, j)] = v;
            }
        }
        Ok(out)
    }

    /// `K[rows, cols]` without forming the full Gram matrix. When the two
    /// index sets coincide the result is filled symmetrically.
    pub(crate) fn gram_submatrix(
        &self,
        x: &DMatrix<f64>,
        rows: &[usize],
        cols: &[usize],
    ) -> Result<DMatrix<f64>> {
        self.validate_points(x)?;
        let n = x.nrows();
        for &i in rows.iter().chain(cols) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, size: n });
            }
        }
        let pts = row_major_points(x);
        let q = x.ncols();
        if rows == cols {
            let m = rows.len();
            let tri: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|a| {
                    let xi = &pts[rows[a] * q..(rows[a] + 1) * q];
                    (a..m)
                        .map(|b| self.eval_unchecked(xi, &pts[rows[b] * q..(rows[b] + 1) * q]))
                        .collect()
                })
                .collect();
            let mut out = DMatrix::zeros(m, m);
            for a in 0..m {
                for (off, &v) in tri[a].iter().enumerate() {
                    let b = a + off;
                    out[(a, b)] = v;
                    out[(b, a)] = v;
                }
            }
            Ok(out)
        } else {
            let data: Vec<Vec<f64>> = rows
                .par_iter()
                .map(|&i| {
                    let xi = &pts[i * q..(i + 1) * q];
                    cols.iter()
                        .map(|&j| self.eval_unchecked(xi, &pts[j * q..(j + 1) * q]))
                        .collect()
                })
                .collect();
            let mut out = DMatrix::zeros(rows.len(), cols.len());
            for (a, row) in data.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    out[(a, b)] = v;
                }
            }
            Ok(out)
        }
    }

    /// Kernel evaluations of one point against every row of `x_train`:
    /// `(k(x, x_1), ..., k(x, x_n))`.
    pub fn kernel_vector(&self, x_train: &DMatrix<f64>, x: &[f64]) -> Result<DVector<f64>> {
        self.validate_points(x_train)?;
        if x.len() != x_train.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, training data has {}",
                x.len(),
                x_train.ncols()
            )));
        }
        let n = x_train.nrows();
        let q = x_train.ncols();
        let pts = row_major_points(x_train);
        let mut out = DVector::zeros(n);
        for j in 0..n {
            out[j] = self.eval_unchecked(x, &pts[j * q..(j + 1) * q]);
        }
        Ok(out)
    }

    /// Kernel evaluations of one point against selected rows of `x_train`.
    pub fn kernel_vector_at(
        &self,
        x_train: &DMatrix<f64>,
        indices: &[usize],
        x: &[f64],
    ) -> Result<DVector<f64>> {
        self.validate_points(x_train)?;
        if x.len() != x_train.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "point has dimension {}, training data has {}",
                x.len(),
                x_train.ncols()
            )));
        }
        let n = x_train.nrows();
        let q = x_train.ncols();
        let pts = row_major_points(x_train);
        let mut out = DVector::zeros(indices.len());
        for (r, &j) in indices.iter().enumerate() {
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, size: n });
            }
            out[r] = self.eval_unchecked(x, &pts[j * q..(j + 1) * q]);
        }
        Ok(out)
    }

    fn validate_points(&self, x: &DMatrix<f64>) -> Result<()> {
        self.validate()?;
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "point matrix must have at least one row and one column".into(),
            ));
        }
        if matches!(self, KernelSpec::SobolevFirstOrder) && x.ncols() != 1 {
            return Err(Error::DimensionMismatch(format!(
                "Sobolev kernel requires scalar inputs, got dimension {}",
                x.ncols()
            )));
        }
        Ok(())
    }
}

/// Copy the rows of a (column-major) nalgebra matrix into a contiguous
/// row-major buffer so each point is a slice.
fn row_major_points(x: &DMatrix<f64>) -> Vec<f64> {
    let (n, q) = (x.nrows(), x.ncols());
    let mut pts = vec![0.0; n * q];
    for j in 0..q {
        let col = x.column(j);
        for i in 0..n {
            pts[i * q + j] = col[i];
        }
    }
    pts
}

/// How an output matrix `M` of a decomposable kernel was built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMatrixKind {
    Identity {
        dim: usize,
    },
    /// `M_ij = exp(-gamma (tau_i - tau_j)^2)` for quantile levels tau.
    QuantileGaussian {
        gamma: f64,
        levels: Vec<f64>,
    },
    /// `M = (mu L_P + (1 - mu) I)^-1` with `L_P` the unnormalized graph
    /// Laplacian of the 0/1 adjacency `P`.
    GraphLaplacianMix {
        adjacency: Vec<Vec<f64>>,
        mu: f64,
    },
}

/// Symmetric positive semidefinite output matrix of a decomposable
/// matrix-valued kernel `K(x, x') = k(x, x') M`.
#[derive(Clone, Debug, PartialEq)]
pub struct OutputMatrix {
    pub matrix: DMatrix<f64>,
    pub provenance: OutputMatrixKind,
}

impl OutputMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn identity(dim: usize) -> Result<Self> {
        output_matrix(&OutputMatrixKind::Identity { dim })
    }

    pub fn quantile_gaussian(gamma: f64, levels: &[f64]) -> Result<Self> {
        output_matrix(&OutputMatrixKind::QuantileGaussian {
            gamma,
            levels: levels.to_vec(),
        })
    }

    pub fn graph_laplacian_mix(adjacency: &DMatrix<f64>, mu: f64) -> Result<Self> {
        let adj = (0..adjacency.nrows())
            .map(|i| adjacency.row(i).iter().copied().collect())
            .collect();
        output_matrix(&OutputMatrixKind::GraphLaplacianMix { adjacency: adj, mu })
    }
}

/// Build an output matrix from its provenance.
pub fn output_matrix(kind: &OutputMatrixKind) -> Result<OutputMatrix> {
    let matrix = match kind {
        OutputMatrixKind::Identity { dim } => {
            if *dim == 0 {
                return Err(Error::InvalidParameter(
                    "output dimension must be >= 1".into(),
                ));
            }
            DMatrix::identity(*dim, *dim)
        }
        OutputMatrixKind::QuantileGaussian { gamma, levels } => {
            if !(*gamma >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "quantile output matrix needs gamma >= 0, got {gamma}"
                )));
            }
            validate_levels(levels)?;
            let d = levels.len();
            DMatrix::from_fn(d, d, |i, j| {
                let dt = levels[i] - levels[j];
                (-gamma * dt * dt).exp()
            })
        }
        OutputMatrixKind::GraphLaplacianMix { adjacency, mu } => {
            let d = adjacency.len();
            if d == 0 {
                return Err(Error::InvalidParameter(
                    "adjacency must be non-empty".into(),
                ));
            }
            if !(0.0..=1.0).contains(mu) {
                return Err(Error::InvalidParameter(format!(
                    "mixing weight mu must lie in [0, 1], got {mu}"
                )));
            }
            for (i, row) in adjacency.iter().enumerate() {
                if row.len() != d {
                    return Err(Error::DimensionMismatch(
                        "adjacency matrix must be square".into(),
                    ));
                }
                for (j, &v) in row.iter().enumerate() {
                    if v != 0.0 && v != 1.0 {
                        return Err(Error::InvalidParameter(format!(
                            "adjacency entries must be 0 or 1, got {v} at ({i}, {j})"
                        )));
                    }
                    if i == j && v != 0.0 {
                        return Err(Error::InvalidParameter(
                            "adjacency diagonal must be zero".into(),
                        ));
                    }
                    if adjacency[j][i] != v {
                        return Err(Error::InvalidParameter(
                            "adjacency matrix must be symmetric".into(),
                        ));
                    }
                }
            }
            // M = (mu L + (1 - mu) I)^-1, L = diag(P 1) - P.
            let mut a = DMatrix::zeros(d, d);
            for i in 0..d {
                let deg: f64 = adjacency[i].iter().sum();
                for j in 0..d {
                    let l = if i == j { deg } else { -adjacency[i][j] };
                    a[(i, j)] = mu * l + if i == j { 1.0 - mu } else { 0.0 };
                }
            }
            match nalgebra::linalg::Cholesky::new(a) {
                Some(chol) => chol.inverse(),
                None => {
                    return Err(Error::SingularMatrix(
                        "mu L_P + (1 - mu) I is not positive definite (mu = 1 with a singular Laplacian)"
                            .into(),
                    ))
                }
            }
        }
    };
    Ok(OutputMatrix {
        matrix,
        provenance: kind.clone(),
    })
}

fn validate_levels(levels: &[f64]) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter(
            "need at least one quantile level".into(),
        ));
    }
    for w in levels.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidParameter(format!(
                "quantile levels must be strictly increasing, got {} then {}",
                w[0], w[1]
            )));
        }
    }
    if !(levels[0] > 0.0 && *levels.last().unwrap() < 1.0) {
        return Err(Error::InvalidParameter(
            "quantile levels must lie strictly inside (0, 1)".into(),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(n: usize, q: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, q, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn gaussian_same_point_is_one() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0 };
        let x = [0.3, -1.2, 4.0];
        assert_eq!(k.eval(&x, &x).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_hand_value() {
        // exp(-|0 - 2|^2 / 2) = e^-2
        let k = KernelSpec::Gaussian { bandwidth: 2.0 };
        let v = k.eval(&[0.0], &[2.0]).unwrap();
        assert_relative_eq!(v, (-2.0f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(v, 0.1353352832366127, max_relative = 1e-12);
    }

    #[test]
    fn polynomial_hand_value() {
        let k = KernelSpec::Polynomial {
            degree: 2,
            offset: 0.0,
        };
        assert_eq!(k.eval(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn sobolev_scalar_only() {
        let k = KernelSpec::SobolevFirstOrder;
        assert_eq!(k.eval(&[0.25], &[0.75]).unwrap(), 1.25);
        assert!(matches!(
            k.eval(&[0.1, 0.2], &[0.1, 0.2]),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn eval_rejects_bad_inputs() {
        let k = KernelSpec::Gaussian { bandwidth: 1.0 };
        assert!(matches!(
            k.eval(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch(_))
        ));
        let bad = KernelSpec::Gaussian { bandwidth: 0.0 };
        assert!(matches!(
            bad.eval(&[1.0], &[1.0]),
            Err(Error::InvalidParameter(_))
        ));
        let bad = KernelSpec::Gaussian { bandwidth: -2.0 };
        assert!(matches!(
            bad.eval(&[1.0], &[1.0]),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn gram_identical_rows_all_ones() {
        let k = KernelSpec::Gaussian { bandwidth: 0.7 };
        let x = DMatrix::from_fn(5, 3, |_, j| j as f64 * 0.1);
        let g = k.gram(&x).unwrap();
        for v in g.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn gram_single_point() {
        let k = KernelSpec::Polynomial {
            degree: 3,
            offset: 0.5,
        };
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let g = k.gram(&x).unwrap();
        assert_eq!(g.nrows(), 1);
        assert_eq!(g[(0, 0)], k.eval(&[1.0, 2.0], &[1.0, 2.0]).unwrap());
    }

    #[test]
    fn gram_orthonormal_rows_linear_kernel() {
        let k = KernelSpec::Polynomial {
            degree: 1,
            offset: 0.0,
        };
        let x = DMatrix::identity(2, 2);
        let g = k.gram(&x).unwrap();
        assert_eq!(g, DMatrix::identity(2, 2));
    }

    #[test]
    fn gram_exactly_symmetric() {
        for spec in [
            KernelSpec::Gaussian { bandwidth: 0.4 },
            KernelSpec::Polynomial {
                degree: 3,
                offset: 1.0,
            },
        ] {
            let x = random_matrix(23, 4, 9);
            let g = spec.gram(&x).unwrap();
            let diff = &g - g.transpose();
            assert_eq!(diff.abs().max(), 0.0);
        }
    }

    #[test]
    fn gram_psd_random() {
        let spec = KernelSpec::Gaussian { bandwidth: 1.3 };
        let x = random_matrix(40, 5, 11);
        let g = spec.gram(&x).unwrap();
        let eig = g.symmetric_eigen();
        let max = eig.eigenvalues.max();
        let min = eig.eigenvalues.min();
        assert!(min >= -1e-8 * max, "min eig {min}, max eig {max}");
    }

    #[test]
    fn gram_rows_matches_full() {
        let spec = KernelSpec::Gaussian { bandwidth: 0.9 };
        let x = random_matrix(17, 3, 5);
        let full = spec.gram(&x).unwrap();
        let all: Vec<usize> = (0..17).collect();
        assert_eq!(spec.gram_rows(&x, &all).unwrap(), full);

        // single row, 0 ulp against the full Gram row
        let row = spec.gram_rows(&x, &[2]).unwrap();
        for j in 0..17 {
            assert_eq!(row[(0, j)], full[(2, j)]);
        }

        let empty = spec.gram_rows(&x, &[]).unwrap();
        assert_eq!(empty.nrows(), 0);
        assert_eq!(empty.ncols(), 17);
    }

    #[test]
    fn gram_rows_out_of_range() {
        let spec = KernelSpec::Gaussian { bandwidth: 1.0 };
        let x = random_matrix(4, 2, 1);
        assert!(matches!(
            spec.gram_rows(&x, &[4]),
            Err(Error::IndexOutOfRange { index: 4, size: 4 })
        ));
    }

    #[test]
    fn gram_submatrix_consistent() {
        let spec = KernelSpec::Polynomial {
            degree: 2,
            offset: 0.3,
        };
        let x = random_matrix(12, 3, 7);
        let full = spec.gram(&x).unwrap();
        let rows = [1usize, 4, 9];
        let cols = [0usize, 2, 4, 11];
        let sub = spec.gram_submatrix(&x, &rows, &cols).unwrap();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                assert_eq!(sub[(a, b)], full[(i, j)]);
            }
        }
        let sym = spec.gram_submatrix(&x, &rows, &rows).unwrap();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in rows.iter().enumerate() {
                assert_eq!(sym[(a, b)], full[(i, j)]);
            }
        }
    }

    #[test]
    fn assumption_bound_gaussian_diagonal() {
        let spec = KernelSpec::Gaussian { bandwidth: 2.5 };
        let x = random_matrix(30, 6, 3);
        let g = spec.gram(&x).unwrap();
        let max_diag = (0..30).map(|i| g[(i, i)]).fold(f64::MIN, f64::max);
        assert_eq!(max_diag, 1.0);
    }

    #[test]
    fn quantile_output_matrix_gamma_zero_all_ones() {
        let m = OutputMatrix::quantile_gaussian(0.0, &[0.1, 0.5, 0.9]).unwrap();
        for v in m.matrix.iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn quantile_output_matrix_hand_value() {
        let m = OutputMatrix::quantile_gaussian(1.0, &[0.1, 0.9]).unwrap();
        assert_relative_eq!(m.matrix[(0, 1)], (-0.64f64).exp(), max_relative = 1e-15);
        assert_relative_eq!(m.matrix[(0, 1)], 0.5272924240430485, max_relative = 1e-12);
        assert_eq!(m.matrix[(0, 0)], 1.0);
    }

    #[test]
    fn quantile_levels_validation() {
        assert!(OutputMatrix::quantile_gaussian(1.0, &[0.5, 0.1]).is_err());
        assert!(OutputMatrix::quantile_gaussian(1.0, &[0.0, 0.5]).is_err());
        assert!(OutputMatrix::quantile_gaussian(1.0, &[0.5, 1.0]).is_err());
        assert!(OutputMatrix::quantile_gaussian(-1.0, &[0.1, 0.5]).is_err());
    }

    fn path_adjacency(d: usize) -> DMatrix<f64> {
        DMatrix::from_fn(d, d, |i, j| if i.abs_diff(j) == 1 { 1.0 } else { 0.0 })
    }

    #[test]
    fn laplacian_mix_mu_zero_is_identity() {
        let p = path_adjacency(4);
        let m = OutputMatrix::graph_laplacian_mix(&p, 0.0).unwrap();
        assert_eq!(m.matrix, DMatrix::identity(4, 4));
    }

    #[test]
    fn laplacian_mix_inverse_formula() {
        let p = path_adjacency(3);
        let mu = 0.4;
        let m = OutputMatrix::graph_laplacian_mix(&p, mu).unwrap();
        // (mu L + (1 - mu) I) M = I
        let mut a = DMatrix::zeros(3, 3);
        for i in 0..3 {
            let deg: f64 = p.row(i).iter().sum();
            for j in 0..3 {
                let l = if i == j { deg } else { -p[(i, j)] };
                a[(i, j)] = mu * l + if i == j { 1.0 - mu } else { 0.0 };
            }
        }
        let prod = a * &m.matrix;
        assert_relative_eq!(prod, DMatrix::identity(3, 3), epsilon = 1e-12);
    }

    #[test]
    fn laplacian_mix_mu_one_singular() {
        // L always annihilates the constant vector, so mu = 1 is singular.
        let p = path_adjacency(3);
        assert!(matches!(
            OutputMatrix::graph_laplacian_mix(&p, 1.0),
            Err(Error::SingularMatrix(_))
        ));
    }

    #[test]
    fn laplacian_mix_strictly_pd_below_one() {
        let p = path_adjacency(5);
        let m = OutputMatrix::graph_laplacian_mix(&p, 0.9).unwrap();
        let eig = m.matrix.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
    }

    #[test]
    fn laplacian_mix_rejects_bad_adjacency() {
        let mut p = path_adjacency(3);
        p[(0, 0)] = 1.0;
        assert!(OutputMatrix::graph_laplacian_mix(&p, 0.5).is_err());
        let mut p = path_adjacency(3);
        p[(0, 1)] = 0.5;
        assert!(OutputMatrix::graph_laplacian_mix(&p, 0.5).is_err());
        let mut p = path_adjacency(3);
        p[(0, 2)] = 1.0; // symmetric partner stays 0
        assert!(OutputMatrix::graph_laplacian_mix(&p, 0.5).is_err());
        let p = path_adjacency(3);
        assert!(OutputMatrix::graph_laplacian_mix(&p, 1.5).is_err());
    }

    #[test]
    fn output_matrices_psd() {
        let cases = vec![
            OutputMatrix::identity(4).unwrap(),
            OutputMatrix::quantile_gaussian(2.0, &[0.1, 0.3, 0.5, 0.7, 0.9]).unwrap(),
            OutputMatrix::graph_laplacian_mix(&path_adjacency(4), 0.7).unwrap(),
        ];
        for m in cases {
            let eig = m.matrix.clone().symmetric_eigen();
            assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn kronecker_block_structure() {
        // The decomposable Gram K (x) M has block (i, j) equal to K_ij * M.
        let spec = KernelSpec::Gaussian { bandwidth: 0.8 };
        let x = random_matrix(4, 2, 21);
        let k = spec.gram(&x).unwrap();
        let m = OutputMatrix::quantile_gaussian(1.5, &[0.2, 0.5, 0.8]).unwrap();
        let big = k.kronecker(&m.matrix);
        let d = 3;
        for i in 0..4 {
            for j in 0..4 {
                for a in 0..d {
                    for b in 0..d {
                        assert_eq!(big[(i * d + a, j * d + b)], k[(i, j)] * m.matrix[(a, b)]);
                    }
                }
            }
        }
    }
}
