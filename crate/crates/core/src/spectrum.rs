//! Spectral analysis of the normalized Gram matrix: critical radius,
//! statistical dimension, and certification of a sketch against them.
//!
//! For eigenvalues `mu_1 >= ... >= mu_n` of `K/n`, the critical radius
//! `delta_n` is the smallest positive root of
//! `psi(delta) = ((1/n) sum_i min(delta^2, mu_i))^(1/2) <= delta^2`, and the
//! statistical dimension is the first index whose eigenvalue falls at or
//! below `delta_n^2`. A sketch is certified for a constant `c` when it is a
//! near-isometry on the top `d_n` eigenvectors and has small operator norm on
//! the weighted tail. These are desk-scale diagnostics: the eigendecomposition
//! is dense and refuses `n > 5000`; nothing on the training path calls it.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::SketchOperator;

/// Largest problem size the dense spectral diagnostics accept.
pub const MAX_PROFILE_SIZE: usize = 5000;

/// Eigenstructure of `K/n` together with the critical radius and statistical
/// dimension.
#[derive(Clone, Debug)]
pub struct SpectralProfile {
    /// Eigenvalues of `K/n`, non-increasing, clamped to be nonnegative.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors, column i pairing with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
    /// Critical radius squared.
    pub delta_n_sq: f64,
    /// Statistical dimension, in 1..=n.
    pub d_n: usize,
}

impl SpectralProfile {
    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `psi(delta) = ((1/n) sum_i min(delta^2, mu_i))^(1/2)`.
    pub fn psi(&self, delta: f64) -> f64 {
        psi(&self.eigenvalues, delta)
    }

    /// Top block of eigenvectors (n x d_n).
    pub fn u1(&self) -> DMatrix<f64> {
        self.eigenvectors.columns(0, self.d_n).into_owned()
    }

    /// Tail block of eigenvectors (n x (n - d_n)).
    pub fn u2(&self) -> DMatrix<f64> {
        let n = self.n();
        self.eigenvectors
            .columns(self.d_n, n - self.d_n)
            .into_owned()
    }

    /// Square roots of the tail eigenvalues `mu_{d_n+1}, ..., mu_n`.
    pub fn d2_sqrt(&self) -> Vec<f64> {
        self.eigenvalues[self.d_n..]
            .iter()
            .map(|m| m.sqrt())
            .collect()
    }
}

fn psi(mu: &[f64], delta: f64) -> f64 {
    let d2 = delta * delta;
    let sum: f64 = mu.iter().map(|&m| m.min(d2)).sum();
    (sum / mu.len() as f64).sqrt()
}

/// Eigendecompose `K/n` and locate the critical radius by bisection.
///
/// The bisection maintains `psi(lo) > lo^2` and `psi(hi) <= hi^2` and returns
/// the upper end, so the reported radius itself satisfies the defining
/// inequality. Eigenvalues in `[-1e-10 mu_1, 0)` are clamped to zero; anything
/// below `-1e-6 mu_1` is rejected as a non-PSD input.
pub fn spectral_profile(k: &DMatrix<f64>) -> Result<SpectralProfile> {
    let n = k.nrows();
    if n == 0 || k.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {} x {}",
            n,
            k.ncols()
        )));
    }
    if n > MAX_PROFILE_SIZE {
        return Err(Error::InvalidParameter(format!(
            "spectral diagnostics are limited to n <= {MAX_PROFILE_SIZE}, got {n}"
        )));
    }
    let scale = k.abs().max();
    let asym = (k - k.transpose()).abs().max();
    if asym > 1e-8 * (1.0 + scale) {
        return Err(Error::InvalidParameter(format!(
            "matrix is not symmetric (max |K - K^T| = {asym:.3e})"
        )));
    }

    let eig = (k / n as f64).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("eigenvalues are finite")
    });
    let mut mu: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }

    let mu1 = mu[0].max(0.0);
    for m in mu.iter_mut() {
        if *m < 0.0 {
            if *m < -1e-6 * mu1.max(f64::MIN_POSITIVE) {
                return Err(Error::Numerical(format!(
                    "eigenvalue {m:.3e} is too negative for a PSD Gram matrix (mu_1 = {mu1:.3e})"
                )));
            }
            *m = 0.0;
        }
    }

    let delta_n = if mu1 <= 0.0 {
        0.0
    } else {
        let mut lo = 0.0f64;
        let mut hi = mu1.sqrt().max(1.0);
        debug_assert!(psi(&mu, hi) <= hi * hi);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if psi(&mu, mid) <= mid * mid {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    let delta_n_sq = delta_n * delta_n;
    let d_n = mu
        .iter()
        .position(|&m| m <= delta_n_sq)
        .map(|j| j + 1)
        .unwrap_or(n);

    Ok(SpectralProfile {
        eigenvalues: mu,
        eigenvectors: vectors,
        delta_n_sq,
        d_n,
    })
}

/// Outcome of the two spectral conditions for a sketch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KSatisfiability {
    pub holds: bool,
    /// `|| (S U_1)^T S U_1 - I ||_op`, must be <= 1/2.
    pub lhs1: f64,
    /// `|| S U_2 D_2^(1/2) ||_op`, must be <= c * delta_n.
    pub lhs2: f64,
}

/// Check the two conditions for a sketch operator against a profile.
pub fn k_satisfiable(
    sketch: &SketchOperator,
    profile: &SpectralProfile,
    c: f64,
) -> Result<KSatisfiability> {
    if sketch.n() != profile.n() {
        return Err(Error::DimensionMismatch(format!(
            "sketch has n = {}, profile has n = {}",
            sketch.n(),
            profile.n()
        )));
    }
    if profile.d_n > sketch.s() {
        log::warn!(
            "statistical dimension d_n = {} exceeds sketch size s = {}; the isometry condition is unlikely to hold",
            profile.d_n,
            sketch.s()
        );
    }
    k_satisfiable_dense(&sketch.dense(), profile, c)
}

/// Same check for an explicit (possibly synthetic) `s x n` matrix.
pub fn k_satisfiable_dense(
    s_mat: &DMatrix<f64>,
    profile: &SpectralProfile,
    c: f64,
) -> Result<KSatisfiability> {
    let n = profile.n();
    if s_mat.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "sketch matrix has {} columns, profile has n = {}",
            s_mat.ncols(),
            n
        )));
    }
    let su1 = s_mat * profile.u1();
    let m1 = su1.transpose() * &su1 - DMatrix::identity(profile.d_n, profile.d_n);
    let lhs1 = operator_norm(&m1);

    let lhs2 = if profile.d_n < n {
        let mut su2 = s_mat * profile.u2();
        let d2s = profile.d2_sqrt();
        for (j, w) in d2s.iter().enumerate() {
            su2.column_mut(j).scale_mut(*w);
        }
        operator_norm(&su2)
    } else {
        0.0
    };

    let delta_n = profile.delta_n_sq.sqrt();
    Ok(KSatisfiability {
        holds: lhs1 <= 0.5 && lhs2 <= c * delta_n,
        lhs1,
        lhs2,
    })
}

fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().max()
}

/// Certification constant for a p-sparsified sketch:
/// `c(p) = (2 / sqrt(p)) (1 + sqrt(log 5)) + 1`, decreasing in p.
pub fn theorem_c(p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "p must lie in (0, 1], got {p}"
        )));
    }
    Ok(2.0 / p.sqrt() * (1.0 + (5.0f64).ln().sqrt()) + 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use crate::sketch::SketchKind;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_psd(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        &a * a.transpose()
    }

    /// Brute-force grid oracle: smallest delta on a 1e-6 grid with
    /// psi(delta) <= delta^2.
    fn grid_radius(mu: &[f64]) -> f64 {
        let hi = mu[0].sqrt().max(1.0);
        let step = 1e-6;
        let mut delta = step;
        while delta <= hi {
            if psi(mu, delta) <= delta * delta {
                return delta;
            }
            delta += step;
        }
        hi
    }

    #[test]
    fn identity_spectrum_fixed_point() {
        let n = 12;
        let k = DMatrix::identity(n, n) * n as f64;
        let prof = spectral_profile(&k).unwrap();
        assert_eq!(prof.delta_n_sq, 1.0);
        assert_eq!(prof.d_n, 1);
        for m in &prof.eigenvalues {
            assert_relative_eq!(*m, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_matrix_degenerate() {
        let k = DMatrix::zeros(1, 1);
        let prof = spectral_profile(&k).unwrap();
        assert_eq!(prof.delta_n_sq, 0.0);
        assert_eq!(prof.d_n, 1);
    }

    #[test]
    fn bisection_matches_grid_oracle() {
        for seed in 0..5 {
            let k = random_psd(8, seed);
            let prof = spectral_profile(&k).unwrap();
            let oracle = grid_radius(&prof.eigenvalues);
            let delta = prof.delta_n_sq.sqrt();
            assert!(
                (delta - oracle).abs() <= 2e-6,
                "seed {seed}: bisection {delta}, grid {oracle}"
            );
        }
    }

    #[test]
    fn radius_brackets_the_inequality() {
        let k = random_psd(10, 3);
        let prof = spectral_profile(&k).unwrap();
        let delta = prof.delta_n_sq.sqrt();
        assert!(prof.psi(delta) <= delta * delta);
        let below = delta * (1.0 - 1e-6);
        assert!(prof.psi(below) > below * below);
    }

    #[test]
    fn psi_subroot_property() {
        let k = random_psd(9, 11);
        let prof = spectral_profile(&k).unwrap();
        let mut prev_psi = 0.0;
        let mut prev_ratio = f64::INFINITY;
        for i in 1..200 {
            let delta = i as f64 * 0.01;
            let v = prof.psi(delta);
            assert!(v >= prev_psi - 1e-15, "psi must be nondecreasing");
            let ratio = v / delta;
            assert!(
                ratio <= prev_ratio + 1e-12,
                "psi(d)/d must be nonincreasing"
            );
            prev_psi = v;
            prev_ratio = ratio;
        }
    }

    #[test]
    fn reconstruction_and_orthonormality() {
        let n = 15;
        let k = random_psd(n, 8);
        let prof = spectral_profile(&k).unwrap();
        let u = &prof.eigenvectors;
        let gram_err = (u.transpose() * u - DMatrix::identity(n, n)).abs().max();
        assert!(gram_err <= 1e-8);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(prof.eigenvalues.clone()));
        let rebuilt = u * d * u.transpose();
        let target = &k / n as f64;
        let rel = (&rebuilt - &target).norm() / target.norm();
        assert!(rel <= 1e-8, "relative reconstruction error {rel}");
    }

    #[test]
    fn rejects_asymmetric_and_indefinite() {
        let mut k = random_psd(5, 2);
        k[(0, 1)] += 1.0;
        assert!(matches!(
            spectral_profile(&k),
            Err(Error::InvalidParameter(_))
        ));

        // strongly negative eigenvalue
        let mut k = DMatrix::identity(4, 4);
        k[(0, 0)] = -1.0;
        assert!(matches!(spectral_profile(&k), Err(Error::Numerical(_))));
    }

    #[test]
    fn clamps_tiny_negatives() {
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let q = a.qr().q();
        let evals = [2.0, 1.0, 0.5, -1e-13];
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&evals));
        let k = &q * d * q.transpose() * (n as f64);
        let k = (&k + k.transpose()) * 0.5;
        let prof = spectral_profile(&k).unwrap();
        assert!(prof.eigenvalues.iter().all(|m| *m >= 0.0));
    }

    #[test]
    fn identity_sketch_satisfies() {
        let spec = KernelSpec::Gaussian { bandwidth: 0.05 };
        let n = 40;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let k = spec.gram(&x).unwrap();
        let prof = spectral_profile(&k).unwrap();
        let eye = DMatrix::identity(n, n);
        let out = k_satisfiable_dense(&eye, &prof, 1.0).unwrap();
        assert!(out.lhs1 <= 1e-10);
        // lhs2 = sqrt(mu_{d_n+1}) <= delta_n by the definition of d_n
        let expected = prof.eigenvalues[prof.d_n].sqrt();
        assert_relative_eq!(out.lhs2, expected, max_relative = 1e-8);
        assert!(out.holds);
    }

    #[test]
    fn zero_sketch_fails() {
        let k = random_psd(10, 5);
        let prof = spectral_profile(&k).unwrap();
        let zero = DMatrix::zeros(4, 10);
        let out = k_satisfiable_dense(&zero, &prof, 10.0).unwrap();
        assert_relative_eq!(out.lhs1, 1.0, epsilon = 1e-12);
        assert!(!out.holds);
    }

    #[test]
    fn generous_gaussian_sketch_usually_satisfies() {
        // At s = 24 d_n the isometry condition holds with margin for most
        // seeds; this exercises the full operator path end to end.
        let spec = KernelSpec::Gaussian { bandwidth: 0.02 };
        let n = 200;
        let x = DMatrix::from_fn(n, 1, |i, _| i as f64 / (n - 1) as f64);
        let k = spec.gram(&x).unwrap();
        let prof = spectral_profile(&k).unwrap();
        let c = theorem_c(1.0).unwrap();
        let s = 24 * prof.d_n;
        let mut holds = 0;
        for seed in 0..20 {
            let op = SketchOperator::generate(SketchKind::Gaussian, s, n, seed).unwrap();
            if k_satisfiable(&op, &prof, c).unwrap().holds {
                holds += 1;
            }
        }
        assert!(holds >= 15, "only {holds}/20 seeds satisfied");
    }

    #[test]
    fn theorem_c_values() {
        assert_relative_eq!(theorem_c(1.0).unwrap(), 5.5372, epsilon = 1e-3);
        assert_relative_eq!(theorem_c(0.25).unwrap(), 10.0744, epsilon = 1e-3);
        assert_relative_eq!(
            theorem_c(1.0).unwrap(),
            2.0 * (1.0 + (5.0f64).ln().sqrt()) + 1.0,
            max_relative = 1e-15
        );
        let mut prev = f64::INFINITY;
        for i in 1..=20 {
            let p = i as f64 / 20.0;
            let c = theorem_c(p).unwrap();
            assert!(c < prev);
            prev = c;
        }
        assert!(theorem_c(0.0).is_err());
        assert!(theorem_c(-0.5).is_err());
    }

    #[test]
    fn polynomial_kernel_small_statistical_dimension() {
        // Small-scale inputs keep the spectrum dominated by the low-degree
        // block, the regime where d_n stays near the kernel's effective rank.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = DMatrix::from_fn(120, 5, |_, _| (rng.random::<f64>() - 0.5) * 0.1);
        for degree in [1u32, 2, 3] {
            let spec = KernelSpec::Polynomial {
                degree,
                offset: 1.0,
            };
            let k = spec.gram(&x).unwrap();
            let prof = spectral_profile(&k).unwrap();
            assert!(
                prof.d_n <= degree as usize + 1,
                "degree {degree}: d_n = {}",
                prof.d_n
            );
        }
    }
}
