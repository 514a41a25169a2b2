//! Sketch operators and sketched Gram products.
//!
//! A sketch is an `s x n` random matrix applied to the representer
//! coefficients of a kernel machine. p-sparsified Rademacher (pSR) and
//! Gaussian (pSG) sketches have i.i.d. entries that are Bernoulli(p)-masked
//! sign/normal variables scaled by `1/sqrt(s p)`. Because whole columns are
//! null with probability `(1 - p)^s`, such a sketch factors as
//! `S = S_SG * S_SS`: a dense `s x s'` mixing matrix times a sub-sampling of
//! `s'` coordinates. Gram products then touch only `s'` rows of the Gram
//! matrix, which is the entire point — `S K` and `S K S^T` are computed
//! without materializing `K`.
//!
//! Generation is deterministic given the seed. The generator is ChaCha8
//! (fixed for the lifetime of this crate; counter-based, so streams are
//! reproducible across platforms), and the draw order is part of the
//! contract:
//! - pSR/pSG: for each column `j = 0..n`, draw `s` mask uniforms, then `s`
//!   values (signs or normals) for that column;
//! - Gaussian/Rademacher: for each column, `s` values;
//! - SubSampling: one call to index sampling of `s` distinct columns, stored
//!   sorted;
//! - Accumulation: per summand, an index sample of `s` columns followed by
//!   `s` sign draws;
//! - CountSketch: for each column, a row index draw then a sign draw.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::KernelSpec;

/// Sketch family, with per-family parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchKind {
    /// Bernoulli(p)-masked Rademacher entries scaled by `1/sqrt(s p)`.
    PSparsifiedRademacher { p: f64 },
    /// Bernoulli(p)-masked standard normal entries scaled by `1/sqrt(s p)`.
    PSparsifiedGaussian { p: f64 },
    /// Dense i.i.d. `N(0, 1/s)` entries (the p = 1 special case of pSG).
    Gaussian,
    /// Dense i.i.d. `+/- 1/sqrt(s)` entries.
    Rademacher,
    /// `s` distinct uniform coordinates scaled by `sqrt(n/s)`.
    SubSampling,
    /// Sum of `m` independent signed sub-sampling matrices, scaled so that
    /// `E[S^T S] = I`.
    Accumulation { m: u32 },
    /// One `+/-1` per column at a uniformly chosen row.
    CountSketch,
}

impl SketchKind {
    pub fn label(&self) -> String {
        match self {
            SketchKind::PSparsifiedRademacher { p } => format!("pSR(p={p})"),
            SketchKind::PSparsifiedGaussian { p } => format!("pSG(p={p})"),
            SketchKind::Gaussian => "gaussian".into(),
            SketchKind::Rademacher => "rademacher".into(),
            SketchKind::SubSampling => "sub_sampling".into(),
            SketchKind::Accumulation { m } => format!("accumulation(m={m})"),
            SketchKind::CountSketch => "count_sketch".into(),
        }
    }
}

/// Self-describing record from which an operator can be regenerated exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SketchRecord {
    pub kind: SketchKind,
    pub s: usize,
    pub n: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
enum SketchRepr {
    /// `S = mixing * S_SS` where `S_SS` selects `indices` (strictly
    /// increasing). `mixing` is `s x s'`.
    Decomposed {
        mixing: DMatrix<f64>,
        indices: Vec<usize>,
    },
    /// Column `j` has a single entry `sign_of[j]` at row `row_of[j]`.
    ColumnHash {
        row_of: Vec<usize>,
        sign_of: Vec<f64>,
    },
}

/// A generated sketch operator. Immutable after construction; application is
/// read-only and thread-safe.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchOperator {
    record: SketchRecord,
    repr: SketchRepr,
}

impl SketchOperator {
    /// Generate the operator for `kind` with `s` rows over `n` columns,
    /// deterministically from `seed`.
    pub fn generate(kind: SketchKind, s: usize, n: usize, seed: u64) -> Result<Self> {
        if s == 0 {
            return Err(Error::InvalidParameter("sketch size s must be >= 1".into()));
        }
        if s >= n {
            return Err(Error::InvalidParameter(format!(
                "sketch size s = {s} must be smaller than ambient size n = {n}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let repr = match kind {
            SketchKind::PSparsifiedRademacher { p } => {
                check_p(p)?;
                sparsified_repr(&mut rng, s, n, p, false)?
            }
            SketchKind::PSparsifiedGaussian { p } => {
                check_p(p)?;
                sparsified_repr(&mut rng, s, n, p, true)?
            }
            SketchKind::Gaussian => {
                let scale = 1.0 / (s as f64).sqrt();
                let mut mixing = DMatrix::zeros(s, n);
                for j in 0..n {
                    for i in 0..s {
                        let g: f64 = rng.sample(StandardNormal);
                        mixing[(i, j)] = g * scale;
                    }
                }
                SketchRepr::Decomposed {
                    mixing,
                    indices: (0..n).collect(),
                }
            }
            SketchKind::Rademacher => {
                let scale = 1.0 / (s as f64).sqrt();
                let mut mixing = DMatrix::zeros(s, n);
                for j in 0..n {
                    for i in 0..s {
                        mixing[(i, j)] = if rng.random::<bool>() { scale } else { -scale };
                    }
                }
                SketchRepr::Decomposed {
                    mixing,
                    indices: (0..n).collect(),
                }
            }
            SketchKind::SubSampling => {
                let mut indices: Vec<usize> = index_sample(&mut rng, n, s).into_vec();
                indices.sort_unstable();
                let scale = (n as f64 / s as f64).sqrt();
                let mut mixing = DMatrix::zeros(s, s);
                for r in 0..s {
                    mixing[(r, r)] = scale;
                }
                SketchRepr::Decomposed { mixing, indices }
            }
            SketchKind::Accumulation { m } => {
                if m < 1 {
                    return Err(Error::InvalidParameter(
                        "accumulation needs m >= 1 summands".into(),
                    ));
                }
                // Per summand: a signed sub-sampling matrix. Entries are
                // scaled sqrt(n/(s m)) so that E[S^T S] = I.
                let scale = (n as f64 / (s as f64 * m as f64)).sqrt();
                let mut draws: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(m as usize);
                for _ in 0..m {
                    let cols: Vec<usize> = index_sample(&mut rng, n, s).into_vec();
                    let signs: Vec<f64> = (0..s)
                        .map(|_| if rng.random::<bool>() { scale } else { -scale })
                        .collect();
                    draws.push((cols, signs));
                }
                let mut indices: Vec<usize> =
                    draws.iter().flat_map(|(c, _)| c.iter().copied()).collect();
                indices.sort_unstable();
                indices.dedup();
                let pos = |j: usize| indices.binary_search(&j).unwrap();
                let mut mixing = DMatrix::zeros(s, indices.len());
                for (cols, signs) in &draws {
                    for r in 0..s {
                        mixing[(r, pos(cols[r]))] += signs[r];
                    }
                }
                SketchRepr::Decomposed { mixing, indices }
            }
            SketchKind::CountSketch => {
                let mut row_of = Vec::with_capacity(n);
                let mut sign_of = Vec::with_capacity(n);
                for _ in 0..n {
                    row_of.push(rng.random_range(0..s));
                    sign_of.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
                }
                SketchRepr::ColumnHash { row_of, sign_of }
            }
        };
        Ok(SketchOperator {
            record: SketchRecord { kind, s, n, seed },
            repr,
        })
    }

    pub fn from_record(record: &SketchRecord) -> Result<Self> {
        Self::generate(record.kind.clone(), record.s, record.n, record.seed)
    }

    pub fn record(&self) -> &SketchRecord {
        &self.record
    }

    pub fn kind(&self) -> &SketchKind {
        &self.record.kind
    }

    pub fn s(&self) -> usize {
        self.record.s
    }

    pub fn n(&self) -> usize {
        self.record.n
    }

    /// Decomposed form `(S_SG, indices)`, when the operator has one.
    pub fn decomposed(&self) -> Option<(&DMatrix<f64>, &[usize])> {
        match &self.repr {
            SketchRepr::Decomposed { mixing, indices } => Some((mixing, indices)),
            SketchRepr::ColumnHash { .. } => None,
        }
    }

    /// Number of columns with at least one nonzero entry.
    pub fn active_columns(&self) -> usize {
        match &self.repr {
            SketchRepr::Decomposed { indices, .. } => indices.len(),
            SketchRepr::ColumnHash { row_of, .. } => row_of.len(),
        }
    }

    /// Materialize the dense `s x n` matrix. Diagnostic/testing path; the
    /// training paths never call it.
    pub fn dense(&self) -> DMatrix<f64> {
        let (s, n) = (self.record.s, self.record.n);
        let mut out = DMatrix::zeros(s, n);
        match &self.repr {
            SketchRepr::Decomposed { mixing, indices } => {
                for (pos, &j) in indices.iter().enumerate() {
                    for i in 0..s {
                        out[(i, j)] = mixing[(i, pos)];
                    }
                }
            }
            SketchRepr::ColumnHash { row_of, sign_of } => {
                for j in 0..n {
                    out[(row_of[j], j)] = sign_of[j];
                }
            }
        }
        out
    }

    /// `S k_x` for a single kernel vector, using the decomposed form when
    /// available (only `s'` kernel evaluations needed).
    pub fn apply_kernel_vector(
        &self,
        spec: &KernelSpec,
        x_train: &DMatrix<f64>,
        x: &[f64],
    ) -> Result<DVector<f64>> {
        self.check_n(x_train.nrows())?;
        match &self.repr {
            SketchRepr::Decomposed { mixing, indices } => {
                let kx = spec.kernel_vector_at(x_train, indices, x)?;
                Ok(mixing * kx)
            }
            SketchRepr::ColumnHash { row_of, sign_of } => {
                let kx = spec.kernel_vector(x_train, x)?;
                let mut out = DVector::zeros(self.record.s);
                for j in 0..self.record.n {
                    out[row_of[j]] += sign_of[j] * kx[j];
                }
                Ok(out)
            }
        }
    }

    /// `S K` as an `s x n` matrix. With a decomposed operator this is
    /// `S_SG * K[indices, :]` and never forms `K`.
    pub fn sketch_gram_left(&self, spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_n(x.nrows())?;
        match &self.repr {
            SketchRepr::Decomposed { mixing, indices } => {
                let rows = spec.gram_rows(x, indices)?;
                Ok(mixing * rows)
            }
            SketchRepr::ColumnHash { row_of, sign_of } => {
                let n = self.record.n;
                let mut out = DMatrix::zeros(self.record.s, n);
                let block = 256;
                let mut start = 0;
                while start < n {
                    let end = (start + block).min(n);
                    let idx: Vec<usize> = (start..end).collect();
                    let rows = spec.gram_rows(x, &idx)?;
                    for (local, j) in (start..end).enumerate() {
                        let r = row_of[j];
                        let sgn = sign_of[j];
                        for c in 0..n {
                            out[(r, c)] += sgn * rows[(local, c)];
                        }
                    }
                    start = end;
                }
                Ok(out)
            }
        }
    }

    /// `S K S^T` as a symmetric `s x s` matrix (symmetrized after
    /// computation). The decomposed path touches only the `s' x s'` Gram
    /// block of the active columns.
    pub fn sketch_gram_both(&self, spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_n(x.nrows())?;
        let raw = match &self.repr {
            SketchRepr::Decomposed { mixing, indices } => {
                let g = spec.gram_submatrix(x, indices, indices)?;
                let tmp = mixing * g;
                tmp * mixing.transpose()
            }
            SketchRepr::ColumnHash { row_of, sign_of } => {
                let sk = self.sketch_gram_left(spec, x)?;
                let mut out = DMatrix::zeros(self.record.s, self.record.s);
                for j in 0..self.record.n {
                    let r = row_of[j];
                    let sgn = sign_of[j];
                    for i in 0..self.record.s {
                        out[(i, r)] += sgn * sk[(i, j)];
                    }
                }
                out
            }
        };
        Ok(symmetrize(raw))
    }

    fn check_n(&self, rows: usize) -> Result<()> {
        if rows != self.record.n {
            return Err(Error::DimensionMismatch(format!(
                "sketch expects n = {}, data has {} rows",
                self.record.n, rows
            )));
        }
        Ok(())
    }
}

fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let at = a.transpose();
    (a + at) * 0.5
}

fn check_p(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "sparsity parameter p must lie in (0, 1], got {p}"
        )));
    }
    Ok(())
}

/// Column-by-column generation of a p-sparsified sketch, keeping only the
/// non-null columns. `gaussian` picks normal values, otherwise Rademacher.
fn sparsified_repr(
    rng: &mut ChaCha8Rng,
    s: usize,
    n: usize,
    p: f64,
    gaussian: bool,
) -> Result<SketchRepr> {
    let scale = 1.0 / (s as f64 * p).sqrt();
    let mut indices = Vec::new();
    let mut columns: Vec<f64> = Vec::new();
    let mut mask = vec![false; s];
    let mut col = vec![0.0f64; s];
    for j in 0..n {
        let mut any = false;
        for b in mask.iter_mut() {
            *b = rng.random::<f64>() < p;
            any |= *b;
        }
        for i in 0..s {
            let value = if gaussian {
                rng.sample::<f64, _>(StandardNormal)
            } else if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            };
            col[i] = if mask[i] { value * scale } else { 0.0 };
        }
        if any {
            indices.push(j);
            columns.extend_from_slice(&col);
        }
    }
    if indices.is_empty() {
        return Err(Error::DegenerateSketch(format!(
            "all {n} columns were masked out (s' = 0); retry with a new seed"
        )));
    }
    let s_prime = indices.len();
    let mixing = DMatrix::from_fn(s, s_prime, |i, c| columns[c * s + i]);
    Ok(SketchRepr::Decomposed { mixing, indices })
}

/// `E[s'] = n (1 - (1 - p)^s)`, the expected number of non-null columns of a
/// p-sparsified sketch.
pub fn expected_active_columns(s: usize, n: usize, p: f64) -> f64 {
    n as f64 * (1.0 - (1.0 - p).powi(s as i32))
}

/// Expected fraction of active columns when the sketch size is set to
/// `c0_dn / p^2`: the quantity minimized over p when picking the sparsity.
pub fn sparsity_objective(c0_dn: f64, p: f64) -> f64 {
    // (1 - p)^(c/p^2) through the log for accuracy; p = 1 gives exactly 1.
    1.0 - ((c0_dn / (p * p)) * (-p).ln_1p()).exp()
}

/// Minimize `1 - (1 - p)^(c0_dn / p^2)` over `p` in (0, 1] by a coarse grid
/// followed by golden-section refinement. The minimizer is about 0.7,
/// independent of `c0_dn`.
pub fn optimal_sparsity(c0_dn: f64) -> Result<f64> {
    if !(c0_dn > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "c0_dn must be positive, got {c0_dn}"
        )));
    }
    let f = |p: f64| sparsity_objective(c0_dn, p);
    let grid = 1000;
    let mut best = (f(1.0), 1.0);
    for i in 1..=grid {
        let p = i as f64 / grid as f64;
        let v = f(p);
        if v < best.0 {
            best = (v, p);
        }
    }
    let step = 1.0 / grid as f64;
    let mut lo = (best.1 - step).max(1e-9);
    let mut hi = (best.1 + step).min(1.0);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-9 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Random Fourier feature baseline for the Gaussian kernel: paired
/// cosine/sine features with frequencies drawn `N(0, 2/bandwidth I)`, so that
/// `E[z(x)^T z(x')] = k(x, x')` and `z(x)^T z(x) = 1`.
pub fn rff_features(
    spec: &KernelSpec,
    d_rff: usize,
    x: &DMatrix<f64>,
    seed: u64,
) -> Result<DMatrix<f64>> {
    let bandwidth = match spec {
        KernelSpec::Gaussian { bandwidth } => *bandwidth,
        other => {
            return Err(Error::InvalidParameter(format!(
                "random Fourier features require a Gaussian kernel, got {other:?}"
            )))
        }
    };
    spec.validate()?;
    if d_rff == 0 || !d_rff.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "d_rff must be a positive even number, got {d_rff}"
        )));
    }
    let (n, q) = (x.nrows(), x.ncols());
    let half = d_rff / 2;
    let sd = (2.0 / bandwidth).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut freqs = DMatrix::zeros(q, half);
    for t in 0..half {
        for r in 0..q {
            let g: f64 = rng.sample(StandardNormal);
            freqs[(r, t)] = g * sd;
        }
    }
    let proj = x * &freqs; // n x half
    let norm = 1.0 / (half as f64).sqrt();
    let mut z = DMatrix::zeros(n, d_rff);
    for i in 0..n {
        for t in 0..half {
            let a = proj[(i, t)];
            z[(i, 2 * t)] = a.cos() * norm;
            z[(i, 2 * t + 1)] = a.sin() * norm;
        }
    }
    Ok(z)
}
