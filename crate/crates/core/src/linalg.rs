//! Regularized symmetric solves, Kronecker-structured inversion and the
//! finite-sample bound calculator.
//!
//! Dense factorizations are backed by LAPACK. A solve of `(G + alpha I) X = B`
//! first attempts a Cholesky factorization; if that fails (the shifted matrix
//! can be numerically semidefinite for tiny `alpha`) it falls back to a
//! symmetric eigendecomposition pseudo-solve where eigenvalues below
//! `1e-12 * lambda_max` are treated as zero.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use ndarray_linalg::{Cholesky, Diag, Eigh, SolveTriangular, UPLO};

use crate::error::{Error, Result};
use crate::kernels::{GramMatrix, KernelSpec};
use crate::sample::SampleSet;

const SYMMETRY_TOL: f64 = 1e-12;
const EIGEN_CUTOFF: f64 = 1e-12;

fn check_square_symmetric(g: ArrayView2<'_, f64>) -> Result<()> {
    let (n, m) = g.dim();
    if n != m {
        return Err(Error::SizeMismatch { expected: n, got: m });
    }
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((g[[i, j]] - g[[j, i]]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(max_asym));
    }
    Ok(())
}

/// Symmetric eigendecomposition `G = V diag(w) V^T`, eigenvalues ascending.
pub fn symmetric_eigen(g: ArrayView2<'_, f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    check_square_symmetric(g)?;
    let (vals, vecs) = g.to_owned().eigh(UPLO::Lower)?;
    Ok((vals, vecs))
}

enum FactorKind {
    /// Cholesky factor of `G + alpha I`; both triangles kept for solves.
    Cholesky { lower: Array2<f64>, upper: Array2<f64> },
    /// Eigendecomposition pseudo-solve of `G + alpha I`.
    Eigen { vectors: Array2<f64>, inv_values: Array1<f64> },
}

/// A reusable factorization of `G + alpha I` permitting repeated solves.
pub struct SymmetricFactorization {
    n: usize,
    alpha: f64,
    kind: FactorKind,
}

impl SymmetricFactorization {
    /// Factorize `G + alpha I` for a square symmetric `G` and `alpha >= 0`.
    ///
    /// Errors if `G` is not symmetric to `1e-12`, or if `alpha == 0` and the
    /// matrix is numerically singular.
    pub fn new(g: ArrayView2<'_, f64>, alpha: f64) -> Result<Self> {
        check_square_symmetric(g)?;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::ParameterRange {
                name: "alpha",
                value: alpha,
                range: "[0, inf)",
            });
        }
        let n = g.nrows();
        let mut shifted = g.to_owned();
        for i in 0..n {
            shifted[[i, i]] += alpha;
        }
        match shifted.cholesky(UPLO::Lower) {
            Ok(lower) => {
                let upper = lower.t().to_owned();
                Ok(Self {
                    n,
                    alpha,
                    kind: FactorKind::Cholesky { lower, upper },
                })
            }
            Err(_) => {
                let (vals, vectors) = shifted.eigh(UPLO::Lower)?;
                let lambda_max = vals.iter().cloned().fold(0.0f64, f64::max);
                let cutoff = EIGEN_CUTOFF * lambda_max;
                if alpha == 0.0 && vals.iter().any(|&w| w <= cutoff) {
                    return Err(Error::SingularSystem);
                }
                let inv_values = vals.mapv(|w| if w > cutoff { 1.0 / w } else { 0.0 });
                Ok(Self {
                    n,
                    alpha,
                    kind: FactorKind::Eigen { vectors, inv_values },
                })
            }
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn solve_vec(&self, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if b.len() != self.n {
            return Err(Error::SizeMismatch {
                expected: self.n,
                got: b.len(),
            });
        }
        match &self.kind {
            FactorKind::Cholesky { lower, upper } => {
                let y = lower.solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())?;
                let x = upper.solve_triangular(UPLO::Upper, Diag::NonUnit, &y)?;
                Ok(x)
            }
            FactorKind::Eigen { vectors, inv_values } => {
                let mut coeffs = vectors.t().dot(&b);
                coeffs *= inv_values;
                Ok(vectors.dot(&coeffs))
            }
        }
    }

    pub fn solve_mat(&self, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if b.nrows() != self.n {
            return Err(Error::SizeMismatch {
                expected: self.n,
                got: b.nrows(),
            });
        }
        match &self.kind {
            FactorKind::Cholesky { lower, upper } => {
                let y = lower.solve_triangular(UPLO::Lower, Diag::NonUnit, &b.to_owned())?;
                let x = upper.solve_triangular(UPLO::Upper, Diag::NonUnit, &y)?;
                Ok(x)
            }
            FactorKind::Eigen { vectors, inv_values } => {
                let mut coeffs = vectors.t().dot(&b);
                for (mut row, &iv) in coeffs.axis_iter_mut(Axis(0)).zip(inv_values.iter()) {
                    row *= iv;
                }
                Ok(vectors.dot(&coeffs))
            }
        }
    }
}

/// One-shot solve of `(G + alpha I) X = B`.
pub fn solve_regularized(
    g: ArrayView2<'_, f64>,
    alpha: f64,
    b: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    SymmetricFactorization::new(g, alpha)?.solve_mat(b)
}

/// One-shot solve with a vector right-hand side.
pub fn solve_regularized_vec(
    g: ArrayView2<'_, f64>,
    alpha: f64,
    b: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    SymmetricFactorization::new(g, alpha)?.solve_vec(b)
}

/// A Gram matrix with Kronecker structure `G = G_1 (x) ... (x) G_d`.
///
/// The full matrix is never materialized; solves factor each block and apply
/// the inverse mode by mode. Factor `f` corresponds to dimension `f` of a
/// full grid enumerated with the last dimension fastest.
pub struct KroneckerGram {
    factors: Vec<GramMatrix>,
}

impl KroneckerGram {
    pub fn new(factors: Vec<GramMatrix>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        for f in &factors {
            check_square_symmetric(f.view())?;
        }
        Ok(Self { factors })
    }

    pub fn factors(&self) -> &[GramMatrix] {
        &self.factors
    }

    pub fn total_size(&self) -> usize {
        self.factors.iter().map(|f| f.nrows()).product()
    }

    /// Solve `(G_1 (x) ... (x) G_d) x = b` factorwise.
    ///
    /// This inverts the unregularized product Gram. Since
    /// `(G + alpha I)^-1 != (x)_i (G_i + alpha_i I)^-1`, only a per-factor
    /// jitter `1e-10 * trace(G_f) / m_f` is applied, purely as numerical
    /// rescue; the result approximates `G^-1 b`, not `(G + alpha I)^-1 b`.
    pub fn solve(&self, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let total = self.total_size();
        if b.len() != total {
            return Err(Error::SizeMismatch {
                expected: total,
                got: b.len(),
            });
        }
        let sizes: Vec<usize> = self.factors.iter().map(|f| f.nrows()).collect();
        let mut x = b.to_owned();
        for (f, fac) in self.factors.iter().enumerate() {
            let m_f = sizes[f];
            let prefix: usize = sizes[..f].iter().product();
            let suffix: usize = sizes[f + 1..].iter().product();
            let jitter = 1e-10 * fac.view().diag().sum() / m_f as f64;
            let solver = SymmetricFactorization::new(fac.view(), jitter)?;
            let buf = x.as_slice().expect("contiguous").to_vec();
            for p in 0..prefix {
                let offset = p * m_f * suffix;
                let block =
                    ArrayView2::from_shape((m_f, suffix), &buf[offset..offset + m_f * suffix])
                        .expect("contiguous block");
                let solved = solver.solve_mat(block)?;
                let target = &mut x.as_slice_mut().expect("contiguous")
                    [offset..offset + m_f * suffix];
                for (t, &v) in target.iter_mut().zip(solved.iter()) {
                    *t = v;
                }
            }
        }
        Ok(x)
    }
}

/// Solve `(G_1 (x) ... (x) G_d)^-1 b` without materializing the product.
pub fn kron_solve(kg: &KroneckerGram, b: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    kg.solve(b)
}

/// Truncated pivoted Cholesky factorization `G ~ L L^T` of a kernel Gram,
/// built column by column without materializing `G`.
///
/// A direct (non-iterative) factorization: it is exact after `rank(G)` steps
/// and is truncated once the residual trace falls below `rel_tol` times the
/// initial trace. Fast-decaying spectra (smooth kernels) reach machine-level
/// residuals at small rank.
pub struct PivotedCholesky {
    cols: Array2<f64>,
    pivots: Vec<usize>,
    residual_trace: f64,
    converged: bool,
}

pub fn pivoted_cholesky(
    spec: &KernelSpec,
    pts: &SampleSet,
    rel_tol: f64,
    max_rank: usize,
) -> Result<PivotedCholesky> {
    if pts.dim() != spec.dimension() {
        return Err(Error::DimensionMismatch {
            expected: spec.dimension(),
            got: pts.dim(),
        });
    }
    let n = pts.len();
    let max_rank = max_rank.min(n);
    let mut diag: Vec<f64> = (0..n)
        .map(|i| spec.eval_unchecked(pts.row(i), pts.row(i)))
        .collect();
    let trace0: f64 = diag.iter().sum();
    let mut cols: Vec<Array1<f64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut converged = false;
    for _ in 0..max_rank {
        let (p, &dp) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("nonempty diag");
        if dp <= rel_tol * trace0 {
            converged = true;
            break;
        }
        let scale = dp.sqrt();
        let mut col = Array1::<f64>::zeros(n);
        for i in 0..n {
            let mut v = spec.eval_unchecked(pts.row(i), pts.row(p));
            for c in &cols {
                v -= c[i] * c[p];
            }
            col[i] = v / scale;
        }
        for i in 0..n {
            diag[i] = (diag[i] - col[i] * col[i]).max(0.0);
        }
        diag[p] = 0.0;
        pivots.push(p);
        cols.push(col);
    }
    let residual_trace: f64 = diag.iter().sum();
    if !converged && residual_trace <= rel_tol * trace0 {
        converged = true;
    }
    let r = cols.len();
    let mut mat = Array2::<f64>::zeros((n, r));
    for (j, c) in cols.iter().enumerate() {
        mat.column_mut(j).assign(c);
    }
    Ok(PivotedCholesky {
        cols: mat,
        pivots,
        residual_trace,
        converged,
    })
}

impl PivotedCholesky {
    pub fn rank(&self) -> usize {
        self.cols.ncols()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    pub fn residual_trace(&self) -> f64 {
        self.residual_trace
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Solve `(scale * L L^T + alpha I) y = v` by the Woodbury identity with
    /// an `r x r` inner system. Requires `alpha > 0`.
    pub fn solve_shifted(
        &self,
        scale: f64,
        alpha: f64,
        v: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        let n = self.cols.nrows();
        if v.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: v.len(),
            });
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::ParameterRange {
                name: "alpha",
                value: alpha,
                range: "(0, inf)",
            });
        }
        let r = self.cols.ncols();
        if r == 0 {
            return Ok(v.mapv(|x| x / alpha));
        }
        let lt_v = self.cols.t().dot(&v);
        let mut inner = self.cols.t().dot(&self.cols) * scale;
        for i in 0..r {
            inner[[i, i]] += alpha;
        }
        let w = SymmetricFactorization::new(inner.view(), 0.0)?.solve_vec(lt_v.view())?;
        let correction = self.cols.dot(&w) * scale;
        Ok((&v.to_owned() - &correction) / alpha)
    }

    /// Quadratic form `y^T L L^T y`.
    pub fn quad_form(&self, y: ArrayView1<'_, f64>) -> f64 {
        let t = self.cols.t().dot(&y);
        t.dot(&t)
    }
}

/// Finite-sample bound on the stochastic reconstruction error.
///
/// `epsilon` bounds `||u_alpha - u_hat||_H` with probability at least
/// `probability`, for the Tikhonov solution built from `m` reference samples
/// and an embedding estimated from `n` data samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub m: usize,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub c: f64,
    pub mu_norm: f64,
    pub epsilon: f64,
    pub probability: f64,
}

fn check_exponent(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v > 0.0 && v < 0.5) {
        return Err(Error::ParameterRange {
            name,
            value: v,
            range: "(0, 1/2)",
        });
    }
    Ok(())
}

/// Evaluate the concentration bound at the given sample sizes.
///
/// `epsilon = (m^-2b / alpha^2) (mu_norm + n^-2a) + n^-2a / alpha` and
/// `probability = [1 - 2 exp(-n^(1-2a) / 8c^2)]_+ * [1 - 2 exp(-m^(1-2b) / 8c^4)]_+`.
/// Each bracket is clamped at zero before multiplying; a negative bracket
/// carries no guarantee, and clamping the product instead would break
/// monotonicity in `m` and `n` when both brackets are negative.
pub fn prop2_bound(
    m: usize,
    n: usize,
    a: f64,
    b: f64,
    alpha: f64,
    c: f64,
    mu_norm: f64,
) -> Result<BoundReport> {
    check_exponent("a", a)?;
    check_exponent("b", b)?;
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::ParameterRange {
            name: "alpha",
            value: alpha,
            range: "(0, inf)",
        });
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::ParameterRange {
            name: "c",
            value: c,
            range: "(0, inf)",
        });
    }
    if !(mu_norm.is_finite() && mu_norm >= 0.0) {
        return Err(Error::ParameterRange {
            name: "mu_norm",
            value: mu_norm,
            range: "[0, inf)",
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::EmptySampleSet);
    }
    let mf = m as f64;
    let nf = n as f64;
    let eps2 = mf.powf(-2.0 * b);
    let eps1 = nf.powf(-2.0 * a);
    let epsilon = eps2 / (alpha * alpha) * (mu_norm + eps1) + eps1 / alpha;
    let bracket_n = 1.0 - 2.0 * (-nf.powf(1.0 - 2.0 * a) / (8.0 * c * c)).exp();
    let bracket_m = 1.0 - 2.0 * (-mf.powf(1.0 - 2.0 * b) / (8.0 * c.powi(4))).exp();
    let probability = bracket_n.max(0.0) * bracket_m.max(0.0);
    Ok(BoundReport {
        m,
        n,
        a,
        b,
        alpha,
        c,
        mu_norm,
        epsilon,
        probability,
    })
}

/// Consistency-preserving regularization schedule
/// `alpha(m, n) = max(m^-b, n^-2a)^c'` for `c'` in `(0, 1)`.
pub fn tikhonov_schedule(m: usize, n: usize, a: f64, b: f64, c_prime: f64) -> Result<f64> {
    check_exponent("a", a)?;
    check_exponent("b", b)?;
    if !(c_prime.is_finite() && c_prime > 0.0 && c_prime < 1.0) {
        return Err(Error::ParameterRange {
            name: "c_prime",
            value: c_prime,
            range: "(0, 1)",
        });
    }
    if m == 0 || n == 0 {
        return Err(Error::EmptySampleSet);
    }
    let mf = m as f64;
    let nf = n as f64;
    Ok(mf.powf(-b).max(nf.powf(-2.0 * a)).powf(c_prime))
}
