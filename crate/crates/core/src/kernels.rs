//! Kernel evaluation, Gram matrices and bandwidth selection.
//!
//! This is the only module that knows kernel analytic forms. All kernels are
//! normalized so that `k(x, x) = 1`, which also fixes the constant
//! `c = sup_x sqrt(k(x, x)) = 1` used by the concentration bound.
//!
//! The Laplace kernel uses the l1 distance `exp(-||x - y||_1 / sigma)` so that
//! it factorizes across dimensions, like the Gaussian. Both families therefore
//! support the Kronecker path over full grids and have closed-form mass and
//! variance when read as (unnormalized) probability densities.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::sample::SampleSet;

/// A positive-semidefinite kernel family with per-dimension bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSpec {
    /// `exp(-||x - y||_2^2 / (2 sigma^2))`, per-dimension scaled.
    Gaussian { bandwidths: Vec<f64> },
    /// `exp(-||x - y||_1 / sigma)`, per-dimension scaled.
    Laplace { bandwidths: Vec<f64> },
    /// Ordered univariate factors, one per input dimension.
    Product { factors: Vec<KernelSpec> },
}

fn check_bandwidths(bw: &[f64]) -> Result<()> {
    if bw.is_empty() {
        return Err(Error::InvalidBandwidth(f64::NAN));
    }
    for &b in bw {
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidBandwidth(b));
        }
    }
    Ok(())
}

impl KernelSpec {
    /// Isotropic Gaussian kernel: one bandwidth broadcast over `dim` coordinates.
    pub fn gaussian(dim: usize, bandwidth: f64) -> Result<Self> {
        Self::gaussian_per_dim(vec![bandwidth; dim.max(1)])
    }

    pub fn gaussian_per_dim(bandwidths: Vec<f64>) -> Result<Self> {
        check_bandwidths(&bandwidths)?;
        Ok(KernelSpec::Gaussian { bandwidths })
    }

    /// Isotropic Laplace kernel (l1 form).
    pub fn laplace(dim: usize, bandwidth: f64) -> Result<Self> {
        Self::laplace_per_dim(vec![bandwidth; dim.max(1)])
    }

    pub fn laplace_per_dim(bandwidths: Vec<f64>) -> Result<Self> {
        check_bandwidths(&bandwidths)?;
        Ok(KernelSpec::Laplace { bandwidths })
    }

    /// Product of univariate kernels, one factor per dimension.
    pub fn product(factors: Vec<KernelSpec>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        for f in &factors {
            if f.dimension() != 1 {
                return Err(Error::DimensionMismatch {
                    expected: 1,
                    got: f.dimension(),
                });
            }
        }
        Ok(KernelSpec::Product { factors })
    }

    pub fn dimension(&self) -> usize {
        match self {
            KernelSpec::Gaussian { bandwidths } | KernelSpec::Laplace { bandwidths } => {
                bandwidths.len()
            }
            KernelSpec::Product { factors } => factors.len(),
        }
    }

    /// Total mass of the kernel read as an unnormalized density:
    /// Gaussian `prod_c sqrt(2 pi sigma_c^2)`, Laplace `prod_c 2 sigma_c`.
    pub fn density_mass(&self) -> f64 {
        match self {
            KernelSpec::Gaussian { bandwidths } => bandwidths
                .iter()
                .map(|s| (2.0 * std::f64::consts::PI * s * s).sqrt())
                .product(),
            KernelSpec::Laplace { bandwidths } => bandwidths.iter().map(|s| 2.0 * s).product(),
            KernelSpec::Product { factors } => factors.iter().map(|f| f.density_mass()).product(),
        }
    }

    /// Per-coordinate variance of the kernel read as a density:
    /// Gaussian `sigma_c^2`, Laplace `2 sigma_c^2`.
    pub fn density_variance(&self) -> Vec<f64> {
        match self {
            KernelSpec::Gaussian { bandwidths } => bandwidths.iter().map(|s| s * s).collect(),
            KernelSpec::Laplace { bandwidths } => bandwidths.iter().map(|s| 2.0 * s * s).collect(),
            KernelSpec::Product { factors } => factors
                .iter()
                .flat_map(|f| f.density_variance())
                .collect(),
        }
    }

    /// Univariate factors of the kernel, one per dimension. Both the Gaussian
    /// and the l1 Laplace factorize exactly; a Product returns its factors.
    pub fn factors(&self) -> Vec<KernelSpec> {
        match self {
            KernelSpec::Gaussian { bandwidths } => bandwidths
                .iter()
                .map(|&s| KernelSpec::Gaussian {
                    bandwidths: vec![s],
                })
                .collect(),
            KernelSpec::Laplace { bandwidths } => bandwidths
                .iter()
                .map(|&s| KernelSpec::Laplace {
                    bandwidths: vec![s],
                })
                .collect(),
            KernelSpec::Product { factors } => factors.clone(),
        }
    }

    /// Distance metric matching the family for the median heuristic.
    pub fn metric(&self) -> DistanceMetric {
        match self {
            KernelSpec::Gaussian { .. } => DistanceMetric::Euclidean,
            KernelSpec::Laplace { .. } | KernelSpec::Product { .. } => DistanceMetric::L1,
        }
    }

    /// Kernel evaluation without dimension/finiteness checks. Callers must
    /// guarantee `x.len() == y.len() == self.dimension()`.
    #[inline]
    pub(crate) fn eval_unchecked(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        match self {
            KernelSpec::Gaussian { bandwidths } => {
                let mut q = 0.0;
                for ((&a, &b), &s) in x.iter().zip(y.iter()).zip(bandwidths.iter()) {
                    let d = (a - b) / s;
                    q += d * d;
                }
                (-0.5 * q).exp()
            }
            KernelSpec::Laplace { bandwidths } => {
                let mut q = 0.0;
                for ((&a, &b), &s) in x.iter().zip(y.iter()).zip(bandwidths.iter()) {
                    q += (a - b).abs() / s;
                }
                (-q).exp()
            }
            KernelSpec::Product { factors } => {
                let mut p = 1.0;
                for (c, f) in factors.iter().enumerate() {
                    p *= f.eval_unchecked(x.slice(ndarray::s![c..c + 1]), y.slice(ndarray::s![c..c + 1]));
                }
                p
            }
        }
    }
}

/// Evaluate `k(x, y)`. Symmetric in its arguments and equal to 1 at `x = y`.
pub fn eval_kernel(spec: &KernelSpec, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
    let d = spec.dimension();
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x.len(),
        });
    }
    if y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    Ok(spec.eval_unchecked(x, y))
}

/// Matrix of pairwise kernel evaluations between two sample sets.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    data: Array2<f64>,
}

impl GramMatrix {
    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    /// Wrap a precomputed matrix. Intended for testing and for code that
    /// assembles Gram blocks itself (e.g. grouped feature means).
    pub fn from_raw(data: Array2<f64>) -> Self {
        Self { data }
    }
}

/// Gram matrix `entries[i][j] = k(a_i, b_j)`.
///
/// When `a` and `b` are the same set the result is exactly symmetric: kernel
/// evaluation is bitwise symmetric in its arguments, so mirroring the upper
/// triangle produces the same values entrywise evaluation would.
pub fn gram(spec: &KernelSpec, a: &SampleSet, b: &SampleSet) -> Result<GramMatrix> {
    let d = spec.dimension();
    if a.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: a.dim(),
        });
    }
    if b.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: b.dim(),
        });
    }
    let (n, m) = (a.len(), b.len());
    let mut out = Array2::<f64>::zeros((n, m));
    let same = std::ptr::eq(a, b) || (n == m && a.points() == b.points());
    if same {
        for i in 0..n {
            for j in i..m {
                let v = spec.eval_unchecked(a.row(i), b.row(j));
                out[[i, j]] = v;
                out[[j, i]] = v;
            }
        }
    } else {
        for i in 0..n {
            for j in 0..m {
                out[[i, j]] = spec.eval_unchecked(a.row(i), b.row(j));
            }
        }
    }
    Ok(GramMatrix { data: out })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistanceMetric {
    Euclidean,
    L1,
}

/// Median of the `n (n - 1) / 2` pairwise distances over distinct index
/// pairs. Uses the lower-median convention (element at index
/// `(count - 1) / 2` of the sorted list) so the result is deterministic.
pub fn median_heuristic(a: &SampleSet, metric: DistanceMetric) -> Result<f64> {
    let n = a.len();
    if n < 2 {
        return Err(Error::DegenerateSample);
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = match metric {
                DistanceMetric::Euclidean => a
                    .row(i)
                    .iter()
                    .zip(a.row(j).iter())
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt(),
                DistanceMetric::L1 => a
                    .row(i)
                    .iter()
                    .zip(a.row(j).iter())
                    .map(|(x, y)| (x - y).abs())
                    .sum(),
            };
            dists.push(d);
        }
    }
    if dists.iter().all(|&d| d == 0.0) {
        return Err(Error::DegenerateSample);
    }
    let k = (dists.len() - 1) / 2;
    let (_, med, _) = dists.select_nth_unstable_by(k, |x, y| x.total_cmp(y));
    Ok(*med)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::arr1;

    fn pt(xs: &[f64]) -> ndarray::Array1<f64> {
        arr1(xs)
    }

    #[test]
    fn gaussian_diagonal_is_one() {
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let x = pt(&[3.7]);
        assert_eq!(eval_kernel(&k, x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_hand_value() {
        // exp(-|0 - 2|^2 / 2) = exp(-2)
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let v = eval_kernel(&k, pt(&[0.0]).view(), pt(&[2.0]).view()).unwrap();
        assert_relative_eq!(v, (-2.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn laplace_hand_value() {
        // exp(-||(0,0) - (1,1)||_1 / 2) = exp(-1)
        let k = KernelSpec::laplace(2, 2.0).unwrap();
        let v = eval_kernel(&k, pt(&[0.0, 0.0]).view(), pt(&[1.0, 1.0]).view()).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn product_factorizes() {
        let f = KernelSpec::gaussian(1, 1.0).unwrap();
        let k = KernelSpec::product(vec![f.clone(), f]).unwrap();
        let v = eval_kernel(&k, pt(&[0.0, 0.0]).view(), pt(&[1.0, 1.0]).view()).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn eval_rejects_bad_input() {
        let k = KernelSpec::gaussian(2, 1.0).unwrap();
        assert!(eval_kernel(&k, pt(&[0.0]).view(), pt(&[0.0, 1.0]).view()).is_err());
        assert!(eval_kernel(&k, pt(&[f64::NAN, 0.0]).view(), pt(&[0.0, 1.0]).view()).is_err());
    }

    #[test]
    fn bandwidth_validation() {
        assert!(KernelSpec::gaussian(1, 0.0).is_err());
        assert!(KernelSpec::laplace(1, -1.0).is_err());
        assert!(KernelSpec::gaussian(1, f64::INFINITY).is_err());
    }

    #[test]
    fn gram_single_point() {
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let a = SampleSet::from_column(&[0.0]).unwrap();
        let g = gram(&k, &a, &a).unwrap();
        assert_eq!(g.get(0, 0), 1.0);
    }

    #[test]
    fn gram_symmetric_and_psd() {
        use ndarray_linalg::{Eigh, UPLO};
        let k = KernelSpec::gaussian(1, 1.0).unwrap();
        let a = SampleSet::from_column(&[0.0, 1.0, 2.0]).unwrap();
        let g = gram(&k, &a, &a).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        // brute-force eigensolve of the 3x3 matrix
        let (vals, _) = g.view().to_owned().eigh(UPLO::Lower).unwrap();
        assert!(vals.iter().all(|&v| v >= -1e-10), "eigenvalues {vals:?}");
    }

    #[test]
    fn gram_cross_matches_entrywise() {
        let k = KernelSpec::laplace(1, 0.7).unwrap();
        let a = SampleSet::from_column(&[0.0, 0.5]).unwrap();
        let b = SampleSet::from_column(&[1.0, -1.0, 0.25]).unwrap();
        let g = gram(&k, &a, &b).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                let v = eval_kernel(&k, a.row(i), b.row(j)).unwrap();
                assert_eq!(g.get(i, j), v);
            }
        }
    }

    #[test]
    fn median_heuristic_hand_values() {
        // distances {1, 1, 2} -> median 1
        let a = SampleSet::from_column(&[0.0, 1.0, 2.0]).unwrap();
        assert_eq!(median_heuristic(&a, DistanceMetric::Euclidean).unwrap(), 1.0);
        // two points at distance d -> d
        let b = SampleSet::from_column(&[1.0, 4.5]).unwrap();
        assert_eq!(median_heuristic(&b, DistanceMetric::Euclidean).unwrap(), 3.5);
        // all identical -> error
        let c = SampleSet::from_column(&[0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            median_heuristic(&c, DistanceMetric::Euclidean),
            Err(Error::DegenerateSample)
        ));
    }

    #[test]
    fn median_even_count_lower_convention() {
        // 4 points -> 6 distances: {1,2,3,1,2,1} sorted {1,1,1,2,2,3}, lower median idx 2 -> 1
        let a = SampleSet::from_column(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(median_heuristic(&a, DistanceMetric::Euclidean).unwrap(), 1.0);
    }

    #[test]
    fn density_mass_and_variance() {
        let g = KernelSpec::gaussian(2, 1.0).unwrap();
        assert_relative_eq!(
            g.density_mass(),
            2.0 * std::f64::consts::PI,
            max_relative = 1e-15
        );
        assert_eq!(g.density_variance(), vec![1.0, 1.0]);

        let l = KernelSpec::laplace(1, 2.0).unwrap();
        assert_eq!(l.density_mass(), 4.0);
        assert_eq!(l.density_variance(), vec![8.0]);

        let p =
            KernelSpec::product(vec![KernelSpec::gaussian(1, 1.0).unwrap(), l]).unwrap();
        assert_relative_eq!(
            p.density_mass(),
            (2.0 * std::f64::consts::PI).sqrt() * 4.0,
            max_relative = 1e-15
        );
        assert_eq!(p.density_variance(), vec![1.0, 8.0]);
    }
}
