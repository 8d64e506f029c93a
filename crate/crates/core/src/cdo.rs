//! The conditional density operator: fit from paired samples plus a reference
//! measure over the output domain, predict conditional densities for point or
//! distributional inputs, normalize, sample, and compute closed-form moments.
//!
//! A fit caches the factorization of `(G_X + N alpha I)` and the matrix
//! `W = (M / mass) (G_Z + alpha' I)^-2 G_ZY`, so a point prediction is
//! `beta = W (G_X + N alpha I)^-1 [k(x_1, x*), ..., k(x_N, x*)]^T`.
//!
//! Grouped fits exploit repeated inputs: the output feature columns become
//! per-group means, shrinking the input-side Gram from `N x N` to
//! `n_distinct x n_distinct`. With the per-sample scaling used here
//! (`G + n alpha I` with `n` the number of rows of the Gram in both cases),
//! the same `alpha` makes the grouped fit reproduce the flattened fit exactly
//! when all groups have equal size.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernels::{gram, KernelSpec};
use crate::linalg::{tikhonov_schedule, SymmetricFactorization};
use crate::reconstruct::{DensityEstimate, EmbeddingCoefficients, ReferenceMeasure};
use crate::sample::SampleSet;

/// Paired training data, optionally with a grouping of rows by distinct input.
#[derive(Debug, Clone)]
pub struct PairedData {
    x: SampleSet,
    y: SampleSet,
    groups: Option<Vec<Vec<usize>>>,
}

impl PairedData {
    pub fn new(x: SampleSet, y: SampleSet) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::SizeMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(Self { x, y, groups: None })
    }

    /// Attach an explicit grouping. Groups must partition the row indices and
    /// all rows within a group must carry an identical input point.
    pub fn with_grouping(x: SampleSet, y: SampleSet, groups: Vec<Vec<usize>>) -> Result<Self> {
        let n = x.len();
        if y.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                got: y.len(),
            });
        }
        let mut seen = vec![false; n];
        for g in &groups {
            if g.is_empty() {
                return Err(Error::EmptyGroup);
            }
            let first = g[0];
            for &i in g {
                if i >= n || seen[i] {
                    return Err(Error::InvalidGrouping);
                }
                seen[i] = true;
                if x.row(i) != x.row(first) {
                    return Err(Error::InvalidGrouping);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidGrouping);
        }
        Ok(Self {
            x,
            y,
            groups: Some(groups),
        })
    }

    /// Group rows by bitwise-identical input points, in first-occurrence order.
    pub fn detect_grouping(x: SampleSet, y: SampleSet) -> Result<Self> {
        let n = x.len();
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let key: Vec<u64> = x.row(i).iter().map(|v| v.to_bits()).collect();
            match index.get(&key) {
                Some(&g) => groups[g].push(i),
                None => {
                    index.insert(key, groups.len());
                    groups.push(vec![i]);
                }
            }
        }
        Self::with_grouping(x, y, groups)
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn x(&self) -> &SampleSet {
        &self.x
    }

    pub fn y(&self) -> &SampleSet {
        &self.y
    }

    pub fn groups(&self) -> Option<&[Vec<usize>]> {
        self.groups.as_deref()
    }
}

/// Regularization: either explicit `(alpha, alpha')` or the consistency
/// schedule evaluated at the fit's sample counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaChoice {
    Explicit { alpha: f64, alpha_prime: f64 },
    Schedule { a: f64, b: f64, c_prime: f64 },
}

impl AlphaChoice {
    fn resolve(&self, m: usize, n: usize) -> Result<(f64, f64)> {
        match *self {
            AlphaChoice::Explicit { alpha, alpha_prime } => {
                for (name, v) in [("alpha", alpha), ("alpha_prime", alpha_prime)] {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(Error::ParameterRange {
                            name,
                            value: v,
                            range: "(0, inf)",
                        });
                    }
                }
                Ok((alpha, alpha_prime))
            }
            AlphaChoice::Schedule { a, b, c_prime } => {
                let alpha = tikhonov_schedule(m, n, a, b, c_prime)?;
                Ok((alpha, alpha))
            }
        }
    }
}

/// A fitted conditional density operator.
pub struct FittedCdo {
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    inputs: SampleSet,
    reference: ReferenceMeasure,
    alpha: f64,
    alpha_prime: f64,
    n_total: usize,
    group_sizes: Option<Vec<usize>>,
    input_solver: SymmetricFactorization,
    w: Array2<f64>,
}

fn fit_impl(
    inputs: SampleSet,
    g_zy: Array2<f64>,
    reference: ReferenceMeasure,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    alphas: AlphaChoice,
    n_total: usize,
    group_sizes: Option<Vec<usize>>,
) -> Result<FittedCdo> {
    let m = reference.len();
    let (alpha, alpha_prime) = alphas.resolve(m, n_total)?;
    let n_eff = inputs.len();
    let g_x = gram(&input_kernel, &inputs, &inputs)?;
    let input_solver = SymmetricFactorization::new(g_x.view(), n_eff as f64 * alpha)?;
    let g_z = gram(&output_kernel, reference.points(), reference.points())?;
    let zfac = SymmetricFactorization::new(g_z.view(), alpha_prime)?;
    let once = zfac.solve_mat(g_zy.view())?;
    let mut w = zfac.solve_mat(once.view())?;
    w *= m as f64 / reference.total_mass();
    Ok(FittedCdo {
        input_kernel,
        output_kernel,
        inputs,
        reference,
        alpha,
        alpha_prime,
        n_total,
        group_sizes,
        input_solver,
        w,
    })
}

fn check_fit_dims(
    data: &PairedData,
    reference: &ReferenceMeasure,
    input_kernel: &KernelSpec,
    output_kernel: &KernelSpec,
) -> Result<()> {
    if data.x().dim() != input_kernel.dimension() {
        return Err(Error::DimensionMismatch {
            expected: input_kernel.dimension(),
            got: data.x().dim(),
        });
    }
    if data.y().dim() != output_kernel.dimension() {
        return Err(Error::DimensionMismatch {
            expected: output_kernel.dimension(),
            got: data.y().dim(),
        });
    }
    if reference.dim() != output_kernel.dimension() {
        return Err(Error::DimensionMismatch {
            expected: output_kernel.dimension(),
            got: reference.dim(),
        });
    }
    if reference.weights().is_some() {
        return Err(Error::WeightsRequireRepresenter);
    }
    Ok(())
}

/// Fit a CDO from paired samples, ignoring any grouping.
pub fn fit(
    data: &PairedData,
    reference: ReferenceMeasure,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    alphas: AlphaChoice,
) -> Result<FittedCdo> {
    check_fit_dims(data, &reference, &input_kernel, &output_kernel)?;
    let g_zy = gram(&output_kernel, reference.points(), data.y())?.into_inner();
    fit_impl(
        data.x().clone(),
        g_zy,
        reference,
        input_kernel,
        output_kernel,
        alphas,
        data.len(),
        None,
    )
}

/// Fit using the grouped-data factorization: per-group mean feature columns
/// on the output side and a distinct-inputs Gram on the input side.
pub fn fit_grouped(
    data: &PairedData,
    reference: ReferenceMeasure,
    input_kernel: KernelSpec,
    output_kernel: KernelSpec,
    alphas: AlphaChoice,
) -> Result<FittedCdo> {
    check_fit_dims(data, &reference, &input_kernel, &output_kernel)?;
    let groups = data.groups().ok_or(Error::InvalidGrouping)?;
    let m = reference.len();
    let n_groups = groups.len();
    // distinct inputs, one per group
    let mut distinct = Array2::<f64>::zeros((n_groups, data.x().dim()));
    for (g, rows) in groups.iter().enumerate() {
        distinct.row_mut(g).assign(&data.x().row(rows[0]));
    }
    // G_ZY[i, g] = mean_j l(z_i, y_{g, j})
    let mut g_zy = Array2::<f64>::zeros((m, n_groups));
    for (g, rows) in groups.iter().enumerate() {
        let inv = 1.0 / rows.len() as f64;
        for i in 0..m {
            let mut acc = 0.0;
            for &j in rows {
                acc += output_kernel.eval_unchecked(reference.points().row(i), data.y().row(j));
            }
            g_zy[[i, g]] = acc * inv;
        }
    }
    let group_sizes: Vec<usize> = groups.iter().map(|g| g.len()).collect();
    fit_impl(
        SampleSet::new(distinct)?,
        g_zy,
        reference,
        input_kernel,
        output_kernel,
        alphas,
        data.len(),
        Some(group_sizes),
    )
}

impl FittedCdo {
    /// Conditional density estimate for the output given `X = x_star`.
    pub fn predict_point(&self, x_star: ArrayView1<'_, f64>) -> Result<DensityEstimate> {
        if x_star.len() != self.input_kernel.dimension() {
            return Err(Error::DimensionMismatch {
                expected: self.input_kernel.dimension(),
                got: x_star.len(),
            });
        }
        if x_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let k_vec = Array1::from_shape_fn(self.inputs.len(), |j| {
            self.input_kernel.eval_unchecked(self.inputs.row(j), x_star)
        });
        self.predict_from_kvec(k_vec)
    }

    /// Output density when the input follows the distribution represented by
    /// `input_embedding` (kernel sum rule): the point-evaluation vector is
    /// replaced by the embedding evaluated at the training inputs.
    pub fn predict_marginal(
        &self,
        input_embedding: &EmbeddingCoefficients,
    ) -> Result<DensityEstimate> {
        if input_embedding.kernel() != &self.input_kernel {
            return Err(Error::KernelMismatch);
        }
        let k_vec = input_embedding.evaluate_at(&self.inputs)?;
        self.predict_from_kvec(k_vec)
    }

    fn predict_from_kvec(&self, k_vec: Array1<f64>) -> Result<DensityEstimate> {
        let t = self.input_solver.solve_vec(k_vec.view())?;
        let beta = self.w.dot(&t);
        DensityEstimate::new(
            self.reference.points().clone(),
            beta,
            self.output_kernel.clone(),
            false,
        )
    }

    pub fn input_kernel(&self) -> &KernelSpec {
        &self.input_kernel
    }

    pub fn output_kernel(&self) -> &KernelSpec {
        &self.output_kernel
    }

    pub fn inputs(&self) -> &SampleSet {
        &self.inputs
    }

    pub fn reference(&self) -> &ReferenceMeasure {
        &self.reference
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn alpha_prime(&self) -> f64 {
        self.alpha_prime
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn group_sizes(&self) -> Option<&[usize]> {
        self.group_sizes.as_deref()
    }

    /// Cached coefficient matrix `W` (`M x n_eff`).
    pub fn w_matrix(&self) -> &Array2<f64> {
        &self.w
    }

    /// Rebuild a fitted model from serialized parts. The input-side
    /// factorization is reconstructed from the stored inputs, so predictions
    /// reproduce the original model exactly.
    pub fn from_parts(
        input_kernel: KernelSpec,
        output_kernel: KernelSpec,
        inputs: SampleSet,
        reference: ReferenceMeasure,
        alpha: f64,
        alpha_prime: f64,
        n_total: usize,
        group_sizes: Option<Vec<usize>>,
        w: Array2<f64>,
    ) -> Result<Self> {
        if w.nrows() != reference.len() || w.ncols() != inputs.len() {
            return Err(Error::SizeMismatch {
                expected: reference.len() * inputs.len(),
                got: w.nrows() * w.ncols(),
            });
        }
        let n_eff = inputs.len();
        let g_x = gram(&input_kernel, &inputs, &inputs)?;
        let input_solver = SymmetricFactorization::new(g_x.view(), n_eff as f64 * alpha)?;
        Ok(Self {
            input_kernel,
            output_kernel,
            inputs,
            reference,
            alpha,
            alpha_prime,
            n_total,
            group_sizes,
            input_solver,
            w,
        })
    }
}

/// Closed-form predictive moments of a density estimate, computed from the
/// clipped-and-renormalized mixture weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// True when the estimate had to be renormalized (or clipped) internally.
    pub renormalized: bool,
}

fn clipped_weights(beta: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let clipped = beta.mapv(|b| b.max(0.0));
    let total: f64 = clipped.sum();
    if !(total > 0.0) {
        return Err(Error::NoPositiveWeights);
    }
    Ok(clipped / total)
}

impl DensityEstimate {
    /// Scale `beta` so the estimate integrates to one over the whole output
    /// space: `beta_i' = beta_i / (density_mass * sum_j beta_j)`.
    pub fn normalize(&self) -> Result<DensityEstimate> {
        let total: f64 = self.beta().sum();
        if !(total > 0.0) {
            return Err(Error::NonPositiveMass);
        }
        let mass = self.kernel().density_mass();
        let beta = self.beta().mapv(|b| b / (mass * total));
        Ok(DensityEstimate::set_normalized(beta, self))
    }

    /// Draw `n` samples from the mixture with component weights
    /// `max(beta, 0) / sum max(beta, 0)` and the kernel as component density.
    /// Negative-weight mass is dropped. Deterministic for a fixed seed.
    pub fn sample(&self, n: usize, seed: u64) -> Result<SampleSet> {
        if n == 0 {
            return Err(Error::EmptySampleSet);
        }
        let weights = clipped_weights(self.beta())?;
        let mut cumulative = Vec::with_capacity(weights.len());
        let mut acc = 0.0;
        for &w in weights.iter() {
            acc += w;
            cumulative.push(acc);
        }
        let total = acc;
        let d = self.kernel().dimension();
        let factors = self.kernel().factors();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Array2::<f64>::zeros((n, d));
        for r in 0..n {
            let u = rng.random::<f64>() * total;
            let idx = cumulative
                .partition_point(|&c| c <= u)
                .min(weights.len() - 1);
            let center = self.ref_points().row(idx);
            for (c, factor) in factors.iter().enumerate() {
                out[[r, c]] = center[c] + draw_offset(factor, &mut rng);
            }
        }
        SampleSet::new(out)
    }

    /// Closed-form mean and variance per output coordinate:
    /// `m_c = sum_i w_i z_ic` and
    /// `v_c = sum_i w_i z_ic^2 - m_c^2 + kernel_variance_c`,
    /// with `w` the clipped-and-renormalized mixture weights.
    pub fn mean_variance(&self) -> Result<Moments> {
        let weights = clipped_weights(self.beta())?;
        let renormalized = !self.is_normalized() || self.beta().iter().any(|&b| b < 0.0);
        let d = self.kernel().dimension();
        let kern_var = self.kernel().density_variance();
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d];
        for i in 0..self.ref_points().len() {
            let z = self.ref_points().row(i);
            for c in 0..d {
                mean[c] += weights[i] * z[c];
                second[c] += weights[i] * z[c] * z[c];
            }
        }
        let variance = (0..d)
            .map(|c| second[c] - mean[c] * mean[c] + kern_var[c])
            .collect();
        Ok(Moments {
            mean,
            variance,
            renormalized,
        })
    }
}

/// One draw from the univariate kernel density centered at zero.
fn draw_offset(factor: &KernelSpec, rng: &mut ChaCha8Rng) -> f64 {
    match factor {
        KernelSpec::Gaussian { bandwidths } => {
            let normal = Normal::new(0.0, bandwidths[0]).expect("validated bandwidth");
            normal.sample(rng)
        }
        KernelSpec::Laplace { bandwidths } => {
            // inverse CDF of the double exponential with scale sigma
            let sigma = bandwidths[0];
            loop {
                let u: f64 = rng.random::<f64>() - 0.5;
                let t = 1.0 - 2.0 * u.abs();
                if t > 0.0 {
                    return -sigma * u.signum() * t.ln();
                }
            }
        }
        KernelSpec::Product { factors } => draw_offset(&factors[0], rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::eval_kernel;
    use crate::reconstruct::{embed, uniform_reference, ReferenceMode};
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use ndarray::{arr1, Array2};
    use ndarray_linalg::Inverse;
    use rand::Rng;

    fn gauss(d: usize, s: f64) -> KernelSpec {
        KernelSpec::gaussian(d, s).unwrap()
    }

    fn random_data(n: usize, rng: &mut ChaCha8Rng) -> PairedData {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&v| (2.0 * v).sin() + 0.1 * (rng.random::<f64>() - 0.5))
            .collect();
        PairedData::new(
            SampleSet::from_column(&x).unwrap(),
            SampleSet::from_column(&y).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn single_pair_hand_values() {
        let data = PairedData::new(
            SampleSet::from_column(&[0.2]).unwrap(),
            SampleSet::from_column(&[0.4]).unwrap(),
        )
        .unwrap();
        let reference = uniform_reference(&[(0.0, 1.0)], 1, ReferenceMode::Grid, 0).unwrap();
        let z1 = reference.points().row(0).to_owned();
        let (alpha, alpha_prime) = (0.3, 0.2);
        let model = fit(
            &data,
            reference,
            gauss(1, 1.0),
            gauss(1, 1.0),
            AlphaChoice::Explicit { alpha, alpha_prime },
        )
        .unwrap();
        let ell = eval_kernel(&gauss(1, 1.0), z1.view(), arr1(&[0.4]).view()).unwrap();
        let expected_w = ell / ((1.0 + alpha_prime) * (1.0 + alpha_prime));
        assert_relative_eq!(model.w_matrix()[[0, 0]], expected_w, max_relative = 1e-12);

        let x_star = arr1(&[0.7]);
        let est = model.predict_point(x_star.view()).unwrap();
        let kxx = eval_kernel(&gauss(1, 1.0), arr1(&[0.2]).view(), x_star.view()).unwrap();
        let expected_beta = expected_w * kxx / (1.0 + alpha);
        assert_relative_eq!(est.beta()[0], expected_beta, max_relative = 1e-12);
    }

    #[test]
    fn refit_reproduces_w_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = random_data(40, &mut rng);
        let reference = uniform_reference(&[(-2.0, 2.0)], 16, ReferenceMode::Grid, 0).unwrap();
        let fit1 = fit(
            &data,
            reference.clone(),
            gauss(1, 0.5),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        let fit2 = fit(
            &data,
            reference,
            gauss(1, 0.5),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        assert_eq!(fit1.w_matrix(), fit2.w_matrix());
    }

    #[test]
    fn far_input_gives_zero_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = random_data(30, &mut rng);
        let reference = uniform_reference(&[(-2.0, 2.0)], 9, ReferenceMode::Grid, 0).unwrap();
        let model = fit(
            &data,
            reference,
            gauss(1, 0.4),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        let est = model.predict_point(arr1(&[1e4]).view()).unwrap();
        let sup = est.beta().iter().cloned().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(sup <= 1e-10, "sup |beta| = {sup}");
    }

    #[test]
    fn eq4_brute_force_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..5 {
            let n = 10 + (trial * 7) % 20;
            let m = 4 + (trial * 5) % 12;
            let data = random_data(n, &mut rng);
            let reference =
                uniform_reference(&[(-2.0, 2.0)], m, ReferenceMode::IidUniform, trial as u64)
                    .unwrap();
            let (ik, ok) = (gauss(1, 0.5), gauss(1, 0.35));
            let (alpha, alpha_prime) = (0.07, 0.04);
            let model = fit(
                &data,
                reference.clone(),
                ik.clone(),
                ok.clone(),
                AlphaChoice::Explicit { alpha, alpha_prime },
            )
            .unwrap();
            let x_star = arr1(&[rng.random::<f64>() * 2.0 - 1.0]);
            let beta = model.predict_point(x_star.view()).unwrap();

            // dense assembly via LU inverses (independent route)
            let g_x = gram(&ik, data.x(), data.x()).unwrap().into_inner();
            let g_z = gram(&ok, reference.points(), reference.points())
                .unwrap()
                .into_inner();
            let g_zy = gram(&ok, reference.points(), data.y()).unwrap().into_inner();
            let mut gx_shift = g_x;
            for i in 0..n {
                gx_shift[[i, i]] += n as f64 * alpha;
            }
            let mut gz_shift = g_z;
            for i in 0..m {
                gz_shift[[i, i]] += alpha_prime;
            }
            let gz_inv = gz_shift.inv().unwrap();
            let gz_inv2 = gz_inv.dot(&gz_inv);
            let k_vec = Array1::from_shape_fn(n, |j| {
                eval_kernel(&ik, data.x().row(j), x_star.view()).unwrap()
            });
            let brute = gz_inv2
                .dot(&g_zy)
                .dot(&gx_shift.inv().unwrap().dot(&k_vec))
                * (m as f64 / reference.total_mass());
            for (a, b) in beta.beta().iter().zip(brute.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn marginal_dirac_matches_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = random_data(35, &mut rng);
        let reference = uniform_reference(&[(-2.0, 2.0)], 16, ReferenceMode::Grid, 0).unwrap();
        let ik = gauss(1, 0.5);
        let model = fit(
            &data,
            reference,
            ik.clone(),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        for _ in 0..50 {
            let x_star = arr1(&[rng.random::<f64>() * 2.0 - 1.0]);
            let emb = EmbeddingCoefficients::new(
                SampleSet::new(x_star.clone().insert_axis(ndarray::Axis(0))).unwrap(),
                arr1(&[1.0]),
                ik.clone(),
            )
            .unwrap();
            let via_point = model.predict_point(x_star.view()).unwrap();
            let via_marginal = model.predict_marginal(&emb).unwrap();
            for (a, b) in via_point.beta().iter().zip(via_marginal.beta().iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn marginal_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_data(25, &mut rng);
        let reference = uniform_reference(&[(-2.0, 2.0)], 9, ReferenceMode::Grid, 0).unwrap();
        let ik = gauss(1, 0.5);
        let model = fit(
            &data,
            reference,
            ik.clone(),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        let anchors = SampleSet::from_column(&[0.1, -0.4]).unwrap();
        let lambda = 0.3;
        let w_mix = arr1(&[lambda, 1.0 - lambda]);
        let emb_mix =
            EmbeddingCoefficients::new(anchors.clone(), w_mix, ik.clone()).unwrap();
        let b_mix = model.predict_marginal(&emb_mix).unwrap();
        let b1 = model.predict_point(arr1(&[0.1]).view()).unwrap();
        let b2 = model.predict_point(arr1(&[-0.4]).view()).unwrap();
        for i in 0..b_mix.beta().len() {
            let expect = lambda * b1.beta()[i] + (1.0 - lambda) * b2.beta()[i];
            assert_abs_diff_eq!(b_mix.beta()[i], expect, epsilon = 1e-13);
        }
    }

    #[test]
    fn kernel_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let data = random_data(10, &mut rng);
        let reference = uniform_reference(&[(-2.0, 2.0)], 4, ReferenceMode::Grid, 0).unwrap();
        let model = fit(
            &data,
            reference,
            gauss(1, 0.5),
            gauss(1, 0.3),
            AlphaChoice::Explicit {
                alpha: 0.05,
                alpha_prime: 0.05,
            },
        )
        .unwrap();
        let emb = embed(
            SampleSet::from_column(&[0.0]).unwrap(),
            gauss(1, 0.7),
        )
        .unwrap();
        assert!(matches!(
            model.predict_marginal(&emb),
            Err(Error::KernelMismatch)
        ));
    }

    #[test]
    fn grouped_size_one_matches_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data = random_data(20, &mut rng);
        let grouped = PairedData::detect_grouping(data.x().clone(), data.y().clone()).unwrap();
        assert_eq!(grouped.groups().unwrap().len(), 20);
        let reference = uniform_reference(&[(-2.0, 2.0)], 9, ReferenceMode::Grid, 0).unwrap();
        let alphas = AlphaChoice::Explicit {
            alpha: 0.05,
            alpha_prime: 0.05,
        };
        let flat = fit(
            &data,
            reference.clone(),
            gauss(1, 0.5),
            gauss(1, 0.3),
            alphas,
        )
        .unwrap();
        let grp = fit_grouped(&grouped, reference, gauss(1, 0.5), gauss(1, 0.3), alphas).unwrap();
        let x_star = arr1(&[0.3]);
        let bf = flat.predict_point(x_star.view()).unwrap();
        let bg = grp.predict_point(x_star.view()).unwrap();
        for (a, b) in bf.beta().iter().zip(bg.beta().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn grouped_equal_sizes_matches_flat_oracle() {
        // equal group sizes with the same alpha: grouped == flattened
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n_distinct = 5;
        let per_group = 3;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        let mut groups = Vec::new();
        for g in 0..n_distinct {
            let xg = g as f64 / n_distinct as f64;
            let mut rows = Vec::new();
            for _ in 0..per_group {
                rows.push(xs.len());
                xs.push(xg);
                ys.push(xg.sin() + 0.2 * (rng.random::<f64>() - 0.5));
            }
            groups.push(rows);
        }
        let x = SampleSet::from_column(&xs).unwrap();
        let y = SampleSet::from_column(&ys).unwrap();
        let flat_data = PairedData::new(x.clone(), y.clone()).unwrap();
        let grouped_data = PairedData::with_grouping(x, y, groups).unwrap();
        let reference = uniform_reference(&[(-1.5, 1.5)], 8, ReferenceMode::Grid, 0).unwrap();
        let alphas = AlphaChoice::Explicit {
            alpha: 0.08,
            alpha_prime: 0.05,
        };
        let flat = fit(
            &flat_data,
            reference.clone(),
            gauss(1, 0.5),
            gauss(1, 0.3),
            alphas,
        )
        .unwrap();
        let grp = fit_grouped(
            &grouped_data,
            reference,
            gauss(1, 0.5),
            gauss(1, 0.3),
            alphas,
        )
        .unwrap();
        for x_probe in [0.05, 0.37, 0.81] {
            let bf = flat.predict_point(arr1(&[x_probe]).view()).unwrap();
            let bg = grp.predict_point(arr1(&[x_probe]).view()).unwrap();
            for (a, b) in bf.beta().iter().zip(bg.beta().iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn grouping_validation() {
        let x = SampleSet::from_column(&[0.0, 0.0, 1.0]).unwrap();
        let y = SampleSet::from_column(&[1.0, 2.0, 3.0]).unwrap();
        // missing row
        assert!(matches!(
            PairedData::with_grouping(x.clone(), y.clone(), vec![vec![0, 1]]),
            Err(Error::InvalidGrouping)
        ));
        // empty group
        assert!(matches!(
            PairedData::with_grouping(x.clone(), y.clone(), vec![vec![0, 1], vec![], vec![2]]),
            Err(Error::EmptyGroup)
        ));
        // mixed inputs in one group
        assert!(matches!(
            PairedData::with_grouping(x.clone(), y.clone(), vec![vec![0, 2], vec![1]]),
            Err(Error::InvalidGrouping)
        ));
        let ok = PairedData::with_grouping(x, y, vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(ok.groups().unwrap().len(), 2);
    }

    #[test]
    fn normalize_hand_example() {
        let kernel = gauss(1, 1.0);
        let mass = kernel.density_mass();
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 1.0]).unwrap(),
            arr1(&[2.0, 2.0]),
            kernel,
            false,
        )
        .unwrap();
        // beta_i' = beta_i / (mass * sum beta) = 2 / (4 mass)
        let normed = est.normalize().unwrap();
        for &b in normed.beta().iter() {
            assert_relative_eq!(b, 2.0 / (4.0 * mass), max_relative = 1e-14);
        }
        let total: f64 = normed.beta().sum();
        assert_relative_eq!(total * mass, 1.0, max_relative = 1e-12);
        // idempotence
        let twice = normed.normalize().unwrap();
        for (a, b) in normed.beta().iter().zip(twice.beta().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
        assert!(twice.is_normalized());
    }

    #[test]
    fn normalize_rejects_nonpositive_mass() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 1.0]).unwrap(),
            arr1(&[1.0, -1.5]),
            gauss(1, 1.0),
            false,
        )
        .unwrap();
        assert!(matches!(est.normalize(), Err(Error::NonPositiveMass)));
    }

    #[test]
    fn sample_concentrated_kernel() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[3.0]).unwrap(),
            arr1(&[1.0]),
            gauss(1, 1e-6),
            false,
        )
        .unwrap();
        let s = est.sample(200, 1).unwrap();
        for i in 0..s.len() {
            assert!((s.row(i)[0] - 3.0).abs() < 1e-4);
        }
    }

    #[test]
    fn sample_zero_weight_component_never_drawn() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 100.0]).unwrap(),
            arr1(&[1.0, 0.0]),
            gauss(1, 0.01),
            false,
        )
        .unwrap();
        let s = est.sample(500, 2).unwrap();
        for i in 0..s.len() {
            assert!(s.row(i)[0].abs() < 1.0);
        }
    }

    #[test]
    fn sample_balanced_components() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 10.0]).unwrap(),
            arr1(&[0.5, 0.5]),
            gauss(1, 0.1),
            false,
        )
        .unwrap();
        let s = est.sample(10_000, 3).unwrap();
        let near_zero = (0..s.len()).filter(|&i| s.row(i)[0] < 5.0).count();
        let frac = near_zero as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&frac), "fraction {frac}");
    }

    #[test]
    fn sample_deterministic_and_seed_sensitive() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 1.0]).unwrap(),
            arr1(&[0.6, 0.4]),
            gauss(1, 0.2),
            false,
        )
        .unwrap();
        let a = est.sample(50, 7).unwrap();
        let b = est.sample(50, 7).unwrap();
        assert_eq!(a.points(), b.points());
        let c = est.sample(50, 8).unwrap();
        assert_ne!(a.points(), c.points());
    }

    #[test]
    fn sample_all_nonpositive_errors() {
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 1.0]).unwrap(),
            arr1(&[-0.2, 0.0]),
            gauss(1, 0.2),
            false,
        )
        .unwrap();
        assert!(matches!(est.sample(10, 0), Err(Error::NoPositiveWeights)));
    }

    #[test]
    fn moments_hand_example() {
        // weights (1/2, 1/2), z = {0, 2}, kernel variance 0.01 -> mean 1, var 1.01
        let est = DensityEstimate::new(
            SampleSet::from_column(&[0.0, 2.0]).unwrap(),
            arr1(&[0.5, 0.5]),
            gauss(1, 0.1),
            false,
        )
        .unwrap();
        let m = est.mean_variance().unwrap();
        assert_abs_diff_eq!(m.mean[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.variance[0], 1.01, epsilon = 1e-12);
    }

    #[test]
    fn moments_single_component() {
        let est = DensityEstimate::new(
            SampleSet::from_rows(&[vec![2.0, -1.0]]).unwrap(),
            arr1(&[3.0]),
            gauss(2, 0.5),
            false,
        )
        .unwrap();
        let m = est.mean_variance().unwrap();
        assert_eq!(m.mean, vec![2.0, -1.0]);
        assert_abs_diff_eq!(m.variance[0], 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(m.variance[1], 0.25, epsilon = 1e-14);
    }

    #[test]
    fn moments_match_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let zs: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let bs: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 0.05).collect();
        let est = DensityEstimate::new(
            SampleSet::from_column(&zs).unwrap(),
            Array1::from_vec(bs),
            gauss(1, 0.3),
            false,
        )
        .unwrap();
        let m = est.mean_variance().unwrap();
        let n = 100_000;
        let s = est.sample(n, 99).unwrap();
        let vals: Vec<f64> = (0..n).map(|i| s.row(i)[0]).collect();
        let mc_mean = vals.iter().sum::<f64>() / n as f64;
        let mc_var =
            vals.iter().map(|v| (v - mc_mean) * (v - mc_mean)).sum::<f64>() / (n - 1) as f64;
        // standard errors
        let se_mean = (m.variance[0] / n as f64).sqrt();
        assert!(
            (mc_mean - m.mean[0]).abs() < 3.0 * se_mean,
            "mean {mc_mean} vs {}",
            m.mean[0]
        );
        let se_var = m.variance[0] * (2.0 / (n as f64 - 1.0)).sqrt();
        assert!(
            (mc_var - m.variance[0]).abs() < 4.0 * se_var,
            "var {mc_var} vs {}",
            m.variance[0]
        );
    }

    #[test]
    fn heteroscedastic_ordering() {
        // y = eps * (1 + |x|): predicted variance at x = 2 should exceed x = 0
        let mut wins = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 400;
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let normal = Normal::new(0.0, 0.5).unwrap();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&x| normal.sample(&mut rng) * (1.0 + x.abs()))
                .collect();
            let data = PairedData::new(
                SampleSet::from_column(&xs).unwrap(),
                SampleSet::from_column(&ys).unwrap(),
            )
            .unwrap();
            let reference =
                uniform_reference(&[(-8.0, 8.0)], 64, ReferenceMode::Grid, 0).unwrap();
            let sx = crate::kernels::median_heuristic(data.x(), crate::DistanceMetric::Euclidean)
                .unwrap();
            let sy = crate::kernels::median_heuristic(data.y(), crate::DistanceMetric::Euclidean)
                .unwrap();
            let model = fit(
                &data,
                reference,
                gauss(1, sx),
                gauss(1, sy),
                AlphaChoice::Schedule {
                    a: 0.49,
                    b: 0.49,
                    c_prime: 0.99999,
                },
            )
            .unwrap();
            let v0 = model
                .predict_point(arr1(&[0.0]).view())
                .unwrap()
                .mean_variance()
                .unwrap()
                .variance[0];
            let v2 = model
                .predict_point(arr1(&[2.0]).view())
                .unwrap()
                .mean_variance()
                .unwrap()
                .variance[0];
            if v2 > v0 {
                wins += 1;
            }
        }
        assert!(wins >= 9, "variance ordering held in {wins}/10 seeds");
    }
}
