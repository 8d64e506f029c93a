//! Closed forms used as ground truth: Gaussian-kernel embeddings of uniform
//! distributions and the rotated-circle mixture behind the donut benchmark.

use std::f64::consts::PI;

/// `mu_P(x)` for `P = Uniform[lo, hi]` under the Gaussian kernel
/// `k(x, t) = exp(-(x - t)^2 / (2 sigma^2))`:
/// `sigma sqrt(pi/2) [erf((hi - x) / (sigma sqrt 2)) + erf((x - lo) / (sigma sqrt 2))] / (hi - lo)`.
pub fn gauss_uniform_embedding(sigma: f64, lo: f64, hi: f64, x: f64) -> f64 {
    let c = sigma * std::f64::consts::SQRT_2;
    sigma * (PI / 2.0).sqrt() * (libm::erf((hi - x) / c) + libm::erf((x - lo) / c)) / (hi - lo)
}

/// `||mu_P||_H^2` for `P = Uniform[lo, hi]` under the same kernel:
/// `(2 L sigma sqrt(pi/2) erf(L / (sigma sqrt 2)) - 2 sigma^2 (1 - exp(-L^2 / (2 sigma^2)))) / L^2`.
pub fn gauss_uniform_norm_sq(sigma: f64, lo: f64, hi: f64) -> f64 {
    let l = hi - lo;
    let inner = 2.0 * l * sigma * (PI / 2.0).sqrt() * libm::erf(l / (sigma * std::f64::consts::SQRT_2))
        - 2.0 * sigma * sigma * (1.0 - (-l * l / (2.0 * sigma * sigma)).exp());
    inner / (l * l)
}

/// The donut ground truth: `n_means` equidistant points on the unit circle in
/// the `(x, y)` plane embedded in 3d and rotated about the y axis, each the
/// mean of an isotropic Gaussian with standard deviation `noise_std`.
#[derive(Debug, Clone)]
pub struct DonutMixture {
    pub means: Vec<[f64; 3]>,
    pub noise_std: f64,
}

impl DonutMixture {
    pub fn new(n_means: usize, rotation_angle_deg: f64, noise_std: f64) -> Self {
        let theta = rotation_angle_deg.to_radians();
        let (sin_t, cos_t) = theta.sin_cos();
        let means = (0..n_means)
            .map(|i| {
                let phi = 2.0 * PI * i as f64 / n_means as f64;
                let (sin_p, cos_p) = phi.sin_cos();
                // R_y(theta) applied to (cos phi, sin phi, 0)
                [cos_t * cos_p, sin_p, -sin_t * cos_p]
            })
            .collect();
        Self { means, noise_std }
    }

    /// Conditional density of `(y, z)` given `x`: a Gaussian mixture with
    /// component weights proportional to each component's density at `x`.
    /// Purely analytic; the isotropic Gaussian factorizes across coordinates.
    pub fn conditional_weights(&self, x: f64) -> Vec<f64> {
        let s2 = self.noise_std * self.noise_std;
        let mut w: Vec<f64> = self
            .means
            .iter()
            .map(|m| (-(x - m[0]) * (x - m[0]) / (2.0 * s2)).exp())
            .collect();
        let total: f64 = w.iter().sum();
        for v in &mut w {
            *v /= total;
        }
        w
    }

    pub fn conditional_density(&self, x: f64, y: f64, z: f64) -> f64 {
        let s2 = self.noise_std * self.noise_std;
        let norm = 1.0 / (2.0 * PI * s2);
        let weights = self.conditional_weights(x);
        weights
            .iter()
            .zip(self.means.iter())
            .map(|(w, m)| {
                let d2 = (y - m[1]) * (y - m[1]) + (z - m[2]) * (z - m[2]);
                w * norm * (-d2 / (2.0 * s2)).exp()
            })
            .sum()
    }

    /// `(y, z)` centers of the mixture components with the largest weight at
    /// `x`, i.e. the approximate modes of the conditional.
    pub fn conditional_mode_centers(&self, x: f64) -> Vec<[f64; 2]> {
        let weights = self.conditional_weights(x);
        let max_w = weights.iter().cloned().fold(0.0f64, f64::max);
        weights
            .iter()
            .zip(self.means.iter())
            .filter(|(w, _)| **w >= 0.5 * max_w)
            .map(|(_, m)| [m[1], m[2]])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn embedding_matches_quadrature() {
        let (sigma, lo, hi) = (0.3, 0.2, 0.9);
        for &x in &[0.0, 0.31, 0.55, 1.2] {
            let m = 200_000;
            let mut acc = 0.0;
            for i in 0..m {
                let t = lo + (hi - lo) * (i as f64 + 0.5) / m as f64;
                acc += (-(x - t) * (x - t) / (2.0 * sigma * sigma)).exp();
            }
            let quad = acc / m as f64; // mean over Uniform[lo, hi]
            assert_relative_eq!(
                gauss_uniform_embedding(sigma, lo, hi, x),
                quad,
                max_relative = 1e-9
            );
        }
    }

    #[test]
    fn norm_matches_quadrature() {
        let (sigma, lo, hi) = (0.25, 0.25, 0.75);
        let m = 2000;
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m {
                let u = lo + (hi - lo) * (i as f64 + 0.5) / m as f64;
                let v = lo + (hi - lo) * (j as f64 + 0.5) / m as f64;
                acc += (-(u - v) * (u - v) / (2.0 * sigma * sigma)).exp();
            }
        }
        let quad = acc / (m * m) as f64;
        assert_relative_eq!(
            gauss_uniform_norm_sq(sigma, lo, hi),
            quad,
            max_relative = 1e-6
        );
    }

    #[test]
    fn donut_conditional_integrates_to_one() {
        let mix = DonutMixture::new(50, 10.0, 0.2);
        let g = 400;
        let (lo, hi) = (-2.0, 2.0);
        let step = (hi - lo) / g as f64;
        let mut acc = 0.0;
        for i in 0..g {
            for j in 0..g {
                let y = lo + (i as f64 + 0.5) * step;
                let z = lo + (j as f64 + 0.5) * step;
                acc += mix.conditional_density(0.0, y, z);
            }
        }
        let integral = acc * step * step;
        assert_relative_eq!(integral, 1.0, max_relative = 1e-6);
    }

    #[test]
    fn donut_modes_at_zero_slice() {
        // at x = 0 the surviving components sit near (y, z) = (+-1, 0)
        let mix = DonutMixture::new(50, 10.0, 0.2);
        let modes = mix.conditional_mode_centers(0.0);
        assert!(!modes.is_empty());
        for m in &modes {
            assert!((m[0].abs() - 1.0).abs() < 0.1, "mode {m:?}");
            assert!(m[1].abs() < 0.2, "mode {m:?}");
        }
        assert!(modes.iter().any(|m| m[0] > 0.0));
        assert!(modes.iter().any(|m| m[0] < 0.0));
    }
}
