//! The rotated-circle Gaussian mixture benchmark: generate training data,
//! fit a CDO of `(y, z)` given `x` with Laplace input / Gaussian output
//! kernels and median-heuristic bandwidths, and score conditional density
//! estimates against the analytic ground truth in L1 over the reference grid.

use std::path::Path;
use std::time::Instant;

use cdo_core::{
    fit, l1_error, median_heuristic, uniform_reference, AlphaChoice, DensityEstimate,
    DistanceMetric, FittedCdo, KernelSpec, PairedData, ReferenceMeasure, ReferenceMode, SampleSet,
};
use ndarray::{arr1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analytic::DonutMixture;
use crate::config::DonutConfig;
use crate::errors::{CliError, CliResult};
use crate::output::{ensure_out_dir, fmt_f64, out_path, write_csv, write_json, ResolvedConfig};

/// Deterministic per-run stream: one seed per (ladder index, repeat index).
fn run_seed(base: u64, n: usize, rep: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((n as u64) << 20)
        .wrapping_add(rep as u64)
}

/// Draw `n` samples from the donut mixture (standard normal via Box-Muller
/// on the explicit ChaCha stream).
pub fn sample_donut(mix: &DonutMixture, samples_per_mean: usize, seed: u64) -> SampleSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = mix.means.len() * samples_per_mean;
    let mut pts = Array2::<f64>::zeros((n, 3));
    let mut normal = || {
        let u1: f64 = loop {
            let u: f64 = rng.random();
            if u > 0.0 {
                break u;
            }
        };
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    };
    let mut r = 0;
    for mean in &mix.means {
        for _ in 0..samples_per_mean {
            for c in 0..3 {
                pts[[r, c]] = mean[c] + mix.noise_std * normal();
            }
            r += 1;
        }
    }
    SampleSet::new(pts).expect("finite donut samples")
}

pub struct DonutFit {
    pub model: FittedCdo,
    pub input_bandwidth: f64,
    pub output_bandwidth: f64,
    pub reference: ReferenceMeasure,
    pub fit_seconds: f64,
}

/// Split donut samples into `x` and `(y, z)`, resolve bandwidths and the
/// regularization schedule, and fit. The reference is the regular grid of
/// `floor(sqrt(N))^2` cell centers on the zero-centered side-4 square.
pub fn fit_donut(cfg: &DonutConfig, samples: &SampleSet) -> CliResult<DonutFit> {
    let n = samples.len();
    let x = SampleSet::new(samples.points().slice(ndarray::s![.., 0..1]).to_owned())
        .map_err(CliError::from)?;
    let yz = SampleSet::new(samples.points().slice(ndarray::s![.., 1..3]).to_owned())
        .map_err(CliError::from)?;
    let data = PairedData::new(x.clone(), yz.clone())?;
    let side = (n as f64).sqrt().floor() as usize;
    let m = side * side;
    let reference = uniform_reference(
        &[(-2.0, 2.0), (-2.0, 2.0)],
        m,
        ReferenceMode::Grid,
        0,
    )?;
    let input_bandwidth = match cfg.input_bandwidth {
        Some(b) => b,
        None => median_heuristic(&x, DistanceMetric::L1)?,
    };
    let output_bandwidth = match cfg.output_bandwidth {
        Some(b) => b,
        None => median_heuristic(&yz, DistanceMetric::Euclidean)?,
    };
    let input_kernel = KernelSpec::laplace(1, input_bandwidth)?;
    let output_kernel = KernelSpec::gaussian(2, output_bandwidth)?;
    let start = Instant::now();
    let model = fit(
        &data,
        reference.clone(),
        input_kernel,
        output_kernel,
        AlphaChoice::Schedule {
            a: cfg.schedule.a,
            b: cfg.schedule.b,
            c_prime: cfg.schedule.c_prime,
        },
    )?;
    Ok(DonutFit {
        model,
        input_bandwidth,
        output_bandwidth,
        reference,
        fit_seconds: start.elapsed().as_secs_f64(),
    })
}

/// L1 error of the raw conditional estimate at `slice_x` against the analytic
/// conditional density, integrated over the reference grid.
pub fn slice_l1_error(
    mix: &DonutMixture,
    fitted: &DonutFit,
    est: &DensityEstimate,
    slice_x: f64,
) -> CliResult<f64> {
    let err = l1_error(
        est,
        |p| mix.conditional_density(slice_x, p[0], p[1]),
        &fitted.reference,
    )?;
    Ok(err)
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialRow {
    pub n: usize,
    pub seed_index: usize,
    pub slice_x: f64,
    pub l1_error: f64,
    pub input_bandwidth: f64,
    pub output_bandwidth: f64,
    pub alpha: f64,
    pub m: usize,
}

#[derive(Debug, Serialize)]
pub struct SliceMedian {
    pub n: usize,
    pub slice_x: f64,
    pub median_l1: f64,
}

#[derive(Debug, Serialize)]
pub struct DonutSummary {
    pub config: serde_json::Map<String, serde_json::Value>,
    pub medians: Vec<SliceMedian>,
    pub max_fit_seconds: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[(values.len() - 1) / 2]
}

pub struct DonutOutcome {
    pub rows: Vec<TrialRow>,
    pub summary: DonutSummary,
}

pub fn run_donut(cfg: &DonutConfig, seed_override: Option<u64>) -> CliResult<DonutOutcome> {
    let base_seed = seed_override.unwrap_or(cfg.seed);
    let mix = DonutMixture::new(cfg.n_means, cfg.rotation_angle_deg, cfg.noise_std);
    let mut rows = Vec::new();
    let mut max_fit_seconds = 0.0f64;
    for &n in &cfg.ladder() {
        let samples_per_mean = n / cfg.n_means;
        for rep in 0..cfg.seeds {
            let samples = sample_donut(&mix, samples_per_mean, run_seed(base_seed, n, rep));
            let fitted = fit_donut(cfg, &samples)?;
            max_fit_seconds = max_fit_seconds.max(fitted.fit_seconds);
            for &slice_x in &cfg.slices {
                let est = fitted.model.predict_point(arr1(&[slice_x]).view())?;
                let err = slice_l1_error(&mix, &fitted, &est, slice_x)?;
                rows.push(TrialRow {
                    n,
                    seed_index: rep,
                    slice_x,
                    l1_error: err,
                    input_bandwidth: fitted.input_bandwidth,
                    output_bandwidth: fitted.output_bandwidth,
                    alpha: fitted.model.alpha(),
                    m: fitted.reference.len(),
                });
            }
        }
    }
    let mut medians = Vec::new();
    for &n in &cfg.ladder() {
        for &slice_x in &cfg.slices {
            let mut vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.n == n && r.slice_x == slice_x)
                .map(|r| r.l1_error)
                .collect();
            medians.push(SliceMedian {
                n,
                slice_x,
                median_l1: median(&mut vals),
            });
        }
    }
    let summary = DonutSummary {
        config: resolved_config(cfg, base_seed).json_map(),
        medians,
        max_fit_seconds,
    };
    Ok(DonutOutcome { rows, summary })
}

fn resolved_config(cfg: &DonutConfig, base_seed: u64) -> ResolvedConfig {
    let mut rc = ResolvedConfig::default();
    rc.push("command", "donut");
    rc.push("n_means", cfg.n_means);
    rc.push("noise_std", fmt_f64(cfg.noise_std));
    rc.push("rotation_angle_deg", fmt_f64(cfg.rotation_angle_deg));
    rc.push(
        "n_ladder",
        cfg.ladder()
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    rc.push(
        "slices",
        cfg.slices
            .iter()
            .map(|v| fmt_f64(*v))
            .collect::<Vec<_>>()
            .join(" "),
    );
    rc.push("seeds", cfg.seeds);
    rc.push("seed", base_seed);
    rc.push("schedule_a", fmt_f64(cfg.schedule.a));
    rc.push("schedule_b", fmt_f64(cfg.schedule.b));
    rc.push("schedule_c_prime", fmt_f64(cfg.schedule.c_prime));
    rc.push(
        "input_bandwidth",
        cfg.input_bandwidth
            .map(|b| fmt_f64(b))
            .unwrap_or_else(|| "median".into()),
    );
    rc.push(
        "output_bandwidth",
        cfg.output_bandwidth
            .map(|b| fmt_f64(b))
            .unwrap_or_else(|| "median".into()),
    );
    rc
}

/// Full donut command: benchmark CSV + JSON summary + plottable density
/// grids at the export slices for the largest ladder size, seed 0.
pub fn cmd_donut(cfg: &DonutConfig, out_dir: &Path, seed_override: Option<u64>) -> CliResult<()> {
    ensure_out_dir(out_dir)?;
    let base_seed = seed_override.unwrap_or(cfg.seed);
    let outcome = run_donut(cfg, seed_override)?;
    let rc = resolved_config(cfg, base_seed);
    write_csv(
        &out_path(out_dir, "donut_trials.csv"),
        &rc,
        &[
            "n",
            "seed_index",
            "slice_x",
            "l1_error",
            "input_bandwidth",
            "output_bandwidth",
            "alpha",
            "m",
        ],
        outcome.rows.iter().map(|r| {
            vec![
                r.n.to_string(),
                r.seed_index.to_string(),
                fmt_f64(r.slice_x),
                fmt_f64(r.l1_error),
                fmt_f64(r.input_bandwidth),
                fmt_f64(r.output_bandwidth),
                fmt_f64(r.alpha),
                r.m.to_string(),
            ]
        }),
    )?;
    write_json(
        &out_path(out_dir, "donut_summary.json"),
        &serde_json::to_value(&outcome.summary)
            .map_err(|e| CliError::Data(format!("json: {e}")))?,
    )?;

    // density grid exports for plotting
    let mix = DonutMixture::new(cfg.n_means, cfg.rotation_angle_deg, cfg.noise_std);
    let n_max = *cfg.ladder().iter().max().expect("nonempty ladder");
    let samples = sample_donut(&mix, n_max / cfg.n_means, run_seed(base_seed, n_max, 0));
    let fitted = fit_donut(cfg, &samples)?;
    for (idx, &slice_x) in cfg.grid_export_slices.iter().enumerate() {
        let est = fitted.model.predict_point(arr1(&[slice_x]).view())?;
        let raw = est.evaluate(fitted.reference.points())?;
        let normalized = est.normalize().ok();
        let norm_vals = match &normalized {
            Some(n) => Some(n.evaluate(fitted.reference.points())?),
            None => None,
        };
        let name = format!("donut_grid_slice{idx}.csv");
        let mut rc_grid = rc.clone();
        rc_grid.push("export_slice_x", fmt_f64(slice_x));
        rc_grid.push("export_n", n_max);
        write_csv(
            &out_path(out_dir, &name),
            &rc_grid,
            &["y", "z", "raw", "normalized", "truth"],
            (0..fitted.reference.len()).map(|i| {
                let p = fitted.reference.points().row(i);
                vec![
                    fmt_f64(p[0]),
                    fmt_f64(p[1]),
                    fmt_f64(raw[i]),
                    norm_vals
                        .as_ref()
                        .map(|v| fmt_f64(v[i]))
                        .unwrap_or_default(),
                    fmt_f64(mix.conditional_density(slice_x, p[0], p[1])),
                ]
            }),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{DonutConfig, RawConfig};

    fn small_cfg() -> DonutConfig {
        let raw = RawConfig::parse(
            "[donut]\nn_means = 10\nsamples_per_mean = 10\nseeds = 2\nslices = 0.0\n",
        )
        .unwrap();
        DonutConfig::from_reader(raw.section("donut")).unwrap()
    }

    #[test]
    fn ground_truth_self_check_is_zero() {
        // the analytic conditional compared to itself over the grid
        let cfg = small_cfg();
        let mix = DonutMixture::new(cfg.n_means, cfg.rotation_angle_deg, cfg.noise_std);
        let reference =
            uniform_reference(&[(-2.0, 2.0), (-2.0, 2.0)], 100, ReferenceMode::Grid, 0).unwrap();
        let mut acc = 0.0f64;
        for i in 0..reference.len() {
            let p = reference.points().row(i);
            let t = mix.conditional_density(0.0, p[0], p[1]);
            acc += (t - t).abs();
        }
        assert_eq!(acc, 0.0);
    }

    #[test]
    fn donut_sampling_shapes_and_determinism() {
        let mix = DonutMixture::new(10, 10.0, 0.2);
        let a = sample_donut(&mix, 5, 3);
        let b = sample_donut(&mix, 5, 3);
        assert_eq!(a.len(), 50);
        assert_eq!(a.dim(), 3);
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn run_donut_produces_rows_and_medians() {
        let cfg = small_cfg();
        let outcome = run_donut(&cfg, None).unwrap();
        assert_eq!(outcome.rows.len(), 2); // 1 ladder size x 2 seeds x 1 slice
        assert_eq!(outcome.summary.medians.len(), 1);
        assert!(outcome.summary.medians[0].median_l1.is_finite());
        // M = floor(sqrt(100))^2 = 100
        assert_eq!(outcome.rows[0].m, 100);
    }
}
