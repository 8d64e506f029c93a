//! Flat `key = value` configuration files with one section per command.
//!
//! Unknown sections and unknown keys are hard errors. Lines starting with `#`
//! and blank lines are ignored. List values are comma-separated; interval
//! lists use `lo:hi` items.

use std::collections::BTreeMap;

use crate::errors::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    sections: BTreeMap<String, BTreeMap<String, (String, usize)>>,
}

pub const KNOWN_SECTIONS: [&str; 5] = ["donut", "fit", "predict", "bound-check", "reconstruct"];

impl RawConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut sections: BTreeMap<String, BTreeMap<String, (String, usize)>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') {
                if !line.ends_with(']') {
                    return Err(CliError::Usage(format!(
                        "config line {}: malformed section header `{line}`",
                        lineno + 1
                    )));
                }
                let name = line[1..line.len() - 1].trim().to_string();
                if !KNOWN_SECTIONS.contains(&name.as_str()) {
                    return Err(CliError::Usage(format!(
                        "config line {}: unknown section `[{name}]`",
                        lineno + 1
                    )));
                }
                sections.entry(name.clone()).or_default();
                current = Some(name);
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "config line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                )));
            };
            let section = current.as_ref().ok_or_else(|| {
                CliError::Usage(format!(
                    "config line {}: key outside a [section]",
                    lineno + 1
                ))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            let entry = sections.get_mut(section).expect("section created above");
            if entry.insert(key.clone(), (value, lineno + 1)).is_some() {
                return Err(CliError::Usage(format!(
                    "config line {}: duplicate key `{key}` in [{section}]",
                    lineno + 1
                )));
            }
        }
        Ok(Self { sections })
    }

    pub fn load(path: &std::path::Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn section(&self, name: &str) -> SectionReader {
        SectionReader {
            section: name.to_string(),
            map: self.sections.get(name).cloned().unwrap_or_default(),
        }
    }

    /// Validate every section present in the file against its command schema,
    /// so a typo anywhere fails fast, not just in the active command.
    pub fn validate_all(&self) -> CliResult<()> {
        for name in self.sections.keys() {
            match name.as_str() {
                "donut" => {
                    DonutConfig::from_reader(self.section(name))?;
                }
                "fit" => {
                    FitConfig::from_reader(self.section(name))?;
                }
                "predict" => {
                    PredictConfig::from_reader(self.section(name))?;
                }
                "bound-check" => {
                    BoundCheckConfig::from_reader(self.section(name))?;
                }
                "reconstruct" => {
                    ReconstructConfig::from_reader(self.section(name))?;
                }
                _ => unreachable!("unknown sections rejected at parse time"),
            }
        }
        Ok(())
    }
}

pub struct SectionReader {
    section: String,
    map: BTreeMap<String, (String, usize)>,
}

impl SectionReader {
    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key).map(|(v, _)| v)
    }

    fn bad(&self, key: &str, value: &str, want: &str) -> CliError {
        CliError::Usage(format!(
            "config [{}] {key} = `{value}`: expected {want}",
            self.section
        ))
    }

    pub fn f64(&mut self, key: &str, default: f64) -> CliResult<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| self.bad(key, &v, "a finite number")),
        }
    }

    pub fn usize(&mut self, key: &str, default: usize) -> CliResult<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<usize>()
                .map_err(|_| self.bad(key, &v, "a non-negative integer")),
        }
    }

    pub fn u64(&mut self, key: &str, default: u64) -> CliResult<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .parse::<u64>()
                .map_err(|_| self.bad(key, &v, "an unsigned integer")),
        }
    }

    pub fn string(&mut self, key: &str, default: &str) -> String {
        self.take(key).unwrap_or_else(|| default.to_string())
    }

    pub fn choice(&mut self, key: &str, options: &[&str], default: &str) -> CliResult<String> {
        let v = self.string(key, default);
        if options.contains(&v.as_str()) {
            Ok(v)
        } else {
            Err(self.bad(key, &v, &format!("one of {options:?}")))
        }
    }

    pub fn list_f64(&mut self, key: &str, default: &[f64]) -> CliResult<Vec<f64>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| self.bad(key, &v, "a comma-separated list of numbers"))
                })
                .collect(),
        }
    }

    pub fn list_usize(&mut self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| self.bad(key, &v, "a comma-separated list of integers"))
                })
                .collect(),
        }
    }

    /// `auto` or a comma-separated list of `lo:hi` intervals.
    pub fn bounds(&mut self, key: &str) -> CliResult<Option<Vec<(f64, f64)>>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.trim() == "auto" => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for item in v.split(',') {
                    let Some((lo, hi)) = item.split_once(':') else {
                        return Err(self.bad(key, &v, "`auto` or `lo:hi, lo:hi, ...`"));
                    };
                    let lo = lo.trim().parse::<f64>();
                    let hi = hi.trim().parse::<f64>();
                    match (lo, hi) {
                        (Ok(lo), Ok(hi)) if lo.is_finite() && hi.is_finite() && hi > lo => {
                            out.push((lo, hi));
                        }
                        _ => return Err(self.bad(key, &v, "`auto` or `lo:hi, lo:hi, ...`")),
                    }
                }
                Ok(Some(out))
            }
        }
    }

    /// `median` or an explicit positive bandwidth.
    pub fn bandwidth(&mut self, key: &str) -> CliResult<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) if v.trim() == "median" => Ok(None),
            Some(v) => v
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite() && *x > 0.0)
                .map(Some)
                .ok_or_else(|| self.bad(key, &v, "`median` or a positive number")),
        }
    }

    pub fn finish(self) -> CliResult<()> {
        if let Some((key, (_, line))) = self.map.into_iter().next() {
            return Err(CliError::Usage(format!(
                "config line {line}: unknown key `{key}` in [{}]",
                self.section
            )));
        }
        Ok(())
    }
}

/// Shared schedule parameters `a`, `b`, `c'` with the crate defaults.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub a: f64,
    pub b: f64,
    pub c_prime: f64,
}

impl ScheduleParams {
    fn from_reader(r: &mut SectionReader) -> CliResult<Self> {
        Ok(Self {
            a: r.f64("schedule_a", 0.49)?,
            b: r.f64("schedule_b", 0.49)?,
            c_prime: r.f64("schedule_c_prime", 0.99999)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DonutConfig {
    pub n_means: usize,
    pub samples_per_mean: usize,
    pub noise_std: f64,
    pub rotation_angle_deg: f64,
    pub slices: Vec<f64>,
    pub n_ladder: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
    pub schedule: ScheduleParams,
    pub input_bandwidth: Option<f64>,
    pub output_bandwidth: Option<f64>,
    pub grid_export_slices: Vec<f64>,
}

impl DonutConfig {
    pub fn from_reader(mut r: SectionReader) -> CliResult<Self> {
        let cfg = Self {
            n_means: r.usize("n_means", 50)?,
            samples_per_mean: r.usize("samples_per_mean", 50)?,
            noise_std: r.f64("noise_std", 0.2)?,
            rotation_angle_deg: r.f64("rotation_angle_deg", 10.0)?,
            slices: r.list_f64("slices", &[0.0, 1.0])?,
            n_ladder: r.list_usize("n_ladder", &[])?,
            seeds: r.usize("seeds", 10)?,
            seed: r.u64("seed", 0)?,
            schedule: ScheduleParams::from_reader(&mut r)?,
            input_bandwidth: r.bandwidth("input_bandwidth")?,
            output_bandwidth: r.bandwidth("output_bandwidth")?,
            grid_export_slices: r.list_f64("grid_export_slices", &[0.0, 1.0])?,
        };
        r.finish()?;
        if cfg.n_means == 0 || cfg.samples_per_mean == 0 {
            return Err(CliError::Usage(
                "config [donut]: n_means and samples_per_mean must be positive".into(),
            ));
        }
        if !(cfg.noise_std > 0.0) {
            return Err(CliError::Usage(
                "config [donut]: noise_std must be positive".into(),
            ));
        }
        if cfg.seeds == 0 {
            return Err(CliError::Usage("config [donut]: seeds must be >= 1".into()));
        }
        for &n in &cfg.n_ladder {
            if n == 0 || n % cfg.n_means != 0 {
                return Err(CliError::Usage(format!(
                    "config [donut]: ladder size {n} is not a positive multiple of n_means"
                )));
            }
        }
        Ok(cfg)
    }

    /// Ladder of total sample sizes; defaults to the single configured size.
    pub fn ladder(&self) -> Vec<usize> {
        if self.n_ladder.is_empty() {
            vec![self.n_means * self.samples_per_mean]
        } else {
            self.n_ladder.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub input_kernel: String,
    pub output_kernel: String,
    pub input_bandwidth: Option<f64>,
    pub output_bandwidth: Option<f64>,
    pub ref_mode: String,
    pub ref_m: usize,
    pub ref_bounds: Option<Vec<(f64, f64)>>,
    pub alpha_mode: String,
    pub alpha: f64,
    pub alpha_prime: f64,
    pub schedule: ScheduleParams,
    pub grouping: String,
    pub seed: u64,
}

impl FitConfig {
    pub fn from_reader(mut r: SectionReader) -> CliResult<Self> {
        let cfg = Self {
            input_kernel: r.choice("input_kernel", &["gaussian", "laplace"], "gaussian")?,
            output_kernel: r.choice("output_kernel", &["gaussian", "laplace"], "gaussian")?,
            input_bandwidth: r.bandwidth("input_bandwidth")?,
            output_bandwidth: r.bandwidth("output_bandwidth")?,
            ref_mode: r.choice("ref_mode", &["grid", "iid"], "grid")?,
            ref_m: r.usize("ref_m", 1024)?,
            ref_bounds: r.bounds("ref_bounds")?,
            alpha_mode: r.choice("alpha_mode", &["schedule", "explicit"], "schedule")?,
            alpha: r.f64("alpha", 0.0)?,
            alpha_prime: r.f64("alpha_prime", 0.0)?,
            schedule: ScheduleParams::from_reader(&mut r)?,
            grouping: r.choice("grouping", &["auto", "on", "off"], "auto")?,
            seed: r.u64("seed", 0)?,
        };
        r.finish()?;
        if cfg.alpha_mode == "explicit" && !(cfg.alpha > 0.0 && cfg.alpha_prime > 0.0) {
            return Err(CliError::Usage(
                "config [fit]: explicit alpha mode requires positive alpha and alpha_prime"
                    .into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub write_densities: bool,
}

impl PredictConfig {
    pub fn from_reader(mut r: SectionReader) -> CliResult<Self> {
        let densities = r.choice("write_densities", &["true", "false"], "true")?;
        let cfg = Self {
            n_samples: r.usize("n_samples", 0)?,
            seed: r.u64("seed", 0)?,
            write_densities: densities == "true",
        };
        r.finish()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheckConfig {
    pub n_ladder: Vec<usize>,
    pub m_ladder: Vec<usize>,
    pub trials: usize,
    pub a: f64,
    pub b: f64,
    pub alpha_mode: String,
    pub alpha_fixed: f64,
    pub c_prime: f64,
    pub sigma: f64,
    pub p_lo: f64,
    pub p_hi: f64,
    pub m0: usize,
    pub seed: u64,
    pub solver: String,
    pub rate_trials: usize,
}

impl BoundCheckConfig {
    pub fn from_reader(mut r: SectionReader) -> CliResult<Self> {
        let cfg = Self {
            n_ladder: r.list_usize("n_ladder", &[1000, 10_000])?,
            m_ladder: r.list_usize("m_ladder", &[1000, 10_000])?,
            trials: r.usize("trials", 200)?,
            a: r.f64("a", 0.25)?,
            b: r.f64("b", 0.25)?,
            alpha_mode: r.choice("alpha_mode", &["schedule", "fixed"], "schedule")?,
            alpha_fixed: r.f64("alpha_fixed", 0.1)?,
            c_prime: r.f64("c_prime", 0.99999)?,
            sigma: r.f64("sigma", 0.25)?,
            p_lo: r.f64("p_lo", 0.25)?,
            p_hi: r.f64("p_hi", 0.75)?,
            m0: r.usize("m0", 2000)?,
            seed: r.u64("seed", 0)?,
            solver: r.choice("solver", &["auto", "dense", "lowrank"], "auto")?,
            rate_trials: r.usize("rate_trials", 100)?,
        };
        r.finish()?;
        if cfg.n_ladder.is_empty() || cfg.m_ladder.is_empty() || cfg.trials == 0 {
            return Err(CliError::Usage(
                "config [bound-check]: ladders and trials must be nonempty".into(),
            ));
        }
        if !(cfg.p_lo >= 0.0 && cfg.p_hi <= 1.0 && cfg.p_hi > cfg.p_lo) {
            return Err(CliError::Usage(
                "config [bound-check]: require 0 <= p_lo < p_hi <= 1".into(),
            ));
        }
        if !(cfg.sigma > 0.0) {
            return Err(CliError::Usage(
                "config [bound-check]: sigma must be positive".into(),
            ));
        }
        if cfg.m0 < 16 {
            return Err(CliError::Usage(
                "config [bound-check]: m0 must be at least 16".into(),
            ));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructConfig {
    pub kernel: String,
    pub bandwidth: Option<f64>,
    pub ref_mode: String,
    pub ref_m: usize,
    pub ref_bounds: Option<Vec<(f64, f64)>>,
    pub alpha_mode: String,
    pub alpha: f64,
    pub schedule: ScheduleParams,
    pub method: String,
    pub seed: u64,
}

impl ReconstructConfig {
    pub fn from_reader(mut r: SectionReader) -> CliResult<Self> {
        let cfg = Self {
            kernel: r.choice("kernel", &["gaussian", "laplace"], "gaussian")?,
            bandwidth: r.bandwidth("bandwidth")?,
            ref_mode: r.choice("ref_mode", &["grid", "iid"], "grid")?,
            ref_m: r.usize("ref_m", 1024)?,
            ref_bounds: r.bounds("ref_bounds")?,
            alpha_mode: r.choice("alpha_mode", &["schedule", "explicit"], "schedule")?,
            alpha: r.f64("alpha", 0.0)?,
            schedule: ScheduleParams::from_reader(&mut r)?,
            method: r.choice("method", &["paper", "representer"], "paper")?,
            seed: r.u64("seed", 0)?,
        };
        r.finish()?;
        if cfg.alpha_mode == "explicit" && !(cfg.alpha > 0.0) {
            return Err(CliError::Usage(
                "config [reconstruct]: explicit alpha mode requires positive alpha".into(),
            ));
        }
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = RawConfig::parse(
            "# comment\n[donut]\nn_means = 10\nsamples_per_mean = 4\n\n[fit]\nref_m = 64\n",
        )
        .unwrap();
        let d = DonutConfig::from_reader(cfg.section("donut")).unwrap();
        assert_eq!(d.n_means, 10);
        assert_eq!(d.seeds, 10);
        assert_eq!(d.schedule.c_prime, 0.99999);
        let f = FitConfig::from_reader(cfg.section("fit")).unwrap();
        assert_eq!(f.ref_m, 64);
        cfg.validate_all().unwrap();
    }

    #[test]
    fn unknown_key_is_fatal() {
        let cfg = RawConfig::parse("[donut]\nnoise_sd = 0.2\n").unwrap();
        let err = DonutConfig::from_reader(cfg.section("donut")).unwrap_err();
        assert!(err.to_string().contains("unknown key"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_section_is_fatal() {
        assert!(RawConfig::parse("[donuts]\nx = 1\n").is_err());
    }

    #[test]
    fn key_outside_section_is_fatal() {
        assert!(RawConfig::parse("x = 1\n[donut]\n").is_err());
    }

    #[test]
    fn duplicate_key_is_fatal() {
        assert!(RawConfig::parse("[donut]\nseeds = 1\nseeds = 2\n").is_err());
    }

    #[test]
    fn bounds_and_bandwidth_forms() {
        let cfg = RawConfig::parse(
            "[reconstruct]\nref_bounds = -1:2, 0:4\nbandwidth = 0.5\n[fit]\nref_bounds = auto\ninput_bandwidth = median\n",
        )
        .unwrap();
        let rc = ReconstructConfig::from_reader(cfg.section("reconstruct")).unwrap();
        assert_eq!(rc.ref_bounds, Some(vec![(-1.0, 2.0), (0.0, 4.0)]));
        assert_eq!(rc.bandwidth, Some(0.5));
        let fc = FitConfig::from_reader(cfg.section("fit")).unwrap();
        assert_eq!(fc.ref_bounds, None);
        assert_eq!(fc.input_bandwidth, None);
    }

    #[test]
    fn donut_ladder_divisibility() {
        let cfg = RawConfig::parse("[donut]\nn_ladder = 100, 450\n").unwrap();
        assert!(DonutConfig::from_reader(cfg.section("donut")).is_err());
    }
}
