//! Versioned model files: a plain-text header naming kernels, dimensions,
//! regularization and counts, followed by raw little-endian 64-bit floats for
//! the matrices. Round trips are bit-exact, which underpins the determinism
//! guarantee for `fit`/`predict`.

use std::io::{Read, Write};
use std::path::Path;

use cdo_core::{FittedCdo, KernelSpec, ReferenceMeasure, ReferenceMode, SampleSet};
use ndarray::{Array1, Array2};

use crate::errors::{CliError, CliResult};
use crate::output::fmt_f64;

const MAGIC: &str = "cdo-model v1";

fn kernel_to_line(k: &KernelSpec) -> CliResult<String> {
    let (family, bws) = match k {
        KernelSpec::Gaussian { bandwidths } => ("gaussian", bandwidths),
        KernelSpec::Laplace { bandwidths } => ("laplace", bandwidths),
        KernelSpec::Product { .. } => {
            return Err(CliError::Data(
                "product kernels are not supported in model files".into(),
            ))
        }
    };
    let mut s = family.to_string();
    for b in bws {
        s.push(' ');
        s.push_str(&fmt_f64(*b));
    }
    Ok(s)
}

fn kernel_from_line(line: &str) -> CliResult<KernelSpec> {
    let mut it = line.split_whitespace();
    let family = it
        .next()
        .ok_or_else(|| CliError::Data("model file: empty kernel line".into()))?;
    let bws: Vec<f64> = it
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Data(format!("model file: bad bandwidth `{t}`")))
        })
        .collect::<CliResult<_>>()?;
    match family {
        "gaussian" => KernelSpec::gaussian_per_dim(bws),
        "laplace" => KernelSpec::laplace_per_dim(bws),
        other => {
            return Err(CliError::Data(format!(
                "model file: unknown kernel family `{other}`"
            )))
        }
    }
    .map_err(|e| CliError::Data(format!("model file: {e}")))
}

/// Everything `predict` needs beyond the fitted operator itself.
pub struct ModelFile {
    pub model: FittedCdo,
    pub train_y_mean: Vec<f64>,
}

pub fn save_model(path: &Path, model: &FittedCdo, train_y_mean: &[f64]) -> CliResult<()> {
    let mut header = String::new();
    header.push_str(MAGIC);
    header.push('\n');
    header.push_str(&format!(
        "input_kernel = {}\n",
        kernel_to_line(model.input_kernel())?
    ));
    header.push_str(&format!(
        "output_kernel = {}\n",
        kernel_to_line(model.output_kernel())?
    ));
    header.push_str(&format!("inputs_rows = {}\n", model.inputs().len()));
    header.push_str(&format!("inputs_dim = {}\n", model.inputs().dim()));
    let reference = model.reference();
    header.push_str(&format!("ref_rows = {}\n", reference.len()));
    header.push_str(&format!("ref_dim = {}\n", reference.dim()));
    header.push_str(&format!("ref_mass = {}\n", fmt_f64(reference.total_mass())));
    header.push_str(&format!(
        "ref_mode = {}\n",
        match reference.mode() {
            ReferenceMode::Grid => "grid",
            ReferenceMode::IidUniform => "iid",
        }
    ));
    let bounds = reference
        .bounds()
        .iter()
        .map(|(lo, hi)| format!("{}:{}", fmt_f64(*lo), fmt_f64(*hi)))
        .collect::<Vec<_>>()
        .join(",");
    header.push_str(&format!("ref_bounds = {bounds}\n"));
    header.push_str(&format!("alpha = {}\n", fmt_f64(model.alpha())));
    header.push_str(&format!("alpha_prime = {}\n", fmt_f64(model.alpha_prime())));
    header.push_str(&format!("n_total = {}\n", model.n_total()));
    if let Some(sizes) = model.group_sizes() {
        let s = sizes
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        header.push_str(&format!("group_sizes = {s}\n"));
    }
    let mean = train_y_mean
        .iter()
        .map(|v| fmt_f64(*v))
        .collect::<Vec<_>>()
        .join(" ");
    header.push_str(&format!("train_y_mean = {mean}\n"));
    header.push_str("end_header\n");

    let mut f = std::fs::File::create(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    f.write_all(header.as_bytes())?;
    let mut write_mat = |m: ndarray::ArrayView2<'_, f64>| -> CliResult<()> {
        let mut buf = Vec::with_capacity(m.len() * 8);
        for v in m.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
        Ok(())
    };
    write_mat(model.w_matrix().view())?;
    write_mat(model.inputs().points())?;
    write_mat(reference.points().points())?;
    Ok(())
}

pub fn load_model(path: &Path) -> CliResult<ModelFile> {
    let mut raw = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut raw)?;
    let header_end = raw
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| CliError::Data("model file: missing end_header".into()))?
        + 11;
    let header = std::str::from_utf8(&raw[..header_end])
        .map_err(|_| CliError::Data("model file: header is not UTF-8".into()))?;
    let mut lines = header.lines();
    let magic = lines.next().unwrap_or_default();
    if magic != MAGIC {
        return Err(CliError::Data(format!(
            "model file: version mismatch (got `{magic}`, expected `{MAGIC}`)"
        )));
    }
    let mut fields = std::collections::BTreeMap::new();
    for line in lines {
        if line == "end_header" {
            break;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Data(format!("model file: bad header line `{line}`")))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |key: &str| -> CliResult<&String> {
        fields
            .get(key)
            .ok_or_else(|| CliError::Data(format!("model file: missing header field `{key}`")))
    };
    let parse_usize = |key: &str| -> CliResult<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| CliError::Data(format!("model file: bad `{key}`")))
    };
    let parse_f64 = |key: &str| -> CliResult<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| CliError::Data(format!("model file: bad `{key}`")))
    };

    let input_kernel = kernel_from_line(get("input_kernel")?)?;
    let output_kernel = kernel_from_line(get("output_kernel")?)?;
    let inputs_rows = parse_usize("inputs_rows")?;
    let inputs_dim = parse_usize("inputs_dim")?;
    let ref_rows = parse_usize("ref_rows")?;
    let ref_dim = parse_usize("ref_dim")?;
    let ref_mass = parse_f64("ref_mass")?;
    let ref_mode = match get("ref_mode")?.as_str() {
        "grid" => ReferenceMode::Grid,
        "iid" => ReferenceMode::IidUniform,
        other => {
            return Err(CliError::Data(format!(
                "model file: unknown ref_mode `{other}`"
            )))
        }
    };
    let bounds: Vec<(f64, f64)> = get("ref_bounds")?
        .split(',')
        .map(|item| {
            let (lo, hi) = item
                .split_once(':')
                .ok_or_else(|| CliError::Data("model file: bad ref_bounds".into()))?;
            let lo = lo
                .parse::<f64>()
                .map_err(|_| CliError::Data("model file: bad ref_bounds".into()))?;
            let hi = hi
                .parse::<f64>()
                .map_err(|_| CliError::Data("model file: bad ref_bounds".into()))?;
            Ok((lo, hi))
        })
        .collect::<CliResult<_>>()?;
    let alpha = parse_f64("alpha")?;
    let alpha_prime = parse_f64("alpha_prime")?;
    let n_total = parse_usize("n_total")?;
    let group_sizes: Option<Vec<usize>> = match fields.get("group_sizes") {
        None => None,
        Some(s) => Some(
            s.split_whitespace()
                .map(|t| {
                    t.parse::<usize>()
                        .map_err(|_| CliError::Data("model file: bad group_sizes".into()))
                })
                .collect::<CliResult<_>>()?,
        ),
    };
    let train_y_mean: Vec<f64> = get("train_y_mean")?
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| CliError::Data("model file: bad train_y_mean".into()))
        })
        .collect::<CliResult<_>>()?;

    let body = &raw[header_end..];
    let expected =
        (ref_rows * inputs_rows + inputs_rows * inputs_dim + ref_rows * ref_dim) * 8;
    if body.len() != expected {
        return Err(CliError::Data(format!(
            "model file: payload has {} bytes, expected {expected}",
            body.len()
        )));
    }
    let mut offset = 0usize;
    let mut read_mat = |rows: usize, cols: usize| -> Array2<f64> {
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            let mut b = [0u8; 8];
            b.copy_from_slice(&body[offset..offset + 8]);
            data.push(f64::from_le_bytes(b));
            offset += 8;
        }
        Array2::from_shape_vec((rows, cols), data).expect("sized above")
    };
    let w = read_mat(ref_rows, inputs_rows);
    let inputs = read_mat(inputs_rows, inputs_dim);
    let ref_points = read_mat(ref_rows, ref_dim);

    let inputs = SampleSet::new(inputs).map_err(|e| CliError::Data(format!("model file: {e}")))?;
    let ref_points =
        SampleSet::new(ref_points).map_err(|e| CliError::Data(format!("model file: {e}")))?;
    let reference = ReferenceMeasure::from_points(ref_points, ref_mass, ref_mode, bounds)
        .map_err(|e| CliError::Data(format!("model file: {e}")))?;
    let model = FittedCdo::from_parts(
        input_kernel,
        output_kernel,
        inputs,
        reference,
        alpha,
        alpha_prime,
        n_total,
        group_sizes,
        w,
    )
    .map_err(|e| CliError::Numeric(format!("model file: rebuilding factorization: {e}")))?;
    Ok(ModelFile {
        model,
        train_y_mean,
    })
}

/// Per-dimension mean of the training targets, used by the scaled MAE.
pub fn column_means(y: &SampleSet) -> Vec<f64> {
    let n = y.len() as f64;
    (0..y.dim())
        .map(|c| y.points().column(c).iter().sum::<f64>() / n)
        .collect()
}

/// Evaluate a density estimate's beta against a stored model after a round
/// trip; used by tests.
pub fn beta_for(model: &FittedCdo, x: &Array1<f64>) -> CliResult<Array1<f64>> {
    Ok(model.predict_point(x.view())?.beta().to_owned())
}
