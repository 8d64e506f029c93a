//! Strict CSV input: a header row with columns `x0..x{p-1}` and optionally
//! `y0..y{q-1}` (any order), UTF-8, comma-separated, `.` decimal.

use std::path::Path;

use cdo_core::SampleSet;
use ndarray::Array2;

use crate::errors::{CliError, CliResult};

pub struct XyData {
    pub x: SampleSet,
    pub y: Option<SampleSet>,
}

fn column_index(name: &str, prefix: char) -> Option<usize> {
    name.strip_prefix(prefix)
        .and_then(|rest| rest.parse::<usize>().ok())
}

pub fn read_xy_csv(path: &Path) -> CliResult<XyData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header: {e}", path.display())))?
        .clone();
    let mut x_cols: Vec<(usize, usize)> = Vec::new(); // (dimension index, csv column)
    let mut y_cols: Vec<(usize, usize)> = Vec::new();
    for (col, name) in headers.iter().enumerate() {
        if let Some(i) = column_index(name, 'x') {
            x_cols.push((i, col));
        } else if let Some(i) = column_index(name, 'y') {
            y_cols.push((i, col));
        } else {
            return Err(CliError::Data(format!(
                "{}: unknown column `{name}` (expected x0..x{{d_in-1}}, y0..y{{d_out-1}})",
                path.display()
            )));
        }
    }
    x_cols.sort_unstable();
    y_cols.sort_unstable();
    for (want, (got, _)) in x_cols.iter().enumerate() {
        if *got != want {
            return Err(CliError::Data(format!(
                "{}: x columns must be exactly x0..x{} (missing x{want})",
                path.display(),
                x_cols.len().saturating_sub(1)
            )));
        }
    }
    for (want, (got, _)) in y_cols.iter().enumerate() {
        if *got != want {
            return Err(CliError::Data(format!(
                "{}: y columns must be exactly y0..y{} (missing y{want})",
                path.display(),
                y_cols.len().saturating_sub(1)
            )));
        }
    }
    if x_cols.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no x columns found",
            path.display()
        )));
    }
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    let mut rows = 0usize;
    for (recno, record) in reader.records().enumerate() {
        let record =
            record.map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), recno + 2)))?;
        let parse = |col: usize| -> CliResult<f64> {
            let field = record.get(col).ok_or_else(|| {
                CliError::Data(format!(
                    "{}: row {}: missing column {col}",
                    path.display(),
                    recno + 2
                ))
            })?;
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    CliError::Data(format!(
                        "{}: row {}: `{field}` is not a finite number",
                        path.display(),
                        recno + 2
                    ))
                })
        };
        for &(_, col) in &x_cols {
            xs.push(parse(col)?);
        }
        for &(_, col) in &y_cols {
            ys.push(parse(col)?);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Data(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let x = SampleSet::new(
        Array2::from_shape_vec((rows, x_cols.len()), xs).expect("consistent row width"),
    )
    .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let y = if y_cols.is_empty() {
        None
    } else {
        Some(
            SampleSet::new(
                Array2::from_shape_vec((rows, y_cols.len()), ys).expect("consistent row width"),
            )
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?,
        )
    };
    Ok(XyData { x, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_xy() {
        let f = write_tmp("x0,y0,y1\n1.0,2.0,3.0\n4.0,5.0,6.0\n");
        let data = read_xy_csv(f.path()).unwrap();
        assert_eq!(data.x.len(), 2);
        assert_eq!(data.x.dim(), 1);
        let y = data.y.unwrap();
        assert_eq!(y.dim(), 2);
        assert_eq!(y.row(1)[0], 5.0);
    }

    #[test]
    fn column_order_free() {
        let f = write_tmp("y0,x1,x0\n1.0,2.0,3.0\n");
        let data = read_xy_csv(f.path()).unwrap();
        assert_eq!(data.x.row(0)[0], 3.0);
        assert_eq!(data.x.row(0)[1], 2.0);
    }

    #[test]
    fn rejects_bad_schema() {
        assert!(read_xy_csv(write_tmp("x0,z0\n1,2\n").path()).is_err());
        assert!(read_xy_csv(write_tmp("x0,x2\n1,2\n").path()).is_err());
        assert!(read_xy_csv(write_tmp("x0\n").path()).is_err());
        assert!(read_xy_csv(write_tmp("x0\nNaN\n").path()).is_err());
        assert!(read_xy_csv(write_tmp("x0\n1,5\n").path()).is_err());
    }
}
