use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// A set of `n` points in `d` dimensions, stored row-wise.
///
/// All entries are validated to be finite on construction and the set is
/// never empty, so downstream numeric code can skip those checks.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    points: Array2<f64>,
}

impl SampleSet {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::EmptySampleSet);
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { points })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let d = rows[0].len();
        for r in rows {
            if r.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let arr = Array2::from_shape_vec((rows.len(), d), flat).expect("shape checked above");
        Self::new(arr)
    }

    /// One-dimensional convenience constructor (`n x 1`).
    pub fn from_column(xs: &[f64]) -> Result<Self> {
        if xs.is_empty() {
            return Err(Error::EmptySampleSet);
        }
        let arr = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("column shape");
        Self::new(arr)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.points.row(i)
    }

    pub fn points(&self) -> ArrayView2<'_, f64> {
        self.points.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.points
    }

    /// A new set containing the first `n` rows.
    pub fn head(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: n,
            });
        }
        Ok(Self {
            points: self.points.slice(ndarray::s![..n, ..]).to_owned(),
        })
    }

    /// Concatenate the rows of `self` and `other`.
    pub fn concat(&self, other: &SampleSet) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let stacked = ndarray::concatenate(
            ndarray::Axis(0),
            &[self.points.view(), other.points.view()],
        )
        .expect("same number of columns");
        Ok(Self { points: stacked })
    }
}
