use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Rows of observations, `N×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    rows: DMatrix<T>,
    column_names: Option<Vec<String>>,
    centering_offset: Option<DVector<T>>,
    rejected_rows: usize,
}

impl<T: Real> Dataset<T> {
    pub fn new(rows: DMatrix<T>) -> Result<Self> {
        if rows.nrows() == 0 || rows.ncols() == 0 {
            return Err(Error::DegenerateData("dataset needs at least one row and one column".into()));
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("dataset contains NaN or infinite values".into()));
        }
        Ok(Self {
            rows,
            column_names: None,
            centering_offset: None,
            rejected_rows: 0,
        })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some(bad) = rows.iter().find(|r| r.len() != d) {
            return Err(Error::dims("dataset row", d, bad.len()));
        }
        Self::new(DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]))
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Self {
        self.column_names = Some(names);
        self
    }

    pub fn with_rejected_rows(mut self, rejected: usize) -> Self {
        self.rejected_rows = rejected;
        self
    }

    pub fn rows(&self) -> &DMatrix<T> {
        &self.rows
    }

    pub fn into_rows(self) -> DMatrix<T> {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    pub fn centering_offset(&self) -> Option<&DVector<T>> {
        self.centering_offset.as_ref()
    }

    pub fn rejected_rows(&self) -> usize {
        self.rejected_rows
    }

    pub fn mean(&self) -> DVector<T> {
        self.rows.row_mean().transpose()
    }

    /// Sample covariance with the `N-1` denominator.
    pub fn covariance(&self) -> Result<DMatrix<T>> {
        let n = self.len();
        if n < 2 {
            return Err(Error::DegenerateData("covariance needs at least two rows".into()));
        }
        let mu = self.mean();
        let mut centered = self.rows.clone();
        for mut row in centered.row_iter_mut() {
            row -= mu.transpose();
        }
        let cov = centered.transpose() * &centered / T::of_usize(n - 1);
        Ok((&cov + cov.transpose()) * T::of(0.5))
    }

    /// Subtracts the column means and records them as the centering offset.
    pub fn centered(self) -> Self {
        let mu = self.mean();
        self.shifted_by(mu)
    }

    /// Subtracts a given offset (e.g. a training mean) and records it.
    pub fn shifted_by(mut self, offset: DVector<T>) -> Self {
        for mut row in self.rows.row_iter_mut() {
            row -= offset.transpose();
        }
        self.centering_offset = Some(match self.centering_offset.take() {
            Some(prev) => prev + offset,
            None => offset,
        });
        self
    }

    /// Contiguous row blocks of at most `size` rows.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = DMatrix<T>> + '_ {
        let size = size.max(1);
        let n = self.len();
        (0..n).step_by(size).map(move |start| {
            let len = size.min(n - start);
            self.rows.rows(start, len).into_owned()
        })
    }

    pub fn split_at(&self, n_first: usize) -> Result<(Self, Self)> {
        if n_first == 0 || n_first >= self.len() {
            return Err(Error::Config(format!("cannot split {} rows at {n_first}", self.len())));
        }
        let a = Self::new(self.rows.rows(0, n_first).into_owned())?;
        let b = Self::new(self.rows.rows(n_first, self.len() - n_first).into_owned())?;
        Ok((a, b))
    }
}
