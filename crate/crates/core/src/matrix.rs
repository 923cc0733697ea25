//! Dense row-major feature matrix and the column schema that travels with it.
//!
//! Missing cells are stored as NaN. Every other routine treats a NaN cell
//! as "not observed".

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices. All rows must share one length.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    pub fn rows_iter(&self) -> impl Iterator<Item = &[T]> {
        // chunks_exact panics on a zero chunk size
        let cols = self.cols.max(1);
        self.data.chunks_exact(cols).take(self.rows)
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    /// Observed (non-NaN) values of column `j`.
    pub fn observed_column(&self, j: usize) -> Vec<T> {
        (0..self.rows)
            .map(|i| self.get(i, j))
            .filter(|v| !v.is_nan())
            .collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in self.rows_iter() {
            data.extend(cols.iter().map(|&j| r[j]));
        }
        Self {
            rows: self.rows,
            cols: cols.len(),
            data,
        }
    }

    pub fn has_missing(&self) -> bool {
        self.data.iter().any(|v| v.is_nan())
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Column names and which columns are binary indicators.
///
/// Binary columns are skipped by outlier fences and standardisation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub binary: Vec<bool>,
}

impl FeatureSchema {
    pub fn new(names: Vec<String>, binary: Vec<bool>) -> Self {
        assert_eq!(names.len(), binary.len());
        Self { names, binary }
    }

    /// All columns continuous, named `x0, x1, ...`.
    pub fn continuous(d: usize) -> Self {
        Self {
            names: (0..d).map(|j| format!("x{j}")).collect(),
            binary: vec![false; d],
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn select(&self, cols: &[usize]) -> Self {
        Self {
            names: cols.iter().map(|&j| self.names[j].clone()).collect(),
            binary: cols.iter().map(|&j| self.binary[j]).collect(),
        }
    }
}

/// Labeled feature matrix: the unit every pipeline stage consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub x: Matrix<T>,
    pub y: Vec<bool>,
    pub schema: FeatureSchema,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(x: Matrix<T>, y: Vec<bool>, schema: FeatureSchema) -> Self {
        assert_eq!(x.nrows(), y.len(), "label count must match row count");
        assert_eq!(x.ncols(), schema.len(), "schema width must match column count");
        Self { x, y, schema }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v).count()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            schema: self.schema.clone(),
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Self {
        Self {
            x: self.x.select_cols(cols),
            y: self.y.clone(),
            schema: self.schema.select(cols),
        }
    }
}
