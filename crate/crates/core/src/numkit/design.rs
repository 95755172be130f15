use std::collections::HashSet;

use crate::error::{CqivError, Result};

/// Dense row-major regressor matrix with one label per column.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    labels: Vec<String>,
}

impl DesignMatrix {
    /// Builds a matrix from row-major data, checking shape, finiteness and
    /// label uniqueness.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>, labels: Vec<String>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(CqivError::InvalidArgument(format!(
                "design must have at least one row and one column (got {rows}x{cols})"
            )));
        }
        if data.len() != rows * cols {
            return Err(CqivError::InvalidArgument(format!(
                "design data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if labels.len() != cols {
            return Err(CqivError::InvalidArgument(format!(
                "{} labels for {cols} columns",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for l in &labels {
            if !seen.insert(l.as_str()) {
                return Err(CqivError::InvalidArgument(format!("duplicate column label `{l}`")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(CqivError::InvalidArgument(format!(
                "non-finite entry in column `{}` at row {}",
                labels[pos % cols],
                pos / cols
            )));
        }
        Ok(Self { rows, cols, data, labels })
    }

    /// Builds a matrix from named columns of equal length.
    pub fn from_columns(columns: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != rows) {
            return Err(CqivError::InvalidArgument("columns have unequal lengths".into()));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for c in &columns {
                data.push(c.1[i]);
            }
        }
        let labels = columns.into_iter().map(|c| c.0).collect();
        Self::new(rows, cols, data, labels)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn column_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Linear predictor `x_i' beta` for every row.
    pub fn predict(&self, beta: &[f64]) -> Vec<f64> {
        debug_assert_eq!(beta.len(), self.cols);
        (0..self.rows).map(|i| dot(self.row(i), beta)).collect()
    }

    /// Appends a column on the right.
    pub fn with_column(&self, label: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.rows {
            return Err(CqivError::InvalidArgument(format!(
                "column `{label}` has {} entries for {} rows",
                values.len(),
                self.rows
            )));
        }
        let cols = self.cols + 1;
        let mut data = Vec::with_capacity(self.rows * cols);
        for (i, v) in values.iter().enumerate() {
            data.extend_from_slice(self.row(i));
            data.push(*v);
        }
        let mut labels = self.labels.clone();
        labels.push(label.to_string());
        Self::new(self.rows, cols, data, labels)
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            rows: idx.len(),
            cols: self.cols,
            data,
            labels: self.labels.clone(),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nonnegative per-observation weights with at least one positive entry.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CqivError::InvalidArgument(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if !w.iter().any(|v| *v > 0.0) {
            return Err(CqivError::EmptySample);
        }
        Ok(Self(w))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn effective_count(&self) -> usize {
        self.0.iter().filter(|v| **v > 0.0).count()
    }

    /// Zeroes every weight outside `keep`. Fails with `EmptySample` when
    /// nothing positive survives.
    pub fn restrict(&self, keep: &[bool]) -> Result<Self> {
        let w = self
            .0
            .iter()
            .zip(keep)
            .map(|(w, k)| if *k { *w } else { 0.0 })
            .collect();
        Self::new(w)
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.0[i]).collect())
    }
}
