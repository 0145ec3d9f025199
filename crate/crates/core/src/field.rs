use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Granularity {
    Point,
    Voxel,
}

/// Dense row-major `M x D` feature matrix with a per-row coverage mask.
///
/// Rows whose coverage flag is false are kept exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    values: Vec<f64>,
    rows: usize,
    dim: usize,
    granularity: Granularity,
    coverage: Vec<bool>,
}

impl FeatureField {
    /// Fully covered field from row-major values.
    pub fn new(values: Vec<f64>, dim: usize, granularity: Granularity) -> Result<Self> {
        if dim == 0 {
            return Err(Error::param("feature dimension must be positive"));
        }
        if values.len() % dim != 0 {
            return Err(Error::param(format!(
                "value count {} is not a multiple of dim {dim}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::data(format!("non-finite feature at row {}", i / dim)));
        }
        let rows = values.len() / dim;
        Ok(Self { values, rows, dim, granularity, coverage: vec![true; rows] })
    }

    /// Field with an explicit coverage mask; uncovered rows are zeroed.
    pub fn with_coverage(
        mut values: Vec<f64>,
        dim: usize,
        granularity: Granularity,
        coverage: Vec<bool>,
    ) -> Result<Self> {
        if dim > 0 && coverage.len() * dim != values.len() {
            return Err(Error::param("coverage length does not match row count"));
        }
        for (i, covered) in coverage.iter().enumerate() {
            if !covered {
                values[i * dim..(i + 1) * dim].fill(0.0);
            }
        }
        let mut field = Self::new(values, dim, granularity)?;
        field.coverage = coverage;
        Ok(field)
    }

    pub fn zeros(rows: usize, dim: usize, granularity: Granularity) -> Self {
        Self {
            values: vec![0.0; rows * dim],
            rows,
            dim,
            granularity,
            coverage: vec![true; rows],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn granularity(&self) -> Granularity {
        self.granularity
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn coverage(&self) -> &[bool] {
        &self.coverage
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Checks that every row has unit L2 norm within `tol`.
    pub fn check_unit_rows(&self, tol: f64) -> Result<()> {
        for (i, row) in self.iter_rows().enumerate() {
            let n = dot(row, row).sqrt();
            if (n - 1.0).abs() > tol {
                return Err(Error::data(format!("row {i} has norm {n}, expected unit")));
            }
        }
        Ok(())
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scale `v` to unit length; returns false and leaves `v` alone if it is zero.
pub fn normalize(v: &mut [f64]) -> bool {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}
