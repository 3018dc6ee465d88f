use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Tolerance on row norms for a matrix flagged sphere-normalized.
pub const SPHERE_TOLERANCE: f64 = 1e-9;

/// An n x d matrix of finite representations, one instance per row.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    data: DMatrix<f64>,
    sphere_normalized: bool,
}

impl FeatureMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            let (n, _) = data.shape();
            return Err(Error::InvalidArgument(format!(
                "feature entry at row {}, column {} is not finite",
                pos % n,
                pos / n
            )));
        }
        Ok(FeatureMatrix {
            data,
            sphere_normalized: false,
        })
    }

    /// Wraps a matrix whose rows must all have unit norm.
    pub fn sphere(data: DMatrix<f64>) -> Result<Self> {
        let mut fm = FeatureMatrix::new(data)?;
        if let Some(i) = (0..fm.data.nrows()).find(|&i| (fm.data.row(i).norm() - 1.0).abs() > SPHERE_TOLERANCE) {
            return Err(Error::InvalidArgument(format!("row {i} is not unit norm")));
        }
        fm.sphere_normalized = true;
        Ok(fm)
    }

    pub fn from_row_slice(n: usize, d: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::Shape(format!("expected {} values for {n}x{d}, got {}", n * d, values.len())));
        }
        FeatureMatrix::new(DMatrix::from_row_slice(n, d, values))
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_sphere_normalized(&self) -> bool {
        self.sphere_normalized
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.data
    }

    /// Row-major copy of the entries.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len());
        for row in self.data.row_iter() {
            out.extend(row.iter());
        }
        out
    }
}

/// Divides each row by its L2 norm. All-zero rows stay zero.
pub fn normalize_rows(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut row in out.row_iter_mut() {
        let norm = row.norm();
        if norm > 0.0 {
            row /= norm;
        }
    }
    out
}

pub fn rows_are_unit(m: &DMatrix<f64>, tol: f64) -> bool {
    m.row_iter().all(|r| (r.norm() - 1.0).abs() <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_finite_entries_with_position() {
        let err = FeatureMatrix::from_row_slice(2, 2, &[0.0, 1.0, f64::NAN, 2.0]).unwrap_err();
        assert!(err.to_string().contains("row 1, column 0"));
    }

    #[test]
    fn normalize_rows_keeps_zero_rows() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0]);
        let n = normalize_rows(&m);
        assert_eq!(n.row(0).iter().copied().collect::<Vec<_>>(), vec![0.6, 0.8]);
        assert_eq!(n.row(1).norm(), 0.0);
        assert!(FeatureMatrix::sphere(n).is_err());
    }
}
