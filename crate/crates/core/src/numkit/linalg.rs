use nalgebra::{DMatrix, DVector};

use super::design::DesignMatrix;
use crate::error::{CqivError, Result};

const RANK_TOL: f64 = 1e-10;

/// Columns that are (numerically) linear combinations of earlier columns on
/// the rows with positive weight. Modified Gram-Schmidt on `sqrt(w) * X`.
pub fn dependent_columns(x: &DesignMatrix, w: &[f64]) -> Vec<usize> {
    let n = x.rows();
    let p = x.cols();
    let rows: Vec<usize> = (0..n).filter(|&i| w[i] > 0.0).collect();
    let sw: Vec<f64> = rows.iter().map(|&i| w[i].sqrt()).collect();
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let mut v: Vec<f64> = rows.iter().zip(&sw).map(|(&i, s)| s * x.get(i, j)).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            dependent.push(j);
            continue;
        }
        // two passes for stability
        for _ in 0..2 {
            for q in &basis {
                let c: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= RANK_TOL * norm0 {
            dependent.push(j);
        } else {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    dependent
}

/// Fails with the labels of the offending columns when the weighted design is
/// rank deficient.
pub fn ensure_full_rank(x: &DesignMatrix, w: &[f64]) -> Result<()> {
    let dep = dependent_columns(x, w);
    if dep.is_empty() {
        Ok(())
    } else {
        Err(CqivError::SingularDesign {
            columns: dep.iter().map(|&j| x.labels()[j].clone()).collect(),
        })
    }
}

/// Solves a symmetric positive definite system by Cholesky.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.cholesky().map(|c| c.solve(b))
}

/// Solves a general square system by LU with partial pivoting.
pub(crate) fn solve_square(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.lu().solve(b)
}

/// Weighted least squares via Householder QR of `sqrt(w) X`.
pub(crate) fn weighted_lstsq(x: &DesignMatrix, y: &[f64], w: &[f64]) -> Option<Vec<f64>> {
    let rows: Vec<usize> = (0..x.rows()).filter(|&i| w[i] > 0.0).collect();
    let p = x.cols();
    let m = rows.len();
    if m < p {
        return None;
    }
    let a = DMatrix::from_fn(m, p, |r, c| w[rows[r]].sqrt() * x.get(rows[r], c));
    let b = DVector::from_iterator(m, rows.iter().map(|&i| w[i].sqrt() * y[i]));
    let qr = a.qr();
    let qtb = qr.q().transpose() * b;
    let r = qr.r();
    r.solve_upper_triangular(&qtb).map(|v| v.iter().copied().collect())
}
