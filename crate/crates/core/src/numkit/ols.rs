use super::design::{DesignMatrix, WeightVector};
use super::linalg::{ensure_full_rank, weighted_lstsq};
use crate::error::{CqivError, Result};

/// Weighted least squares fit with its residual scale.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coef: Vec<f64>,
    /// Residual standard deviation with `n_eff - p` degrees of freedom,
    /// where `n_eff` counts the observations with positive weight. Weights
    /// are normalized to average one over those observations.
    pub sigma: f64,
}

pub fn ols_fit(r: &DesignMatrix, d: &[f64], w: &WeightVector) -> Result<OlsFit> {
    let n = r.rows();
    if d.len() != n || w.len() != n {
        return Err(CqivError::InvalidArgument(format!(
            "least squares inputs disagree in length: R has {n} rows, D {}, w {}",
            d.len(),
            w.len()
        )));
    }
    let wv = w.as_slice();
    let n_eff = w.effective_count();
    let p = r.cols();
    if n_eff <= p {
        return Err(CqivError::InsufficientSample { available: n_eff, required: p + 1 });
    }
    ensure_full_rank(r, wv)?;
    let coef = weighted_lstsq(r, d, wv)
        .ok_or_else(|| CqivError::Internal("least squares solve failed on a full-rank design".into()))?;

    let mut ssr = 0.0;
    let mut wsum = 0.0;
    for i in 0..n {
        if wv[i] > 0.0 {
            let e = d[i] - super::design::dot(r.row(i), &coef);
            ssr += wv[i] * e * e;
            wsum += wv[i];
        }
    }
    let sigma = (ssr * (n_eff as f64 / wsum) / (n_eff - p) as f64).sqrt();
    Ok(OlsFit { coef, sigma })
}
