use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::normal::{log_cdf, mills, quantile_unchecked, std_normal_cdf};
use crate::error::{CqivError, Result};

/// Binary-choice link Λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Probit,
    Logit,
}

impl LinkFunction {
    pub fn cdf(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => std_normal_cdf(eta),
            LinkFunction::Logit => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Λ⁻¹. Returns ±∞ at the endpoints of [0, 1].
    pub fn inverse(self, p: f64) -> f64 {
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        if p >= 1.0 {
            return f64::INFINITY;
        }
        match self {
            LinkFunction::Probit => quantile_unchecked(p),
            LinkFunction::Logit => (p / (1.0 - p)).ln(),
        }
    }

    /// `ln Λ(eta)`.
    pub(crate) fn log_cdf(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Probit => log_cdf(eta),
            LinkFunction::Logit => -softplus(-eta),
        }
    }

    /// Derivative of the log-likelihood contribution with respect to the
    /// index, and the (positive) negative second derivative, for outcome `t`.
    pub(crate) fn score_and_curvature(self, eta: f64, t: bool) -> (f64, f64) {
        match self {
            LinkFunction::Logit => {
                let p = self.cdf(eta);
                let g = if t { 1.0 - p } else { -p };
                (g, p * (1.0 - p))
            }
            LinkFunction::Probit => {
                if t {
                    let m = mills(eta);
                    (m, m * (m + eta))
                } else {
                    let m = mills(-eta);
                    (-m, m * (m - eta))
                }
            }
        }
    }

    /// Log-likelihood contribution of one observation.
    pub(crate) fn loglik(self, eta: f64, t: bool) -> f64 {
        if t {
            self.log_cdf(eta)
        } else {
            self.log_cdf(-eta)
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Probit => "probit",
            LinkFunction::Logit => "logit",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = CqivError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "probit" => Ok(LinkFunction::Probit),
            "logit" => Ok(LinkFunction::Logit),
            other => Err(CqivError::InvalidArgument(format!(
                "unknown link `{other}` (expected probit or logit)"
            ))),
        }
    }
}
