//! First stage: the control variable `V̂ = F̂_D(D | W, Z)` and the
//! second-stage design `X̂ = x(D, W, V̂)`.
//!
//! Three estimators of the conditional rank of `D` are available:
//!
//! * `quantile`: linear quantile regressions of `D` on `R = r(W, Z)` at
//!   `v_j = j/(n_q + 1)`; `V̂_i` is the share of fitted quantiles lying at or
//!   below `D_i`, clamped to `[τ, 1 - τ]` with `τ = 1/(n_q + 1)`.
//! * `distribution`: binary regressions of `1{D <= d_j}` on `R` at the
//!   `j/n_t` sample quantiles of `D`; observation `i` is evaluated at the
//!   smallest threshold `d_j >= D_i`, the top bin maps to `1 - 1/(2 n_t)`.
//! * `ols`: `Φ((D_i - R_i'π̂)/σ̂)` from a least squares fit.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{power_label, Column, ControlEntry, Dataset, TransformSpec};
use crate::error::{CqivError, Result};
use crate::numkit::percentile::nearest_rank;
use crate::numkit::{
    fit_binary_mle, ols_fit, solve_wqr, std_normal_cdf, DesignMatrix, LinkFunction, WeightVector,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FirstStageMethod {
    #[default]
    Quantile,
    Distribution,
    Ols,
}

impl fmt::Display for FirstStageMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FirstStageMethod::Quantile => "quantile",
            FirstStageMethod::Distribution => "distribution",
            FirstStageMethod::Ols => "ols",
        })
    }
}

impl FromStr for FirstStageMethod {
    type Err = CqivError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Self::Quantile),
            "distribution" => Ok(Self::Distribution),
            "ols" => Ok(Self::Ols),
            other => Err(CqivError::InvalidArgument(format!(
                "unknown first stage `{other}` (expected quantile, distribution or ols)"
            ))),
        }
    }
}

/// First-stage options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageSpec {
    pub method: FirstStageMethod,
    pub n_quant: usize,
    pub n_thresh: usize,
    pub ldv1: LinkFunction,
    /// Drop the exogenous regressors from `R`, keeping instruments only.
    pub exclude_exogenous: bool,
}

impl Default for FirstStageSpec {
    fn default() -> Self {
        Self {
            method: FirstStageMethod::Quantile,
            n_quant: 50,
            n_thresh: 50,
            ldv1: LinkFunction::Probit,
            exclude_exogenous: false,
        }
    }
}

impl FirstStageSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_quant < 2 {
            return Err(CqivError::InvalidArgument(format!("nquant must be >= 2, got {}", self.n_quant)));
        }
        if self.n_thresh < 2 {
            return Err(CqivError::InvalidArgument(format!(
                "nthresh must be >= 2, got {}",
                self.n_thresh
            )));
        }
        Ok(())
    }
}

/// Method-specific first-stage estimates.
#[derive(Debug, Clone, PartialEq)]
pub enum FirstStageParams {
    Quantile { grid: Vec<f64>, coefficients: Vec<Vec<f64>> },
    Distribution { thresholds: Vec<f64>, coefficients: Vec<Vec<f64>> },
    Ols { coefficients: Vec<f64>, sigma: f64 },
}

/// Estimated control variable and the first-stage fit behind it.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlFit {
    pub v_hat: Vec<f64>,
    pub spec: FirstStageSpec,
    pub params: FirstStageParams,
}

/// `R = r(W, Z)`: intercept, exogenous columns (unless excluded), then
/// instruments not already present by name.
pub fn first_stage_design(data: &Dataset, exclude_exogenous: bool) -> Result<DesignMatrix> {
    let mut cols = vec![("_cons".to_string(), vec![1.0; data.n()])];
    let mut push = |c: &Column| {
        if !cols.iter().any(|(name, _)| *name == c.name) {
            cols.push((c.name.clone(), c.values.clone()));
        }
    };
    if !exclude_exogenous {
        data.exogenous.iter().for_each(&mut push);
    }
    data.instruments.iter().for_each(&mut push);
    DesignMatrix::from_columns(cols)
}

/// Dispatches on `spec.method`.
pub fn estimate_control(
    r: &DesignMatrix,
    d: &[f64],
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFit> {
    spec.validate()?;
    match spec.method {
        FirstStageMethod::Quantile => control_quantile(r, d, spec, w),
        FirstStageMethod::Distribution => control_distribution(r, d, spec, w),
        FirstStageMethod::Ols => {
            let mut fit = control_ols(r, d, w)?;
            fit.spec = spec.clone();
            Ok(fit)
        }
    }
}

pub fn control_quantile(
    r: &DesignMatrix,
    d: &[f64],
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFit> {
    spec.validate()?;
    let nq = spec.n_quant;
    let grid: Vec<f64> = (1..=nq).map(|j| j as f64 / (nq + 1) as f64).collect();
    let coefficients = grid
        .par_iter()
        .map(|&v| {
            solve_wqr(r, d, v, w)
                .map_err(|e| CqivError::FirstStageQuantile { v, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>>>()?;

    let tau = 1.0 / (nq + 1) as f64;
    let mut counts = vec![0usize; r.rows()];
    for pi in &coefficients {
        for (i, fit) in r.predict(pi).into_iter().enumerate() {
            if fit <= d[i] {
                counts[i] += 1;
            }
        }
    }
    let v_hat = counts
        .into_iter()
        .map(|k| (k as f64 / nq as f64).clamp(tau, 1.0 - tau))
        .collect();
    Ok(ControlFit {
        v_hat,
        spec: spec.clone(),
        params: FirstStageParams::Quantile { grid, coefficients },
    })
}

/// Interior thresholds: the `j/n_t` nearest-rank sample quantiles of `D`
/// over the positively weighted observations, `j = 1..n_t-1`, with
/// duplicates removed.
pub fn distribution_thresholds(d: &[f64], n_thresh: usize, w: &WeightVector) -> Vec<f64> {
    let mut sorted: Vec<f64> =
        d.iter().zip(w.as_slice()).filter(|(_, w)| **w > 0.0).map(|(v, _)| *v).collect();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    let mut out: Vec<f64> = (1..n_thresh)
        .map(|j| {
            let r = nearest_rank(100.0 * j as f64 / n_thresh as f64, m).max(1);
            sorted[r - 1]
        })
        .collect();
    out.dedup();
    out
}

pub fn control_distribution(
    r: &DesignMatrix,
    d: &[f64],
    spec: &FirstStageSpec,
    w: &WeightVector,
) -> Result<ControlFit> {
    spec.validate()?;
    let thresholds = distribution_thresholds(d, spec.n_thresh, w);
    let coefficients = thresholds
        .par_iter()
        .enumerate()
        .map(|(j, &dj)| {
            let below: Vec<bool> = d.iter().map(|v| *v <= dj).collect();
            fit_binary_mle(r, &below, spec.ldv1, w)
                .map(|f| f.delta)
                .map_err(|e| CqivError::FirstStageThreshold {
                    index: j + 1,
                    threshold: dj,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let tau = 1.0 / (2 * spec.n_thresh) as f64;
    let v_hat = (0..r.rows())
        .map(|i| {
            let j = thresholds.partition_point(|t| *t < d[i]);
            if j == thresholds.len() {
                1.0 - tau
            } else {
                let eta = crate::numkit::design::dot(r.row(i), &coefficients[j]);
                spec.ldv1.cdf(eta).clamp(tau, 1.0 - tau)
            }
        })
        .collect();
    Ok(ControlFit {
        v_hat,
        spec: spec.clone(),
        params: FirstStageParams::Distribution { thresholds, coefficients },
    })
}

const OLS_CLAMP: f64 = 1e-6;

pub fn control_ols(r: &DesignMatrix, d: &[f64], w: &WeightVector) -> Result<ControlFit> {
    let fit = ols_fit(r, d, w)?;
    let wv = w.as_slice();
    let (mut ss, mut cnt) = (0.0, 0.0);
    for (v, wi) in d.iter().zip(wv) {
        if *wi > 0.0 {
            ss += v * v;
            cnt += 1.0;
        }
    }
    let scale = (ss / cnt).sqrt().max(1.0);
    if !(fit.sigma > 1e-12 * scale) {
        return Err(CqivError::DegenerateScale);
    }
    let fitted = r.predict(&fit.coef);
    let v_hat = d
        .iter()
        .zip(fitted)
        .map(|(di, f)| std_normal_cdf((di - f) / fit.sigma).clamp(OLS_CLAMP, 1.0 - OLS_CLAMP))
        .collect();
    Ok(ControlFit {
        v_hat,
        spec: FirstStageSpec { method: FirstStageMethod::Ols, ..FirstStageSpec::default() },
        params: FirstStageParams::Ols { coefficients: fit.coef, sigma: fit.sigma },
    })
}

/// Label of the control column in every second-stage design.
pub const CONTROL_LABEL: &str = "control";
pub const INTERCEPT_LABEL: &str = "_cons";

/// Second-stage design without a control column (exogenous problems, or the
/// user part of `x(D, W, V)`).
pub fn base_design(
    d: Option<&Column>,
    w: &[Column],
    formula: &TransformSpec,
    n: usize,
) -> Result<DesignMatrix> {
    formula.validate()?;
    let mut cols = Vec::new();
    if formula.intercept {
        cols.push((INTERCEPT_LABEL.to_string(), vec![1.0; n]));
    }
    if let Some(d) = d {
        for &k in &formula.endogenous_powers {
            cols.push((power_label(&d.name, k), d.values.iter().map(|v| v.powi(k as i32)).collect()));
        }
    }
    for c in w {
        if cols.iter().any(|(name, _)| *name == c.name) {
            return Err(CqivError::InvalidArgument(format!("regressor `{}` listed twice", c.name)));
        }
        cols.push((c.name.clone(), c.values.clone()));
    }
    if cols.is_empty() {
        return Err(CqivError::InvalidArgument("second-stage design has no columns".into()));
    }
    DesignMatrix::from_columns(cols)
}

/// `X̂ = [user columns of D and W | control]`.
pub fn build_second_stage_design(
    d: &Column,
    w: &[Column],
    fit: &ControlFit,
    formula: &TransformSpec,
) -> Result<DesignMatrix> {
    let base = base_design(Some(d), w, formula, d.values.len())?;
    let control = control_column(&fit.v_hat, formula.control)?;
    base.with_column(CONTROL_LABEL, &control)
}

pub(crate) fn control_column(v_hat: &[f64], entry: ControlEntry) -> Result<Vec<f64>> {
    match entry {
        ControlEntry::Raw => Ok(v_hat.to_vec()),
        ControlEntry::NormalQuantile => v_hat
            .iter()
            .map(|&v| {
                let q = crate::numkit::normal::std_normal_quantile(v)
                    .map_err(|_| CqivError::Internal(format!("control value {v} outside (0,1)")))?;
                if q.is_finite() {
                    Ok(q)
                } else {
                    Err(CqivError::Internal(format!("non-finite normal quantile at {v}")))
                }
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept(n: usize) -> DesignMatrix {
        DesignMatrix::from_columns(vec![("_cons".into(), vec![1.0; n])]).unwrap()
    }

    #[test]
    fn quantile_control_tracks_ranks() {
        let n = 40;
        let d: Vec<f64> = (1..=n).map(f64::from).collect();
        let spec = FirstStageSpec { n_quant: 99, ..Default::default() };
        let fit = control_quantile(&intercept(n as usize), &d, &spec, &WeightVector::ones(n as usize)).unwrap();
        for pair in fit.v_hat.windows(2) {
            assert!(pair[0] <= pair[1]);
        }
        for (i, v) in fit.v_hat.iter().enumerate() {
            // empirical CDF oracle: rank / (n + 1)
            let oracle = (i + 1) as f64 / (n + 1) as f64;
            assert!((v - oracle).abs() < 2.0 / 99.0 + 2.0 / n as f64);
        }
    }

    #[test]
    fn quantile_control_floor_clamp() {
        // the lowest fitted quantile is the 10th order statistic, so the
        // smallest observation counts zero quantiles below it
        let d: Vec<f64> = (0..100).map(f64::from).collect();
        let spec = FirstStageSpec { n_quant: 10, ..Default::default() };
        let fit = control_quantile(&intercept(100), &d, &spec, &WeightVector::ones(100)).unwrap();
        assert_eq!(fit.v_hat[0], 1.0 / 11.0);
        assert_eq!(fit.v_hat[99], 10.0 / 11.0);
    }

    #[test]
    fn nine_point_median_against_ecdf() {
        let d: Vec<f64> = (1..=9).map(f64::from).collect();
        let fit = control_quantile(&intercept(9), &d, &FirstStageSpec::default(), &WeightVector::ones(9))
            .unwrap();
        // The count of fitted quantiles at or below D_i is the empirical CDF
        // F_n(D_i) = rank/n evaluated on the v-grid: 28 of 50 grid points
        // satisfy ceil(9 j / 51) <= 5.
        assert!((fit.v_hat[4] - 0.56).abs() < 1e-12);
        assert!((fit.v_hat[4] - 5.0 / 9.0).abs() < 0.02);
    }

    #[test]
    fn distribution_two_bins() {
        let n = 20;
        let d: Vec<f64> = (1..=n).map(f64::from).collect();
        let spec = FirstStageSpec {
            method: FirstStageMethod::Distribution,
            n_thresh: 2,
            ..Default::default()
        };
        let fit = control_distribution(&intercept(n as usize), &d, &spec, &WeightVector::ones(n as usize))
            .unwrap();
        let mut distinct = fit.v_hat.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        assert_eq!(distinct.len(), 2);
        // lower half: Λ(Λ⁻¹(1/2)) = 1/2
        assert!((fit.v_hat[0] - 0.5).abs() < 1e-9);
        assert_eq!(fit.v_hat[19], 1.0 - 0.25);
    }

    #[test]
    fn distribution_monotone_and_top_clamped() {
        let d: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64 * 0.1).collect();
        let spec = FirstStageSpec {
            method: FirstStageMethod::Distribution,
            n_thresh: 6,
            ldv1: LinkFunction::Logit,
            ..Default::default()
        };
        let fit = control_distribution(&intercept(60), &d, &spec, &WeightVector::ones(60)).unwrap();
        let mut order: Vec<usize> = (0..60).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
        for pair in order.windows(2) {
            assert!(fit.v_hat[pair[0]] <= fit.v_hat[pair[1]] + 1e-12);
        }
        let imax = order[59];
        assert_eq!(fit.v_hat[imax], 1.0 - 1.0 / 12.0);
    }

    #[test]
    fn ols_control_values() {
        let r = intercept(4);
        let d = [0.0, 2.0, 1.0, 1.0];
        let fit = control_ols(&r, &d, &WeightVector::ones(4)).unwrap();
        let FirstStageParams::Ols { sigma, .. } = fit.params else { unreachable!() };
        assert!((fit.v_hat[2] - 0.5).abs() < 1e-15);
        // residual of observation 1 is +1 with sigma = sqrt(2/3)
        assert!((fit.v_hat[1] - std_normal_cdf(1.0 / sigma)).abs() < 1e-15);
        // shift invariance
        let shifted: Vec<f64> = d.iter().map(|v| v + 7.5).collect();
        let fit2 = control_ols(&r, &shifted, &WeightVector::ones(4)).unwrap();
        for (a, b) in fit.v_hat.iter().zip(&fit2.v_hat) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ols_residual_equal_to_sigma_maps_to_phi_one() {
        // residuals (1, 0, -1) with divisor n - p = 2 give sigma = 1
        let fit = control_ols(&intercept(3), &[1.0, 0.0, -1.0], &WeightVector::ones(3)).unwrap();
        let FirstStageParams::Ols { sigma, .. } = fit.params else { unreachable!() };
        assert!((sigma - 1.0).abs() < 1e-15);
        assert!((fit.v_hat[0] - 0.841_344_746_068_543).abs() < 1e-5);
    }

    #[test]
    fn ols_exact_fit_is_degenerate() {
        let r = DesignMatrix::from_columns(vec![
            ("_cons".into(), vec![1.0; 4]),
            ("z".into(), vec![0.0, 1.0, 2.0, 3.0]),
        ])
        .unwrap();
        let err = control_ols(&r, &[1.0, 2.0, 3.0, 4.0], &WeightVector::ones(4)).unwrap_err();
        assert_eq!(err, CqivError::DegenerateScale);
    }

    #[test]
    fn second_stage_columns() {
        let d = Column::new("logexp", vec![1.0, 2.0, 3.0]);
        let w = vec![Column::new("nkids", vec![0.0, 1.0, 2.0])];
        let fit = ControlFit {
            v_hat: vec![0.5, 0.25, 0.75],
            spec: FirstStageSpec::default(),
            params: FirstStageParams::Ols { coefficients: vec![], sigma: 1.0 },
        };
        let f = TransformSpec { endogenous_powers: vec![1, 2], ..Default::default() };
        let x = build_second_stage_design(&d, &w, &fit, &f).unwrap();
        assert_eq!(x.labels(), ["_cons", "logexp", "logexp^2", "nkids", "control"]);
        assert_eq!(x.get(0, 4), 0.0);
        assert_eq!(x.get(2, 2), 9.0);
    }

    #[test]
    fn constant_control_is_flagged_downstream() {
        let d = Column::new("d", vec![1.0, 2.0, 3.0, 4.0]);
        let fit = ControlFit {
            v_hat: vec![0.3; 4],
            spec: FirstStageSpec::default(),
            params: FirstStageParams::Ols { coefficients: vec![], sigma: 1.0 },
        };
        let x = build_second_stage_design(&d, &[], &fit, &TransformSpec::default()).unwrap();
        let err = crate::numkit::linalg::ensure_full_rank(&x, &[1.0; 4]).unwrap_err();
        assert_eq!(err, CqivError::SingularDesign { columns: vec!["control".into()] });
    }
}
