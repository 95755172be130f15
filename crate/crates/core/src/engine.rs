//! The CQIV estimator: steps 1 to 3 of the selection algorithm, the
//! uncensored (QIV) and exogenous (CQR) variants, right censoring, corner
//! effects and the robustness diagnostics.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{
    base_design, build_second_stage_design, estimate_control, first_stage_design, ControlFit,
    FirstStageSpec,
};
use crate::data::{Dataset, TransformSpec};
use crate::error::{CqivError, Result};
use crate::numkit::percentile::nearest_rank;
use crate::numkit::{fit_binary_mle, solve_wqr, DesignMatrix, LinkFunction, WeightVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensorSide {
    #[default]
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Censored quantile IV (steps 0 to 3).
    #[default]
    Cqiv,
    /// Uncensored quantile IV: quantile regression with the control.
    Qiv,
    /// Censored quantile regression without a control.
    Cqr,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cqiv => "cqiv",
            Variant::Qiv => "qiv",
            Variant::Cqr => "cqr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Confidence {
    #[default]
    #[serde(rename = "no")]
    None,
    Boot,
    WeightedBoot,
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Confidence::None => "no",
            Confidence::Boot => "boot",
            Confidence::WeightedBoot => "weightedboot",
        })
    }
}

impl FromStr for Confidence {
    type Err = CqivError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no" | "none" => Ok(Self::None),
            "boot" => Ok(Self::Boot),
            "weightedboot" => Ok(Self::WeightedBoot),
            other => Err(CqivError::InvalidArgument(format!(
                "unknown confidence `{other}` (expected no, boot or weightedboot)"
            ))),
        }
    }
}

/// Every estimation option. Quantiles are fractions; `q0`, `q1` and `level`
/// are percents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CqivConfig {
    pub quantiles: Vec<f64>,
    pub censor_side: CensorSide,
    pub variant: Variant,
    pub first_stage: FirstStageSpec,
    pub formula: TransformSpec,
    pub ldv2: LinkFunction,
    pub q0: f64,
    pub q1: f64,
    pub corner: bool,
    pub confidence: Confidence,
    pub bootreps: usize,
    pub seed: u64,
    pub level: f64,
    pub norobust: bool,
    pub viewlog: bool,
}

impl Default for CqivConfig {
    fn default() -> Self {
        Self {
            quantiles: vec![0.5],
            censor_side: CensorSide::Left,
            variant: Variant::Cqiv,
            first_stage: FirstStageSpec::default(),
            formula: TransformSpec::default(),
            ldv2: LinkFunction::Probit,
            q0: 10.0,
            q1: 3.0,
            corner: false,
            confidence: Confidence::None,
            bootreps: 100,
            seed: 777,
            level: 95.0,
            norobust: false,
            viewlog: false,
        }
    }
}

impl CqivConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quantiles.is_empty() {
            return Err(CqivError::InvalidArgument("no quantiles requested".into()));
        }
        if let Some(u) = self.quantiles.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
            return Err(CqivError::InvalidArgument(format!("quantile {u} outside (0, 1)")));
        }
        for (name, v) in [("drop1", self.q0), ("drop2", self.q1)] {
            if !(0.0..100.0).contains(&v) {
                return Err(CqivError::InvalidArgument(format!("{name} must lie in [0, 100), got {v}")));
            }
        }
        if !(self.level > 0.0 && self.level < 100.0) {
            return Err(CqivError::InvalidArgument(format!("level must lie in (0, 100), got {}", self.level)));
        }
        if self.bootreps == 0 {
            return Err(CqivError::InvalidArgument("bootreps must be positive".into()));
        }
        self.first_stage.validate()?;
        self.formula.validate()?;
        if self.corner && !self.formula.is_linear_in_endogenous() {
            return Err(CqivError::UnsupportedFormula(
                "corner effects need a specification linear in the endogenous variable; \
                 average marginal effects must be calculated directly from the coefficients"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Sorted, deduplicated quantiles and the number of duplicates removed.
    pub fn normalized_quantiles(&self) -> (Vec<f64>, usize) {
        let mut q = self.quantiles.clone();
        q.sort_by(f64::total_cmp);
        let before = q.len();
        q.dedup();
        let removed = before - q.len();
        (q, removed)
    }
}

/// Negates `Y` and `C` for right censoring; identity for left censoring.
pub fn orient(data: &Dataset, side: CensorSide) -> Dataset {
    match side {
        CensorSide::Left => data.clone(),
        CensorSide::Right => {
            let mut out = data.clone();
            out.outcome.values.iter_mut().for_each(|v| *v = -*v);
            out.censor.iter_mut().for_each(|v| *v = -*v);
            out
        }
    }
}

/// Step-1 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step1 {
    pub delta_hat: Vec<f64>,
    /// `Ŝ_i'δ̂`.
    pub index_hat: Vec<f64>,
    /// `Λ(Ŝ_i'δ̂)`.
    pub lambda_hat: Vec<f64>,
    pub k0: f64,
    pub j0: Vec<usize>,
    pub mle_iterations: usize,
}

/// Step-2 output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step2 {
    pub beta: Vec<f64>,
    pub varsigma1: f64,
    pub j1: Vec<usize>,
}

/// Selection sets and cutoffs at one quantile, in the oriented problem
/// (`u_fit` is the quantile index actually used there).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionState {
    pub u_fit: f64,
    pub delta_hat: Vec<f64>,
    pub index_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub k0: f64,
    pub varsigma1: f64,
    pub j0: Vec<usize>,
    pub j1: Vec<usize>,
    pub mle_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRow {
    pub pct_full_in_j0: f64,
    pub pct_full_in_j1: f64,
    pub pct_j0_not_in_j1: f64,
    pub n: usize,
    pub size_j0: usize,
    pub size_j1: usize,
    pub size_j0_not_in_j1: usize,
}

/// The three robustness percentages for index sets over `n` observations.
pub fn diagnostics(j0: &[usize], j1: &[usize], n: usize) -> DiagnosticsRow {
    let mut in_j1 = vec![false; n];
    j1.iter().for_each(|&i| in_j1[i] = true);
    let missing = j0.iter().filter(|&&i| !in_j1[i]).count();
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    DiagnosticsRow {
        pct_full_in_j0: pct(j0.len(), n),
        pct_full_in_j1: pct(j1.len(), n),
        pct_j0_not_in_j1: pct(missing, j0.len()),
        n,
        size_j0: j0.len(),
        size_j1: j1.len(),
        size_j0_not_in_j1: missing,
    }
}

/// Estimates at one quantile, reported in the original orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileFit {
    pub u: f64,
    /// Two-step coefficients `β̂⁰(u)`.
    pub beta2: Vec<f64>,
    /// Final (three-step) coefficients `β̂¹(u)`.
    pub beta3: Vec<f64>,
    pub selection: Option<SelectionState>,
    pub diagnostics: Option<DiagnosticsRow>,
    pub corner: Option<f64>,
    /// Steps 1 to 3 all ran.
    pub complete: bool,
}

/// Point estimates for every requested quantile; a failure at one quantile
/// leaves the others intact.
#[derive(Debug, Clone, PartialEq)]
pub struct CqivResult {
    pub variant: Variant,
    pub censor_side: CensorSide,
    pub labels: Vec<String>,
    /// Observations with positive weight.
    pub n: usize,
    pub quantiles: Vec<f64>,
    pub fits: Vec<Result<QuantileFit>>,
    pub control: Option<ControlFit>,
    pub warnings: Vec<String>,
    pub log: Vec<String>,
    pub intervals: Option<Vec<Result<Vec<crate::inference::Interval>>>>,
}

impl CqivResult {
    pub fn failures(&self) -> usize {
        self.fits.iter().filter(|f| f.is_err()).count()
    }

    pub fn fit(&self, u: f64) -> Option<&QuantileFit> {
        self.quantiles
            .iter()
            .position(|q| *q == u)
            .and_then(|k| self.fits[k].as_ref().ok())
    }
}

/// Oriented second-stage inputs shared by every quantile.
#[derive(Debug, Clone)]
pub(crate) struct Prepared {
    pub x: DesignMatrix,
    pub s: DesignMatrix,
    pub y: Vec<f64>,
    pub c: Vec<f64>,
    pub w: WeightVector,
    pub control: Option<ControlFit>,
}

pub(crate) fn combined_weights(data: &Dataset, extra: Option<&[f64]>) -> Result<WeightVector> {
    let n = data.n();
    let w: Vec<f64> = (0..n)
        .map(|i| {
            data.weights.as_ref().map_or(1.0, |w| w[i]) * extra.map_or(1.0, |e| e[i])
        })
        .collect();
    WeightVector::new(w)
}

/// Step 0 plus the design matrices, on already oriented data.
pub(crate) fn prepare(data: &Dataset, config: &CqivConfig, extra: Option<&[f64]>) -> Result<Prepared> {
    let w = combined_weights(data, extra)?;
    let n = data.n();
    let (x, control) = match config.variant {
        Variant::Cqiv | Variant::Qiv => {
            let d = data.endogenous.as_ref().ok_or_else(|| {
                CqivError::InvalidArgument(format!("variant {} needs an endogenous variable", config.variant))
            })?;
            if data.instruments.is_empty() {
                return Err(CqivError::InvalidArgument(format!(
                    "variant {} needs at least one instrument",
                    config.variant
                )));
            }
            let r = first_stage_design(data, config.first_stage.exclude_exogenous)?;
            let fit = estimate_control(&r, &d.values, &config.first_stage, &w)?;
            let x = build_second_stage_design(d, &data.exogenous, &fit, &config.formula)?;
            (x, Some(fit))
        }
        Variant::Cqr => {
            let x = base_design(data.endogenous.as_ref(), &data.exogenous, &config.formula, n)?;
            (x, None)
        }
    };
    let s = if data.censor_is_constant() { x.clone() } else { x.with_column("_censor", &data.censor)? };
    Ok(Prepared { x, s, y: data.outcome.values.clone(), c: data.censor.clone(), w, control })
}

/// Cutoff that drops the lowest `pct` percent of `values` (nearest rank),
/// placed midway to the next order statistic. `None` when nothing is dropped.
fn trim_cutoff(mut values: Vec<f64>, pct: f64) -> Option<f64> {
    let m = values.len();
    let r = nearest_rank(pct, m);
    if r == 0 {
        return None;
    }
    values.sort_by(f64::total_cmp);
    if r >= m {
        return Some(values[m - 1]);
    }
    let (a, b) = (values[r - 1], values[r]);
    let mid = a + 0.5 * (b - a);
    Some(if mid < b { mid } else { a })
}

/// Step 1: binary regression of the uncensoring indicator on `Ŝ`, then
/// `J0 = {i : Λ(Ŝ_i'δ̂) > 1 - u + k0}`.
pub fn select_step1(
    s_hat: &DesignMatrix,
    uncensored: &[bool],
    u: f64,
    ldv2: LinkFunction,
    q0: f64,
    w: &WeightVector,
) -> Result<Step1> {
    let fit = fit_binary_mle(s_hat, uncensored, ldv2, w)?;
    let index_hat = s_hat.predict(&fit.delta);
    let lambda_hat: Vec<f64> = index_hat.iter().map(|&e| ldv2.cdf(e)).collect();
    let wv = w.as_slice();
    let base = 1.0 - u;
    let candidates: Vec<f64> = lambda_hat
        .iter()
        .zip(wv)
        .filter(|(l, w)| **w > 0.0 && **l > base)
        .map(|(l, _)| *l)
        .collect();
    if candidates.is_empty() {
        return Err(CqivError::NoQuantileUncensored { u, cutoff: base });
    }
    let k0 = trim_cutoff(candidates, q0).map_or(0.0, |c| c - base);
    let threshold = base + k0;
    let j0: Vec<usize> =
        (0..lambda_hat.len()).filter(|&i| wv[i] > 0.0 && lambda_hat[i] > threshold).collect();
    if j0.is_empty() {
        return Err(CqivError::SelectionCollapse { u, set: "J0" });
    }
    Ok(Step1 { delta_hat: fit.delta, index_hat, lambda_hat, k0, j0, mle_iterations: fit.iterations })
}

fn mask(n: usize, set: &[usize]) -> Vec<bool> {
    let mut m = vec![false; n];
    set.iter().for_each(|&i| m[i] = true);
    m
}

/// Weighted quantile regression on the observations in `set`.
pub fn fit_on_set(
    x: &DesignMatrix,
    y: &[f64],
    u: f64,
    w: &WeightVector,
    set: &[usize],
) -> Result<Vec<f64>> {
    let ws = w.restrict(&mask(x.rows(), set))?;
    solve_wqr(x, y, u, &ws)
}

/// `J1 = {i : X̂_i'β > C_i + ς1}` over the positively weighted observations.
pub fn select_j1(x: &DesignMatrix, c: &[f64], beta: &[f64], varsigma1: f64, w: &WeightVector) -> Vec<usize> {
    let fit = x.predict(beta);
    let wv = w.as_slice();
    (0..x.rows()).filter(|&i| wv[i] > 0.0 && fit[i] > c[i] + varsigma1).collect()
}

/// Step 2: quantile regression on `J0`, then `ς1` from the `q1`-th
/// percentile of the positive margins `X̂'β̂⁰ - C` and the set `J1`.
pub fn fit_step2(
    x: &DesignMatrix,
    y: &[f64],
    c: &[f64],
    u: f64,
    j0: &[usize],
    q1: f64,
    w: &WeightVector,
) -> Result<Step2> {
    let beta = fit_on_set(x, y, u, w, j0)?;
    let fit = x.predict(&beta);
    let wv = w.as_slice();
    let margins: Vec<f64> = (0..x.rows())
        .filter(|&i| wv[i] > 0.0)
        .map(|i| fit[i] - c[i])
        .filter(|m| *m > 0.0)
        .collect();
    if margins.is_empty() {
        return Err(CqivError::SelectionCollapse { u, set: "J1" });
    }
    let varsigma1 = trim_cutoff(margins, q1).unwrap_or(0.0);
    let j1 = select_j1(x, c, &beta, varsigma1, w);
    if j1.is_empty() {
        return Err(CqivError::SelectionCollapse { u, set: "J1" });
    }
    Ok(Step2 { beta, varsigma1, j1 })
}

/// Step 3: the step-2 program on `J1`.
pub fn fit_step3(x: &DesignMatrix, y: &[f64], u: f64, j1: &[usize], w: &WeightVector) -> Result<Vec<f64>> {
    fit_on_set(x, y, u, w, j1)
}

/// `(1/n) Σ 1{X̂_i'β̂ > C_i} · β̂_D` per fit, weighted by `w`.
pub fn corner_effects(
    betas: &[Vec<f64>],
    x_hat: &DesignMatrix,
    c: &[f64],
    d_label: &str,
    w: &WeightVector,
) -> Result<Vec<f64>> {
    let k = x_hat.column_index(d_label).ok_or_else(|| {
        CqivError::UnsupportedFormula(format!(
            "the design has no column `{d_label}`; corner effects need a specification linear in the \
             endogenous variable, otherwise average marginal effects must be calculated directly \
             from the coefficients"
        ))
    })?;
    let wv = w.as_slice();
    let total: f64 = wv.iter().sum();
    Ok(betas
        .iter()
        .map(|b| {
            let fit = x_hat.predict(b);
            let share: f64 = (0..x_hat.rows()).filter(|&i| fit[i] > c[i]).map(|i| wv[i]).sum::<f64>() / total;
            share * b[k]
        })
        .collect())
}

fn negate(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| -x).collect()
}

/// Oriented coefficients at one quantile.
fn fit_oriented(prep: &Prepared, config: &CqivConfig, u_fit: f64) -> Result<(Vec<f64>, Vec<f64>, Option<SelectionState>)> {
    let wv = prep.w.as_slice();
    let uncensored: Vec<bool> = prep.y.iter().zip(&prep.c).map(|(y, c)| y > c).collect();
    let any_censored = (0..prep.y.len()).any(|i| wv[i] > 0.0 && !uncensored[i]);
    if config.variant == Variant::Qiv || !any_censored {
        let beta = solve_wqr(&prep.x, &prep.y, u_fit, &prep.w)?;
        return Ok((beta.clone(), beta, None));
    }
    let s1 = select_step1(&prep.s, &uncensored, u_fit, config.ldv2, config.q0, &prep.w)?;
    let s2 = fit_step2(&prep.x, &prep.y, &prep.c, u_fit, &s1.j0, config.q1, &prep.w)?;
    let beta3 = fit_step3(&prep.x, &prep.y, u_fit, &s2.j1, &prep.w)?;
    let state = SelectionState {
        u_fit,
        delta_hat: s1.delta_hat,
        index_hat: s1.index_hat,
        lambda_hat: s1.lambda_hat,
        k0: s1.k0,
        varsigma1: s2.varsigma1,
        j0: s1.j0,
        j1: s2.j1,
        mle_iterations: s1.mle_iterations,
    };
    Ok((s2.beta, beta3, Some(state)))
}

pub(crate) fn fit_quantile(prep: &Prepared, config: &CqivConfig, d_label: Option<&str>, u: f64) -> Result<QuantileFit> {
    let right = config.censor_side == CensorSide::Right;
    let u_fit = if right { 1.0 - u } else { u };
    let (beta2, beta3, selection) = fit_oriented(prep, config, u_fit)?;

    let corner = if config.corner {
        let label = d_label.ok_or_else(|| {
            CqivError::UnsupportedFormula("corner effects need an endogenous variable".into())
        })?;
        let e = corner_effects(std::slice::from_ref(&beta3), &prep.x, &prep.c, label, &prep.w)?[0];
        Some(if right { -e } else { e })
    } else {
        None
    };

    let censored_variant = config.variant != Variant::Qiv;
    let diagnostics = if censored_variant && !config.norobust {
        let n = prep.w.effective_count();
        Some(match &selection {
            Some(s) => diagnostics(&s.j0, &s.j1, n),
            None => {
                let all: Vec<usize> = (0..prep.y.len()).filter(|&i| prep.w.as_slice()[i] > 0.0).collect();
                diagnostics(&all, &all, n)
            }
        })
    } else {
        None
    };
    let complete = selection.is_some();
    let (beta2, beta3) = if right { (negate(&beta2), negate(&beta3)) } else { (beta2, beta3) };
    Ok(QuantileFit { u, beta2, beta3, selection, diagnostics, corner, complete })
}

/// Point estimation for every quantile in `config`.
pub fn run(data: &Dataset, config: &CqivConfig) -> Result<CqivResult> {
    config.validate()?;
    data.validate()?;
    let (quantiles, dups) = config.normalized_quantiles();
    let mut warnings = Vec::new();
    if dups > 0 {
        warnings.push(format!("{dups} duplicate quantile(s) removed"));
    }
    if config.corner && config.variant == Variant::Qiv {
        return Err(CqivError::InvalidArgument("corner effects need a censored variant".into()));
    }
    let oriented = orient(data, config.censor_side);
    let prep = prepare(&oriented, config, None)?;
    let d_label = data.endogenous.as_ref().map(|d| d.name.clone());

    let fits: Vec<Result<QuantileFit>> = quantiles
        .par_iter()
        .map(|&u| fit_quantile(&prep, config, d_label.as_deref(), u))
        .collect();

    for f in fits.iter().flatten() {
        if let Some(d) = &f.diagnostics {
            if d.size_j0_not_in_j1 > 0 {
                warnings.push(format!(
                    "u = {}: {} observation(s) of J0 are not in J1; consider altering drop1, drop2 or the specification",
                    f.u, d.size_j0_not_in_j1
                ));
            }
        }
        if !f.complete && config.variant != Variant::Qiv {
            warnings.push(format!("u = {}: no censored observations, selection steps skipped", f.u));
        }
    }

    let mut log = Vec::new();
    if config.viewlog {
        if let Some(c) = &prep.control {
            log.push(format!(
                "first stage ({}): control estimated for {} observations",
                c.spec.method,
                c.v_hat.len()
            ));
        }
        for (u, f) in quantiles.iter().zip(&fits) {
            match f {
                Ok(QuantileFit { selection: Some(s), .. }) => log.push(format!(
                    "u = {u}: step 1 MLE iterations {}, k0 = {:.6}, |J0| = {}; step 2 varsigma1 = {:.6}, |J1| = {}",
                    s.mle_iterations,
                    s.k0,
                    s.j0.len(),
                    s.varsigma1,
                    s.j1.len()
                )),
                Ok(_) => log.push(format!("u = {u}: single quantile regression on the full sample")),
                Err(e) => log.push(format!("u = {u}: failed: {e}")),
            }
        }
    }

    Ok(CqivResult {
        variant: config.variant,
        censor_side: config.censor_side,
        labels: prep.x.labels().to_vec(),
        n: prep.w.effective_count(),
        quantiles,
        fits,
        control: prep.control,
        warnings,
        log,
        intervals: None,
    })
}
