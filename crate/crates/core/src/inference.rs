//! Bootstrap confidence intervals.
//!
//! The weighted bootstrap draws i.i.d. standard exponential weights,
//! re-estimates the control under those weights and solves one weighted
//! quantile regression per quantile on
//! `J1b = {i : X̂_ib'β̂⁰(u) > C_i + ς1}`, with `β̂⁰(u)` and `ς1` taken from
//! the unweighted anchor fit. The nonparametric bootstrap reruns the whole
//! algorithm on resampled rows.
//!
//! Repetition `b` draws from `ChaCha20Rng::seed_from_u64(seed)` switched to
//! stream `b`, so every repetition can be recomputed on its own.

use rand::distr::{Distribution, Open01};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::engine::{
    fit_on_set, fit_quantile, orient, prepare, run, select_j1, CensorSide, Confidence, CqivConfig,
    CqivResult,
};
use crate::error::{CqivError, Result};
use crate::numkit::percentile::percentile_nearest_rank;
use crate::numkit::WeightVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapKind {
    Nonparametric,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPlan {
    pub kind: BootstrapKind,
    pub reps: usize,
    pub seed: u64,
    pub level: f64,
}

impl BootstrapPlan {
    /// The plan implied by `config.confidence`, if any.
    pub fn from_config(config: &CqivConfig) -> Option<Self> {
        let kind = match config.confidence {
            Confidence::None => return None,
            Confidence::Boot => BootstrapKind::Nonparametric,
            Confidence::WeightedBoot => BootstrapKind::Weighted,
        };
        Some(Self { kind, reps: config.bootreps, seed: config.seed, level: config.level })
    }
}

/// Source of the weighted-bootstrap weights. `Ones` turns every repetition
/// into the anchor problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightSource {
    #[default]
    Exponential,
    Ones,
}

/// Successful draws and failure reasons for one quantile.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDraws {
    pub u: f64,
    pub draws: Vec<Vec<f64>>,
    pub failures: Vec<(usize, String)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub reps: usize,
    pub per_quantile: Vec<QuantileDraws>,
}

/// Percentile interval and bootstrap mean of one coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
    pub mean: f64,
}

pub fn stream_rng(seed: u64, b: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    rng
}

/// `n` standard exponential draws by inversion, `-ln U` with `U` in (0, 1).
pub fn draw_exponential_weights<R: Rng + ?Sized>(n: usize, rng: &mut R) -> WeightVector {
    let w = (0..n)
        .map(|_| {
            let u: f64 = Open01.sample(rng);
            -u.ln()
        })
        .collect();
    WeightVector::new(w).expect("exponential draws are positive")
}

fn collect_draws(
    quantiles: &[f64],
    reps: usize,
    per_rep: Vec<Vec<Result<Vec<f64>>>>,
) -> BootstrapDraws {
    let mut per_quantile: Vec<QuantileDraws> = quantiles
        .iter()
        .map(|&u| QuantileDraws { u, draws: Vec::new(), failures: Vec::new() })
        .collect();
    for (b, rep) in per_rep.into_iter().enumerate() {
        for (k, r) in rep.into_iter().enumerate() {
            match r {
                Ok(beta) => per_quantile[k].draws.push(beta),
                Err(e) => per_quantile[k].failures.push((b, e.to_string())),
            }
        }
    }
    BootstrapDraws { reps, per_quantile }
}

fn weighted_rep(
    oriented: &Dataset,
    config: &CqivConfig,
    anchor: &CqivResult,
    extra: &[f64],
) -> Vec<Result<Vec<f64>>> {
    let k = anchor.quantiles.len();
    let prep = match prepare(oriented, config, Some(extra)) {
        Ok(p) => p,
        Err(e) => return vec![Err(e); k],
    };
    let right = config.censor_side == CensorSide::Right;
    anchor
        .fits
        .iter()
        .map(|fit| {
            let fit = fit.as_ref().map_err(Clone::clone)?;
            let u_fit = if right { 1.0 - fit.u } else { fit.u };
            let set: Vec<usize> = match &fit.selection {
                Some(s) => {
                    let beta2: Vec<f64> =
                        fit.beta2.iter().map(|v| if right { -v } else { *v }).collect();
                    select_j1(&prep.x, &prep.c, &beta2, s.varsigma1, &prep.w)
                }
                None => (0..prep.y.len()).filter(|&i| prep.w.as_slice()[i] > 0.0).collect(),
            };
            if set.is_empty() {
                return Err(CqivError::SelectionCollapse { u: fit.u, set: "J1b" });
            }
            let beta = fit_on_set(&prep.x, &prep.y, u_fit, &prep.w, &set)?;
            Ok(if right { beta.iter().map(|v| -v).collect() } else { beta })
        })
        .collect()
}

/// One-step weighted bootstrap around `anchor`.
pub fn weighted_bootstrap(
    data: &Dataset,
    config: &CqivConfig,
    anchor: &CqivResult,
    reps: usize,
    seed: u64,
    source: WeightSource,
) -> BootstrapDraws {
    let oriented = orient(data, config.censor_side);
    let n = data.n();
    let per_rep: Vec<Vec<Result<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let extra = match source {
                WeightSource::Exponential => {
                    draw_exponential_weights(n, &mut stream_rng(seed, b)).as_slice().to_vec()
                }
                WeightSource::Ones => vec![1.0; n],
            };
            weighted_rep(&oriented, config, anchor, &extra)
        })
        .collect();
    collect_draws(&anchor.quantiles, reps, per_rep)
}

/// Row indices drawn uniformly with replacement for repetition `b`.
pub fn resample_indices(n: usize, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = stream_rng(seed, b);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Full-algorithm bootstrap on resampled rows.
pub fn nonparametric_bootstrap(data: &Dataset, config: &CqivConfig, reps: usize, seed: u64) -> BootstrapDraws {
    let (quantiles, _) = config.normalized_quantiles();
    let cfg = CqivConfig { norobust: true, corner: false, viewlog: false, ..config.clone() };
    let n = data.n();
    let per_rep: Vec<Vec<Result<Vec<f64>>>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let sample = orient(&data.select_rows(&resample_indices(n, seed, b)), cfg.censor_side);
            match prepare(&sample, &cfg, None) {
                Ok(prep) => quantiles
                    .iter()
                    .map(|&u| fit_quantile(&prep, &cfg, None, u).map(|f| f.beta3))
                    .collect(),
                Err(e) => vec![Err(e); quantiles.len()],
            }
        })
        .collect();
    collect_draws(&quantiles, reps, per_rep)
}

/// Coefficient-wise nearest-rank percentile interval at `level` percent and
/// the draw mean.
pub fn percentile_ci(draws: &[Vec<f64>], level: f64) -> Result<Vec<Interval>> {
    if draws.len() < 2 {
        return Err(CqivError::InsufficientDraws { available: draws.len(), required: 2 });
    }
    if !(level > 0.0 && level < 100.0) {
        return Err(CqivError::InvalidArgument(format!("level must lie in (0, 100), got {level}")));
    }
    let tail = (100.0 - level) / 2.0;
    let p = draws[0].len();
    Ok((0..p)
        .map(|j| {
            let col: Vec<f64> = draws.iter().map(|d| d[j]).collect();
            Interval {
                lower: percentile_nearest_rank(&col, tail).unwrap(),
                upper: percentile_nearest_rank(&col, 100.0 - tail).unwrap(),
                mean: col.iter().sum::<f64>() / col.len() as f64,
            }
        })
        .collect())
}

/// Per-quantile intervals, failing a quantile whose repetitions failed more
/// than 20% of the time.
pub fn intervals(draws: &BootstrapDraws, level: f64) -> Vec<Result<Vec<Interval>>> {
    draws
        .per_quantile
        .iter()
        .map(|q| {
            if q.failures.len() * 5 > draws.reps {
                return Err(CqivError::InferenceUnreliable {
                    u: q.u,
                    failures: q.failures.len(),
                    reps: draws.reps,
                    reasons: q.failures.iter().map(|(b, e)| format!("rep {b}: {e}")).collect(),
                });
            }
            percentile_ci(&q.draws, level)
        })
        .collect()
}

/// Runs the bootstrap requested by `plan` around `anchor`.
pub fn bootstrap(data: &Dataset, config: &CqivConfig, anchor: &CqivResult, plan: &BootstrapPlan) -> BootstrapDraws {
    match plan.kind {
        BootstrapKind::Weighted => {
            weighted_bootstrap(data, config, anchor, plan.reps, plan.seed, WeightSource::Exponential)
        }
        BootstrapKind::Nonparametric => nonparametric_bootstrap(data, config, plan.reps, plan.seed),
    }
}

/// Point estimates plus, when `config.confidence` asks for them, bootstrap
/// intervals.
pub fn estimate(data: &Dataset, config: &CqivConfig) -> Result<CqivResult> {
    let mut result = run(data, config)?;
    if let Some(plan) = BootstrapPlan::from_config(config) {
        let draws = bootstrap(data, config, &result, &plan);
        result.intervals = Some(intervals(&draws, plan.level));
    }
    Ok(result)
}
