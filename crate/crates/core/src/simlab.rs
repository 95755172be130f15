//! Monte Carlo laboratory built on the triangular Gaussian location model
//!
//! ```text
//! D  = π_0 + π_W W + π_Z Z + σ Φ⁻¹(V)
//! Y* = β00 + β01 D + β02 W + ρ Φ⁻¹(V) + (1 - ρ²)^{1/2} Φ⁻¹(U)
//! Y  = max(Y*, C)
//! ```
//!
//! with `W, Z ~ N(0, 1)` and `V, U ~ U(0, 1)` independent. The conditional
//! `u`-quantile of `Y*` given `(D, W, V)` is linear in
//! `[1, D, W, Φ⁻¹(V)]` with coefficients
//! `(β00 + (1 - ρ²)^{1/2} Φ⁻¹(u), β01, β02, ρ)`.

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Column, ControlEntry, Dataset};
use crate::engine::{CqivConfig, CqivResult, Variant};
use crate::error::{CqivError, Result};
use crate::inference::estimate;
use crate::numkit::normal::quantile_unchecked;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub n: usize,
    pub beta00: f64,
    pub beta01: f64,
    pub beta02: f64,
    pub rho: f64,
    pub pi0: f64,
    pub pi_w: f64,
    pub pi_z: f64,
    pub sigma_v: f64,
    pub censor_point: f64,
    pub seed: u64,
}

impl Default for DgpSpec {
    /// `n = 1000`, `ρ = 0.5` and a censoring point near the 40th percentile
    /// of `Y*`.
    fn default() -> Self {
        let mut spec = Self {
            n: 1000,
            beta00: 1.0,
            beta01: 1.0,
            beta02: 0.5,
            rho: 0.5,
            pi0: 0.0,
            pi_w: 0.5,
            pi_z: 1.0,
            sigma_v: 1.0,
            censor_point: 0.0,
            seed: 2024,
        };
        spec.censor_point = spec.latent_quantile(0.4);
        spec
    }
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(CqivError::InvalidArgument(format!("rho must lie in (-1, 1), got {}", self.rho)));
        }
        if self.n < 50 {
            return Err(CqivError::InvalidArgument(format!("n must be at least 50, got {}", self.n)));
        }
        if !(self.sigma_v > 0.0) {
            return Err(CqivError::InvalidArgument("first-stage scale must be positive".into()));
        }
        Ok(())
    }

    /// Unconditional `p`-quantile of `Y*`, which is normal.
    pub fn latent_quantile(&self, p: f64) -> f64 {
        let load_w = self.beta01 * self.pi_w + self.beta02;
        let load_z = self.beta01 * self.pi_z;
        let load_v = self.beta01 * self.sigma_v + self.rho;
        let var = load_w * load_w + load_z * load_z + load_v * load_v + (1.0 - self.rho * self.rho);
        self.beta00 + self.beta01 * self.pi0 + var.sqrt() * quantile_unchecked(p)
    }

    pub fn truth(&self) -> TruthTable {
        TruthTable { beta00: self.beta00, beta01: self.beta01, beta02: self.beta02, rho: self.rho }
    }
}

/// Coefficients of `[1, D, W, Φ⁻¹(V)]` at every quantile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthTable {
    pub beta00: f64,
    pub beta01: f64,
    pub beta02: f64,
    pub rho: f64,
}

impl TruthTable {
    pub fn coefficients(&self, u: f64) -> [f64; 4] {
        let scale = (1.0 - self.rho * self.rho).sqrt();
        [self.beta00 + scale * quantile_unchecked(u), self.beta01, self.beta02, self.rho]
    }

    /// True value for a second-stage column label, if the model pins one.
    pub fn for_label(&self, label: &str, u: f64) -> Option<f64> {
        let c = self.coefficients(u);
        match label {
            "_cons" => Some(c[0]),
            "d" => Some(c[1]),
            "w" => Some(c[2]),
            "control" => Some(c[3]),
            _ => None,
        }
    }
}

/// Per-observation latent draws behind a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Latent {
    pub y_star: Vec<f64>,
    pub v: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// Columns `y`, `d`, `w`, `z`.
    pub dataset: Dataset,
    pub truth: TruthTable,
    pub latent: Latent,
}

/// One draw from the model using the generator stream `0`.
pub fn generate(spec: &DgpSpec) -> Result<Simulation> {
    generate_replication(spec, 0)
}

/// Draw for replication `r`: seed `spec.seed`, stream `r`.
pub fn generate_replication(spec: &DgpSpec, r: usize) -> Result<Simulation> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    rng.set_stream(r as u64);
    let n = spec.n;
    let scale = (1.0 - spec.rho * spec.rho).sqrt();
    let (mut y, mut d, mut w, mut z) = (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut latent = Latent { y_star: vec![0.0; n], v: vec![0.0; n], u: vec![0.0; n] };
    for i in 0..n {
        let wi: f64 = StandardNormal.sample(&mut rng);
        let zi: f64 = StandardNormal.sample(&mut rng);
        let vi: f64 = Open01.sample(&mut rng);
        let ui: f64 = Open01.sample(&mut rng);
        let qv = quantile_unchecked(vi);
        let di = spec.pi0 + spec.pi_w * wi + spec.pi_z * zi + spec.sigma_v * qv;
        let ys = spec.beta00 + spec.beta01 * di + spec.beta02 * wi + spec.rho * qv
            + scale * quantile_unchecked(ui);
        y[i] = ys.max(spec.censor_point);
        d[i] = di;
        w[i] = wi;
        z[i] = zi;
        latent.y_star[i] = ys;
        latent.v[i] = vi;
        latent.u[i] = ui;
    }
    let dataset = Dataset::new(
        Column::new("y", y),
        Some(Column::new("d", d)),
        vec![Column::new("w", w)],
        vec![Column::new("z", z)],
        spec.censor_point,
    )?;
    Ok(Simulation { dataset, truth: spec.truth(), latent })
}

/// Share of observations at the censoring point.
pub fn censored_fraction(sim: &Simulation) -> f64 {
    let ds = &sim.dataset;
    let k = ds.outcome.values.iter().zip(&ds.censor).filter(|(y, c)| y <= c).count();
    k as f64 / ds.n() as f64
}

/// One Monte Carlo replication's estimates.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: usize,
    pub result: CqivResult,
}

/// Runs `config` on `replications` independent draws, in parallel, returned
/// in replication order.
pub fn replicate(spec: &DgpSpec, config: &CqivConfig, replications: usize) -> Result<Vec<Replication>> {
    if replications == 0 {
        return Err(CqivError::InvalidArgument("replications must be at least 1".into()));
    }
    (0..replications)
        .into_par_iter()
        .map(|r| {
            let wrap = |e: CqivError| CqivError::Replication { index: r, source: Box::new(e) };
            let sim = generate_replication(spec, r).map_err(wrap)?;
            let result = estimate(&sim.dataset, config).map_err(wrap)?;
            if let Some((u, e)) =
                result.quantiles.iter().zip(&result.fits).find_map(|(u, f)| f.as_ref().err().map(|e| (u, e)))
            {
                return Err(wrap(CqivError::Internal(format!("u = {u}: {e}"))));
            }
            Ok(Replication { index: r, result })
        })
        .collect()
}

/// Bias, RMSE and coverage of one coefficient at one quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub quantile: f64,
    pub variable: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub replications: usize,
}

/// Aggregates replications against the model truth. Coefficients the model
/// does not pin (other labels, or a raw-entry control) are skipped.
pub fn summarize(truth: &TruthTable, config: &CqivConfig, reps: &[Replication]) -> Vec<McRow> {
    let Some(first) = reps.first() else { return Vec::new() };
    let labels = &first.result.labels;
    let mut rows = Vec::new();
    for (k, &u) in first.result.quantiles.iter().enumerate() {
        for (j, label) in labels.iter().enumerate() {
            if label == "control" && config.formula.control == ControlEntry::Raw {
                continue;
            }
            let Some(t) = truth.for_label(label, u) else { continue };
            let est: Vec<f64> = reps
                .iter()
                .filter_map(|r| r.result.fits[k].as_ref().ok().map(|f| f.beta3[j]))
                .collect();
            let m = est.len() as f64;
            let mean = est.iter().sum::<f64>() / m;
            let rmse = (est.iter().map(|e| (e - t) * (e - t)).sum::<f64>() / m).sqrt();
            let coverage = first.result.intervals.as_ref().map(|_| {
                let hits = reps
                    .iter()
                    .filter(|r| {
                        r.result.intervals.as_ref().and_then(|iv| iv[k].as_ref().ok()).is_some_and(|iv| {
                            iv[j].lower <= t && t <= iv[j].upper
                        })
                    })
                    .count();
                100.0 * hits as f64 / reps.len() as f64
            });
            rows.push(McRow {
                quantile: u,
                variable: label.clone(),
                truth: t,
                mean_estimate: mean,
                bias: mean - t,
                rmse,
                coverage,
                replications: est.len(),
            });
        }
    }
    rows
}

/// Bias/RMSE/coverage table for `config` on `replications` draws.
pub fn monte_carlo(spec: &DgpSpec, config: &CqivConfig, replications: usize) -> Result<Vec<McRow>> {
    let reps = replicate(spec, config, replications)?;
    Ok(summarize(&spec.truth(), config, &reps))
}

/// Default options at the quartiles and the median.
pub fn default_config() -> CqivConfig {
    CqivConfig { quantiles: vec![0.25, 0.5, 0.75], variant: Variant::Cqiv, ..CqivConfig::default() }
}
