//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a criterion outside `KNOWN_RED` fails.
//!
//! `KNOWN_RED` lists criteria that fail for reasons analysed in the
//! decision ledger. They still print FAIL.

use std::collections::HashSet;
use std::path::Path;
use std::time::Instant;

use cqiv::cli::{main_with, parse_invocation};
use cqiv::control::FirstStageMethod;
use cqiv::data::Dataset;
use cqiv::engine::{run, CensorSide, Confidence, CqivConfig, CqivResult, Variant};
use cqiv::inference::{weighted_bootstrap, WeightSource};
use cqiv::numkit::{binary_loglik, fit_binary_mle, solve_wqr, DesignMatrix, LinkFunction, WeightVector};
use cqiv::simlab::{default_config, generate, generate_replication, replicate, summarize, DgpSpec, Replication};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const KNOWN_RED: &[usize] = &[11];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

// ---------------------------------------------------------------- oracles

fn check_loss(z: f64, u: f64) -> f64 {
    if z < 0.0 { (u - 1.0) * z } else { u * z }
}

fn objective(x: &[Vec<f64>], y: &[f64], w: &[f64], u: f64, beta: &[f64]) -> f64 {
    x.iter()
        .zip(y)
        .zip(w)
        .map(|((row, yi), wi)| wi * check_loss(yi - row.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>(), u))
        .sum()
}

/// Solves a p x p system (p <= 3) by Cramer's rule.
fn cramer(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let det = |m: &[Vec<f64>]| -> f64 {
        match m.len() {
            1 => m[0][0],
            2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
            _ => {
                m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                    + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
            }
        }
    };
    let d = det(a);
    let scale: f64 = a.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max).powi(a.len() as i32);
    if d.abs() <= 1e-12 * scale.max(1e-300) {
        return None;
    }
    Some(
        (0..a.len())
            .map(|j| {
                let m: Vec<Vec<f64>> = a
                    .iter()
                    .zip(b)
                    .map(|(row, bi)| row.iter().enumerate().map(|(k, v)| if k == j { *bi } else { *v }).collect())
                    .collect();
                det(&m) / d
            })
            .collect(),
    )
}

/// Minimum of the check-loss objective over every basic solution.
fn exhaustive_optimum(x: &[Vec<f64>], y: &[f64], w: &[f64], u: f64) -> f64 {
    let (n, p) = (x.len(), x[0].len());
    let mut best = f64::INFINITY;
    let mut idx: Vec<usize> = (0..p).collect();
    loop {
        let a: Vec<Vec<f64>> = idx.iter().map(|&i| x[i].clone()).collect();
        let b: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        if let Some(beta) = cramer(&a, &b) {
            best = best.min(objective(x, y, w, u, &beta));
        }
        let mut k = p;
        while k > 0 && idx[k - 1] == n - p + k - 1 {
            k -= 1;
        }
        if k == 0 {
            return best;
        }
        idx[k - 1] += 1;
        for j in k..p {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn loglik_oracle(x: &[Vec<f64>], t: &[bool], w: &[f64], logit: bool, d: &[f64]) -> f64 {
    x.iter()
        .zip(t)
        .zip(w)
        .map(|((row, ti), wi)| {
            let eta: f64 = row.iter().zip(d).map(|(a, b)| a * b).sum();
            let p = if logit { 1.0 / (1.0 + (-eta).exp()) } else { phi_cdf(eta) };
            wi * if *ti { p.ln() } else { (1.0 - p).ln() }
        })
        .sum()
}

fn to_design(x: &[Vec<f64>]) -> DesignMatrix {
    let p = x[0].len();
    let cols = (0..p).map(|j| (format!("x{j}"), x.iter().map(|r| r[j]).collect())).collect();
    DesignMatrix::from_columns(cols).unwrap()
}

// ---------------------------------------------------------------- criteria

struct QrInstance {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    w: Vec<f64>,
    u: f64,
    beta: Vec<f64>,
}

fn qr_instances() -> Vec<QrInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    (0..200)
        .map(|case| {
            let p = 1 + case % 3;
            let n = rng.random_range((p + 2).max(5)..=30);
            let u = f64::from(1 + (case % 9) as u32) / 10.0;
            let x: Vec<Vec<f64>> = (0..n)
                .map(|_| std::iter::once(1.0).chain((1..p).map(|_| rng.random_range(-2.0..2.0))).collect())
                .collect();
            let y: Vec<f64> = x.iter().map(|r| r.iter().sum::<f64>() + rng.random_range(-3.0..3.0)).collect();
            let w: Vec<f64> =
                if case % 2 == 0 { vec![1.0; n] } else { (0..n).map(|_| rng.random_range(0.1..3.0)).collect() };
            let beta = solve_wqr(&to_design(&x), &y, u, &WeightVector::new(w.clone()).unwrap()).unwrap();
            QrInstance { x, y, w, u, beta }
        })
        .collect()
}

fn criterion_1(inst: &[QrInstance]) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for q in inst {
        let got = objective(&q.x, &q.y, &q.w, q.u, &q.beta);
        let want = exhaustive_optimum(&q.x, &q.y, &q.w, q.u);
        worst = worst.max((got - want).abs() / want.abs().max(1e-12));
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-8 && secs < 10.0,
        format!("{} instances, max relative gap {worst:.2e}, enumeration {secs:.2}s", inst.len()),
    )
}

fn criterion_2(inst: &[QrInstance]) -> Outcome {
    let mut bad = 0;
    for q in inst {
        let total: f64 = q.w.iter().sum();
        let wmax = q.w.iter().copied().fold(0.0, f64::max);
        let scale = 1.0 + q.y.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let (mut below, mut at_or_below) = (0.0, 0.0);
        for ((row, yi), wi) in q.x.iter().zip(&q.y).zip(&q.w) {
            let r = yi - row.iter().zip(&q.beta).map(|(a, b)| a * b).sum::<f64>();
            if r < -1e-9 * scale {
                below += wi;
            }
            if r <= 1e-9 * scale {
                at_or_below += wi;
            }
        }
        let p = q.beta.len() as f64;
        if below > q.u * total + 1e-9 || at_or_below < q.u * total - p * wmax - 1e-9 {
            bad += 1;
        }
    }
    outcome(bad == 0, format!("{} of {} instances violate the weighted sign balance", bad, inst.len()))
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_fd, mut worst_grad): (f64, f64) = (0.0, 0.0);
    for case in 0..20 {
        let logit = case >= 10;
        let link = if logit { LinkFunction::Logit } else { LinkFunction::Probit };
        let n = 200;
        let x: Vec<Vec<f64>> =
            (0..n).map(|_| vec![1.0, rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
        let t: Vec<bool> = x.iter().map(|r| 0.2 + r[1] - 0.7 * r[2] + rng.random_range(-2.0..2.0) > 0.0).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        let design = to_design(&x);
        let wv = WeightVector::new(w.clone()).unwrap();
        let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = binary_loglik(&design, &t, link, &wv, &d);
        for k in 0..3 {
            let h = 1e-5;
            let (mut dp, mut dm) = (d.clone(), d.clone());
            dp[k] += h;
            dm[k] -= h;
            let fd = (loglik_oracle(&x, &t, &w, logit, &dp) - loglik_oracle(&x, &t, &w, logit, &dm)) / (2.0 * h);
            worst_fd = worst_fd.max((fd - g[k]).abs());
        }
        let fit = fit_binary_mle(&design, &t, link, &wv).unwrap();
        let (_, g) = binary_loglik(&design, &t, link, &wv, &fit.delta);
        worst_grad = worst_grad.max(g.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    outcome(
        worst_fd < 1e-5 && worst_grad < 1e-8,
        format!("max |score - finite difference| {worst_fd:.2e}, max gradient sup-norm at optimum {worst_grad:.2e}"),
    )
}

fn criterion_4() -> Outcome {
    let spec = DgpSpec { censor_point: -1e9, ..DgpSpec::default() };
    let sim = generate(&spec).unwrap();
    let min_y = sim.dataset.outcome.values.iter().copied().fold(f64::INFINITY, f64::min);
    let data = sim.dataset.clone().with_censor(vec![min_y - 1.0; spec.n]).unwrap();
    let config = CqivConfig { variant: Variant::Cqr, quantiles: vec![0.25, 0.5, 0.75], ..CqivConfig::default() };
    let result = run(&data, &config).unwrap();
    let n = spec.n;
    let x = DesignMatrix::from_columns(vec![
        ("_cons".into(), vec![1.0; n]),
        ("d".into(), data.endogenous.as_ref().unwrap().values.clone()),
        ("w".into(), data.exogenous[0].values.clone()),
    ])
    .unwrap();
    let mut worst: f64 = 0.0;
    for &u in &[0.25, 0.5, 0.75] {
        let plain = solve_wqr(&x, &data.outcome.values, u, &WeightVector::ones(n)).unwrap();
        let fit = result.fit(u).unwrap();
        for (a, b) in fit.beta3.iter().zip(&plain) {
            worst = worst.max((a - b).abs());
        }
    }
    outcome(worst <= 1e-8, format!("max |cqr - plain QR| {worst:.2e} over 3 quantiles"))
}

fn d_slope_rows(reps: &[Replication], config: &CqivConfig) -> Vec<(f64, f64, f64)> {
    summarize(&DgpSpec::default().truth(), config, reps)
        .into_iter()
        .filter(|r| r.variable == "d")
        .map(|r| (r.quantile, r.bias, r.rmse))
        .collect()
}

struct McRuns {
    quantile_probit: Vec<Replication>,
    quantile_logit: Vec<Replication>,
    ols: Vec<Replication>,
    distribution: Vec<Replication>,
    seconds: [f64; 3],
}

fn mc_runs() -> McRuns {
    let spec = DgpSpec::default();
    let base = default_config();
    let timed = |cfg: &CqivConfig| {
        let start = Instant::now();
        let r = replicate(&spec, cfg, 100).expect("Monte Carlo run");
        (r, start.elapsed().as_secs_f64())
    };
    let (quantile_probit, t0) = timed(&base);
    let mut ols_cfg = base.clone();
    ols_cfg.first_stage.method = FirstStageMethod::Ols;
    let (ols, t1) = timed(&ols_cfg);
    let mut dist_cfg = base.clone();
    dist_cfg.first_stage.method = FirstStageMethod::Distribution;
    let (distribution, t2) = timed(&dist_cfg);
    let logit_cfg = CqivConfig { ldv2: LinkFunction::Logit, ..base };
    let (quantile_logit, _) = timed(&logit_cfg);
    McRuns { quantile_probit, quantile_logit, ols, distribution, seconds: [t0, t1, t2] }
}

fn criterion_5(mc: &McRuns) -> Outcome {
    let beta01 = DgpSpec::default().beta01.abs();
    let base = default_config();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, reps) in [("quantile", &mc.quantile_probit), ("ols", &mc.ols), ("distribution", &mc.distribution)] {
        let rows = d_slope_rows(reps, &base);
        pass &= rows.len() == 3 && rows.iter().all(|(_, b, r)| b.abs() < 0.05 * beta01 && *r < 0.15 * beta01);
        let worst_bias = rows.iter().map(|r| r.1.abs()).fold(0.0, f64::max);
        let worst_rmse = rows.iter().map(|r| r.2).fold(0.0, f64::max);
        parts.push(format!("{name}: max |bias| {worst_bias:.4}, max RMSE {worst_rmse:.4}"));
    }
    let secs: f64 = mc.seconds.iter().sum();
    pass &= secs < 600.0;
    outcome(pass, format!("{}; 3 x 100 replications in {secs:.0}s", parts.join("; ")))
}

/// Observations whose membership in `J0` differs between the probability
/// scale and the centred index scale.
fn selector_mismatches(result: &CqivResult, link: LinkFunction) -> usize {
    let mut bad = 0;
    for fit in result.fits.iter().flatten() {
        let Some(s) = &fit.selection else { continue };
        let base = 1.0 - s.u_fit;
        let threshold = base + s.k0;
        let centre = link.inverse(base);
        let rhs = link.inverse(threshold) - centre;
        let j0: HashSet<usize> = s.j0.iter().copied().collect();
        for (i, (&lam, &eta)) in s.lambda_hat.iter().zip(&s.index_hat).enumerate() {
            let by_prob = lam > threshold;
            let by_index = eta - centre > rhs;
            if by_prob != by_index || by_prob != j0.contains(&i) {
                bad += 1;
            }
        }
    }
    bad
}

fn criterion_6(mc: &McRuns) -> Outcome {
    let probit: usize = mc.quantile_probit.iter().map(|r| selector_mismatches(&r.result, LinkFunction::Probit)).sum();
    let logit: usize = mc.quantile_logit.iter().map(|r| selector_mismatches(&r.result, LinkFunction::Logit)).sum();
    outcome(
        probit == 0 && logit == 0,
        format!(
            "membership mismatches: probit {probit}, logit {logit} over {} + {} replications",
            mc.quantile_probit.len(),
            mc.quantile_logit.len()
        ),
    )
}

fn negated(data: &Dataset) -> Dataset {
    let mut out = data.clone();
    out.outcome.values.iter_mut().for_each(|v| *v = -*v);
    out.censor.iter_mut().for_each(|v| *v = -*v);
    out
}

fn criterion_7() -> Outcome {
    let sim = generate(&DgpSpec::default()).unwrap();
    let mut mismatches = 0;
    let mut checked = 0;
    for method in [FirstStageMethod::Quantile, FirstStageMethod::Ols] {
        let mut left = default_config();
        left.first_stage.method = method;
        left.corner = true;
        let right = CqivConfig { censor_side: CensorSide::Right, ..left.clone() };
        let l = run(&sim.dataset, &left).unwrap();
        let r = run(&negated(&sim.dataset), &right).unwrap();
        for &u in &[0.25, 0.5, 0.75] {
            let lf = l.fit(1.0 - u).unwrap();
            let rf = r.fit(u).unwrap();
            let mapped: Vec<f64> = lf.beta3.iter().map(|v| -v).collect();
            let corner = lf.corner.map(|c| -c);
            checked += 1;
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            if bits(&mapped) != bits(&rf.beta3)
                || corner.map(f64::to_bits) != rf.corner.map(f64::to_bits)
                || lf.diagnostics != rf.diagnostics
            {
                mismatches += 1;
            }
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of {checked} quantile fits differ after sign mapping"))
}

fn criterion_8() -> Outcome {
    // Anchor hook.
    let sim = generate(&DgpSpec::default()).unwrap();
    let mut exact = true;
    for side in [CensorSide::Left, CensorSide::Right] {
        let config = CqivConfig { censor_side: side, ..default_config() };
        let data = if side == CensorSide::Right { negated(&sim.dataset) } else { sim.dataset.clone() };
        let anchor = run(&data, &config).unwrap();
        let draws = weighted_bootstrap(&data, &config, &anchor, 1, config.seed, WeightSource::Ones);
        for (q, fit) in draws.per_quantile.iter().zip(&anchor.fits) {
            exact &= q.failures.is_empty() && q.draws.len() == 1 && q.draws[0] == fit.as_ref().unwrap().beta3;
        }
    }

    // Coverage study.
    let start = Instant::now();
    let config = CqivConfig { confidence: Confidence::WeightedBoot, bootreps: 200, ..default_config() };
    let reps = replicate(&DgpSpec::default(), &config, 100).expect("coverage study");
    let rows: Vec<(f64, f64)> = summarize(&DgpSpec::default().truth(), &config, &reps)
        .into_iter()
        .filter(|r| r.variable == "d")
        .map(|r| (r.quantile, r.coverage.unwrap_or(0.0)))
        .collect();
    let covered = rows.len() == 3 && rows.iter().all(|(_, c)| (88.0..=99.0).contains(c));
    let cov: Vec<String> = rows.iter().map(|(u, c)| format!("u={u}: {c:.0}%")).collect();
    outcome(
        exact && covered,
        format!(
            "ones-weight draw reproduces the point estimate: {exact}; slope coverage {} ({:.0}s)",
            cov.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn write_sim_csv(path: &Path) {
    let sim = generate_replication(&DgpSpec { n: 400, ..DgpSpec::default() }, 9).unwrap();
    let ds = &sim.dataset;
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["y", "d", "w", "z"]).unwrap();
    for i in 0..ds.n() {
        let row = [
            ds.outcome.values[i],
            ds.endogenous.as_ref().unwrap().values[i],
            ds.exogenous[0].values[i],
            ds.instruments[0].values[i],
        ];
        w.write_record(row.iter().map(|v| v.to_string())).unwrap();
    }
    w.flush().unwrap();
}

fn cli_run(csv: &Path, out: &Path, threads: usize) -> (i32, Vec<u8>, Vec<u8>) {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let (mut stdout, mut stderr) = (Vec::new(), Vec::new());
    let argv: Vec<String> = [
        "cqiv", "estimate", csv.to_str().unwrap(), "y", "w", "(d", "=", "z)", "--quantiles", "25(25)75",
        "--confidence", "weightedboot", "--bootreps", "30", "--corner", "--out", out.to_str().unwrap(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let code = pool.install(|| main_with(argv, &mut stdout, &mut stderr));
    let _ = stderr;
    (code, std::fs::read(out).unwrap_or_default(), stdout)
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sim.csv");
    write_sim_csv(&csv);
    let a = cli_run(&csv, &dir.path().join("a.json"), 1);
    let b = cli_run(&csv, &dir.path().join("b.json"), 1);
    let c = cli_run(&csv, &dir.path().join("c.json"), 4);
    let ok = a.0 == 0 && !a.1.is_empty() && a.1 == b.1 && a.1 == c.1 && a.2 == b.2 && a.2 == c.2;
    outcome(
        ok,
        format!(
            "exit codes {}/{}/{}; JSON {} bytes, identical across runs and thread counts: {}",
            a.0,
            b.0,
            c.0,
            a.1.len(),
            a.1 == b.1 && a.1 == c.1
        ),
    )
}

fn criterion_10() -> Outcome {
    let inv = parse_invocation(["cqiv", "estimate", "data.csv", "y", "(d", "=", "z)"]).unwrap();
    let c = &inv.config;
    let checks = [
        ("censorpt", inv.censor_point == 0.0),
        ("left censoring", c.censor_side == CensorSide::Left),
        ("firststage", c.first_stage.method == FirstStageMethod::Quantile),
        ("nquant", c.first_stage.n_quant == 50),
        ("nthresh", c.first_stage.n_thresh == 50),
        ("ldv1", c.first_stage.ldv1 == LinkFunction::Probit),
        ("ldv2", c.ldv2 == LinkFunction::Probit),
        ("drop1", c.q0 == 10.0),
        ("drop2", c.q1 == 3.0),
        ("confidence", c.confidence == Confidence::None),
        ("bootreps", c.bootreps == 100),
        ("setseed", c.seed == 777),
        ("level", c.level == 95.0),
        ("quantiles", c.quantiles == [0.5]),
    ];
    let wrong: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    outcome(wrong.is_empty(), format!("{} defaults checked, mismatched: {:?}", checks.len(), wrong))
}

fn criterion_11(mc: &McRuns) -> Outcome {
    let reps = &mc.quantile_probit;
    let quantiles = &reps[0].result.quantiles;
    let mut nested_per_u = vec![0usize; quantiles.len()];
    let mut nested_all = 0;
    let mut inconsistent = 0;
    for r in reps {
        let mut all = true;
        for (k, fit) in r.result.fits.iter().enumerate() {
            let fit = fit.as_ref().unwrap();
            let (Some(s), Some(d)) = (&fit.selection, &fit.diagnostics) else {
                inconsistent += 1;
                continue;
            };
            let j1: HashSet<usize> = s.j1.iter().copied().collect();
            let missing = s.j0.iter().filter(|i| !j1.contains(i)).count();
            let n = r.result.n as f64;
            let consistent = d.size_j0 == s.j0.len()
                && d.size_j1 == s.j1.len()
                && d.size_j0_not_in_j1 == missing
                && d.pct_full_in_j0 == 100.0 * s.j0.len() as f64 / n
                && d.pct_full_in_j1 == 100.0 * s.j1.len() as f64 / n
                && d.pct_j0_not_in_j1 == 100.0 * missing as f64 / s.j0.len() as f64;
            if !consistent {
                inconsistent += 1;
            }
            if missing == 0 {
                nested_per_u[k] += 1;
            } else {
                all = false;
            }
        }
        nested_all += usize::from(all);
    }
    let m = reps.len() as f64;
    let shares: Vec<String> =
        quantiles.iter().zip(&nested_per_u).map(|(u, c)| format!("u={u}: {:.0}%", 100.0 * *c as f64 / m)).collect();
    let nested_ok = nested_per_u.iter().all(|c| *c as f64 >= 0.9 * m);
    outcome(
        nested_ok && inconsistent == 0,
        format!(
            "J0 within J1 {}; at every quantile {:.0}%; inconsistent diagnostic rows {inconsistent}",
            shares.join(", "),
            100.0 * nested_all as f64 / m
        ),
    )
}

/// `ACCEPTANCE_ONLY=1,4,9` restricts the run; skipped criteria print SKIP.
fn selected() -> Option<HashSet<usize>> {
    std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|k| k.trim().parse().ok()).collect())
}

fn main() {
    let start = Instant::now();
    let only = selected();
    let want = |k: usize| only.as_ref().is_none_or(|s| s.contains(&k));
    let mut results: Vec<(usize, &str, Option<Outcome>)> = Vec::new();
    let inst = if want(1) || want(2) { qr_instances() } else { Vec::new() };
    let mc = if want(5) || want(6) || want(11) { Some(mc_runs()) } else { None };
    let mut add = |k: usize, name: &'static str, f: &dyn Fn() -> Outcome| {
        results.push((k, name, want(k).then(f)));
    };
    add(1, "QR oracle equivalence", &|| criterion_1(&inst));
    add(2, "QR sign balance", &|| criterion_2(&inst));
    add(3, "binary MLE score and optimum", &criterion_3);
    add(4, "degeneration to plain QR", &criterion_4);
    add(5, "Monte Carlo recovery", &|| criterion_5(mc.as_ref().unwrap()));
    add(6, "selector equivalence", &|| criterion_6(mc.as_ref().unwrap()));
    add(7, "right/left duality", &criterion_7);
    add(8, "weighted bootstrap anchor and coverage", &criterion_8);
    add(9, "determinism", &criterion_9);
    add(10, "defaults parity", &criterion_10);
    add(11, "selection diagnostics", &|| criterion_11(mc.as_ref().unwrap()));

    let mut unexpected = 0;
    for (k, name, o) in &results {
        let Some(o) = o else {
            println!("SKIP criterion {k:>2} {name}");
            continue;
        };
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_RED.contains(k) { " [known red, see ledger]" } else { "" };
        println!("{tag} criterion {k:>2} {name}: {}{note}", o.detail);
        if !o.pass && !KNOWN_RED.contains(k) {
            unexpected += 1;
        }
    }
    let ran = results.iter().filter(|r| r.2.is_some()).count();
    let passed = results.iter().filter(|r| r.2.as_ref().is_some_and(|o| o.pass)).count();
    println!("{passed}/{ran} criteria pass ({:.0}s)", start.elapsed().as_secs_f64());
    if unexpected > 0 {
        std::process::exit(1);
    }
}
