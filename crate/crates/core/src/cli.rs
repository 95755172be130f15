//! Command-line front end: CSV ingestion, option parsing in the style of the
//! Stata command, tables on stdout and a JSON result document.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::control::{FirstStageMethod, FirstStageSpec};
use crate::data::{Column, ControlEntry, Dataset, TransformSpec};
use crate::engine::{CensorSide, Confidence, CqivConfig, CqivResult, Variant};
use crate::error::{CqivError, Result};
use crate::inference::estimate;
use crate::numkit::LinkFunction;
use crate::simlab::{monte_carlo, DgpSpec, McRow};

#[derive(Debug, Parser)]
#[command(name = "cqiv", version, about = "Censored quantile instrumental variable estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate `depvar [varlist] (endogvar = instruments)` on a CSV file.
    Estimate(EstimateArgs),
    /// Monte Carlo study on the simulated location model, written as CSV.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Quantile,
    Distribution,
    Ols,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LinkArg {
    Probit,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConfidenceArg {
    No,
    Boot,
    Weightedboot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControlArg {
    Normal,
    Raw,
}

/// Options shared by `estimate` and `simulate`.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Quantiles in percent; numlists such as `70(5)90` are expanded.
    #[arg(long, num_args = 1.., default_values_t = vec!["50".to_string()])]
    pub quantiles: Vec<String>,
    /// Censoring point.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub censorpt: f64,
    /// Right censoring.
    #[arg(long)]
    pub top: bool,
    /// Quantile IV without censoring.
    #[arg(long)]
    pub uncensored: bool,
    /// Censored quantile regression without endogeneity.
    #[arg(long)]
    pub exogenous: bool,
    #[arg(long, value_enum, default_value_t = StageArg::Quantile)]
    pub firststage: StageArg,
    /// Drop the exogenous regressors from the first stage.
    #[arg(long)]
    pub exclude: bool,
    #[arg(long, default_value_t = 50)]
    pub nquant: usize,
    #[arg(long, default_value_t = 50)]
    pub nthresh: usize,
    #[arg(long, value_enum, default_value_t = LinkArg::Probit)]
    pub ldv1: LinkArg,
    #[arg(long, value_enum, default_value_t = LinkArg::Probit)]
    pub ldv2: LinkArg,
    /// Average marginal effects for corner-solution models.
    #[arg(long)]
    pub corner: bool,
    /// Step-1 trimming percentage.
    #[arg(long, default_value_t = 10.0)]
    pub drop1: f64,
    /// Step-2 trimming percentage.
    #[arg(long, default_value_t = 3.0)]
    pub drop2: f64,
    #[arg(long)]
    pub viewlog: bool,
    #[arg(long, value_enum, default_value_t = ConfidenceArg::No)]
    pub confidence: ConfidenceArg,
    #[arg(long, default_value_t = 100)]
    pub bootreps: usize,
    #[arg(long, default_value_t = 777)]
    pub setseed: u64,
    #[arg(long, default_value_t = 95.0)]
    pub level: f64,
    #[arg(long)]
    pub norobust: bool,
    /// Powers of the endogenous variable in the second stage.
    #[arg(long, num_args = 1.., default_values_t = vec![1u32])]
    pub powers: Vec<u32>,
    /// How the control enters the second stage.
    #[arg(long = "control-entry", value_enum, default_value_t = ControlArg::Normal)]
    pub control: ControlArg,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    /// CSV file with a header row.
    pub data: PathBuf,
    /// `depvar [varlist] (endogvar = instrument ...)`.
    #[arg(required = true, num_args = 1..)]
    pub varlist: Vec<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Observation weight column.
    #[arg(long)]
    pub weight: Option<String>,
    /// Keep rows with `lo <= column <= hi`, written `column:lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    pub filter: Option<String>,
    /// Result document path.
    #[arg(long, default_value = "cqiv_results.json")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    pub rho: f64,
    /// Target censoring share; overridden by `--censorpt` when given.
    #[arg(long, default_value_t = 0.4)]
    pub censor_share: f64,
    /// Seed for the simulated data.
    #[arg(long, default_value_t = 2024)]
    pub dataseed: u64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// CSV output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Variables named on the command line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarList {
    pub depvar: String,
    pub exogenous: Vec<String>,
    pub endogenous: Option<String>,
    pub instruments: Vec<String>,
}

/// Parses `depvar [varlist] (endogvar = instrument ...)`. Exogenous names
/// repeated among the instruments are dropped from the instrument list.
pub fn parse_varlist(tokens: &[String]) -> Result<VarList> {
    let text = tokens.join(" ");
    let (outside, inside) = match text.find('(') {
        Some(open) => {
            let close = text
                .rfind(')')
                .filter(|c| *c > open)
                .ok_or_else(|| CqivError::Usage("unbalanced parenthesis in varlist".into()))?;
            if !text[close + 1..].trim().is_empty() {
                return Err(CqivError::Usage("variables after the parenthesized group".into()));
            }
            (text[..open].to_string(), Some(text[open + 1..close].to_string()))
        }
        None => (text.clone(), None),
    };
    let mut names = outside.split_whitespace().map(str::to_string);
    let depvar = names.next().ok_or_else(|| CqivError::Usage("missing depvar".into()))?;
    let exogenous: Vec<String> = names.collect();
    let (endogenous, instruments) = match inside {
        None => (None, Vec::new()),
        Some(group) => {
            let (lhs, rhs) = group
                .split_once('=')
                .ok_or_else(|| CqivError::Usage("expected (endogvar = instrument ...)".into()))?;
            let lhs: Vec<&str> = lhs.split_whitespace().collect();
            if lhs.len() != 1 {
                return Err(CqivError::Usage("exactly one endogenous variable is supported".into()));
            }
            let mut seen = HashSet::new();
            let instruments: Vec<String> = rhs
                .split_whitespace()
                .filter(|z| !exogenous.iter().any(|x| x == z))
                .filter(|z| seen.insert(z.to_string()))
                .map(str::to_string)
                .collect();
            (Some(lhs[0].to_string()), instruments)
        }
    };
    let vl = VarList { depvar, exogenous, endogenous, instruments };
    vl.validate()?;
    Ok(vl)
}

impl VarList {
    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for x in &self.exogenous {
            if !seen.insert(x) {
                return Err(CqivError::Usage(format!("`{x}` listed twice")));
            }
        }
        if let Some(d) = &self.endogenous {
            if self.exogenous.contains(d) {
                return Err(CqivError::Usage(format!("`{d}` is both endogenous and exogenous")));
            }
            if self.instruments.contains(d) {
                return Err(CqivError::Usage(format!("`{d}` instruments itself")));
            }
        }
        let regressors = self.exogenous.iter().chain(&self.endogenous).chain(&self.instruments);
        if regressors.clone().any(|v| *v == self.depvar) {
            return Err(CqivError::Usage(format!("depvar `{}` also appears as a regressor", self.depvar)));
        }
        Ok(())
    }

    fn columns(&self) -> Vec<&str> {
        std::iter::once(&self.depvar)
            .chain(&self.exogenous)
            .chain(&self.endogenous)
            .chain(&self.instruments)
            .map(String::as_str)
            .collect()
    }
}

/// Expands a Stata numlist: plain numbers, `a(step)b` and `a/b`.
pub fn expand_numlist(tokens: &[String]) -> Result<Vec<f64>> {
    let bad = |t: &str| CqivError::Usage(format!("malformed numlist element `{t}`"));
    let num = |s: &str, t: &str| s.trim().parse::<f64>().map_err(|_| bad(t));
    let range = |a: f64, step: f64, b: f64, t: &str| -> Result<Vec<f64>> {
        if !(step > 0.0) || b < a {
            return Err(bad(t));
        }
        let k = ((b - a) / step + 1e-9).floor() as usize;
        Ok((0..=k).map(|i| a + i as f64 * step).collect())
    };
    let mut out = Vec::new();
    for tok in tokens.iter().flat_map(|t| t.split(|c: char| c == ',' || c.is_whitespace())) {
        if tok.is_empty() {
            continue;
        }
        if let Some((a, rest)) = tok.split_once('(') {
            let (step, b) = rest.split_once(')').ok_or_else(|| bad(tok))?;
            out.extend(range(num(a, tok)?, num(step, tok)?, num(b, tok)?, tok)?);
        } else if let Some((a, b)) = tok.split_once('/') {
            out.extend(range(num(a, tok)?, 1.0, num(b, tok)?, tok)?);
        } else {
            out.push(num(tok, tok)?);
        }
    }
    Ok(out)
}

/// Checks flag combinations and builds the library configuration.
pub fn build_config(m: &ModelArgs, has_instruments: bool) -> Result<CqivConfig> {
    if m.uncensored && m.exogenous {
        return Err(CqivError::Usage("--uncensored and --exogenous cannot be combined".into()));
    }
    if m.corner && m.uncensored {
        return Err(CqivError::Usage("--corner cannot be combined with --uncensored".into()));
    }
    if m.corner && m.exogenous {
        return Err(CqivError::Usage("--corner cannot be combined with --exogenous".into()));
    }
    if m.exogenous && has_instruments {
        return Err(CqivError::Usage(
            "--exogenous given together with an (endogvar = instrument) group".into(),
        ));
    }
    let pct = expand_numlist(&m.quantiles)?;
    if let Some(q) = pct.iter().find(|q| !(**q > 0.0 && **q < 100.0)) {
        return Err(CqivError::Usage(format!("quantile {q} outside (0, 100)")));
    }
    let link = |l: LinkArg| match l {
        LinkArg::Probit => LinkFunction::Probit,
        LinkArg::Logit => LinkFunction::Logit,
    };
    let config = CqivConfig {
        quantiles: pct.iter().map(|q| q / 100.0).collect(),
        censor_side: if m.top { CensorSide::Right } else { CensorSide::Left },
        variant: if m.uncensored {
            Variant::Qiv
        } else if m.exogenous {
            Variant::Cqr
        } else {
            Variant::Cqiv
        },
        first_stage: FirstStageSpec {
            method: match m.firststage {
                StageArg::Quantile => FirstStageMethod::Quantile,
                StageArg::Distribution => FirstStageMethod::Distribution,
                StageArg::Ols => FirstStageMethod::Ols,
            },
            n_quant: m.nquant,
            n_thresh: m.nthresh,
            ldv1: link(m.ldv1),
            exclude_exogenous: m.exclude,
        },
        formula: TransformSpec {
            intercept: true,
            endogenous_powers: m.powers.clone(),
            control: match m.control {
                ControlArg::Normal => ControlEntry::NormalQuantile,
                ControlArg::Raw => ControlEntry::Raw,
            },
        },
        ldv2: link(m.ldv2),
        q0: m.drop1,
        q1: m.drop2,
        corner: m.corner,
        confidence: match m.confidence {
            ConfidenceArg::No => Confidence::None,
            ConfidenceArg::Boot => Confidence::Boot,
            ConfidenceArg::Weightedboot => Confidence::WeightedBoot,
        },
        bootreps: m.bootreps,
        seed: m.setseed,
        level: m.level,
        norobust: m.norobust,
        viewlog: m.viewlog,
    };
    config.validate().map_err(|e| CqivError::Usage(e.to_string()))?;
    Ok(config)
}

/// Parsed `estimate` invocation.
#[derive(Debug, Clone)]
pub struct CliInvocation {
    pub data: PathBuf,
    pub vars: VarList,
    pub config: CqivConfig,
    pub censor_point: f64,
    pub weight: Option<String>,
    pub filter: Option<(String, f64, f64)>,
    pub out: PathBuf,
}

fn parse_filter(s: &str) -> Result<(String, f64, f64)> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || CqivError::Usage(format!("--filter expects column:lo:hi, got `{s}`"));
    if parts.len() != 3 || parts[0].is_empty() {
        return Err(bad());
    }
    let lo = if parts[1].is_empty() { f64::NEG_INFINITY } else { parts[1].parse().map_err(|_| bad())? };
    let hi = if parts[2].is_empty() { f64::INFINITY } else { parts[2].parse().map_err(|_| bad())? };
    if lo > hi {
        return Err(bad());
    }
    Ok((parts[0].to_string(), lo, hi))
}

pub fn invocation_from(args: &EstimateArgs) -> Result<CliInvocation> {
    let vars = parse_varlist(&args.varlist)?;
    let config = build_config(&args.model, vars.endogenous.is_some())?;
    if config.variant != Variant::Cqr && (vars.endogenous.is_none() || vars.instruments.is_empty()) {
        return Err(CqivError::Usage(
            "an (endogvar = instrument ...) group with at least one instrument is required unless --exogenous is given"
                .into(),
        ));
    }
    Ok(CliInvocation {
        data: args.data.clone(),
        vars,
        config,
        censor_point: args.model.censorpt,
        weight: args.weight.clone(),
        filter: args.filter.as_deref().map(parse_filter).transpose()?,
        out: args.out.clone(),
    })
}

/// Parses `argv` (including the program name) into an `estimate` invocation.
pub fn parse_invocation<I, T>(argv: I) -> Result<CliInvocation>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| CqivError::Usage(e.to_string()))?;
    match cli.command {
        Command::Estimate(a) => invocation_from(&a),
        Command::Simulate(_) => Err(CqivError::Usage("expected the estimate subcommand".into())),
    }
}

/// Loaded data plus row accounting.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub dropped: usize,
    pub filtered: usize,
}

/// Reads the referenced columns; rows with a missing or non-numeric value in
/// any of them are dropped and counted.
pub fn load_csv(path: &Path, inv: &CliInvocation) -> Result<LoadedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| CqivError::Io(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| CqivError::Data(e.to_string()))?.clone();
    let mut wanted: Vec<&str> = inv.vars.columns();
    wanted.extend(inv.weight.as_deref());
    wanted.extend(inv.filter.as_ref().map(|f| f.0.as_str()));
    let mut seen = HashSet::new();
    wanted.retain(|c| seen.insert(*c));
    let idx: Vec<usize> = wanted
        .iter()
        .map(|c| {
            headers
                .iter()
                .position(|h| h.trim() == *c)
                .ok_or_else(|| CqivError::Data(format!("column `{c}` not found in {}", path.display())))
        })
        .collect::<Result<_>>()?;

    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); wanted.len()];
    let (mut dropped, mut filtered) = (0, 0);
    let filter_pos = inv.filter.as_ref().map(|f| wanted.iter().position(|c| *c == f.0).unwrap());
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CqivError::Data(e.to_string()))?;
        let vals: Option<Vec<f64>> = idx
            .iter()
            .map(|&j| rec.get(j).and_then(|s| s.trim().parse::<f64>().ok()).filter(|v| v.is_finite()))
            .collect();
        let Some(vals) = vals else {
            dropped += 1;
            continue;
        };
        if let (Some((_, lo, hi)), Some(k)) = (&inv.filter, filter_pos) {
            if !(vals[k] >= *lo && vals[k] <= *hi) {
                filtered += 1;
                continue;
            }
        }
        cols.iter_mut().zip(vals).for_each(|(c, v)| c.push(v));
    }
    if cols[0].is_empty() {
        return Err(CqivError::Data("no usable rows".into()));
    }
    let col = |name: &str| {
        let k = wanted.iter().position(|c| *c == name).unwrap();
        Column::new(name, cols[k].clone())
    };
    let mut ds = Dataset::new(
        col(&inv.vars.depvar),
        inv.vars.endogenous.as_deref().map(col),
        inv.vars.exogenous.iter().map(|x| col(x)).collect(),
        inv.vars.instruments.iter().map(|z| col(z)).collect(),
        inv.censor_point,
    )?;
    if let Some(w) = &inv.weight {
        ds = ds.with_weights(col(w).values)?;
    }
    Ok(LoadedData { dataset: ds, dropped, filtered })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub quantile: f64,
    pub variable: String,
    pub coefficient: f64,
    pub mean: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub quantile: f64,
    pub pct_full_in_j0: f64,
    pub pct_full_in_j1: f64,
    pub pct_j0_not_in_j1: f64,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerRow {
    pub quantile: f64,
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub quantile: f64,
    pub stage: String,
    pub error: String,
}

/// Machine-readable results, field names as in the Stata saved results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub obs: usize,
    pub censorpt: f64,
    pub drop1: f64,
    pub drop2: f64,
    pub bootreps: usize,
    pub level: f64,
    pub command: String,
    pub regression: String,
    pub depvar: String,
    pub endogvar: String,
    pub instrument: String,
    pub firststage: String,
    pub confidence: String,
    pub results: Vec<ResultRow>,
    pub quantiles: Vec<f64>,
    pub robustcheck: Vec<RobustRow>,
    pub corner: Vec<CornerRow>,
    pub failures: Vec<FailureRow>,
}

impl ResultDocument {
    pub fn new(result: &CqivResult, inv: &CliInvocation) -> Self {
        let cfg = &inv.config;
        let mut results = Vec::new();
        let mut robustcheck = Vec::new();
        let mut corner = Vec::new();
        let mut failures = Vec::new();
        for (k, (&u, fit)) in result.quantiles.iter().zip(&result.fits).enumerate() {
            let fit = match fit {
                Ok(f) => f,
                Err(e) => {
                    failures.push(FailureRow { quantile: u, stage: "estimate".into(), error: e.to_string() });
                    continue;
                }
            };
            let iv = match result.intervals.as_ref().map(|v| &v[k]) {
                Some(Ok(iv)) => Some(iv),
                Some(Err(e)) => {
                    failures.push(FailureRow { quantile: u, stage: "inference".into(), error: e.to_string() });
                    None
                }
                None => None,
            };
            for (j, label) in result.labels.iter().enumerate() {
                results.push(ResultRow {
                    quantile: u,
                    variable: label.clone(),
                    coefficient: fit.beta3[j],
                    mean: iv.map(|v| v[j].mean),
                    lower: iv.map(|v| v[j].lower),
                    upper: iv.map(|v| v[j].upper),
                });
            }
            if let Some(d) = &fit.diagnostics {
                robustcheck.push(RobustRow {
                    quantile: u,
                    pct_full_in_j0: d.pct_full_in_j0,
                    pct_full_in_j1: d.pct_full_in_j1,
                    pct_j0_not_in_j1: d.pct_j0_not_in_j1,
                    complete: fit.complete,
                });
            }
            if let Some(e) = fit.corner {
                corner.push(CornerRow { quantile: u, effect: e });
            }
        }
        let has_first_stage = cfg.variant != Variant::Cqr;
        ResultDocument {
            obs: result.n,
            censorpt: inv.censor_point,
            drop1: cfg.q0,
            drop2: cfg.q1,
            bootreps: cfg.bootreps,
            level: cfg.level,
            command: "cqiv".into(),
            regression: cfg.variant.to_string(),
            depvar: inv.vars.depvar.clone(),
            endogvar: inv.vars.endogenous.clone().unwrap_or_default(),
            instrument: inv.vars.instruments.join(" "),
            firststage: if has_first_stage { cfg.first_stage.method.to_string() } else { String::new() },
            confidence: cfg.confidence.to_string(),
            results,
            quantiles: result.quantiles.clone(),
            robustcheck,
            corner,
            failures,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("result document serializes");
        s.push('\n');
        s
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Human-readable tables.
pub fn render(result: &CqivResult, doc: &ResultDocument, inv: &CliInvocation) -> String {
    let mut s = String::new();
    let cfg = &inv.config;
    let title = match cfg.variant {
        Variant::Cqiv => "Censored quantile IV",
        Variant::Qiv => "Quantile IV (uncensored)",
        Variant::Cqr => "Censored quantile regression",
    };
    let _ = writeln!(s, "{title}: {} on {} observations", doc.depvar, doc.obs);
    if cfg.variant != Variant::Qiv {
        let side = if cfg.censor_side == CensorSide::Right { "right" } else { "left" };
        let _ = writeln!(s, "censoring point {} ({side})", doc.censorpt);
    }
    if !doc.firststage.is_empty() {
        let _ = writeln!(
            s,
            "endogenous {} instrumented by {}; first stage {}",
            doc.endogvar, doc.instrument, doc.firststage
        );
    }
    let with_ci = result.intervals.is_some();
    let width = result.labels.iter().map(String::len).max().unwrap_or(8).max(8);
    for &u in &result.quantiles {
        let rows: Vec<&ResultRow> = doc.results.iter().filter(|r| r.quantile == u).collect();
        let _ = writeln!(s, "\nquantile {u}");
        if rows.is_empty() {
            for f in doc.failures.iter().filter(|f| f.quantile == u) {
                let _ = writeln!(s, "  failed: {}", f.error);
            }
            continue;
        }
        if with_ci {
            let _ = writeln!(
                s,
                "  {:<width$} {:>12} {:>12} {:>12} {:>12}",
                "variable", "coef", "boot mean", "lower", "upper"
            );
        } else {
            let _ = writeln!(s, "  {:<width$} {:>12}", "variable", "coef");
        }
        for r in rows {
            if with_ci {
                let _ = writeln!(
                    s,
                    "  {:<width$} {:>12.6} {:>12} {:>12} {:>12}",
                    r.variable,
                    r.coefficient,
                    fmt_opt(r.mean),
                    fmt_opt(r.lower),
                    fmt_opt(r.upper)
                );
            } else {
                let _ = writeln!(s, "  {:<width$} {:>12.6}", r.variable, r.coefficient);
            }
        }
        for c in doc.corner.iter().filter(|c| c.quantile == u) {
            let _ = writeln!(s, "  average marginal effect of {}: {:.6}", doc.endogvar, c.effect);
        }
        for f in doc.failures.iter().filter(|f| f.quantile == u) {
            let _ = writeln!(s, "  {} failed: {}", f.stage, f.error);
        }
    }
    if with_ci {
        let _ = writeln!(s, "\n{}% percentile bootstrap intervals, {} repetitions", doc.level, doc.bootreps);
    }
    if !doc.robustcheck.is_empty() && !cfg.norobust {
        let _ = writeln!(s, "\nrobustness diagnostics (percent)");
        let _ = writeln!(s, "  {:>8} {:>10} {:>10} {:>14} {:>9}", "quantile", "full in J0", "full in J1", "J0 not in J1", "complete");
        for r in &doc.robustcheck {
            let _ = writeln!(
                s,
                "  {:>8} {:>10.2} {:>10.2} {:>14.2} {:>9}",
                r.quantile, r.pct_full_in_j0, r.pct_full_in_j1, r.pct_j0_not_in_j1, r.complete
            );
        }
    }
    s
}

fn write_mc_csv(rows: &[McRow], out: &mut dyn Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["quantile", "variable", "truth", "mean_estimate", "bias", "rmse", "coverage", "replications"])
        .map_err(|e| CqivError::Io(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.quantile.to_string(),
            r.variable.clone(),
            r.truth.to_string(),
            r.mean_estimate.to_string(),
            r.bias.to_string(),
            r.rmse.to_string(),
            r.coverage.map_or_else(String::new, |c| c.to_string()),
            r.replications.to_string(),
        ])
        .map_err(|e| CqivError::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn run_estimate(args: &EstimateArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32> {
    let inv = invocation_from(args)?;
    if inv.config.variant == Variant::Qiv && inv.config.norobust {
        let _ = writeln!(err, "note: no diagnostic test results to suppress when --uncensored is employed");
    }
    let loaded = load_csv(&inv.data, &inv)?;
    if loaded.dropped > 0 {
        let _ = writeln!(err, "warning: {} row(s) dropped for missing or non-numeric values", loaded.dropped);
    }
    if loaded.filtered > 0 {
        let _ = writeln!(err, "note: {} row(s) outside the filter range", loaded.filtered);
    }
    let result = estimate(&loaded.dataset, &inv.config)?;
    for w in &result.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    let doc = ResultDocument::new(&result, &inv);
    out.write_all(render(&result, &doc, &inv).as_bytes())?;
    if inv.config.viewlog {
        writeln!(out, "\nestimation log")?;
        for line in &result.log {
            writeln!(out, "  {line}")?;
        }
    }
    std::fs::write(&inv.out, doc.to_json())
        .map_err(|e| CqivError::Io(format!("{}: {e}", inv.out.display())))?;
    Ok(if doc.failures.is_empty() { 0 } else { 2 })
}

fn run_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<i32> {
    let config = build_config(&args.model, !args.model.exogenous)?;
    let mut spec = DgpSpec { n: args.n, rho: args.rho, seed: args.dataseed, ..DgpSpec::default() };
    spec.validate()?;
    if !(args.censor_share > 0.0 && args.censor_share < 1.0) {
        return Err(CqivError::Usage("--censor-share must lie in (0, 1)".into()));
    }
    spec.censor_point = spec.latent_quantile(args.censor_share);
    if args.model.censorpt != 0.0 {
        spec.censor_point = args.model.censorpt;
    }
    let rows = monte_carlo(&spec, &config, args.reps)?;
    match &args.out {
        Some(p) => {
            let mut f = std::fs::File::create(p).map_err(|e| CqivError::Io(format!("{}: {e}", p.display())))?;
            write_mc_csv(&rows, &mut f)?;
        }
        None => write_mc_csv(&rows, out)?,
    }
    Ok(0)
}

/// Entry point behind the binary. Returns the process exit code: 0 on
/// success, 2 when some quantiles failed, 1 on a fatal error.
pub fn main_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return 1;
            }
            let _ = write!(out, "{}", e.render());
            return 0;
        }
    };
    let r = match &cli.command {
        Command::Estimate(a) => run_estimate(a, out, err),
        Command::Simulate(a) => run_simulate(a, out),
    };
    r.unwrap_or_else(|e| {
        let _ = writeln!(err, "error: {e}");
        1
    })
}
