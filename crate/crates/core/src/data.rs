//! Observed data and the second-stage regressor specification.

use serde::{Deserialize, Serialize};

use crate::error::{CqivError, Result};

/// A named numeric column.
#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self { name: name.into(), values }
    }
}

/// Aligned columns `(Y, D, W, Z, C)` plus optional observation weights.
///
/// `endogenous` is `None` for purely exogenous (censored quantile
/// regression) problems.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub outcome: Column,
    pub endogenous: Option<Column>,
    pub exogenous: Vec<Column>,
    pub instruments: Vec<Column>,
    pub censor: Vec<f64>,
    pub weights: Option<Vec<f64>>,
}

impl Dataset {
    /// Dataset with a common censoring point for every observation.
    pub fn new(
        outcome: Column,
        endogenous: Option<Column>,
        exogenous: Vec<Column>,
        instruments: Vec<Column>,
        censor_point: f64,
    ) -> Result<Self> {
        let n = outcome.values.len();
        let ds = Self {
            outcome,
            endogenous,
            exogenous,
            instruments,
            censor: vec![censor_point; n],
            weights: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_censor(mut self, censor: Vec<f64>) -> Result<Self> {
        self.censor = censor;
        self.validate()?;
        Ok(self)
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.outcome.values.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if n == 0 {
            return Err(CqivError::Data("dataset has no observations".into()));
        }
        let all = std::iter::once(&self.outcome)
            .chain(self.endogenous.iter())
            .chain(self.exogenous.iter())
            .chain(self.instruments.iter());
        for c in all {
            if c.values.len() != n {
                return Err(CqivError::Data(format!(
                    "column `{}` has {} rows, expected {n}",
                    c.name,
                    c.values.len()
                )));
            }
            if c.values.iter().any(|v| !v.is_finite()) {
                return Err(CqivError::Data(format!("column `{}` has non-finite values", c.name)));
            }
        }
        if self.censor.len() != n || self.censor.iter().any(|v| v.is_nan()) {
            return Err(CqivError::Data("censoring points misaligned or NaN".into()));
        }
        if let Some(w) = &self.weights {
            if w.len() != n || w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(CqivError::Data("observation weights misaligned or negative".into()));
            }
        }
        Ok(())
    }

    /// `true` when every observation shares one censoring point.
    pub fn censor_is_constant(&self) -> bool {
        self.censor.windows(2).all(|w| w[0] == w[1])
    }

    /// Row subset (with repetition), used by resampling.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let pick = |c: &Column| Column {
            name: c.name.clone(),
            values: idx.iter().map(|&i| c.values[i]).collect(),
        };
        Self {
            outcome: pick(&self.outcome),
            endogenous: self.endogenous.as_ref().map(pick),
            exogenous: self.exogenous.iter().map(pick).collect(),
            instruments: self.instruments.iter().map(pick).collect(),
            censor: idx.iter().map(|&i| self.censor[i]).collect(),
            weights: self.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect()),
        }
    }
}

/// How the estimated control enters the second-stage design.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlEntry {
    /// `Φ⁻¹(V̂)`.
    #[default]
    NormalQuantile,
    /// `V̂` itself.
    Raw,
}

/// Second-stage regressors `x(D, W, V)`: an optional intercept, powers of
/// the endogenous variable, every exogenous column, then the control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub intercept: bool,
    pub endogenous_powers: Vec<u32>,
    pub control: ControlEntry,
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self { intercept: true, endogenous_powers: vec![1], control: ControlEntry::NormalQuantile }
    }
}

impl TransformSpec {
    /// True when the only endogenous term is `D` itself.
    pub fn is_linear_in_endogenous(&self) -> bool {
        self.endogenous_powers == [1]
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = self.endogenous_powers.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.endogenous_powers.len() || seen.contains(&0) {
            return Err(CqivError::InvalidArgument(
                "endogenous powers must be distinct positive integers".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn power_label(name: &str, k: u32) -> String {
    if k == 1 {
        name.to_string()
    } else {
        format!("{name}^{k}")
    }
}
