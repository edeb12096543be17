//! Model matrices for the outcome, strata and missingness components.
//!
//! Column layouts:
//! - outcome, LL stratum: intercept, z, t_z (standardized), ps1..psd
//! - outcome, LD and DL strata: intercept, ps1..psd
//! - strata logits: intercept, ps1..psd, extra covariates
//! - missingness logits: intercept, ps1..psd, extra covariates
//!
//! `psk` is the k-th power of the min-max rescaled propensity score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnScale, Dataset, ObservedGroup, Stratum};
use crate::error::{Error, Result};
use crate::propensity::{polynomial_basis, ScoreScaler};

/// How outcome missingness enters the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingMode {
    /// Missingness depends on the latent stratum and arm.
    Latent,
    /// Missingness ignorable given covariates; its factor drops out.
    Ignorable,
    /// Complete-case analysis: survivors with a missing outcome are dropped.
    Mcar,
}

impl MissingMode {
    pub const ALL: [MissingMode; 3] = [MissingMode::Latent, MissingMode::Ignorable, MissingMode::Mcar];

    pub fn as_str(self) -> &'static str {
        match self {
            MissingMode::Latent => "latent",
            MissingMode::Ignorable => "ignorable",
            MissingMode::Mcar => "mcar",
        }
    }
}

impl fmt::Display for MissingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MissingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "latent" | "latent-ignorable" => Ok(MissingMode::Latent),
            "ignorable" => Ok(MissingMode::Ignorable),
            "mcar" => Ok(MissingMode::Mcar),
            other => Err(Error::Config(format!(
                "unknown missingness mode `{other}` (expected latent, ignorable or mcar)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub mode: MissingMode,
    pub monotone: bool,
    /// Degree of the propensity polynomial in the outcome model, and in the
    /// strata and missingness models unless overridden.
    pub ps_degree: usize,
    pub strata_degree: Option<usize>,
    pub missing_degree: Option<usize>,
    /// Extra covariate columns appended to the strata design.
    pub strata_covariates: Vec<String>,
    /// Extra covariate columns appended to the missingness design.
    pub missing_covariates: Vec<String>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            mode: MissingMode::Latent,
            monotone: false,
            ps_degree: 1,
            strata_degree: None,
            missing_degree: None,
            strata_covariates: Vec::new(),
            missing_covariates: Vec::new(),
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    cols: usize,
    data: Vec<f64>,
}

impl Rows {
    fn with_cols(cols: usize, capacity: usize) -> Rows {
        Rows {
            cols,
            data: Vec::with_capacity(cols * capacity),
        }
    }

    fn push(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend_from_slice(row);
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnNames {
    pub outcome_ll: Vec<String>,
    pub outcome_other: Vec<String>,
    pub strata: Vec<String>,
    pub missing: Vec<String>,
}

/// Per-record model inputs derived from a dataset and its propensity scores.
#[derive(Debug, Clone)]
pub struct Design {
    pub spec: ModelSpec,
    pub ids: Vec<String>,
    pub groups: Vec<ObservedGroup>,
    pub outcomes: Vec<Option<f64>>,
    /// Records entering inference; mcar mode drops survivors with missing outcome.
    pub active: Vec<bool>,
    pub x1_ll: Rows,
    pub x1_other: Rows,
    pub x2: Rows,
    pub x3: Rows,
    pub names: ColumnNames,
    pub tz_scale: ColumnScale,
    pub ps_scaler: ScoreScaler,
}

fn ps_names(degree: usize) -> impl Iterator<Item = String> {
    (1..=degree).map(|k| format!("ps{k}"))
}

impl Design {
    /// `scores` are the raw propensity linear predictors, one per record.
    pub fn build(dataset: &Dataset, scores: &[f64], spec: &ModelSpec) -> Result<Design> {
        let n = dataset.len();
        if scores.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: scores.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("propensity score is not finite: {s}")));
        }
        let outcome_degree = spec.ps_degree;
        let strata_degree = spec.strata_degree.unwrap_or(spec.ps_degree);
        let missing_degree = spec.missing_degree.unwrap_or(spec.ps_degree);
        let strata_extra = spec
            .strata_covariates
            .iter()
            .map(|c| dataset.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        let missing_extra = spec
            .missing_covariates
            .iter()
            .map(|c| dataset.column_index(c))
            .collect::<Result<Vec<_>>>()?;
        if dataset.has_missing_covariates() && !(strata_extra.is_empty() && missing_extra.is_empty()) {
            return Err(Error::Config("covariates must be imputed before building the design".into()));
        }

        let scaler = ScoreScaler::fit(scores);
        let tz: Vec<f64> = dataset.records.iter().map(|r| r.t_z).collect();
        let tz_scale = {
            let mean = if n > 0 { tz.iter().sum::<f64>() / n as f64 } else { 0.0 };
            let var = if n > 1 {
                tz.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)
            } else {
                0.0
            };
            let sd = var.sqrt();
            ColumnScale {
                mean,
                sd: if sd > 0.0 { sd } else { 1.0 },
            }
        };

        let names = ColumnNames {
            outcome_ll: ["intercept", "z", "t_z"]
                .iter()
                .map(|s| s.to_string())
                .chain(ps_names(outcome_degree))
                .collect(),
            outcome_other: std::iter::once("intercept".to_string())
                .chain(ps_names(outcome_degree))
                .collect(),
            strata: std::iter::once("intercept".to_string())
                .chain(ps_names(strata_degree))
                .chain(spec.strata_covariates.iter().cloned())
                .collect(),
            missing: std::iter::once("intercept".to_string())
                .chain(ps_names(missing_degree))
                .chain(spec.missing_covariates.iter().cloned())
                .collect(),
        };

        let mut x1_ll = Rows::with_cols(names.outcome_ll.len(), n);
        let mut x1_other = Rows::with_cols(names.outcome_other.len(), n);
        let mut x2 = Rows::with_cols(names.strata.len(), n);
        let mut x3 = Rows::with_cols(names.missing.len(), n);
        let mut groups = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        let mut buf = Vec::new();

        for (r, &score) in dataset.records.iter().zip(scores) {
            let ps = scaler.apply(score);
            let group = r.group();
            groups.push(group);
            active.push(!(spec.mode == MissingMode::Mcar && group.outcome_missing()));

            let basis = polynomial_basis(ps, outcome_degree)?;
            buf.clear();
            buf.extend([1.0, f64::from(r.arm()), (r.t_z - tz_scale.mean) / tz_scale.sd]);
            buf.extend(&basis);
            x1_ll.push(&buf);
            buf.clear();
            buf.push(1.0);
            buf.extend(&basis);
            x1_other.push(&buf);

            buf.clear();
            buf.push(1.0);
            buf.extend(polynomial_basis(ps, strata_degree)?);
            buf.extend(strata_extra.iter().map(|&j| r.covariates[j]));
            x2.push(&buf);

            buf.clear();
            buf.push(1.0);
            buf.extend(polynomial_basis(ps, missing_degree)?);
            buf.extend(missing_extra.iter().map(|&j| r.covariates[j]));
            x3.push(&buf);
        }

        Ok(Design {
            spec: spec.clone(),
            ids: dataset.records.iter().map(|r| r.id.clone()).collect(),
            groups,
            outcomes: dataset.records.iter().map(|r| r.outcome).collect(),
            active,
            x1_ll,
            x1_other,
            x2,
            x3,
            names,
            tz_scale,
            ps_scaler: scaler,
        })
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn feasible(&self, i: usize) -> &'static [Stratum] {
        self.groups[i].feasible_strata(self.spec.monotone)
    }

    /// Outcome design row for record `i` under stratum `g` (not DD).
    #[inline]
    pub fn x1(&self, i: usize, g: Stratum) -> &[f64] {
        match g {
            Stratum::LL => self.x1_ll.row(i),
            _ => self.x1_other.row(i),
        }
    }

    pub fn outcome_dim(&self, g: Stratum) -> usize {
        match g {
            Stratum::LL => self.x1_ll.cols(),
            _ => self.x1_other.cols(),
        }
    }

    /// Strata whose parameters are modeled (DL dropped under monotonicity).
    pub fn modeled_strata(&self) -> Vec<Stratum> {
        Stratum::WITH_OUTCOME
            .into_iter()
            .filter(|&g| !(self.spec.monotone && g == Stratum::DL))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Missingness, PatientRecord};

    fn dataset() -> Dataset {
        let rec = |id: &str, treated: bool, t_z: f64, survived: bool, missing: Missingness, y: Option<f64>| {
            PatientRecord {
                id: id.into(),
                covariates: vec![0.0],
                treated,
                t_z,
                survived,
                t_s: if survived { 30.0 } else { t_z.max(3.0) },
                missing,
                outcome: y,
            }
        };
        let records = vec![
            rec("a", true, 3.0, true, Missingness::Observed, Some(20.0)),
            rec("b", false, 18.0, true, Missingness::Missing, None),
            rec("c", false, 3.0, false, Missingness::Undefined, None),
        ];
        Dataset::new(records, vec!["x".into()], 18.0).unwrap()
    }

    #[test]
    fn column_layout() {
        let spec = ModelSpec {
            ps_degree: 2,
            ..ModelSpec::default()
        };
        let d = Design::build(&dataset(), &[-1.0, 0.0, 3.0], &spec).unwrap();
        assert_eq!(d.names.outcome_ll, vec!["intercept", "z", "t_z", "ps1", "ps2"]);
        assert_eq!(d.names.outcome_other, vec!["intercept", "ps1", "ps2"]);
        assert_eq!(d.x1_ll.row(0)[..2], [1.0, 1.0]);
        // ps rescaled to [-1, 1]
        assert_eq!(d.x1_other.row(0), &[1.0, -1.0, 1.0]);
        assert_eq!(d.x1_other.row(2), &[1.0, 1.0, 1.0]);
        assert_eq!(d.x2.row(1), &[1.0, -0.5, 0.25]);
    }

    #[test]
    fn degree_zero_drops_score() {
        let spec = ModelSpec {
            ps_degree: 0,
            ..ModelSpec::default()
        };
        let d = Design::build(&dataset(), &[0.1, 0.2, 0.3], &spec).unwrap();
        assert_eq!(d.x2.cols(), 1);
        assert_eq!(d.x1_ll.cols(), 3);
    }

    #[test]
    fn mcar_drops_missing_survivors() {
        let spec = ModelSpec {
            mode: MissingMode::Mcar,
            ..ModelSpec::default()
        };
        let d = Design::build(&dataset(), &[0.0; 3], &spec).unwrap();
        assert_eq!(d.active, vec![true, false, true]);
    }
}
