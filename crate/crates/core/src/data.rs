//! Subject records, the principal-stratum taxonomy, and CSV ingestion.
//!
//! Records follow the censoring-by-death convention: a subject who dies
//! before the outcome horizon `t_o` has neither a missingness flag nor an
//! outcome. Untreated subjects carry `t_z = min(t_s, t_o)`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default outcome horizon in months.
pub const DEFAULT_HORIZON: f64 = 18.0;

const TIME_TOL: f64 = 1e-9;

/// Latent survival type: first letter is survival under treatment, second
/// under no treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stratum {
    LL,
    LD,
    DL,
    DD,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [Stratum::LL, Stratum::LD, Stratum::DL, Stratum::DD];

    /// Strata that carry an outcome regression.
    pub const WITH_OUTCOME: [Stratum; 3] = [Stratum::LL, Stratum::LD, Stratum::DL];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Whether a subject of this type is alive at the horizon under `arm`.
    pub fn survives(self, arm: u8) -> bool {
        match (self, arm) {
            (Stratum::LL, _) => true,
            (Stratum::DD, _) => false,
            (Stratum::LD, a) => a == 1,
            (Stratum::DL, a) => a == 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stratum::LL => "LL",
            Stratum::LD => "LD",
            Stratum::DL => "DL",
            Stratum::DD => "DD",
        }
    }

    pub fn parse(s: &str) -> Option<Stratum> {
        match s {
            "LL" => Some(Stratum::LL),
            "LD" => Some(Stratum::LD),
            "DL" => Some(Stratum::DL),
            "DD" => Some(Stratum::DD),
            _ => None,
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome missingness flag. `Undefined` is reserved for subjects who died
/// before the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Missingness {
    Observed,
    Missing,
    Undefined,
}

/// The six observable combinations of (treatment, survival, missingness).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ObservedGroup {
    O110,
    O111,
    O10x,
    O010,
    O011,
    O00x,
}

impl ObservedGroup {
    pub const ALL: [ObservedGroup; 6] = [
        ObservedGroup::O110,
        ObservedGroup::O111,
        ObservedGroup::O10x,
        ObservedGroup::O010,
        ObservedGroup::O011,
        ObservedGroup::O00x,
    ];

    pub fn from_parts(treated: bool, survived: bool, missing: Missingness) -> ObservedGroup {
        match (treated, survived, missing) {
            (true, true, Missingness::Missing) => ObservedGroup::O111,
            (true, true, _) => ObservedGroup::O110,
            (true, false, _) => ObservedGroup::O10x,
            (false, true, Missingness::Missing) => ObservedGroup::O011,
            (false, true, _) => ObservedGroup::O010,
            (false, false, _) => ObservedGroup::O00x,
        }
    }

    pub fn arm(self) -> u8 {
        match self {
            ObservedGroup::O110 | ObservedGroup::O111 | ObservedGroup::O10x => 1,
            _ => 0,
        }
    }

    pub fn survived(self) -> bool {
        !matches!(self, ObservedGroup::O10x | ObservedGroup::O00x)
    }

    pub fn outcome_missing(self) -> bool {
        matches!(self, ObservedGroup::O111 | ObservedGroup::O011)
    }

    /// Strata compatible with this group. Never empty.
    pub fn feasible_strata(self, monotone: bool) -> &'static [Stratum] {
        use Stratum::*;
        match (self.arm(), self.survived(), monotone) {
            (1, true, _) => &[LL, LD],
            (1, false, false) => &[DL, DD],
            (1, false, true) => &[DD],
            (0, true, false) => &[LL, DL],
            (0, true, true) => &[LL],
            (_, _, _) => &[LD, DD],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ObservedGroup::O110 => "O(1,1,0)",
            ObservedGroup::O111 => "O(1,1,1)",
            ObservedGroup::O10x => "O(1,0,-)",
            ObservedGroup::O010 => "O(0,1,0)",
            ObservedGroup::O011 => "O(0,1,1)",
            ObservedGroup::O00x => "O(0,0,-)",
        }
    }
}

impl fmt::Display for ObservedGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One subject. Missing covariate values are stored as NaN until imputed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientRecord {
    pub id: String,
    pub covariates: Vec<f64>,
    pub treated: bool,
    /// Months to treatment, or `min(t_s, t_o)` for untreated subjects.
    pub t_z: f64,
    pub survived: bool,
    /// Months to death.
    pub t_s: f64,
    pub missing: Missingness,
    pub outcome: Option<f64>,
}

impl PatientRecord {
    pub fn arm(&self) -> u8 {
        u8::from(self.treated)
    }

    pub fn group(&self) -> ObservedGroup {
        ObservedGroup::from_parts(self.treated, self.survived, self.missing)
    }

    /// Checks the record against the horizon `t_o`, naming the first
    /// violated rule.
    pub fn validate(&self, t_o: f64) -> std::result::Result<(), String> {
        if !(self.t_s > 0.0) || !self.t_s.is_finite() {
            return Err(format!("survival time must be positive, got {}", self.t_s));
        }
        if !self.t_z.is_finite() {
            return Err("time to treatment is not finite".into());
        }
        if self.survived != (self.t_s >= t_o) {
            return Err(format!(
                "survival flag s={} inconsistent with t_s={} and horizon {}",
                u8::from(self.survived),
                self.t_s,
                t_o
            ));
        }
        match (self.survived, self.missing, self.outcome) {
            (false, Missingness::Undefined, None) => {}
            (false, _, Some(_)) => {
                return Err("outcome defined despite censoring by death".into());
            }
            (false, _, None) => {
                return Err("missingness flag defined despite censoring by death".into());
            }
            (true, Missingness::Undefined, _) => {
                return Err("missingness flag undefined for a survivor".into());
            }
            (true, Missingness::Observed, None) => {
                return Err("outcome flagged observed but absent".into());
            }
            (true, Missingness::Missing, Some(_)) => {
                return Err("outcome flagged missing but present".into());
            }
            (true, _, Some(y)) if !y.is_finite() => {
                return Err("outcome is not finite".into());
            }
            _ => {}
        }
        if self.treated {
            let bound = self.t_s.min(t_o);
            if !(self.t_z > 0.0) || self.t_z > bound + TIME_TOL {
                return Err(format!(
                    "treated subject needs 0 < t_z <= min(t_s, t_o) = {bound}, got {}",
                    self.t_z
                ));
            }
        } else {
            let expected = self.t_s.min(t_o);
            if (self.t_z - expected).abs() > TIME_TOL {
                return Err(format!(
                    "untreated subject needs t_z = min(t_s, t_o) = {expected}, got {}",
                    self.t_z
                ));
            }
        }
        if self.covariates.iter().any(|v| v.is_infinite()) {
            return Err("covariate is infinite".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    Continuous,
    /// Binary 0/1 column.
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColumnScale {
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<PatientRecord>,
    pub t_o: f64,
    pub covariate_names: Vec<String>,
    pub covariate_kinds: Vec<CovariateKind>,
    /// Scale applied to each covariate column, if standardized.
    pub standardization: Vec<Option<ColumnScale>>,
}

impl Dataset {
    /// Builds a dataset, validating every record and inferring column kinds.
    pub fn new(records: Vec<PatientRecord>, covariate_names: Vec<String>, t_o: f64) -> Result<Self> {
        if !(t_o > 0.0) {
            return Err(Error::Config(format!("horizon must be positive, got {t_o}")));
        }
        let p = covariate_names.len();
        for (i, r) in records.iter().enumerate() {
            if r.covariates.len() != p {
                return Err(Error::InvalidRecord {
                    row: i + 1,
                    reason: format!("expected {p} covariates, found {}", r.covariates.len()),
                });
            }
            r.validate(t_o)
                .map_err(|reason| Error::InvalidRecord { row: i + 1, reason })?;
        }
        let covariate_kinds = (0..p)
            .map(|j| {
                let binary = records
                    .iter()
                    .map(|r| r.covariates[j])
                    .filter(|v| !v.is_nan())
                    .all(|v| v == 0.0 || v == 1.0);
                if binary {
                    CovariateKind::Categorical
                } else {
                    CovariateKind::Continuous
                }
            })
            .collect();
        Ok(Dataset {
            records,
            t_o,
            covariate_names,
            covariate_kinds,
            standardization: vec![None; p],
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("unknown covariate column `{name}`")))
    }

    pub fn continuous_columns(&self) -> Vec<String> {
        self.covariate_names
            .iter()
            .zip(&self.covariate_kinds)
            .filter(|(_, k)| **k == CovariateKind::Continuous)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn has_missing_covariates(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.covariates.iter().any(|v| v.is_nan()))
    }

    pub fn group_counts(&self) -> BTreeMap<ObservedGroup, usize> {
        let mut counts = BTreeMap::new();
        for r in &self.records {
            *counts.entry(r.group()).or_insert(0) += 1;
        }
        counts
    }

    /// Undoes every recorded standardization.
    pub fn unstandardize(&self) -> Dataset {
        let mut out = self.clone();
        for (j, scale) in self.standardization.iter().enumerate() {
            if let Some(s) = scale {
                for r in &mut out.records {
                    r.covariates[j] = r.covariates[j] * s.sd + s.mean;
                }
            }
        }
        out.standardization = vec![None; self.covariate_names.len()];
        out
    }
}

/// Column names used when reading a CSV. `covariates: None` takes every
/// column not claimed by another field, in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub id: String,
    pub z: String,
    pub t_z: String,
    pub s: String,
    pub t_s: String,
    pub m: String,
    pub y: String,
    pub covariates: Option<Vec<String>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            id: "id".into(),
            z: "z".into(),
            t_z: "t_z".into(),
            s: "s".into(),
            t_s: "t_s".into(),
            m: "m".into(),
            y: "y".into(),
            covariates: None,
        }
    }
}

pub const NA: &str = "NA";

pub fn load_csv(path: &Path, schema: &CsvSchema, t_o: f64) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema, t_o)
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema, t_o: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let core = [
        find(&schema.id)?,
        find(&schema.z)?,
        find(&schema.t_z)?,
        find(&schema.s)?,
        find(&schema.t_s)?,
        find(&schema.m)?,
        find(&schema.y)?,
    ];
    let (cov_names, cov_idx): (Vec<String>, Vec<usize>) = match &schema.covariates {
        Some(names) => {
            let idx = names.iter().map(|n| find(n)).collect::<Result<Vec<_>>>()?;
            (names.clone(), idx)
        }
        None => headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !core.contains(i))
            .map(|(i, h)| (h.to_string(), i))
            .unzip(),
    };

    let mut records = Vec::new();
    for (k, row) in rdr.records().enumerate() {
        let row = row?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(k + 2);
        let bad = |reason: String| Error::InvalidRecord { row: line, reason };
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let real = |i: usize, what: &str| -> Result<f64> {
            field(i)
                .parse::<f64>()
                .map_err(|_| bad(format!("column `{what}`: expected a number, got `{}`", field(i))))
        };
        let flag = |i: usize, what: &str| -> Result<bool> {
            match field(i) {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(bad(format!("column `{what}`: expected 0 or 1, got `{other}`"))),
            }
        };

        let treated = flag(core[1], &schema.z)?;
        let t_z = real(core[2], &schema.t_z)?;
        let survived = flag(core[3], &schema.s)?;
        let t_s = real(core[4], &schema.t_s)?;
        let missing = match field(core[5]) {
            "0" => Missingness::Observed,
            "1" => Missingness::Missing,
            NA => Missingness::Undefined,
            other => return Err(bad(format!("column `{}`: expected 0, 1 or NA, got `{other}`", schema.m))),
        };
        let outcome = match field(core[6]) {
            NA => None,
            _ => Some(real(core[6], &schema.y)?),
        };
        let covariates = cov_idx
            .iter()
            .zip(&cov_names)
            .map(|(&i, name)| match field(i) {
                NA => Ok(f64::NAN),
                _ => real(i, name),
            })
            .collect::<Result<Vec<_>>>()?;
        let record = PatientRecord {
            id: field(core[0]).to_string(),
            covariates,
            treated,
            t_z,
            survived,
            t_s,
            missing,
            outcome,
        };
        record.validate(t_o).map_err(bad)?;
        records.push(record);
    }
    Dataset::new(records, cov_names, t_o)
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        NA.to_string()
    } else {
        v.to_string()
    }
}

/// Writes the dataset in the canonical column order
/// `id,z,t_z,s,t_s,m,y,<covariates>`. Floats use shortest round-trip form.
pub fn write_csv<W: Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id", "z", "t_z", "s", "t_s", "m", "y"];
    header.extend(dataset.covariate_names.iter().map(String::as_str));
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.id.clone(),
            u8::from(r.treated).to_string(),
            r.t_z.to_string(),
            u8::from(r.survived).to_string(),
            r.t_s.to_string(),
            match r.missing {
                Missingness::Observed => "0".into(),
                Missingness::Missing => "1".into(),
                Missingness::Undefined => NA.into(),
            },
            r.outcome.map_or_else(|| NA.to_string(), |y| y.to_string()),
        ];
        row.extend(r.covariates.iter().map(|&v| fmt_opt(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    let sd = if values.len() > 1 { (ss / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

/// Centers and scales the named columns (sample sd, n-1 denominator).
/// Missing values are left missing and excluded from the moments.
pub fn standardize(dataset: &Dataset, columns: &[String]) -> Result<Dataset> {
    let mut out = dataset.clone();
    for name in columns {
        let j = dataset.column_index(name)?;
        let observed: Vec<f64> = dataset
            .records
            .iter()
            .map(|r| r.covariates[j])
            .filter(|v| !v.is_nan())
            .collect();
        if observed.is_empty() {
            return Err(Error::EmptyColumn { column: name.clone() });
        }
        let (mean, sd) = mean_sd(&observed);
        if !(sd > 0.0) {
            return Err(Error::ZeroVariance { column: name.clone() });
        }
        for r in &mut out.records {
            r.covariates[j] = (r.covariates[j] - mean) / sd;
        }
        out.standardization[j] = Some(match dataset.standardization[j] {
            // compose with an earlier scaling so the inverse still reaches raw units
            Some(prev) => ColumnScale {
                mean: prev.mean + prev.sd * mean,
                sd: prev.sd * sd,
            },
            None => ColumnScale { mean, sd },
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnImputation {
    pub column: String,
    pub missing: usize,
    pub fraction: f64,
    pub fill_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ImputationReport {
    pub columns: Vec<ColumnImputation>,
}

/// Single imputation of missing covariates: mean for continuous columns,
/// mode for binary ones (ties resolve to 0).
pub fn impute_covariates(dataset: &Dataset) -> Result<(Dataset, ImputationReport)> {
    let mut out = dataset.clone();
    let mut report = ImputationReport::default();
    let n = dataset.len();
    for (j, name) in dataset.covariate_names.iter().enumerate() {
        let observed: Vec<f64> = dataset
            .records
            .iter()
            .map(|r| r.covariates[j])
            .filter(|v| !v.is_nan())
            .collect();
        let missing = n - observed.len();
        if observed.is_empty() && n > 0 {
            return Err(Error::EmptyColumn { column: name.clone() });
        }
        let fill = if missing == 0 {
            f64::NAN
        } else {
            match dataset.covariate_kinds[j] {
                CovariateKind::Continuous => observed.iter().sum::<f64>() / observed.len() as f64,
                CovariateKind::Categorical => {
                    let ones = observed.iter().filter(|&&v| v == 1.0).count();
                    if 2 * ones > observed.len() {
                        1.0
                    } else {
                        0.0
                    }
                }
            }
        };
        if missing > 0 {
            for r in &mut out.records {
                if r.covariates[j].is_nan() {
                    r.covariates[j] = fill;
                }
            }
        }
        report.columns.push(ColumnImputation {
            column: name.clone(),
            missing,
            fraction: if n == 0 { 0.0 } else { missing as f64 / n as f64 },
            fill_value: fill,
        });
    }
    Ok((out, report))
}
