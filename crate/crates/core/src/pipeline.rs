//! End-to-end fit: impute covariates, standardize, fit the Cox model for
//! time to treatment, build the propensity design and run the chains.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{impute_covariates, standardize, Dataset, ImputationReport};
use crate::design::{Design, ModelSpec};
use crate::error::{Error, Result};
use crate::model::{PriorSettings, Priors};
use crate::propensity::{fit_cox, linear_predictor, to_survival, CoxFit};
use crate::sampler::{run_chains, PosteriorSamples, SamplerConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxSettings {
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for CoxSettings {
    fn default() -> Self {
        CoxSettings {
            tolerance: 1e-8,
            max_iter: 50,
        }
    }
}

/// Everything that determines a fit besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub model: ModelSpec,
    pub sampler: SamplerConfig,
    pub priors: PriorSettings,
    pub cox: CoxSettings,
    /// Proceed with the last Newton iterate when the Cox fit fails to converge.
    pub allow_nonconverged: bool,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    /// Imputed and standardized data actually analysed.
    pub dataset: Dataset,
    pub imputation: ImputationReport,
    pub cox: CoxFit,
    /// Raw propensity linear predictors.
    pub scores: Vec<f64>,
    pub design: Design,
    pub priors: Priors,
}

pub fn prepare(dataset: &Dataset, config: &FitConfig) -> Result<Prepared> {
    if dataset.is_empty() {
        return Err(Error::Insufficient("dataset has no records".into()));
    }
    let (imputed, imputation) = impute_covariates(dataset)?;
    let continuous = imputed.continuous_columns();
    let data = standardize(&imputed, &continuous)?;

    let observations: Vec<_> = data.records.iter().map(to_survival).collect();
    let cox = fit_cox(&observations, config.cox.tolerance, config.cox.max_iter)?;
    if !cox.converged && !config.allow_nonconverged {
        return Err(Error::CoxNotConverged(
            cox.diagnostic.clone().unwrap_or_else(|| "gradient above tolerance".into()),
        ));
    }
    let scores = data
        .records
        .iter()
        .map(|r| linear_predictor(&cox, &r.covariates))
        .collect::<Result<Vec<_>>>()?;
    let design = Design::build(&data, &scores, &config.model)?;
    let priors = Priors::from_settings(&design, &config.priors)?;
    Ok(Prepared {
        dataset: data,
        imputation,
        cox,
        scores,
        design,
        priors,
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub prepare_secs: f64,
    pub sampling_secs: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub prepared: Prepared,
    pub samples: Vec<PosteriorSamples>,
    pub timings: StageTimings,
}

pub fn fit(dataset: &Dataset, config: &FitConfig) -> Result<FitOutput> {
    config.sampler.validate()?;
    let start = Instant::now();
    let prepared = prepare(dataset, config)?;
    let prepare_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let samples = run_chains(&prepared.design, &config.sampler, &prepared.priors)?;
    Ok(FitOutput {
        prepared,
        samples,
        timings: StageTimings {
            prepare_secs,
            sampling_secs: start.elapsed().as_secs_f64(),
        },
    })
}
