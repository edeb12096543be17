//! Strata probabilities, outcome densities, missingness probabilities and
//! the complete- and observed-data log-likelihoods built from them.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Stratum;
use crate::design::{dot, Design, MissingMode};
use crate::error::{Error, Result};

/// Multinomial-logit coefficients for LL, LD and DL; DD is the reference
/// category with coefficients fixed at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrataParams {
    pub alpha: [Vec<f64>; 3],
}

/// Normal outcome regressions for LL, LD and DL.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeParams {
    pub eta: [Vec<f64>; 3],
    pub sigma2: [f64; 3],
}

/// The four (stratum, arm) combinations with survivors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MissingCell {
    LL1,
    LL0,
    LD1,
    DL0,
}

impl MissingCell {
    pub const ALL: [MissingCell; 4] = [MissingCell::LL1, MissingCell::LL0, MissingCell::LD1, MissingCell::DL0];

    pub fn of(g: Stratum, arm: u8) -> Option<MissingCell> {
        match (g, arm) {
            (Stratum::LL, 1) => Some(MissingCell::LL1),
            (Stratum::LL, 0) => Some(MissingCell::LL0),
            (Stratum::LD, 1) => Some(MissingCell::LD1),
            (Stratum::DL, 0) => Some(MissingCell::DL0),
            _ => None,
        }
    }

    pub fn stratum(self) -> Stratum {
        match self {
            MissingCell::LL1 | MissingCell::LL0 => Stratum::LL,
            MissingCell::LD1 => Stratum::LD,
            MissingCell::DL0 => Stratum::DL,
        }
    }

    pub fn arm(self) -> u8 {
        match self {
            MissingCell::LL1 | MissingCell::LD1 => 1,
            _ => 0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            MissingCell::LL1 => "LL,1",
            MissingCell::LL0 => "LL,0",
            MissingCell::LD1 => "LD,1",
            MissingCell::DL0 => "DL,0",
        }
    }
}

/// Stratum-specific missingness logits, used in latent mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingnessParams {
    pub theta: [Vec<f64>; 4],
}

/// Stratum-free missingness model used only for deviance comparison in the
/// ignorable (one logit per arm) and mcar (one constant) modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalMissingness {
    pub theta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub strata: StrataParams,
    pub outcome: OutcomeParams,
    pub missing: MissingnessParams,
    pub marginal: MarginalMissingness,
}

impl ModelParams {
    /// All-zero logits, zero regressions, unit variances.
    pub fn zeros(design: &Design) -> ModelParams {
        let k2 = design.x2.cols();
        let k3 = design.x3.cols();
        ModelParams {
            strata: StrataParams {
                alpha: [vec![0.0; k2], vec![0.0; k2], vec![0.0; k2]],
            },
            outcome: OutcomeParams {
                eta: [
                    vec![0.0; design.outcome_dim(Stratum::LL)],
                    vec![0.0; design.outcome_dim(Stratum::LD)],
                    vec![0.0; design.outcome_dim(Stratum::DL)],
                ],
                sigma2: [1.0; 3],
            },
            missing: MissingnessParams {
                theta: [vec![0.0; k3], vec![0.0; k3], vec![0.0; k3], vec![0.0; k3]],
            },
            marginal: MarginalMissingness {
                theta: marginal_shape(design.spec.mode, k3),
            },
        }
    }
}

/// Dimensions of the marginal missingness blocks for a mode.
pub fn marginal_shape(mode: MissingMode, k3: usize) -> Vec<Vec<f64>> {
    match mode {
        MissingMode::Latent => Vec::new(),
        MissingMode::Ignorable => vec![vec![0.0; k3], vec![0.0; k3]],
        MissingMode::Mcar => vec![vec![0.0]],
    }
}

/// Conjugate prior for one outcome regression:
/// `eta | sigma2 ~ N(mean, sigma2 * cov)`, `sigma2 ~ InvGamma(shape, scale)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePrior {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Priors {
    pub outcome: [OutcomePrior; 3],
    /// Sd of the independent normal priors on every strata logit coefficient.
    pub alpha_sd: f64,
    /// Sd of the independent normal priors on every missingness coefficient.
    pub theta_sd: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorSettings {
    /// Multiplier on the identity for each outcome prior covariance.
    pub eta_cov_scale: f64,
    pub sigma2_shape: f64,
    pub sigma2_scale: f64,
    pub alpha_sd: f64,
    pub theta_sd: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            eta_cov_scale: 100.0,
            sigma2_shape: 0.01,
            sigma2_scale: 0.01,
            alpha_sd: 10.0,
            theta_sd: 10.0,
        }
    }
}

impl Priors {
    pub fn from_settings(design: &Design, s: &PriorSettings) -> Result<Priors> {
        let make = |g: Stratum| {
            let p = design.outcome_dim(g);
            OutcomePrior {
                mean: vec![0.0; p],
                cov: DMatrix::identity(p, p) * s.eta_cov_scale,
                shape: s.sigma2_shape,
                scale: s.sigma2_scale,
            }
        };
        let priors = Priors {
            outcome: [make(Stratum::LL), make(Stratum::LD), make(Stratum::DL)],
            alpha_sd: s.alpha_sd,
            theta_sd: s.theta_sd,
        };
        priors.validate(design)?;
        Ok(priors)
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        for g in Stratum::WITH_OUTCOME {
            let prior = &self.outcome[g.index()];
            let p = design.outcome_dim(g);
            if prior.mean.len() != p || prior.cov.nrows() != p || prior.cov.ncols() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    found: prior.mean.len(),
                });
            }
            if prior.cov.clone().cholesky().is_none() {
                return Err(Error::NotPositiveDefinite(format!("outcome prior covariance for {g}")));
            }
            if !(prior.shape > 0.0 && prior.scale > 0.0) {
                return Err(Error::Config(format!("inverse-gamma prior for {g} needs positive shape and scale")));
            }
        }
        if !(self.alpha_sd > 0.0 && self.theta_sd > 0.0) {
            return Err(Error::Config("prior sds must be positive".into()));
        }
        Ok(())
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Logit linear predictors in stratum order (LL, LD, DL, DD). DL is -inf
/// under monotonicity.
#[inline]
pub fn strata_linear_predictors(params: &StrataParams, x2: &[f64], monotone: bool) -> [f64; 4] {
    [
        dot(&params.alpha[0], x2),
        dot(&params.alpha[1], x2),
        if monotone { f64::NEG_INFINITY } else { dot(&params.alpha[2], x2) },
        0.0,
    ]
}

/// Log stratum probabilities in stratum order.
#[inline]
pub fn log_strata_probs(params: &StrataParams, x2: &[f64], monotone: bool) -> [f64; 4] {
    let lp = strata_linear_predictors(params, x2, monotone);
    let lse = log_sum_exp(&lp);
    lp.map(|v| v - lse)
}

/// Stratum probabilities in stratum order (LL, LD, DL, DD); DL is exactly
/// zero under monotonicity.
pub fn strata_probs(params: &StrataParams, x2: &[f64], monotone: bool) -> [f64; 4] {
    log_strata_probs(params, x2, monotone).map(f64::exp)
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn missing_prob(params: &MissingnessParams, g: Stratum, arm: u8, x3: &[f64]) -> Result<f64> {
    let cell = MissingCell::of(g, arm).ok_or_else(|| Error::InvalidMissingCell {
        stratum: g.to_string(),
        arm,
    })?;
    Ok(logistic(dot(&params.theta[cell.index()], x3)))
}

/// Log of `phi` (if `missing`) or `1 - phi` for linear predictor `lp`.
#[inline]
fn log_bernoulli_logit(lp: f64, missing: bool) -> f64 {
    if missing {
        -log1p_exp(-lp)
    } else {
        -log1p_exp(lp)
    }
}

#[inline]
pub fn normal_logpdf(y: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * PI * var).ln() + (y - mean).powi(2) / var)
}

pub fn outcome_logdensity(params: &OutcomeParams, g: Stratum, x1: &[f64], y: f64) -> Result<f64> {
    if g == Stratum::DD {
        return Err(Error::NoOutcomeModel(g.to_string()));
    }
    let eta = &params.eta[g.index()];
    if eta.len() != x1.len() {
        return Err(Error::DimensionMismatch {
            expected: eta.len(),
            found: x1.len(),
        });
    }
    Ok(normal_logpdf(y, dot(eta, x1), params.sigma2[g.index()]))
}

/// Log Table-1 cell for record `i` in feasible stratum `g`, given the
/// record's log stratum probabilities. The missingness factor appears only
/// in latent mode.
#[inline]
pub fn cell_log(design: &Design, i: usize, g: Stratum, log_pi: &[f64; 4], params: &ModelParams) -> f64 {
    let group = design.groups[i];
    let mut value = log_pi[g.index()];
    if group.survived() {
        if design.spec.mode == MissingMode::Latent {
            // feasibility guarantees the cell exists
            let cell = MissingCell::of(g, group.arm()).expect("survivor cell");
            let lp = dot(&params.missing.theta[cell.index()], design.x3.row(i));
            value += log_bernoulli_logit(lp, group.outcome_missing());
        }
        if let Some(y) = design.outcomes[i] {
            let k = g.index();
            value += normal_logpdf(y, dot(&params.outcome.eta[k], design.x1(i, g)), params.outcome.sigma2[k]);
        }
    }
    value
}

/// Complete-data log contribution of record `i` if its stratum were `g`.
pub fn complete_data_logcontribution(design: &Design, i: usize, g: Stratum, params: &ModelParams) -> Result<f64> {
    if !design.feasible(i).contains(&g) {
        return Err(Error::InfeasibleStratum {
            stratum: g.to_string(),
            group: design.groups[i].to_string(),
        });
    }
    let log_pi = log_strata_probs(&params.strata, design.x2.row(i), design.spec.monotone);
    Ok(cell_log(design, i, g, &log_pi, params))
}

/// Observed-data log-likelihood of record `i`: the log of the Table-1 row
/// total over its feasible strata.
pub fn record_loglik(design: &Design, i: usize, params: &ModelParams) -> f64 {
    let log_pi = log_strata_probs(&params.strata, design.x2.row(i), design.spec.monotone);
    let feasible = design.feasible(i);
    let mut cells = [f64::NEG_INFINITY; 2];
    for (slot, &g) in cells.iter_mut().zip(feasible) {
        *slot = cell_log(design, i, g, &log_pi, params);
    }
    log_sum_exp(&cells[..feasible.len()])
}

/// Sum of record log-likelihoods over the records entering inference for
/// the design's mode.
pub fn observed_data_loglik(design: &Design, params: &ModelParams) -> f64 {
    (0..design.len())
        .filter(|&i| design.active[i])
        .map(|i| record_loglik(design, i, params))
        .sum()
}

/// Linear predictor of the marginal missingness model for survivor `i`.
pub fn marginal_missing_lp(design: &Design, i: usize, params: &MarginalMissingness) -> f64 {
    match design.spec.mode {
        MissingMode::Latent => 0.0,
        MissingMode::Ignorable => {
            let arm = design.groups[i].arm() as usize;
            dot(&params.theta[arm], design.x3.row(i))
        }
        MissingMode::Mcar => params.theta[0][0],
    }
}

/// Log-likelihood of everything observed (outcomes, missingness flags,
/// survival) for every record. Equals [`observed_data_loglik`] in latent
/// mode. In the other modes it adds the stratum-free missingness factor,
/// and in mcar mode also the strata term of the dropped survivors, so that
/// all three modes describe the same data.
pub fn full_data_loglik(design: &Design, params: &ModelParams) -> f64 {
    let mode = design.spec.mode;
    if mode == MissingMode::Latent {
        return observed_data_loglik(design, params);
    }
    let mut total = 0.0;
    for i in 0..design.len() {
        let group = design.groups[i];
        if design.active[i] {
            total += record_loglik(design, i, params);
        } else {
            let log_pi = log_strata_probs(&params.strata, design.x2.row(i), design.spec.monotone);
            let feasible: Vec<f64> = design.feasible(i).iter().map(|g| log_pi[g.index()]).collect();
            total += log_sum_exp(&feasible);
        }
        if group.survived() {
            let lp = marginal_missing_lp(design, i, &params.marginal);
            total += log_bernoulli_logit(lp, group.outcome_missing());
        }
    }
    total
}
