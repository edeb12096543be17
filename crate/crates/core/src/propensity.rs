//! Time-to-treatment Cox model and the generalized propensity score.
//!
//! The score is the Cox linear predictor `beta' D`. The baseline hazard is
//! never estimated; the fit maximizes the Breslow partial likelihood by
//! Newton-Raphson with step halving.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::PatientRecord;
use crate::error::{Error, Result};

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 50;
const MAX_HALVINGS: usize = 30;
/// |beta| beyond this is treated as a diverging (monotone) likelihood.
const DIVERGENCE_BOUND: f64 = 30.0;
pub const MAX_PS_DEGREE: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalObservation {
    pub time: f64,
    pub event: bool,
    pub covariates: Vec<f64>,
}

/// Treatment is the event; death before treatment or reaching the horizon
/// censors it. `t_z` already encodes that rule.
pub fn to_survival(record: &PatientRecord) -> SurvivalObservation {
    SurvivalObservation {
        time: record.t_z,
        event: record.treated,
        covariates: record.covariates.clone(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub diagnostic: Option<String>,
}

/// Log partial likelihood with its gradient and Hessian at `beta`.
#[derive(Debug, Clone)]
pub struct PartialLikelihood {
    pub loglik: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

pub fn partial_likelihood(obs: &[SurvivalObservation], beta: &[f64]) -> PartialLikelihood {
    let p = beta.len();
    let eta: Vec<f64> = obs
        .iter()
        .map(|o| o.covariates.iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect();
    // shift for overflow safety; the shift cancels in every ratio
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max).max(0.0);

    let mut order: Vec<usize> = (0..obs.len()).collect();
    order.sort_by(|&a, &b| obs[b].time.total_cmp(&obs[a].time));

    let mut s0 = 0.0;
    let mut s1 = DVector::<f64>::zeros(p);
    let mut s2 = DMatrix::<f64>::zeros(p, p);
    let mut loglik = 0.0;
    let mut gradient = DVector::<f64>::zeros(p);
    let mut hessian = DMatrix::<f64>::zeros(p, p);

    let mut start = 0;
    while start < order.len() {
        let t = obs[order[start]].time;
        let mut end = start;
        while end < order.len() && obs[order[end]].time == t {
            let i = order[end];
            let w = (eta[i] - shift).exp();
            let x = DVector::from_column_slice(&obs[i].covariates);
            s0 += w;
            s1.axpy(w, &x, 1.0);
            s2.ger(w, &x, &x, 1.0);
            end += 1;
        }
        // Breslow: all tied events share the full risk set
        let mean = &s1 / s0;
        let cov = &s2 / s0 - &mean * mean.transpose();
        for &i in &order[start..end] {
            if obs[i].event {
                loglik += eta[i] - shift - s0.ln();
                let x = DVector::from_column_slice(&obs[i].covariates);
                gradient += x - &mean;
                hessian -= &cov;
            }
        }
        start = end;
    }
    PartialLikelihood {
        loglik,
        gradient,
        hessian,
    }
}

/// Cholesky factor of a symmetric matrix, rejecting numerically singular
/// input (pivot below `1e-10` of the largest diagonal entry).
fn cholesky_checked(m: DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let max_diag = m.diagonal().iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    if max_diag == 0.0 {
        return None;
    }
    let ch = m.cholesky()?;
    let l = ch.l_dirty();
    let min_pivot = (0..l.nrows()).map(|k| l[(k, k)] * l[(k, k)]).fold(f64::INFINITY, f64::min);
    (min_pivot > 1e-10 * max_diag).then_some(ch)
}

/// Relative loglik tolerance treated as rounding noise.
const ROUNDING_SLACK: f64 = 1e-12;

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn fit_cox(obs: &[SurvivalObservation], tolerance: f64, max_iter: usize) -> Result<CoxFit> {
    if !obs.iter().any(|o| o.event) {
        return Err(Error::Insufficient("Cox model needs at least one event".into()));
    }
    let p = obs[0].covariates.len();
    if let Some(o) = obs.iter().find(|o| o.covariates.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: o.covariates.len(),
        });
    }
    if let Some(o) = obs.iter().find(|o| !(o.time > 0.0)) {
        return Err(Error::Insufficient(format!("non-positive observation time {}", o.time)));
    }

    let mut beta = vec![0.0; p];
    let mut current = partial_likelihood(obs, &beta);
    let mut iterations = 0;
    let mut diagnostic = None;

    while max_abs(&current.gradient) >= tolerance {
        if iterations == max_iter {
            diagnostic = Some(format!("no convergence within {max_iter} Newton steps"));
            break;
        }
        let step = match cholesky_checked(-current.hessian.clone()) {
            Some(ch) => ch.solve(&current.gradient),
            None if iterations == 0 => return Err(Error::Collinear),
            None => {
                diagnostic = Some("information matrix became singular; likelihood may be monotone".into());
                break;
            }
        };
        let mut scale = 1.0;
        let mut accepted = None;
        // near the optimum the gain of a Newton step is below the rounding
        // error of the summed log-likelihood; do not halve over noise
        let slack = ROUNDING_SLACK * current.loglik.abs().max(1.0);
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let eval = partial_likelihood(obs, &trial);
            if eval.loglik.is_finite() && eval.loglik >= current.loglik - slack {
                accepted = Some((trial, eval));
                break;
            }
            scale *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((b, eval)) => {
                beta = b;
                current = eval;
            }
            None => {
                diagnostic = Some("step halving failed to increase the partial likelihood".into());
                break;
            }
        }
        if beta.iter().any(|b| b.abs() > DIVERGENCE_BOUND) {
            diagnostic = Some(format!(
                "coefficients diverging (|beta| > {DIVERGENCE_BOUND}); likelihood is monotone, check for separation"
            ));
            break;
        }
    }
    if diagnostic.is_none() {
        // polish: Newton converges quadratically, so one more step takes the
        // remaining error in beta well below the gradient tolerance
        if let Some(ch) = cholesky_checked(-current.hessian.clone()) {
            let step = ch.solve(&current.gradient);
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + s).collect();
            let eval = partial_likelihood(obs, &trial);
            let slack = ROUNDING_SLACK * current.loglik.abs().max(1.0);
            if eval.loglik >= current.loglik - slack && max_abs(&eval.gradient) <= max_abs(&current.gradient) {
                beta = trial;
                current = eval;
            }
        }
    }
    let gradient_norm = max_abs(&current.gradient);
    if diagnostic.is_none() {
        // a vanishing gradient can also mean the likelihood flattens out at infinity
        let information = cholesky_checked(-current.hessian.clone());
        let flat = match information {
            Some(ch) => {
                let inv = ch.inverse();
                (0..p).any(|k| beta[k].abs() > 10.0 && inv[(k, k)].sqrt() > beta[k].abs())
            }
            None => p > 0 && beta.iter().any(|b| b.abs() > 10.0),
        };
        if flat {
            diagnostic = Some("coefficient appears infinite; likelihood is monotone, check for separation".into());
        }
    }
    Ok(CoxFit {
        beta,
        loglik: current.loglik,
        iterations,
        converged: gradient_norm < tolerance && diagnostic.is_none(),
        gradient_norm,
        diagnostic,
    })
}

pub fn linear_predictor(fit: &CoxFit, covariates: &[f64]) -> Result<f64> {
    if covariates.len() != fit.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: fit.beta.len(),
            found: covariates.len(),
        });
    }
    Ok(fit.beta.iter().zip(covariates).map(|(b, x)| b * x).sum())
}

/// Powers `(ps, ps^2, ..., ps^d)`; empty for `d = 0`.
pub fn polynomial_basis(ps: f64, degree: usize) -> Result<Vec<f64>> {
    if degree > MAX_PS_DEGREE {
        return Err(Error::Config(format!(
            "propensity degree must be in 0..={MAX_PS_DEGREE}, got {degree}"
        )));
    }
    let mut out = Vec::with_capacity(degree);
    let mut power = 1.0;
    for _ in 0..degree {
        power *= ps;
        out.push(power);
    }
    Ok(out)
}

/// Min-max map of the fit-sample scores onto [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScaler {
    pub min: f64,
    pub max: f64,
}

impl ScoreScaler {
    pub fn fit(scores: &[f64]) -> ScoreScaler {
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if scores.is_empty() {
            ScoreScaler { min: 0.0, max: 0.0 }
        } else {
            ScoreScaler { min, max }
        }
    }

    pub fn apply(&self, ps: f64) -> f64 {
        let range = self.max - self.min;
        if range > 0.0 {
            2.0 * (ps - self.min) / range - 1.0
        } else {
            0.0
        }
    }
}

/// Writes `id,ps` pairs for audit.
pub fn write_scores<W: Write>(ids: &[String], scores: &[f64], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["id", "ps"])?;
    for (id, ps) in ids.iter().zip(scores) {
        w.write_record([id.clone(), ps.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Missingness;
    use proptest::prelude::*;

    fn obs(x: &[f64], t: f64, event: bool) -> SurvivalObservation {
        SurvivalObservation {
            time: t,
            event,
            covariates: x.to_vec(),
        }
    }

    fn record(treated: bool, t_z: f64, t_s: f64) -> PatientRecord {
        let survived = t_s >= 18.0;
        PatientRecord {
            id: "r".into(),
            covariates: vec![0.5],
            treated,
            t_z,
            survived,
            t_s,
            missing: if survived { Missingness::Missing } else { Missingness::Undefined },
            outcome: None,
        }
    }

    #[test]
    fn survival_observation_rule() {
        let o = to_survival(&record(true, 6.0, 30.0));
        assert_eq!((o.time, o.event), (6.0, true));
        let o = to_survival(&record(false, 10.0, 10.0));
        assert_eq!((o.time, o.event), (10.0, false));
        let o = to_survival(&record(false, 18.0, 40.0));
        assert_eq!((o.time, o.event), (18.0, false));
    }

    #[test]
    fn zero_covariates_give_zero_beta() {
        let data = vec![
            obs(&[0.0], 1.0, true),
            obs(&[0.0], 2.0, false),
            obs(&[0.0], 3.0, true),
            obs(&[0.0], 4.0, true),
        ];
        let fit = fit_cox(&data, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fit.beta, vec![0.0]);
        assert!(fit.converged);
        // risk sets of sizes 4, 2, 1
        let expected = -(4.0_f64.ln() + 2.0_f64.ln() + 1.0_f64.ln());
        assert!((fit.loglik - expected).abs() < 1e-12);
    }

    #[test]
    fn single_subject_is_uninformative() {
        let fit = fit_cox(&[obs(&[1.7], 2.0, true)], DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(fit.beta, vec![0.0]);
        assert!(fit.converged);
    }

    #[test]
    fn no_events_is_an_error() {
        assert!(fit_cox(&[obs(&[1.0], 2.0, false)], 1e-8, 50).is_err());
    }

    #[test]
    fn collinear_covariates_error() {
        let data = vec![
            obs(&[1.0, 2.0], 1.0, true),
            obs(&[0.0, 0.0], 2.0, true),
            obs(&[2.0, 4.0], 3.0, false),
            obs(&[0.5, 1.0], 4.0, true),
        ];
        assert!(matches!(fit_cox(&data, 1e-8, 50), Err(Error::Collinear)));
    }

    #[test]
    fn separation_reports_nonconvergence() {
        // higher x always treated first: partial likelihood increases without bound
        let data = vec![
            obs(&[3.0], 1.0, true),
            obs(&[2.0], 2.0, true),
            obs(&[1.0], 3.0, true),
            obs(&[0.0], 4.0, false),
        ];
        let fit = fit_cox(&data, 1e-8, 50).unwrap();
        assert!(!fit.converged);
        assert!(fit.diagnostic.is_some());
    }

    #[test]
    fn linear_predictor_arithmetic() {
        let fit = CoxFit {
            beta: vec![1.0, -1.0],
            loglik: 0.0,
            iterations: 0,
            converged: true,
            gradient_norm: 0.0,
            diagnostic: None,
        };
        assert_eq!(linear_predictor(&fit, &[2.0, 3.0]).unwrap(), -1.0);
        assert!(linear_predictor(&fit, &[2.0]).is_err());
        let zero = CoxFit { beta: vec![0.0, 0.0], ..fit };
        assert_eq!(linear_predictor(&zero, &[5.0, -3.0]).unwrap(), 0.0);
    }

    #[test]
    fn basis_powers() {
        assert_eq!(polynomial_basis(2.0, 3).unwrap(), vec![2.0, 4.0, 8.0]);
        assert!(polynomial_basis(1.3, 0).unwrap().is_empty());
        assert_eq!(polynomial_basis(0.0, 4).unwrap(), vec![0.0; 4]);
        assert!(polynomial_basis(1.0, 6).is_err());
    }

    #[test]
    fn scaler_maps_to_unit_interval() {
        let s = ScoreScaler::fit(&[-2.0, 0.0, 6.0]);
        assert_eq!(s.apply(-2.0), -1.0);
        assert_eq!(s.apply(6.0), 1.0);
        assert_eq!(s.apply(2.0), 0.0);
        assert_eq!(ScoreScaler::fit(&[1.0, 1.0]).apply(1.0), 0.0);
    }

    fn dataset_strategy() -> impl Strategy<Value = Vec<SurvivalObservation>> {
        (1usize..=3).prop_flat_map(|p| {
            prop::collection::vec(
                (
                    prop::collection::vec(-2.0..2.0f64, p),
                    0.1..10.0f64,
                    prop::bool::weighted(0.7),
                ),
                4..=20,
            )
            .prop_map(|rows| {
                let mut rows: Vec<_> = rows
                    .into_iter()
                    .map(|(x, t, e)| SurvivalObservation {
                        time: (t * 4.0).round() / 4.0 + 0.25,
                        event: e,
                        covariates: x,
                    })
                    .collect();
                rows[0].event = true;
                rows
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn derivatives_match_finite_differences(
            data in dataset_strategy(),
            b in prop::collection::vec(-0.5..0.5f64, 3),
        ) {
            let p = data[0].covariates.len();
            let beta = &b[..p];
            let at = partial_likelihood(&data, beta);
            let h = 1e-5;
            for k in 0..p {
                let mut up = beta.to_vec();
                let mut dn = beta.to_vec();
                up[k] += h;
                dn[k] -= h;
                let fu = partial_likelihood(&data, &up);
                let fd = partial_likelihood(&data, &dn);
                let g = (fu.loglik - fd.loglik) / (2.0 * h);
                let scale = at.gradient[k].abs().max(1.0);
                prop_assert!((g - at.gradient[k]).abs() / scale < 1e-5);
                for l in 0..p {
                    let hd = (fu.gradient[l] - fd.gradient[l]) / (2.0 * h);
                    let scale = at.hessian[(l, k)].abs().max(1.0);
                    prop_assert!((hd - at.hessian[(l, k)]).abs() / scale < 1e-5);
                }
            }
        }

        #[test]
        fn ordering_and_rescaling_invariance(data in dataset_strategy(), scale in 0.2..5.0f64, shift in -3.0..3.0f64) {
            let Ok(fit) = fit_cox(&data, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER) else { return Ok(()) };
            prop_assume!(fit.converged && fit.beta.iter().all(|b| b.abs() < 5.0));

            let mut reversed = data.clone();
            reversed.reverse();
            let rev = fit_cox(&reversed, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
            for (a, b) in fit.beta.iter().zip(&rev.beta) {
                prop_assert!((a - b).abs() < 1e-10, "{} vs {} ({:?})", a, b, fit);
            }

            let mut scaled = data.clone();
            for o in &mut scaled {
                o.covariates[0] = o.covariates[0] * scale + shift;
            }
            let sc = fit_cox(&scaled, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
            prop_assert!((sc.beta[0] * scale - fit.beta[0]).abs() < 1e-8);
        }

        #[test]
        fn newton_never_decreases_loglik(data in dataset_strategy()) {
            // replay the iterations with a growing cap
            let mut last = f64::NEG_INFINITY;
            for cap in 0..8 {
                let Ok(fit) = fit_cox(&data, DEFAULT_TOLERANCE, cap) else { return Ok(()) };
                prop_assert!(fit.loglik >= last - 1e-12);
                last = fit.loglik;
            }
        }
    }
}
