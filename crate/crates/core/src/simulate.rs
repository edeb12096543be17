//! Synthetic cohorts with known principal strata and known SACE.
//!
//! Generation: covariates; a true propensity index `ps = (βᵀx − E[βᵀx]) / sd(βᵀx)`;
//! stratum from a multinomial logit in `(1, ps, ..., ps^d)`; time to
//! treatment from an exponential proportional-hazards model; death before
//! the horizon for whichever arm letter is D, uniform over the interval
//! still at risk; treated iff treatment precedes both death and the
//! horizon; normal outcomes for survivors; missingness per mechanism.
//!
//! The engine's outcome and strata designs are polynomials in an affine
//! rescaling of the estimated index and an affine standardization of t_z,
//! so the coefficient of z in the LL regression (the SACE) is comparable
//! one-to-one with `eta[LL][1]` here.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Missingness, PatientRecord, Stratum};
use crate::design::dot;
use crate::error::{Error, Result};
use crate::model::{log_sum_exp, logistic};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CovariateDist {
    Normal { mean: f64, sd: f64 },
    Bernoulli { p: f64 },
}

impl CovariateDist {
    fn moments(self) -> (f64, f64) {
        match self {
            CovariateDist::Normal { mean, sd } => (mean, sd * sd),
            CovariateDist::Bernoulli { p } => (p, p * (1.0 - p)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub dist: CovariateDist,
}

/// How outcome missingness among survivors is generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mechanism", rename_all = "lowercase")]
pub enum MissingMechanism {
    /// Logistic in `(1, ps basis)` per (stratum, arm) cell: LL1, LL0, LD1, DL0.
    Latent { theta: [Vec<f64>; 4] },
    /// Logistic in `(1, ps basis)` per arm (index = z), independent of stratum.
    Ignorable { theta: [Vec<f64>; 2] },
    /// Constant probability.
    Mcar { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub seed: u64,
    /// Measurement horizon t^o, in months.
    pub t_o: f64,
    pub covariates: Vec<CovariateSpec>,
    /// Log hazard ratios for time to treatment.
    pub beta: Vec<f64>,
    /// Baseline treatment hazard per month.
    pub baseline_hazard: f64,
    /// Degree of the propensity polynomial in every generating model.
    pub ps_degree: usize,
    /// Strata logits for LL, LD, DL on `(1, ps, ..., ps^d)`; DD is the reference.
    pub alpha: [Vec<f64>; 3],
    /// Outcome coefficients. LL: `(1, z, t_z in months, ps...)`; LD and DL:
    /// `(1, ps...)`. The z coefficient of LL is the SACE.
    pub eta: [Vec<f64>; 3],
    pub sigma2: [f64; 3],
    pub missing: MissingMechanism,
}

impl Default for SimConfig {
    fn default() -> Self {
        let normal = |name: &str| CovariateSpec {
            name: name.into(),
            dist: CovariateDist::Normal { mean: 0.0, sd: 1.0 },
        };
        SimConfig {
            n: 2000,
            seed: 1,
            t_o: 18.0,
            covariates: vec![
                normal("x1"),
                normal("x2"),
                normal("x3"),
                CovariateSpec {
                    name: "x4".into(),
                    dist: CovariateDist::Bernoulli { p: 0.4 },
                },
            ],
            beta: vec![0.8, -0.5, 0.3, 0.4],
            baseline_hazard: 0.03,
            ps_degree: 1,
            alpha: [vec![1.0, 0.5], vec![-0.3, -0.3], vec![-1.5, 0.0]],
            eta: [vec![24.0, 3.0, -0.1, 1.0], vec![19.0, 0.5], vec![29.0, 0.5]],
            // Death before treatment makes treatment depend on the stratum
            // beyond x, which the fitted model does not represent; tight
            // outcome distributions keep that from leaking into the LL fit.
            sigma2: [2.0, 2.0, 2.0],
            missing: MissingMechanism::Latent {
                theta: [vec![-1.5, 0.0], vec![-1.0, 0.0], vec![0.5, 0.0], vec![0.5, 0.0]],
            },
        }
    }
}

impl SimConfig {
    pub fn sace(&self) -> f64 {
        self.eta[0][1]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n == 0 {
            return bad("simulation needs n > 0".into());
        }
        if !(self.t_o > 0.0 && self.baseline_hazard > 0.0) {
            return bad("t_o and baseline hazard must be positive".into());
        }
        if self.beta.len() != self.covariates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.covariates.len(),
                found: self.beta.len(),
            });
        }
        if self.sigma2.iter().any(|&s| !(s > 0.0)) {
            return bad("sigma2 must be positive".into());
        }
        let k = self.ps_degree + 1;
        let check = |v: &[f64], want: usize, what: &str| -> Result<()> {
            if v.len() != want {
                Err(Error::Config(format!("{what} needs {want} coefficients, got {}", v.len())))
            } else {
                Ok(())
            }
        };
        for a in &self.alpha {
            check(a, k, "alpha")?;
        }
        check(&self.eta[0], k + 2, "eta[LL]")?;
        check(&self.eta[1], k, "eta[LD]")?;
        check(&self.eta[2], k, "eta[DL]")?;
        match &self.missing {
            MissingMechanism::Latent { theta } => theta.iter().try_for_each(|t| check(t, k, "theta"))?,
            MissingMechanism::Ignorable { theta } => theta.iter().try_for_each(|t| check(t, k, "theta"))?,
            MissingMechanism::Mcar { rate } => {
                if !(0.0..=1.0).contains(rate) {
                    return bad(format!("mcar rate {rate} outside [0, 1]"));
                }
            }
        }
        for c in &self.covariates {
            match c.dist {
                CovariateDist::Normal { sd, .. } if !(sd > 0.0) => return bad(format!("{}: sd must be positive", c.name)),
                CovariateDist::Bernoulli { p } if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("{}: p outside [0, 1]", c.name))
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Mean and sd of `βᵀx` under the covariate distributions.
    fn index_moments(&self) -> (f64, f64) {
        let (mut m, mut v) = (0.0, 0.0);
        for (c, b) in self.covariates.iter().zip(&self.beta) {
            let (cm, cv) = c.dist.moments();
            m += b * cm;
            v += b * b * cv;
        }
        (m, if v > 0.0 { v.sqrt() } else { 1.0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    pub config: SimConfig,
    pub sace: f64,
    /// True stratum of each record, in dataset order.
    pub strata: Vec<Stratum>,
    /// Realized counts of LL, LD, DL, DD.
    pub counts: [usize; 4],
    /// True propensity index of each record.
    pub ps: Vec<f64>,
    pub warnings: Vec<String>,
}

impl SimTruth {
    /// Naive contrast: mean observed outcome among treated survivors minus
    /// that among untreated survivors.
    pub fn naive_difference(dataset: &Dataset) -> Option<f64> {
        let mut sums = [(0.0, 0usize); 2];
        for r in &dataset.records {
            if let Some(y) = r.outcome {
                let s = &mut sums[usize::from(r.treated)];
                s.0 += y;
                s.1 += 1;
            }
        }
        if sums.iter().any(|s| s.1 == 0) {
            return None;
        }
        Some(sums[1].0 / sums[1].1 as f64 - sums[0].0 / sums[0].1 as f64)
    }
}

fn basis(ps: f64, degree: usize) -> Vec<f64> {
    (0..=degree).map(|k| ps.powi(k as i32)).collect()
}

pub fn simulate(config: &SimConfig) -> Result<(Dataset, SimTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (index_mean, index_sd) = config.index_moments();
    let t_o = config.t_o;
    let beyond = Exp::new(1.0 / 12.0).expect("positive rate");

    let mut records = Vec::with_capacity(config.n);
    let mut strata = Vec::with_capacity(config.n);
    let mut ps_values = Vec::with_capacity(config.n);
    let mut counts = [0usize; 4];

    for i in 0..config.n {
        let x: Vec<f64> = config
            .covariates
            .iter()
            .map(|c| match c.dist {
                CovariateDist::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(&mut rng),
                CovariateDist::Bernoulli { p } => f64::from(u8::from(Bernoulli::new(p).expect("validated").sample(&mut rng))),
            })
            .collect();
        let index = dot(&config.beta, &x);
        let ps = (index - index_mean) / index_sd;
        let b = basis(ps, config.ps_degree);

        let lp = [dot(&config.alpha[0], &b), dot(&config.alpha[1], &b), dot(&config.alpha[2], &b), 0.0];
        let lse = log_sum_exp(&lp);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut g = Stratum::DD;
        for s in Stratum::ALL {
            acc += (lp[s.index()] - lse).exp();
            if u < acc {
                g = s;
                break;
            }
        }
        counts[g.index()] += 1;

        // untreated course: death before t_o iff the control letter is D
        let death_untreated = if g.survives(0) {
            t_o + beyond.sample(&mut rng)
        } else {
            rng.random::<f64>() * t_o
        };
        let rate = config.baseline_hazard * index.exp();
        let t_treat = Exp::new(rate)
            .map_err(|e| Error::Config(format!("treatment hazard: {e}")))?
            .sample(&mut rng);
        let treated = t_treat < death_untreated.min(t_o);
        let (t_z, t_s) = if treated {
            let t_s = if g.survives(1) {
                t_o + beyond.sample(&mut rng)
            } else {
                t_treat + rng.random::<f64>() * (t_o - t_treat)
            };
            (t_treat, t_s)
        } else {
            (death_untreated.min(t_o), death_untreated)
        };
        let arm = u8::from(treated);
        let survived = g.survives(arm);
        debug_assert_eq!(survived, t_s >= t_o);

        let (missing, outcome) = if survived {
            let mean = match g {
                Stratum::LL => {
                    let mut x1 = vec![1.0, f64::from(arm), t_z];
                    x1.extend(&b[1..]);
                    dot(&config.eta[0], &x1)
                }
                _ => dot(&config.eta[g.index()], &b),
            };
            let y = mean + config.sigma2[g.index()].sqrt() * rng.sample::<f64, _>(StandardNormal);
            let phi = match &config.missing {
                MissingMechanism::Latent { theta } => {
                    let cell = match (g, arm) {
                        (Stratum::LL, 1) => 0,
                        (Stratum::LL, _) => 1,
                        (Stratum::LD, _) => 2,
                        _ => 3,
                    };
                    logistic(dot(&theta[cell], &b))
                }
                MissingMechanism::Ignorable { theta } => logistic(dot(&theta[arm as usize], &b)),
                MissingMechanism::Mcar { rate } => *rate,
            };
            if rng.random::<f64>() < phi {
                (Missingness::Missing, None)
            } else {
                (Missingness::Observed, Some(y))
            }
        } else {
            (Missingness::Undefined, None)
        };

        records.push(PatientRecord {
            id: format!("s{:05}", i + 1),
            covariates: x,
            treated,
            t_z,
            survived,
            t_s,
            missing,
            outcome,
        });
        strata.push(g);
        ps_values.push(ps);
    }

    let mut warnings = Vec::new();
    for g in Stratum::WITH_OUTCOME {
        if counts[g.index()] == 0 {
            warnings.push(format!("no records were generated in stratum {g}"));
        }
    }
    let names = config.covariates.iter().map(|c| c.name.clone()).collect();
    let dataset = Dataset::new(records, names, t_o)?;
    let truth = SimTruth {
        config: config.clone(),
        sace: config.sace(),
        strata,
        counts,
        ps: ps_values,
        warnings,
    };
    Ok((dataset, truth))
}

pub fn write_truth_manifest(truth: &SimTruth, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), truth)?;
    Ok(())
}

pub fn read_truth_manifest(path: &Path) -> Result<SimTruth> {
    let file = std::fs::File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}
