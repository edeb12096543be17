//! Data augmentation sampler.
//!
//! Each iteration imputes every record's principal stratum from its
//! Table-1 row (I-step), then updates the parameters given the imputed
//! strata (P-step): exact normal-inverse-gamma draws for the outcome
//! regressions and random-walk Metropolis-Hastings for the strata and
//! missingness logits. Proposal scales adapt during burn-in only.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::data::Stratum;
use crate::design::{dot, Design, MissingMode};
use crate::error::{Error, Result};
use crate::model::{
    cell_log, log1p_exp, log_strata_probs, log_sum_exp, strata_linear_predictors, MissingCell, ModelParams, Priors,
};

const TARGET_ACCEPTANCE: f64 = 0.35;
/// Burn-in iterations between refreshes of the proposal shapes.
const SHAPE_REFRESH: usize = 250;
/// Upper bound on outcome variance draws.
pub const SIGMA2_CAP: f64 = 1e200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    /// Initial multiplier on the preconditioned strata-logit proposal.
    pub mh_step_alpha: f64,
    /// Initial multiplier on the preconditioned missingness-logit proposal.
    pub mh_step_theta: f64,
    pub adapt_during_burnin: bool,
    /// When false the strata are held at their initial assignment.
    pub impute_strata: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 5000,
            burn_in: 3000,
            thin: 1,
            seed: 1,
            chains: 1,
            mh_step_alpha: 1.0,
            mh_step_theta: 1.0,
            adapt_during_burnin: true,
            impute_strata: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 || self.chains == 0 {
            return Err(Error::Config("thin and chains must be at least 1".into()));
        }
        if !(self.mh_step_alpha > 0.0 && self.mh_step_theta > 0.0) {
            return Err(Error::Config("MH step sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn draw_count(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub params: ModelParams,
    pub strata: Vec<Stratum>,
    pub iteration: usize,
}

impl ChainState {
    /// Starting point: zero logits, pooled least-squares outcome
    /// regressions, and each record in its first feasible stratum.
    pub fn initial(design: &Design) -> ChainState {
        let mut params = ModelParams::zeros(design);
        for g in Stratum::WITH_OUTCOME {
            let (eta, sigma2) = pooled_fit(design, g);
            params.outcome.eta[g.index()] = eta;
            params.outcome.sigma2[g.index()] = sigma2;
        }
        let strata = (0..design.len()).map(|i| design.feasible(i)[0]).collect();
        ChainState {
            params,
            strata,
            iteration: 0,
        }
    }
}

/// Ridge-stabilized least squares of every observed outcome on the
/// stratum's design; used only to initialize.
fn pooled_fit(design: &Design, g: Stratum) -> (Vec<f64>, f64) {
    let p = design.outcome_dim(g);
    let mut xtx = DMatrix::<f64>::identity(p, p) * 1e-6;
    let mut xty = DVector::<f64>::zeros(p);
    let mut ys = Vec::new();
    for i in 0..design.len() {
        if let (true, Some(y)) = (design.active[i], design.outcomes[i]) {
            let x = DVector::from_column_slice(design.x1(i, g));
            xtx.ger(1.0, &x, &x, 1.0);
            xty.axpy(y, &x, 1.0);
            ys.push(y);
        }
    }
    if ys.len() < 2 {
        return (vec![0.0; p], 1.0);
    }
    let eta = xtx.cholesky().map(|c| c.solve(&xty)).unwrap_or_else(|| DVector::zeros(p));
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let var = ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (ys.len() as f64 - 1.0);
    (eta.iter().cloned().collect(), var.max(1e-6))
}

/// Adaptive random-walk proposal for one coefficient block.
#[derive(Debug, Clone)]
pub struct RandomWalk {
    pub name: String,
    scale: f64,
    chol: DMatrix<f64>,
    adapt_steps: u64,
    accepted: u64,
    proposed: u64,
}

impl RandomWalk {
    pub fn new(name: impl Into<String>, dim: usize, step: f64) -> RandomWalk {
        let base = if dim > 0 { 2.38 / (dim as f64).sqrt() } else { 1.0 };
        RandomWalk {
            name: name.into(),
            scale: step * base,
            chol: DMatrix::identity(dim, dim),
            adapt_steps: 0,
            accepted: 0,
            proposed: 0,
        }
    }

    /// Uses `precision^{-1}` as the proposal shape.
    fn set_precision(&mut self, precision: DMatrix<f64>) {
        if let Some(ch) = precision.cholesky() {
            let cov = ch.inverse();
            if let Some(c) = cov.cholesky() {
                self.chol = c.l();
                self.adapt_steps = 0;
            }
        }
    }

    fn propose<R: Rng>(&self, current: &[f64], rng: &mut R) -> Vec<f64> {
        let z: DVector<f64> = DVector::from_iterator(current.len(), (0..current.len()).map(|_| rng.sample(StandardNormal)));
        let step = &self.chol * z;
        current.iter().zip(step.iter()).map(|(c, s)| c + self.scale * s).collect()
    }

    fn record(&mut self, accepted: bool, adapt: bool) {
        self.proposed += 1;
        if accepted {
            self.accepted += 1;
        }
        if adapt {
            self.adapt_steps += 1;
            let gain = (self.adapt_steps as f64 + 1.0).powf(-0.6);
            let signal = if accepted { 1.0 } else { 0.0 } - TARGET_ACCEPTANCE;
            self.scale *= (gain * signal).exp();
        }
    }

    fn reset_counts(&mut self) {
        self.accepted = 0;
        self.proposed = 0;
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// MH proposal state for every logit block of a chain.
#[derive(Debug, Clone)]
pub struct Tuners {
    /// LL, LD, DL.
    pub alpha: [RandomWalk; 3],
    pub theta: [RandomWalk; 4],
    pub marginal: Vec<RandomWalk>,
    pub adapt: bool,
}

impl Tuners {
    pub fn new(design: &Design, config: &SamplerConfig) -> Tuners {
        let k2 = design.x2.cols();
        let k3 = design.x3.cols();
        let marginal = match design.spec.mode {
            MissingMode::Latent => Vec::new(),
            MissingMode::Ignorable => (0..2)
                .map(|a| RandomWalk::new(format!("theta_arm[{a}]"), k3, config.mh_step_theta))
                .collect(),
            MissingMode::Mcar => vec![RandomWalk::new("theta_all", 1, config.mh_step_theta)],
        };
        Tuners {
            alpha: Stratum::WITH_OUTCOME.map(|g| RandomWalk::new(format!("alpha[{g}]"), k2, config.mh_step_alpha)),
            theta: MissingCell::ALL.map(|c| RandomWalk::new(format!("theta[{}]", c.label()), k3, config.mh_step_theta)),
            marginal,
            adapt: config.adapt_during_burnin,
        }
    }

    /// Blocks that are actually updated under the design's mode.
    pub fn active_blocks(&self, design: &Design) -> Vec<&RandomWalk> {
        let mut out: Vec<&RandomWalk> = design
            .modeled_strata()
            .into_iter()
            .map(|g| &self.alpha[g.index()])
            .collect();
        match design.spec.mode {
            MissingMode::Latent => out.extend(
                MissingCell::ALL
                    .iter()
                    .filter(|c| !(design.spec.monotone && c.stratum() == Stratum::DL))
                    .map(|c| &self.theta[c.index()]),
            ),
            _ => out.extend(self.marginal.iter()),
        }
        out
    }

    fn reset_counts(&mut self) {
        self.alpha.iter_mut().for_each(RandomWalk::reset_counts);
        self.theta.iter_mut().for_each(RandomWalk::reset_counts);
        self.marginal.iter_mut().for_each(RandomWalk::reset_counts);
    }

    /// Re-derives proposal shapes from the current state: the inverse of
    /// the Fisher information of each logit block plus its prior precision.
    pub fn refresh_shapes(&mut self, state: &ChainState, design: &Design, priors: &Priors) {
        let monotone = design.spec.monotone;
        let k2 = design.x2.cols();
        let prior2 = 1.0 / (priors.alpha_sd * priors.alpha_sd);
        let mut info: [DMatrix<f64>; 3] = std::array::from_fn(|_| DMatrix::identity(k2, k2) * prior2);
        for i in (0..design.len()).filter(|&i| design.active[i]) {
            let x2 = design.x2.row(i);
            let lp = log_strata_probs(&state.params.strata, x2, monotone);
            let x = DVector::from_column_slice(x2);
            for (g, m) in info.iter_mut().enumerate() {
                let p = lp[g].exp();
                m.ger(p * (1.0 - p), &x, &x, 1.0);
            }
        }
        for (walk, m) in self.alpha.iter_mut().zip(info) {
            walk.set_precision(m);
        }

        let k3 = design.x3.cols();
        let prior3 = 1.0 / (priors.theta_sd * priors.theta_sd);
        let mut cells: [DMatrix<f64>; 4] = std::array::from_fn(|_| DMatrix::identity(k3, k3) * prior3);
        let mut arms: [DMatrix<f64>; 2] = std::array::from_fn(|_| DMatrix::identity(k3, k3) * prior3);
        let mut constant = prior3;
        for i in 0..design.len() {
            let group = design.groups[i];
            if !group.survived() {
                continue;
            }
            let x3 = design.x3.row(i);
            let x = DVector::from_column_slice(x3);
            match design.spec.mode {
                MissingMode::Latent => {
                    if !design.active[i] {
                        continue;
                    }
                    let Some(cell) = MissingCell::of(state.strata[i], group.arm()) else {
                        continue;
                    };
                    let phi = crate::model::logistic(dot(&state.params.missing.theta[cell.index()], x3));
                    cells[cell.index()].ger(phi * (1.0 - phi), &x, &x, 1.0);
                }
                MissingMode::Ignorable => {
                    let a = group.arm() as usize;
                    let phi = crate::model::logistic(dot(&state.params.marginal.theta[a], x3));
                    arms[a].ger(phi * (1.0 - phi), &x, &x, 1.0);
                }
                MissingMode::Mcar => {
                    let phi = crate::model::logistic(state.params.marginal.theta[0][0]);
                    constant += phi * (1.0 - phi);
                }
            }
        }
        for (walk, m) in self.theta.iter_mut().zip(cells) {
            walk.set_precision(m);
        }
        match design.spec.mode {
            MissingMode::Ignorable => {
                for (walk, m) in self.marginal.iter_mut().zip(arms) {
                    walk.set_precision(m);
                }
            }
            MissingMode::Mcar => self.marginal[0].set_precision(DMatrix::from_element(1, 1, constant)),
            MissingMode::Latent => {}
        }
    }
}

fn check_finite(values: &[f64], iteration: usize, block: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            block: block.to_string(),
        })
    }
}

/// Probability that record `i` belongs to each of its feasible strata: the
/// Table-1 cell divided by the row total, computed in log space.
pub fn stratum_probabilities(design: &Design, i: usize, params: &ModelParams) -> Result<Vec<(Stratum, f64)>> {
    let feasible = design.feasible(i);
    let log_pi = log_strata_probs(&params.strata, design.x2.row(i), design.spec.monotone);
    let cells: Vec<f64> = feasible.iter().map(|&g| cell_log(design, i, g, &log_pi, params)).collect();
    let total = log_sum_exp(&cells);
    if total == f64::NEG_INFINITY || total.is_nan() {
        return Err(Error::NonFinite {
            iteration: 0,
            block: format!("I-step record {}", design.ids[i]),
        });
    }
    Ok(feasible.iter().zip(cells).map(|(&g, c)| (g, (c - total).exp())).collect())
}

/// Imputes the stratum of every record entering inference. Records with a
/// single feasible stratum are assigned deterministically.
pub fn i_step<R: Rng>(state: &mut ChainState, design: &Design, rng: &mut R) -> Result<()> {
    let monotone = design.spec.monotone;
    for i in 0..design.len() {
        let feasible = design.feasible(i);
        if !design.active[i] || feasible.len() == 1 {
            state.strata[i] = feasible[0];
            continue;
        }
        let log_pi = log_strata_probs(&state.params.strata, design.x2.row(i), monotone);
        let a = cell_log(design, i, feasible[0], &log_pi, &state.params);
        let b = cell_log(design, i, feasible[1], &log_pi, &state.params);
        if a == f64::NEG_INFINITY && b == f64::NEG_INFINITY || a.is_nan() || b.is_nan() {
            return Err(Error::NonFinite {
                iteration: state.iteration,
                block: format!("I-step record {}", design.ids[i]),
            });
        }
        // P(first) = 1 / (1 + exp(b - a))
        let p_first = 1.0 / (1.0 + (b - a).exp());
        let u: f64 = rng.random();
        state.strata[i] = if u < p_first { feasible[0] } else { feasible[1] };
    }
    Ok(())
}

/// Exact conjugate draw of `(eta_g, sigma2_g)` for every modeled stratum
/// from the records currently imputed to it with an observed outcome.
pub fn p_step_outcome<R: Rng>(state: &mut ChainState, design: &Design, priors: &Priors, rng: &mut R) -> Result<()> {
    for g in design.modeled_strata() {
        let p = design.outcome_dim(g);
        let mut xtx = DMatrix::<f64>::zeros(p, p);
        let mut xty = DVector::<f64>::zeros(p);
        let mut yty = 0.0;
        let mut n = 0usize;
        for i in 0..design.len() {
            if state.strata[i] != g || !design.active[i] {
                continue;
            }
            if let Some(y) = design.outcomes[i] {
                let x = DVector::from_column_slice(design.x1(i, g));
                xtx.ger(1.0, &x, &x, 1.0);
                xty.axpy(y, &x, 1.0);
                yty += y * y;
                n += 1;
            }
        }
        let post = NigPosterior::update(&priors.outcome[g.index()], &xtx, &xty, yty, n)?;
        let (eta, sigma2) = post.draw(rng);
        let k = g.index();
        check_finite(&eta, state.iteration, &format!("eta[{g}]"))?;
        check_finite(&[sigma2], state.iteration, &format!("sigma2[{g}]"))?;
        state.params.outcome.eta[k] = eta;
        state.params.outcome.sigma2[k] = sigma2;
    }
    Ok(())
}

/// Normal-inverse-gamma posterior:
/// `eta | sigma2 ~ N(mean, sigma2 * precision^{-1})`, `sigma2 ~ InvGamma(shape, scale)`.
#[derive(Debug, Clone)]
pub struct NigPosterior {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
    pub shape: f64,
    pub scale: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl NigPosterior {
    pub fn update(
        prior: &crate::model::OutcomePrior,
        xtx: &DMatrix<f64>,
        xty: &DVector<f64>,
        yty: f64,
        n: usize,
    ) -> Result<NigPosterior> {
        let prior_prec = prior
            .cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("outcome prior covariance".into()))?
            .inverse();
        let mu0 = DVector::from_column_slice(&prior.mean);
        let precision = &prior_prec + xtx;
        let chol = precision
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("outcome posterior precision".into()))?;
        let rhs = &prior_prec * &mu0 + xty;
        let mean = chol.solve(&rhs);
        let quad = yty + mu0.dot(&(&prior_prec * &mu0)) - mean.dot(&(&precision * &mean));
        Ok(NigPosterior {
            shape: prior.shape + 0.5 * n as f64,
            scale: prior.scale + 0.5 * quad.max(0.0),
            mean,
            precision,
            chol,
        })
    }

    pub fn draw<R: Rng>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        let gamma = Gamma::new(self.shape, 1.0 / self.scale).expect("positive gamma parameters");
        // With a vague shape and no data the gamma draw can underflow to 0;
        // cap the variance so the stratum's density stays representable.
        let sigma2 = (1.0 / gamma.sample(rng)).min(SIGMA2_CAP);
        let p = self.mean.len();
        let z = DVector::from_iterator(p, (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // precision = L L^T, so L^{-T} z has covariance precision^{-1}
        let u = self
            .chol
            .l()
            .transpose()
            .solve_upper_triangular(&z)
            .expect("triangular factor is nonsingular");
        let eta = &self.mean + u * sigma2.sqrt();
        (eta.iter().cloned().collect(), sigma2)
    }
}

fn normal_prior_logdensity(coef: &[f64], sd: f64) -> f64 {
    -0.5 * coef.iter().map(|c| c * c).sum::<f64>() / (sd * sd)
}

/// Random-walk MH for each non-reference strata logit block, targeting the
/// multinomial-logit likelihood of the imputed strata times the prior.
pub fn p_step_strata<R: Rng>(
    state: &mut ChainState,
    design: &Design,
    priors: &Priors,
    tuners: &mut Tuners,
    adapt: bool,
    rng: &mut R,
) -> Result<()> {
    let monotone = design.spec.monotone;
    let active: Vec<usize> = (0..design.len()).filter(|&i| design.active[i]).collect();
    let mut lp: Vec<[f64; 4]> = active
        .iter()
        .map(|&i| strata_linear_predictors(&state.params.strata, design.x2.row(i), monotone))
        .collect();
    let mut new_col = vec![0.0; active.len()];

    for g in design.modeled_strata() {
        let k = g.index();
        let current = state.params.strata.alpha[k].clone();
        let proposal = tuners.alpha[k].propose(&current, rng);
        let mut delta = normal_prior_logdensity(&proposal, priors.alpha_sd)
            - normal_prior_logdensity(&current, priors.alpha_sd);
        for (j, &i) in active.iter().enumerate() {
            let row = &lp[j];
            let new_value = dot(&proposal, design.x2.row(i));
            new_col[j] = new_value;
            let mut trial = *row;
            trial[k] = new_value;
            let s = state.strata[i].index();
            delta += (trial[s] - log_sum_exp(&trial)) - (row[s] - log_sum_exp(row));
        }
        let accept = delta.is_finite() && rng.random::<f64>().ln() < delta;
        tuners.alpha[k].record(accept, adapt);
        if accept {
            check_finite(&proposal, state.iteration, &format!("alpha[{g}]"))?;
            state.params.strata.alpha[k] = proposal;
            for (row, &v) in lp.iter_mut().zip(&new_col) {
                row[k] = v;
            }
        }
    }
    Ok(())
}

/// Bernoulli log-likelihood of the missingness flags of `records` under a
/// logistic model with coefficients `theta` on the missingness design.
fn missing_loglik(design: &Design, records: &[usize], theta: &[f64]) -> f64 {
    records
        .iter()
        .map(|&i| {
            let lp = if theta.len() == design.x3.cols() {
                dot(theta, design.x3.row(i))
            } else {
                theta[0]
            };
            if design.groups[i].outcome_missing() {
                -log1p_exp(-lp)
            } else {
                -log1p_exp(lp)
            }
        })
        .sum()
}

fn mh_logistic_block<R: Rng>(
    design: &Design,
    records: &[usize],
    theta: &mut Vec<f64>,
    sd: f64,
    walk: &mut RandomWalk,
    adapt: bool,
    rng: &mut R,
) -> bool {
    let proposal = walk.propose(theta, rng);
    let delta = missing_loglik(design, records, &proposal) - missing_loglik(design, records, theta)
        + normal_prior_logdensity(&proposal, sd)
        - normal_prior_logdensity(theta, sd);
    let accept = delta.is_finite() && rng.random::<f64>().ln() < delta;
    walk.record(accept, adapt);
    if accept {
        *theta = proposal;
    }
    accept
}

/// Random-walk MH for each stratum-by-arm missingness block over the
/// survivors imputed to that cell. No-op outside latent mode.
pub fn p_step_missing<R: Rng>(
    state: &mut ChainState,
    design: &Design,
    priors: &Priors,
    tuners: &mut Tuners,
    adapt: bool,
    rng: &mut R,
) -> Result<()> {
    if design.spec.mode != MissingMode::Latent {
        return Ok(());
    }
    let mut members: [Vec<usize>; 4] = Default::default();
    for i in 0..design.len() {
        let group = design.groups[i];
        if design.active[i] && group.survived() {
            if let Some(cell) = MissingCell::of(state.strata[i], group.arm()) {
                members[cell.index()].push(i);
            }
        }
    }
    for cell in MissingCell::ALL {
        if design.spec.monotone && cell.stratum() == Stratum::DL {
            continue;
        }
        let k = cell.index();
        mh_logistic_block(
            design,
            &members[k],
            &mut state.params.missing.theta[k],
            priors.theta_sd,
            &mut tuners.theta[k],
            adapt,
            rng,
        );
        check_finite(&state.params.missing.theta[k], state.iteration, &format!("theta[{}]", cell.label()))?;
    }
    Ok(())
}

/// Updates the stratum-free missingness model carried in ignorable and
/// mcar modes for deviance comparison. It shares no parameters with the
/// rest of the model, so it never influences the other updates.
pub fn p_step_marginal_missing<R: Rng>(
    state: &mut ChainState,
    design: &Design,
    priors: &Priors,
    tuners: &mut Tuners,
    adapt: bool,
    rng: &mut R,
) -> Result<()> {
    let mode = design.spec.mode;
    if mode == MissingMode::Latent {
        return Ok(());
    }
    let survivors = |arm: Option<u8>| -> Vec<usize> {
        (0..design.len())
            .filter(|&i| design.groups[i].survived() && arm.is_none_or(|a| design.groups[i].arm() == a))
            .collect()
    };
    let blocks: Vec<Vec<usize>> = match mode {
        MissingMode::Ignorable => vec![survivors(Some(0)), survivors(Some(1))],
        _ => vec![survivors(None)],
    };
    for (b, records) in blocks.iter().enumerate() {
        mh_logistic_block(
            design,
            records,
            &mut state.params.marginal.theta[b],
            priors.theta_sd,
            &mut tuners.marginal[b],
            adapt,
            rng,
        );
        check_finite(&state.params.marginal.theta[b], state.iteration, &tuners.marginal[b].name)?;
    }
    Ok(())
}

/// Maps model parameters to named flat vectors and back.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub names: Vec<String>,
    template: ModelParams,
    strata: Vec<Stratum>,
    mode: MissingMode,
    monotone: bool,
    tz_sd: f64,
}

/// Name of the SACE parameter: the coefficient of z in the LL regression.
pub const SACE_PARAM: &str = "eta[LL].z";
/// Coefficient of standardized t_z in the LL regression.
pub const TZ_PARAM: &str = "eta[LL].t_z";
/// Derived: the t_z coefficient per month on the original time scale.
pub const TZ_PER_MONTH_PARAM: &str = "t_z_per_month";

impl ParamLayout {
    pub fn new(design: &Design) -> ParamLayout {
        let strata = design.modeled_strata();
        let mut names = Vec::new();
        for &g in &strata {
            let cols = if g == Stratum::LL {
                &design.names.outcome_ll
            } else {
                &design.names.outcome_other
            };
            names.extend(cols.iter().map(|c| format!("eta[{g}].{c}")));
            names.push(format!("sigma2[{g}]"));
        }
        for &g in &strata {
            names.extend(design.names.strata.iter().map(|c| format!("alpha[{g}].{c}")));
        }
        match design.spec.mode {
            MissingMode::Latent => {
                for cell in MissingCell::ALL {
                    if strata.contains(&cell.stratum()) {
                        names.extend(design.names.missing.iter().map(|c| format!("theta[{}].{c}", cell.label())));
                    }
                }
            }
            MissingMode::Ignorable => {
                for a in 0..2 {
                    names.extend(design.names.missing.iter().map(|c| format!("theta_arm[{a}].{c}")));
                }
            }
            MissingMode::Mcar => names.push("theta_all.intercept".into()),
        }
        names.push(TZ_PER_MONTH_PARAM.into());
        ParamLayout {
            names,
            template: ModelParams::zeros(design),
            strata,
            mode: design.spec.mode,
            monotone: design.spec.monotone,
            tz_sd: design.tz_scale.sd,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn flatten(&self, params: &ModelParams) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.names.len());
        for &g in &self.strata {
            out.extend(&params.outcome.eta[g.index()]);
            out.push(params.outcome.sigma2[g.index()]);
        }
        for &g in &self.strata {
            out.extend(&params.strata.alpha[g.index()]);
        }
        match self.mode {
            MissingMode::Latent => {
                for cell in MissingCell::ALL {
                    if self.strata.contains(&cell.stratum()) {
                        out.extend(&params.missing.theta[cell.index()]);
                    }
                }
            }
            _ => {
                for block in &params.marginal.theta {
                    out.extend(block);
                }
            }
        }
        out.push(params.outcome.eta[Stratum::LL.index()][2] / self.tz_sd);
        out
    }

    /// Inverse of [`flatten`](Self::flatten); parameters not in the layout
    /// (DL under monotonicity, the unused missingness family) stay zero.
    pub fn unflatten(&self, values: &[f64]) -> Result<ModelParams> {
        if values.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                expected: self.names.len(),
                found: values.len(),
            });
        }
        let mut p = self.template.clone();
        let mut it = values.iter().cloned();
        let mut take = |v: &mut Vec<f64>| {
            for slot in v.iter_mut() {
                *slot = it.next().expect("length checked");
            }
        };
        for &g in &self.strata {
            take(&mut p.outcome.eta[g.index()]);
            let mut s = vec![0.0];
            take(&mut s);
            p.outcome.sigma2[g.index()] = s[0];
        }
        for &g in &self.strata {
            take(&mut p.strata.alpha[g.index()]);
        }
        match self.mode {
            MissingMode::Latent => {
                for cell in MissingCell::ALL {
                    if self.strata.contains(&cell.stratum()) {
                        take(&mut p.missing.theta[cell.index()]);
                    }
                }
            }
            _ => {
                for block in p.marginal.theta.iter_mut() {
                    take(block);
                }
            }
        }
        let _ = self.monotone;
        Ok(p)
    }
}

/// Post burn-in draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    pub chain: usize,
    pub seed: u64,
    pub config: SamplerConfig,
    pub names: Vec<String>,
    /// 1-based iteration of each stored draw.
    pub iterations: Vec<usize>,
    pub draws: Vec<Vec<f64>>,
    /// Post burn-in acceptance rate of each MH block.
    pub acceptance: Vec<(String, f64)>,
}

impl PosteriorSamples {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.draws.iter().map(|d| d[k]).collect())
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

pub fn run_chain(design: &Design, config: &SamplerConfig, priors: &Priors, chain: usize) -> Result<PosteriorSamples> {
    run_chain_from(design, config, priors, chain, ChainState::initial(design))
}

/// Runs one chain from `state`. The RNG stream depends only on
/// `(config.seed, chain)`.
pub fn run_chain_from(
    design: &Design,
    config: &SamplerConfig,
    priors: &Priors,
    chain: usize,
    mut state: ChainState,
) -> Result<PosteriorSamples> {
    config.validate()?;
    priors.validate(design)?;
    if state.strata.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            found: state.strata.len(),
        });
    }
    for (i, &g) in state.strata.iter().enumerate() {
        if !design.feasible(i).contains(&g) {
            return Err(Error::InfeasibleStratum {
                stratum: g.to_string(),
                group: design.groups[i].to_string(),
            });
        }
    }
    let mut rng = chain_rng(config.seed, chain);
    let layout = ParamLayout::new(design);
    let mut tuners = Tuners::new(design, config);
    let mut draws = Vec::with_capacity(config.draw_count());
    let mut iterations = Vec::with_capacity(config.draw_count());

    for it in 0..config.iterations {
        state.iteration = it + 1;
        let burning = it < config.burn_in;
        if it == config.burn_in {
            tuners.reset_counts();
        }
        if config.impute_strata {
            i_step(&mut state, design, &mut rng)?;
        }
        let adapt = burning && tuners.adapt;
        // shapes follow the posterior through the first half of burn-in; the
        // second half tunes only the scales
        if adapt && it % SHAPE_REFRESH == 0 && it < config.burn_in / 2 {
            tuners.refresh_shapes(&state, design, priors);
        } else if it == 0 {
            tuners.refresh_shapes(&state, design, priors);
        }
        p_step_outcome(&mut state, design, priors, &mut rng)?;
        p_step_strata(&mut state, design, priors, &mut tuners, adapt, &mut rng)?;
        p_step_missing(&mut state, design, priors, &mut tuners, adapt, &mut rng)?;
        p_step_marginal_missing(&mut state, design, priors, &mut tuners, adapt, &mut rng)?;

        if !burning && (it + 1 - config.burn_in) % config.thin == 0 {
            iterations.push(it + 1);
            draws.push(layout.flatten(&state.params));
        }
    }

    let acceptance = tuners
        .active_blocks(design)
        .into_iter()
        .map(|w| (w.name.clone(), w.acceptance_rate()))
        .collect();
    Ok(PosteriorSamples {
        chain,
        seed: config.seed,
        config: config.clone(),
        names: layout.names,
        iterations,
        draws,
        acceptance,
    })
}

/// Runs `config.chains` chains in parallel; results are ordered by chain.
pub fn run_chains(design: &Design, config: &SamplerConfig, priors: &Priors) -> Result<Vec<PosteriorSamples>> {
    use rayon::prelude::*;
    (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(design, config, priors, c))
        .collect()
}
