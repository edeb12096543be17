//! Posterior summaries, convergence diagnostics and DIC.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::design::{Design, MissingMode};
use crate::error::{Error, Result};
use crate::model::full_data_loglik;
use crate::sampler::{ParamLayout, PosteriorSamples, SACE_PARAM, TZ_PARAM, TZ_PER_MONTH_PARAM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    /// 2.5% and 97.5% posterior quantiles.
    pub lower: f64,
    pub upper: f64,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub params: Vec<ParamSummary>,
    pub chains: usize,
    pub draws: usize,
    pub warnings: Vec<String>,
}

impl PosteriorSummary {
    pub fn get(&self, name: &str) -> Option<&ParamSummary> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn sace(&self) -> Option<&ParamSummary> {
        self.get(SACE_PARAM)
    }

    pub fn t_z_effect(&self) -> Option<&ParamSummary> {
        self.get(TZ_PER_MONTH_PARAM)
    }
}

/// Quantile with linear interpolation between order statistics (R type 7).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = if x.len() > 1 {
        x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, v)
}

/// Effective sample size from the autocorrelations, truncated by the
/// initial positive sequence: pairs `rho_{2k} + rho_{2k+1}` are summed
/// while positive.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let c0 = centered.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let rho = |k: usize| -> f64 {
        centered[..n - k].iter().zip(&centered[k..]).map(|(a, b)| a * b).sum::<f64>() / (n as f64 * c0)
    };
    let mut tau = -1.0;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = if k == 0 { 1.0 + rho(1) } else { rho(2 * k) + rho(2 * k + 1) };
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        k += 1;
    }
    (n as f64 / tau.max(1.0 / n as f64)).min(n as f64 * (n as f64).log10().max(1.0))
}

/// Summaries pooled over chains; ESS is summed over chains.
pub fn summarize(samples: &[PosteriorSamples]) -> Result<PosteriorSummary> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Insufficient("no chains to summarize".into()))?;
    if samples.iter().any(|s| s.names != first.names) {
        return Err(Error::Config("chains disagree on parameter names".into()));
    }
    let total: usize = samples.iter().map(|s| s.draws.len()).sum();
    if total < 2 {
        return Err(Error::Insufficient(format!("summaries need at least 2 draws, found {total}")));
    }
    let mut params = Vec::with_capacity(first.names.len());
    let mut warnings = Vec::new();
    for (k, name) in first.names.iter().enumerate() {
        let mut pooled = Vec::with_capacity(total);
        let mut ess = 0.0;
        for s in samples {
            let column: Vec<f64> = s.draws.iter().map(|d| d[k]).collect();
            ess += effective_sample_size(&column);
            pooled.extend(column);
        }
        let (mean, var) = mean_var(&pooled);
        pooled.sort_by(f64::total_cmp);
        let lower = quantile_type7(&pooled, 0.025);
        let upper = quantile_type7(&pooled, 0.975);
        if mean < lower || mean > upper {
            warnings.push(format!("{name}: posterior mean lies outside its 95% interval (skewed posterior)"));
        }
        params.push(ParamSummary {
            name: name.clone(),
            mean,
            sd: var.sqrt(),
            lower,
            upper,
            ess,
        });
    }
    Ok(PosteriorSummary {
        params,
        chains: samples.len(),
        draws: total,
        warnings,
    })
}

/// Potential scale reduction factor of equal-length chains.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Insufficient("Gelman-Rubin needs at least two chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::Config("Gelman-Rubin needs equal-length chains".into()));
    }
    if n < 2 {
        return Err(Error::Insufficient("Gelman-Rubin needs at least two draws per chain".into()));
    }
    let m = chains.len() as f64;
    let nf = n as f64;
    let stats: Vec<(f64, f64)> = chains.iter().map(|c| mean_var(c)).collect();
    let w = stats.iter().map(|s| s.1).sum::<f64>() / m;
    let grand = stats.iter().map(|s| s.0).sum::<f64>() / m;
    let b = nf * stats.iter().map(|s| (s.0 - grand).powi(2)).sum::<f64>() / (m - 1.0);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    let v = (nf - 1.0) / nf * w + b / nf;
    Ok((v / w).sqrt())
}

/// PSRF of one named parameter across chains.
pub fn gelman_rubin_param(samples: &[PosteriorSamples], name: &str) -> Result<f64> {
    let chains = samples
        .iter()
        .map(|s| s.column(name).ok_or_else(|| Error::Config(format!("unknown parameter `{name}`"))))
        .collect::<Result<Vec<_>>>()?;
    gelman_rubin(&chains)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DicResult {
    pub dbar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

impl DicResult {
    pub fn from_deviances(deviances: &[f64], d_at_mean: f64) -> Result<DicResult> {
        if deviances.is_empty() {
            return Err(Error::Insufficient("DIC needs at least one draw".into()));
        }
        let dbar = deviances.iter().sum::<f64>() / deviances.len() as f64;
        let p_d = dbar - d_at_mean;
        Ok(DicResult {
            dbar,
            d_at_mean,
            p_d,
            dic: dbar + p_d,
        })
    }
}

/// DIC with deviance `-2 * full_data_loglik`, pooled over chains. The
/// plug-in point is the component-wise posterior mean of every parameter.
pub fn compute_dic(samples: &[PosteriorSamples], design: &Design) -> Result<DicResult> {
    let layout = ParamLayout::new(design);
    let mut deviances = Vec::new();
    let mut sum = vec![0.0; layout.names.len()];
    for s in samples {
        if s.names != layout.names {
            return Err(Error::Config("draws do not match the model design".into()));
        }
        for draw in &s.draws {
            let params = layout.unflatten(draw)?;
            let d = -2.0 * full_data_loglik(design, &params);
            if !d.is_finite() {
                return Err(Error::NonFiniteDeviance { draw: deviances.len() + 1 });
            }
            deviances.push(d);
            for (acc, v) in sum.iter_mut().zip(draw) {
                *acc += v;
            }
        }
    }
    if deviances.is_empty() {
        return Err(Error::Insufficient("DIC needs at least one draw".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|v| v / deviances.len() as f64).collect();
    let d_at_mean = -2.0 * full_data_loglik(design, &layout.unflatten(&mean)?);
    if !d_at_mean.is_finite() {
        return Err(Error::NonFiniteDeviance { draw: 0 });
    }
    DicResult::from_deviances(&deviances, d_at_mean)
}

pub fn write_summary_csv<W: Write>(summary: &PosteriorSummary, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "mean", "sd", "lower_95", "upper_95", "ess"])?;
    for p in &summary.params {
        w.write_record([
            p.name.clone(),
            p.mean.to_string(),
            p.sd.to_string(),
            p.lower.to_string(),
            p.upper.to_string(),
            p.ess.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed four decimals, or scientific notation for very large or small
/// magnitudes (e.g. parameters of an empty stratum drawn from a vague prior).
fn num(x: f64) -> String {
    if x != 0.0 && x.is_finite() && !(1e-4..1e6).contains(&x.abs()) {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

/// Aligned plain-text table with the SACE and t_z rows highlighted first.
pub fn format_summary(summary: &PosteriorSummary) -> String {
    let mut out = String::new();
    let width = summary.params.iter().map(|p| p.name.len()).max().unwrap_or(9).max(9);
    let row = |out: &mut String, label: &str, p: &ParamSummary| {
        let _ = writeln!(
            out,
            "{label:<width$}  {:>10}  {:>9}  ({:>9}, {:>9})  {:>8.1}",
            num(p.mean),
            num(p.sd),
            num(p.lower),
            num(p.upper),
            p.ess
        );
    };
    let _ = writeln!(
        out,
        "{:<width$}  {:>10}  {:>9}  {:^22}  {:>8}",
        "parameter", "mean", "sd", "95% interval", "ess"
    );
    if let Some(p) = summary.sace() {
        row(&mut out, "SACE", p);
    }
    if let Some(p) = summary.get(TZ_PARAM) {
        row(&mut out, "t_z (std)", p);
    }
    if let Some(p) = summary.t_z_effect() {
        row(&mut out, "t_z/month", p);
    }
    let _ = writeln!(out);
    for p in &summary.params {
        row(&mut out, &p.name, p);
    }
    let _ = writeln!(out, "\n{} chain(s), {} draws", summary.chains, summary.draws);
    for w in &summary.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// One cell of a DIC scan: a mode at a propensity degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DicCell {
    pub mode: MissingMode,
    pub degree: usize,
    pub result: std::result::Result<DicResult, String>,
}

/// Table with rows = modes and columns = propensity degrees, row minima
/// starred and the global minimum named below; failed fits show as
/// `failed` with their error listed.
pub fn format_dic_table(cells: &[DicCell]) -> String {
    let mut degrees: Vec<usize> = cells.iter().map(|c| c.degree).collect();
    degrees.sort_unstable();
    degrees.dedup();
    let mut out = String::new();
    let _ = write!(out, "{:<10}", "mode");
    for d in &degrees {
        let _ = write!(out, "  {:>12}", format!("d={d}"));
    }
    let _ = writeln!(out);
    for mode in MissingMode::ALL {
        if !cells.iter().any(|c| c.mode == mode) {
            continue;
        }
        let _ = write!(out, "{:<10}", mode.as_str());
        let row_min = cells
            .iter()
            .filter(|c| c.mode == mode)
            .filter_map(|c| c.result.as_ref().ok().map(|r| r.dic))
            .fold(f64::INFINITY, f64::min);
        for d in &degrees {
            let text = match cells.iter().find(|c| c.mode == mode && c.degree == *d) {
                Some(DicCell { result: Ok(r), .. }) if r.dic == row_min => format!("{:.2}*", r.dic),
                Some(DicCell { result: Ok(r), .. }) => format!("{:.2}", r.dic),
                Some(DicCell { result: Err(_), .. }) => "failed".to_string(),
                None => "-".to_string(),
            };
            let _ = write!(out, "  {text:>12}");
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(out, "(* = row minimum)");
    let best = cells
        .iter()
        .filter_map(|c| c.result.as_ref().ok().map(|r| (c, r.dic)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    if let Some((c, dic)) = best {
        let _ = writeln!(out, "\nminimum DIC {dic:.2}: mode {}, d={}", c.mode, c.degree);
    }
    for c in cells {
        if let Err(e) = &c.result {
            let _ = writeln!(out, "{} d={}: {e}", c.mode, c.degree);
        }
    }
    out
}
