//! Command-line front end: simulate, fit, dic-scan, summarize.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, save_csv, CsvSchema, Dataset, ImputationReport};
use crate::design::MissingMode;
use crate::draws::{load_draws, save_draws};
use crate::error::{Error, Result};
use crate::evaluation::{
    compute_dic, format_dic_table, format_summary, gelman_rubin_param, summarize, write_summary_csv, DicCell,
    DicResult, PosteriorSummary,
};
use crate::pipeline::{fit, FitConfig};
use crate::propensity::write_scores;
use crate::sampler::{PosteriorSamples, SACE_PARAM, TZ_PER_MONTH_PARAM};
use crate::simulate::{simulate, write_truth_manifest, MissingMechanism, SimConfig};

#[derive(Debug, Parser)]
#[command(name = "sace", version, about = "Survivor average causal effect estimation by data augmentation MCMC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort with known strata and SACE.
    Simulate(SimulateArgs),
    /// Fit the principal-strata model and write draws, summary and manifest.
    Fit(FitArgs),
    /// Fit every mode x propensity degree combination and tabulate DIC.
    DicScan(DicScanArgs),
    /// Re-derive the posterior summary from a stored draw file.
    Summarize(SummarizeArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// TOML simulation config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Missingness mechanism; `ignorable` and `mcar` derive their rates from
    /// the configured latent mechanism.
    #[arg(long)]
    pub mechanism: Option<MissingMode>,
    /// Number of datasets, with seeds seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    pub replicates: usize,
}

/// Model and sampler flags shared by `fit` and `dic-scan`.
#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// TOML run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub monotonicity: bool,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Outcome measurement time t^o (months).
    #[arg(long)]
    pub t_o: Option<f64>,
    #[arg(long)]
    pub allow_nonconverged: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    #[arg(long)]
    pub mode: Option<MissingMode>,
    #[arg(long)]
    pub ps_degree: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DicScanArgs {
    #[command(flatten)]
    pub common: ModelArgs,
    /// Comma-separated modes.
    #[arg(long, value_delimiter = ',', default_value = "latent,ignorable,mcar")]
    pub modes: Vec<MissingMode>,
    /// Comma-separated propensity degrees.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    pub degrees: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub draws: PathBuf,
    /// Directory for summary.csv and summary.txt; without it the table is
    /// only printed.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Restrict output to one parameter (`sace` selects the SACE).
    #[arg(long)]
    pub param: Option<String>,
}

/// Configuration file contents for `fit` and `dic-scan`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub t_o: f64,
    pub columns: CsvSchema,
    #[serde(flatten)]
    pub fit: FitConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_o: 18.0,
            columns: CsvSchema::default(),
            fit: FitConfig::default(),
        }
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

impl ModelArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg: RunConfig = match &self.config {
            Some(p) => read_toml(p)?,
            None => RunConfig::default(),
        };
        let s = &mut cfg.fit.sampler;
        if let Some(v) = self.iters {
            s.iterations = v;
        }
        if let Some(v) = self.burnin {
            s.burn_in = v;
        }
        if let Some(v) = self.thin {
            s.thin = v;
        }
        if let Some(v) = self.chains {
            s.chains = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.t_o {
            cfg.t_o = v;
        }
        if self.monotonicity {
            cfg.fit.model.monotone = true;
        }
        if self.allow_nonconverged {
            cfg.fit.allow_nonconverged = true;
        }
        cfg.fit.sampler.validate()?;
        Ok(cfg)
    }
}

/// SHA-256 of the raw input bytes, hex encoded.
pub fn fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainReport {
    pub chain: usize,
    pub seed: u64,
    /// RNG stream index within the seed.
    pub stream: usize,
    pub acceptance: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoxReport {
    pub beta: Vec<f64>,
    pub covariates: Vec<String>,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    pub diagnostic: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub software_version: String,
    pub command: String,
    pub config: RunConfig,
    pub data_path: PathBuf,
    pub data_sha256: String,
    pub records: usize,
    pub group_counts: BTreeMap<String, usize>,
    pub imputation: ImputationReport,
    pub cox: CoxReport,
    pub chains: Vec<ChainReport>,
    /// Potential scale reduction of the SACE and the largest over all
    /// parameters (multi-chain runs only).
    pub psrf_sace: Option<f64>,
    pub psrf_max: Option<f64>,
    pub dic: Option<DicResult>,
    pub timings_secs: BTreeMap<String, f64>,
}

fn write_summary_files(summary: &PosteriorSummary, out: &Path) -> Result<()> {
    let file = fs::File::create(out.join("summary.csv"))?;
    write_summary_csv(summary, std::io::BufWriter::new(file))?;
    fs::write(out.join("summary.txt"), format_summary(summary))?;
    Ok(())
}

fn psrf(samples: &[PosteriorSamples]) -> (Option<f64>, Option<f64>) {
    if samples.len() < 2 {
        return (None, None);
    }
    let sace = gelman_rubin_param(samples, SACE_PARAM).ok();
    let max = samples[0]
        .names
        .iter()
        .filter_map(|n| gelman_rubin_param(samples, n).ok())
        .filter(|v| v.is_finite())
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
    (sace, max)
}

fn load_data(args: &ModelArgs, cfg: &RunConfig) -> Result<Dataset> {
    load_csv(&args.data, &cfg.columns, cfg.t_o).map_err(|e| match e {
        Error::Parse { line, reason, .. } => Error::Parse {
            path: args.data.clone(),
            line,
            reason,
        },
        other => other,
    })
}

pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let total = Instant::now();
    let mut cfg = args.common.run_config()?;
    if let Some(m) = args.mode {
        cfg.fit.model.mode = m;
    }
    if let Some(d) = args.ps_degree {
        cfg.fit.model.ps_degree = d;
    }
    let out = &args.common.out;
    fs::create_dir_all(out)?;

    let load = Instant::now();
    let data_sha256 = fingerprint(&args.common.data)?;
    let dataset = load_data(&args.common, &cfg)?;
    let load_secs = load.elapsed().as_secs_f64();

    let result = fit(&dataset, &cfg.fit)?;
    let prepared = &result.prepared;

    let post = Instant::now();
    save_draws(&result.samples, &out.join("draws.csv"))?;
    let summary = summarize(&result.samples)?;
    write_summary_files(&summary, out)?;
    let scores = fs::File::create(out.join("ps.csv"))?;
    write_scores(&prepared.design.ids, &prepared.scores, std::io::BufWriter::new(scores))?;
    let dic = compute_dic(&result.samples, &prepared.design)?;
    let (psrf_sace, psrf_max) = psrf(&result.samples);
    let post_secs = post.elapsed().as_secs_f64();

    let manifest = RunManifest {
        software_version: env!("CARGO_PKG_VERSION").to_string(),
        command: "fit".into(),
        config: cfg.clone(),
        data_path: args.common.data.clone(),
        data_sha256,
        records: dataset.len(),
        group_counts: dataset
            .group_counts()
            .into_iter()
            .map(|(g, n)| (g.to_string(), n))
            .collect(),
        imputation: prepared.imputation.clone(),
        cox: CoxReport {
            beta: prepared.cox.beta.clone(),
            covariates: prepared.dataset.covariate_names.clone(),
            iterations: prepared.cox.iterations,
            converged: prepared.cox.converged,
            gradient_norm: prepared.cox.gradient_norm,
            diagnostic: prepared.cox.diagnostic.clone(),
        },
        chains: result
            .samples
            .iter()
            .map(|s| ChainReport {
                chain: s.chain,
                seed: s.seed,
                stream: s.chain,
                acceptance: s.acceptance.iter().cloned().collect(),
            })
            .collect(),
        psrf_sace,
        psrf_max,
        dic: Some(dic),
        timings_secs: BTreeMap::from([
            ("load".to_string(), load_secs),
            ("prepare".to_string(), result.timings.prepare_secs),
            ("sampling".to_string(), result.timings.sampling_secs),
            ("outputs".to_string(), post_secs),
            ("total".to_string(), total.elapsed().as_secs_f64()),
        ]),
    };
    let file = fs::File::create(out.join("manifest.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &manifest)?;
    Ok(manifest)
}

pub fn cmd_dic_scan(args: &DicScanArgs) -> Result<Vec<DicCell>> {
    let cfg = args.common.run_config()?;
    let out = &args.common.out;
    fs::create_dir_all(out)?;
    let dataset = load_data(&args.common, &cfg)?;
    if args.modes.is_empty() || args.degrees.is_empty() {
        return Err(Error::Config("dic-scan needs at least one mode and one degree".into()));
    }
    let grid: Vec<(MissingMode, usize)> = args
        .modes
        .iter()
        .flat_map(|&m| args.degrees.iter().map(move |&d| (m, d)))
        .collect();
    let cells: Vec<DicCell> = grid
        .par_iter()
        .map(|&(mode, degree)| {
            let mut fit_cfg = cfg.fit.clone();
            fit_cfg.model.mode = mode;
            fit_cfg.model.ps_degree = degree;
            let result = fit(&dataset, &fit_cfg)
                .and_then(|r| compute_dic(&r.samples, &r.prepared.design))
                .map_err(|e| e.to_string());
            DicCell { mode, degree, result }
        })
        .collect();
    fs::write(out.join("dic_table.txt"), format_dic_table(&cells))?;
    let mut w = csv::Writer::from_path(out.join("dic_scan.csv"))?;
    w.write_record(["mode", "degree", "dbar", "d_at_mean", "p_d", "dic", "error"])?;
    for c in &cells {
        let mut row = vec![c.mode.to_string(), c.degree.to_string()];
        match &c.result {
            Ok(r) => {
                row.extend([r.dbar, r.d_at_mean, r.p_d, r.dic].iter().map(f64::to_string));
                row.push(String::new());
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 4));
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(cells)
}

pub fn cmd_summarize(args: &SummarizeArgs) -> Result<PosteriorSummary> {
    let samples = load_draws(&args.draws)?;
    let mut summary = summarize(&samples)?;
    if let Some(p) = &args.param {
        let name = match p.as_str() {
            "sace" => SACE_PARAM,
            "t_z" => TZ_PER_MONTH_PARAM,
            other => other,
        };
        summary.params.retain(|q| q.name == name);
        if summary.params.is_empty() {
            return Err(Error::Config(format!("parameter `{p}` not found in draws")));
        }
    }
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        write_summary_files(&summary, out)?;
    }
    Ok(summary)
}

/// Simulation config for a mechanism: the configured latent cells are
/// collapsed to per-arm (`ignorable`) or overall (`mcar`) rates.
fn with_mechanism(mut cfg: SimConfig, mode: MissingMode) -> SimConfig {
    let latent = match &cfg.missing {
        MissingMechanism::Latent { theta } => theta.clone(),
        _ => return cfg,
    };
    cfg.missing = match mode {
        MissingMode::Latent => return cfg,
        MissingMode::Ignorable => MissingMechanism::Ignorable {
            theta: [latent[1].clone(), latent[0].clone()],
        },
        MissingMode::Mcar => MissingMechanism::Mcar {
            rate: crate::model::logistic(latent[0][0]),
        },
    };
    cfg
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<Vec<PathBuf>> {
    let mut base: SimConfig = match &args.config {
        Some(p) => read_toml(p)?,
        None => SimConfig::default(),
    };
    if let Some(n) = args.n {
        base.n = n;
    }
    if let Some(s) = args.seed {
        base.seed = s;
    }
    if let Some(m) = args.mechanism {
        base = with_mechanism(base, m);
    }
    if args.replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    fs::create_dir_all(&args.out)?;
    (0..args.replicates)
        .into_par_iter()
        .map(|r| {
            let cfg = SimConfig {
                seed: base.seed + r as u64,
                ..base.clone()
            };
            let dir = if args.replicates == 1 {
                args.out.clone()
            } else {
                args.out.join(format!("rep_{:03}", r + 1))
            };
            fs::create_dir_all(&dir)?;
            let (dataset, truth) = simulate(&cfg)?;
            for w in &truth.warnings {
                eprintln!("warning ({}): {w}", dir.display());
            }
            save_csv(&dataset, &dir.join("data.csv"))?;
            write_truth_manifest(&truth, &dir.join("truth.json"))?;
            Ok(dir)
        })
        .collect()
}

pub fn run(cli: Cli) -> Result<()> {
    let report = match cli.command {
        Command::Simulate(a) => cmd_simulate(&a)?
            .iter()
            .map(|dir| format!("wrote {}\n", dir.display()))
            .collect(),
        Command::Fit(a) => {
            let m = cmd_fit(&a)?;
            let mut text = fs::read_to_string(a.common.out.join("summary.txt"))?;
            if let Some(d) = m.dic {
                text.push_str(&format!("DIC {:.2} (p_D {:.2})\n", d.dic, d.p_d));
            }
            text
        }
        Command::DicScan(a) => format_dic_table(&cmd_dic_scan(&a)?),
        Command::Summarize(a) => format_summary(&cmd_summarize(&a)?),
    };
    // a closed stdout (e.g. piped into `head`) is not a failure of the run
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(report.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}
