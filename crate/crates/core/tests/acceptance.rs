//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Runs without the libtest harness so the lines are
//! always printed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use sace::data::{Dataset, Missingness, PatientRecord, Stratum};
use sace::design::{Design, MissingMode, ModelSpec};
use sace::evaluation::{compute_dic, effective_sample_size, summarize};
use sace::model::{observed_data_loglik, record_loglik, ModelParams, PriorSettings, Priors};
use sace::pipeline::{fit, prepare, FitConfig};
use sace::propensity::{fit_cox, partial_likelihood, SurvivalObservation};
use sace::sampler::{run_chain, run_chain_from, stratum_probabilities, ChainState, SamplerConfig};
use sace::simulate::{simulate, SimConfig, SimTruth};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// independent oracles

fn oracle_pi(alpha: &[Vec<f64>; 3], x2: &[f64], monotone: bool) -> [f64; 4] {
    let e = |a: &Vec<f64>| a.iter().zip(x2).map(|(u, v)| u * v).sum::<f64>().exp();
    let ll = e(&alpha[0]);
    let ld = e(&alpha[1]);
    let dl = if monotone { 0.0 } else { e(&alpha[2]) };
    let total = ll + ld + dl + 1.0;
    [ll / total, ld / total, dl / total, 1.0 / total]
}

fn oracle_density(y: f64, mean: f64, var: f64) -> f64 {
    (-(y - mean) * (y - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

/// Linear-space Table-1 cell of record `i` in stratum `g`.
fn oracle_cell(d: &Design, i: usize, g: Stratum, p: &ModelParams) -> f64 {
    let pi = oracle_pi(&p.strata.alpha, d.x2.row(i), d.spec.monotone)[g.index()];
    let group = d.groups[i];
    if !group.survived() {
        return pi;
    }
    let arm = group.arm();
    let cell = match (g, arm) {
        (Stratum::LL, 1) => 0,
        (Stratum::LL, _) => 1,
        (Stratum::LD, _) => 2,
        _ => 3,
    };
    let lin: f64 = p.missing.theta[cell].iter().zip(d.x3.row(i)).map(|(a, b)| a * b).sum();
    let phi = 1.0 / (1.0 + (-lin).exp());
    let m = if group.outcome_missing() { phi } else { 1.0 - phi };
    let f = match d.outcomes[i] {
        Some(y) => {
            let k = g.index();
            let mean: f64 = p.outcome.eta[k].iter().zip(d.x1(i, g)).map(|(a, b)| a * b).sum();
            oracle_density(y, mean, p.outcome.sigma2[k])
        }
        None => 1.0,
    };
    pi * m * f
}

/// The two strata compatible with each observed group (Table 1), written
/// out independently of the library.
fn oracle_feasible(treated: bool, survived: bool, monotone: bool) -> Vec<Stratum> {
    use Stratum::*;
    match (treated, survived) {
        (true, true) => vec![LL, LD],
        (true, false) if monotone => vec![DD],
        (true, false) => vec![DL, DD],
        (false, true) if monotone => vec![LL],
        (false, true) => vec![LL, DL],
        (false, false) => vec![LD, DD],
    }
}

fn random_params(d: &Design, rng: &mut ChaCha8Rng) -> ModelParams {
    let mut p = ModelParams::zeros(d);
    let mut n = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
    for a in p.strata.alpha.iter_mut() {
        a.iter_mut().for_each(|v| *v = n(1.0));
    }
    for (k, e) in p.outcome.eta.iter_mut().enumerate() {
        e.iter_mut().for_each(|v| *v = n(2.0));
        e[0] = 20.0 + 2.0 * k as f64 + n(1.0);
    }
    for s in p.outcome.sigma2.iter_mut() {
        *s = 2.0 + n(1.0).abs() * 3.0;
    }
    for t in p.missing.theta.iter_mut() {
        t.iter_mut().for_each(|v| *v = n(1.0));
    }
    p
}

/// Normal-inverse-gamma posterior by direct formulas (residual form).
fn nig_oracle(x: &[Vec<f64>], y: &[f64], v0: f64, a0: f64, b0: f64) -> (Vec<f64>, Vec<Vec<f64>>, f64, f64) {
    let p = x[0].len();
    let mut prec = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, &yi) in x.iter().zip(y) {
        for a in 0..p {
            rhs[a] += row[a] * yi;
            for b in 0..p {
                prec[a][b] += row[a] * row[b];
            }
        }
    }
    for (a, r) in prec.iter_mut().enumerate() {
        r[a] += 1.0 / v0;
    }
    let cov = invert(&prec);
    let mean: Vec<f64> = (0..p).map(|a| (0..p).map(|b| cov[a][b] * rhs[b]).sum()).collect();
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(row, &yi)| (yi - row.iter().zip(&mean).map(|(u, v)| u * v).sum::<f64>()).powi(2))
        .sum();
    let shrink = mean.iter().map(|m| m * m).sum::<f64>() / v0;
    (mean, cov, a0 + y.len() as f64 / 2.0, b0 + 0.5 * (rss + shrink))
}

fn invert(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let mut row = r.clone();
            row.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            row
        })
        .collect();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        let d = a[c][c];
        a[c].iter_mut().for_each(|v| *v /= d);
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                let pr = a[c].clone();
                a[r].iter_mut().zip(pr).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

fn mean_sd(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

// ---------------------------------------------------------------------------
// criteria

fn table_one_oracle() -> Outcome {
    let t_o = 18.0;
    let rec = |id: &str, treated: bool, survived: bool, missing: bool| PatientRecord {
        id: id.into(),
        covariates: vec![0.0],
        treated,
        t_z: if treated { 3.0 } else if survived { t_o } else { 7.0 },
        survived,
        t_s: if survived { 25.0 } else if treated { 9.0 } else { 7.0 },
        missing: match (survived, missing) {
            (false, _) => Missingness::Undefined,
            (true, true) => Missingness::Missing,
            (true, false) => Missingness::Observed,
        },
        outcome: (survived && !missing).then_some(21.5),
    };
    let records = vec![
        rec("a", true, true, false),
        rec("b", true, true, true),
        rec("c", true, false, false),
        rec("d", false, true, false),
        rec("e", false, true, true),
        rec("f", false, false, false),
    ];
    let ds = Dataset::new(records, vec!["x".into()], t_o).unwrap();
    let scores = [-1.0, -0.4, 0.1, 0.3, 0.8, 1.2];
    let mut worst = 0.0f64;
    let mut checked = 0;
    for monotone in [false, true] {
        let spec = ModelSpec {
            monotone,
            ps_degree: 2,
            ..ModelSpec::default()
        };
        let d = Design::build(&ds, &scores, &spec).unwrap();
        let mut p = ModelParams::zeros(&d);
        p.strata.alpha = [vec![0.7, -0.3, 0.2], vec![-0.4, 0.5, -0.1], vec![-1.1, 0.2, 0.3]];
        p.outcome.eta = [vec![20.0, 2.5, -0.4, 0.6, 0.1], vec![19.0, -0.5, 0.2], vec![23.0, 0.8, -0.3]];
        p.outcome.sigma2 = [4.0, 2.5, 3.0];
        p.missing.theta = [vec![-1.2, 0.3, 0.1], vec![-0.6, -0.2, 0.0], vec![0.4, 0.1, -0.2], vec![0.9, 0.0, 0.3]];
        for i in 0..d.len() {
            let r = &ds.records[i];
            let feasible = oracle_feasible(r.treated, r.survived, monotone);
            let cells: Vec<f64> = feasible.iter().map(|&g| oracle_cell(&d, i, g, &p)).collect();
            let total: f64 = cells.iter().sum();
            let got = stratum_probabilities(&d, i, &p).unwrap();
            if got.len() != feasible.len() {
                return outcome(false, format!("record {i}: feasible set size {} vs {}", got.len(), feasible.len()));
            }
            for ((g, prob), (&fg, cell)) in got.iter().zip(feasible.iter().zip(&cells)) {
                if *g != fg {
                    return outcome(false, format!("record {i}: stratum {g} vs {fg}"));
                }
                worst = worst.max((prob - cell / total).abs());
                checked += 1;
            }
        }
    }
    outcome(worst <= 1e-12, format!("{checked} probabilities, max abs error {worst:.2e} (tol 1e-12)"))
}

fn marginalization_identity() -> Outcome {
    let (ds, _) = simulate(&SimConfig {
        n: 200,
        seed: 31,
        ..SimConfig::default()
    })
    .unwrap();
    let scores: Vec<f64> = ds.records.iter().map(|r| r.covariates[0] - 0.5 * r.covariates[1]).collect();
    let d = Design::build(&ds, &scores, &ModelSpec::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let p = random_params(&d, &mut rng);
        let mut total = 0.0;
        for i in 0..d.len() {
            let r = &ds.records[i];
            let explicit: f64 = oracle_feasible(r.treated, r.survived, false)
                .iter()
                .map(|&g| oracle_cell(&d, i, g, &p))
                .sum();
            let explicit = explicit.ln();
            worst = worst.max((record_loglik(&d, i, &p) - explicit).abs());
            total += explicit;
        }
        let lib = observed_data_loglik(&d, &p);
        worst = worst.max((lib - total).abs() / total.abs().max(1.0));
    }
    outcome(worst <= 1e-10, format!("200 records x 20 parameter sets, max error {worst:.2e} (tol 1e-10)"))
}

fn cox_oracle() -> Outcome {
    let obs = vec![
        SurvivalObservation {
            time: 1.0,
            event: true,
            covariates: vec![1.0],
        },
        SurvivalObservation {
            time: 2.0,
            event: true,
            covariates: vec![0.0],
        },
        SurvivalObservation {
            time: 3.0,
            event: true,
            covariates: vec![1.0],
        },
    ];
    // grid search of the hand-written partial likelihood
    let ll = |b: f64| b - (2.0 * b.exp() + 1.0).ln() - (1.0 + b.exp()).ln();
    let grid_best = (0..=400_000)
        .map(|k| -2.0 + k as f64 * 1e-5)
        .max_by(|a, b| ll(*a).total_cmp(&ll(*b)))
        .unwrap();
    let fit = fit_cox(&obs, 1e-8, 50).unwrap();
    let beta = fit.beta[0];
    let closed = -(2.0f64.ln()) / 2.0;
    let beta_ok = (beta - grid_best).abs() < 1e-4 && (beta - closed).abs() < 1e-4 && fit.converged;

    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(5..40);
        let p = rng.random_range(1..4);
        let obs: Vec<SurvivalObservation> = (0..n)
            .map(|_| SurvivalObservation {
                // coarse times create ties
                time: (rng.random_range(1..15) as f64) * 0.5,
                event: rng.random_bool(0.7),
                covariates: (0..p).map(|_| rng.sample(StandardNormal)).collect(),
            })
            .collect();
        let beta: Vec<f64> = (0..p).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let analytic = partial_likelihood(&obs, &beta).gradient;
        for k in 0..p {
            let h = 1e-6;
            let mut up = beta.clone();
            let mut down = beta.clone();
            up[k] += h;
            down[k] -= h;
            let fd = (partial_likelihood(&obs, &up).loglik - partial_likelihood(&obs, &down).loglik) / (2.0 * h);
            let rel = (analytic[k] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    outcome(
        beta_ok && worst < 1e-5,
        format!(
            "beta {beta:.6} (grid {grid_best:.5}, closed form {closed:.6}); gradient vs finite differences max rel err {worst:.2e}"
        ),
    )
}

fn conjugate_sampler_oracle() -> Outcome {
    let (ds, _) = simulate(&SimConfig {
        n: 400,
        seed: 5,
        ..SimConfig::default()
    })
    .unwrap();
    let config = FitConfig {
        model: ModelSpec {
            mode: MissingMode::Ignorable,
            ..ModelSpec::default()
        },
        ..FitConfig::default()
    };
    let prep = prepare(&ds, &config).unwrap();
    let d = &prep.design;
    // every survivor fixed in LL, every death in DD
    let mut init = ChainState::initial(d);
    for i in 0..d.len() {
        init.strata[i] = if d.groups[i].survived() { Stratum::LL } else { Stratum::DD };
    }
    let sampler = SamplerConfig {
        iterations: 5500,
        burn_in: 500,
        seed: 12,
        impute_strata: false,
        ..SamplerConfig::default()
    };
    let samples = run_chain_from(d, &sampler, &prep.priors, 0, init).unwrap();

    let (x, y): (Vec<Vec<f64>>, Vec<f64>) = (0..d.len())
        .filter_map(|i| d.outcomes[i].map(|y| (d.x1(i, Stratum::LL).to_vec(), y)))
        .unzip();
    let s = PriorSettings::default();
    let (mean, cov, shape, scale) = nig_oracle(&x, &y, s.eta_cov_scale, s.sigma2_shape, s.sigma2_scale);
    let e_sigma2 = scale / (shape - 1.0);
    let sd_sigma2 = e_sigma2 / (shape - 2.0).sqrt();

    let mut worst = 0.0f64;
    let mut check = |name: &str, mean: f64, sd: f64| {
        let col = samples.column(name).unwrap();
        let (m, s) = mean_sd(&col);
        let ess = effective_sample_size(&col);
        let z_mean = (m - mean).abs() / (sd / ess.sqrt());
        let z_sd = (s - sd).abs() / (sd / (2.0 * ess).sqrt());
        worst = worst.max(z_mean).max(z_sd);
    };
    for (k, col) in d.names.outcome_ll.iter().enumerate() {
        check(&format!("eta[LL].{col}"), mean[k], (e_sigma2 * cov[k][k]).sqrt());
    }
    check("sigma2[LL]", e_sigma2, sd_sigma2);
    outcome(
        worst < 3.0,
        format!("{} draws, largest deviation {worst:.2} Monte Carlo SEs (tol 3)", samples.draws.len()),
    )
}

fn prior_recovery() -> Outcome {
    let ds = Dataset::new(Vec::new(), vec!["x".into()], 18.0).unwrap();
    let d = Design::build(&ds, &[], &ModelSpec::default()).unwrap();
    // proper priors with finite variance so every moment exists
    let settings = PriorSettings {
        eta_cov_scale: 4.0,
        sigma2_shape: 10.0,
        sigma2_scale: 9.0,
        alpha_sd: 2.0,
        theta_sd: 3.0,
    };
    let priors = Priors::from_settings(&d, &settings).unwrap();
    let cfg = SamplerConfig {
        iterations: 52_000,
        burn_in: 2_000,
        seed: 2,
        ..SamplerConfig::default()
    };
    let s = run_chain(&d, &cfg, &priors, 0).unwrap();
    let e_sigma2 = 9.0 / 9.0;
    let sd_sigma2 = e_sigma2 / 8.0f64.sqrt();
    let mut worst = 0.0f64;
    let mut worst_name = String::new();
    for name in &s.names {
        let (mean, sd) = if name.starts_with("sigma2") {
            (e_sigma2, sd_sigma2)
        } else if name.starts_with("eta") {
            (0.0, (4.0 * e_sigma2).sqrt())
        } else if name.starts_with("alpha") {
            (0.0, 2.0)
        } else if name.starts_with("theta") {
            (0.0, 3.0)
        } else {
            continue; // derived
        };
        let (m, sdev) = mean_sd(&s.column(name).unwrap());
        // relative to the prior mean where it is non-zero, else to the prior sd
        let mean_err = (m - mean).abs() / if mean != 0.0 { mean.abs() } else { sd };
        let sd_err = (sdev - sd).abs() / sd;
        let err = mean_err.max(sd_err);
        if err > worst {
            worst = err;
            worst_name = name.clone();
        }
    }
    outcome(
        worst < 0.05,
        format!("{} draws, worst relative error {:.2}% ({worst_name}) (tol 5%)", s.draws.len(), 100.0 * worst),
    )
}

fn sace_of(samples: &[sace::sampler::PosteriorSamples]) -> (f64, f64, f64) {
    let summary = summarize(samples).unwrap();
    let p = summary.sace().unwrap();
    (p.mean, p.lower, p.upper)
}

fn fit_with(ds: &Dataset, mode: MissingMode, monotone: bool, seed: u64) -> sace::pipeline::FitOutput {
    let mut cfg = FitConfig::default();
    cfg.model.mode = mode;
    cfg.model.monotone = monotone;
    cfg.sampler.seed = seed;
    fit(ds, &cfg).unwrap()
}

/// Criteria 6 and 7 share the replicates: latent generation, latent fit
/// for recovery, plus ignorable and mcar fits for the DIC comparison.
fn recovery_and_dic() -> (Outcome, Outcome) {
    let truth = 3.0;
    let (mut bias_sum, mut covered) = (0.0, 0);
    let (mut latent_min, mut mcar_worse) = (0, 0);
    for rep in 0..20u64 {
        let sim = SimConfig {
            seed: 1 + rep,
            ..SimConfig::default()
        };
        assert_eq!(sim.sace(), truth);
        let (ds, _) = simulate(&sim).unwrap();
        let latent = fit_with(&ds, MissingMode::Latent, false, 1000 + rep);
        let (mean, lo, hi) = sace_of(&latent.samples);
        bias_sum += mean - truth;
        covered += usize::from(lo <= truth && truth <= hi);

        let dic_latent = compute_dic(&latent.samples, &latent.prepared.design).unwrap().dic;
        let mut others = Vec::new();
        for mode in [MissingMode::Ignorable, MissingMode::Mcar] {
            let out = fit_with(&ds, mode, false, 1000 + rep);
            others.push(compute_dic(&out.samples, &out.prepared.design).unwrap().dic);
        }
        latent_min += usize::from(dic_latent < others[0] && dic_latent < others[1]);
        mcar_worse += usize::from(others[1] > dic_latent);
        println!(
            "    replicate {:>2}: SACE {mean:.3} ({lo:.3}, {hi:.3}); DIC latent {dic_latent:.1}, ignorable {:.1}, mcar {:.1}",
            rep + 1,
            others[0],
            others[1]
        );
    }
    let bias = bias_sum / 20.0;
    let c6 = outcome(
        bias.abs() < 0.3 && covered >= 17,
        format!("pooled bias {bias:+.3} (tol 0.3), coverage {covered}/20 (need 17)"),
    );
    let c7 = outcome(
        latent_min >= 12 && mcar_worse >= 16,
        format!("latent minimum in {latent_min}/20 (need 12), mcar above latent in {mcar_worse}/20 (need 16)"),
    );
    (c6, c7)
}

fn naive_versus_sace() -> Outcome {
    let mut correct = 0;
    let mut naive_opposite = 0;
    for rep in 0..20u64 {
        let mut sim = SimConfig {
            seed: 101 + rep,
            ..SimConfig::default()
        };
        // true SACE +1, but treated survivors are dominated by low-outcome
        // strata and by high propensity, which lowers outcomes
        sim.eta = [vec![24.0, 1.0, -0.1, -3.0], vec![17.0, -1.0], vec![29.0, 0.5]];
        let (ds, _) = simulate(&sim).unwrap();
        let naive = SimTruth::naive_difference(&ds).unwrap();
        naive_opposite += usize::from(naive < 0.0);
        let (mean, _, _) = sace_of(&fit_with(&ds, MissingMode::Latent, false, 2000 + rep).samples);
        correct += usize::from(mean > 0.0);
        println!("    replicate {:>2}: naive {naive:+.3}, SACE {mean:+.3}", rep + 1);
    }
    outcome(
        correct >= 18 && naive_opposite == 20,
        format!("naive difference negative in {naive_opposite}/20; SACE sign correct in {correct}/20 (need 18)"),
    )
}

fn monotonicity_robustness() -> Outcome {
    let mut close = 0;
    let mut max_pi_dl = 0.0f64;
    for rep in 0..20u64 {
        let mut sim = SimConfig {
            seed: 201 + rep,
            ..SimConfig::default()
        };
        sim.alpha[2] = vec![-2.5, 0.0];
        let (ds, truth) = simulate(&sim).unwrap();
        // average true pi_DL over the cohort
        let pi_dl = truth
            .ps
            .iter()
            .map(|&ps| oracle_pi(&sim.alpha, &[1.0, ps], false)[2])
            .sum::<f64>()
            / truth.ps.len() as f64;
        max_pi_dl = max_pi_dl.max(pi_dl);
        let (full, _, _) = sace_of(&fit_with(&ds, MissingMode::Latent, false, 3000 + rep).samples);
        let (mono, _, _) = sace_of(&fit_with(&ds, MissingMode::Latent, true, 3000 + rep).samples);
        close += usize::from((full - mono).abs() < 0.5);
        println!(
            "    replicate {:>2}: pi_DL {pi_dl:.3}, SACE {full:.3} vs monotone {mono:.3}",
            rep + 1
        );
    }
    outcome(
        close >= 16 && max_pi_dl <= 0.05,
        format!("max true pi_DL {max_pi_dl:.3} (<= 0.05); |difference| < 0.5 in {close}/20 (need 16)"),
    )
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_sace");
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        let status = Command::new(bin).args(args).output().unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    };
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    run(&["simulate", "--out", &p("sim"), "--n", "300", "--seed", "9"]);
    let data = Path::new(&p("sim")).join("data.csv").to_string_lossy().into_owned();
    for out in ["a", "b"] {
        run(&[
            "fit", "--data", &data, "--out", &p(out), "--iters", "800", "--burnin", "300", "--chains", "2", "--seed",
            "42", "--ps-degree", "2",
        ]);
    }
    let read = |out: &str, f: &str| std::fs::read(dir.path().join(out).join(f)).unwrap();
    let draws_same = read("a", "draws.csv") == read("b", "draws.csv");
    let summary_same = read("a", "summary.csv") == read("b", "summary.csv");
    outcome(
        draws_same && summary_same,
        format!(
            "draws.csv identical: {draws_same}, summary.csv identical: {summary_same} ({} bytes of draws)",
            read("a", "draws.csv").len()
        ),
    )
}

fn main() {
    // libtest flags (e.g. --list from test discovery) are not supported; run
    // the gate only for plain invocations
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut results: Vec<(u32, &str, Outcome, f64)> = Vec::new();
    fn timed(results: &mut Vec<(u32, &'static str, Outcome, f64)>, n: u32, name: &'static str, f: fn() -> Outcome) {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        println!(
            "criterion {n:>2} {name}: {} - {} [{secs:.1}s]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, name, o, secs));
    }
    timed(&mut results, 1, "Table-1 oracle", table_one_oracle);
    timed(&mut results, 2, "marginalization identity", marginalization_identity);
    timed(&mut results, 3, "Cox oracle", cox_oracle);
    timed(&mut results, 4, "conjugate-sampler oracle", conjugate_sampler_oracle);
    timed(&mut results, 5, "prior recovery", prior_recovery);

    let t = Instant::now();
    let (c6, c7) = recovery_and_dic();
    let secs = t.elapsed().as_secs_f64();
    for (n, name, o) in [(6, "SACE recovery", c6), (7, "DIC selection", c7)] {
        println!(
            "criterion {n:>2} {name}: {} - {} [{secs:.1}s shared, {:.1}s per replicate]",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            secs / 20.0
        );
        results.push((n, name, o, secs));
    }
    timed(&mut results, 8, "naive-vs-SACE direction", naive_versus_sace);
    timed(&mut results, 9, "monotonicity robustness", monotonicity_robustness);
    timed(&mut results, 10, "determinism", determinism);

    let failed: Vec<_> = results.iter().filter(|r| !r.2.pass).collect();
    println!("\nacceptance: {}/{} criteria passed", results.len() - failed.len(), results.len());
    for (n, name, o, _) in &failed {
        println!("  failed: criterion {n} {name}: {}", o.detail);
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
