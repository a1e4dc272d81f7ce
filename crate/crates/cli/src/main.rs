mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use log::{error, info};
use serde::Serialize;

use switchcast::experiments::catchup::catchup_table;
use switchcast::experiments::consistency::consistency_table;
use switchcast::experiments::histsim::histsim_table;
use switchcast::experiments::{
    report_grid, run_catchup, run_consistency, run_histsim, sha256_hex, write_atomic, write_csv, CatchupConfig,
    ConsistencyConfig, HistsimConfig,
};
use switchcast::logspace::nats_to_bits;
use switchcast::predictors::{Alphabet, Family, Outcome};
use switchcast::runner::MixtureRun;
use switchcast::selfcheck;

use config::FlatConfig;

#[derive(Debug, Parser)]
#[command(name = "switchcast", version, about = "Switch distribution experiments under log loss")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Code lengths of byte-level Markov orders, BMA and the switch distribution on a text
    Catchup(FlatConfig),
    /// Cumulative redundancy of histogram estimators on a known density
    Histsim(FlatConfig),
    /// Posterior traces of model selection on binary data
    Consistency(FlatConfig),
    /// Switch distribution over arbitrary model families on an input file
    Switch(FlatConfig),
    /// Oracle-equivalence, Bayes-chain and prior-mass suites
    Selftest,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    input_sha256: Option<String>,
    config: &'a FlatConfig,
    outputs: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Catchup(c) => catchup(c.resolve()?),
        Command::Histsim(c) => histsim(c.resolve()?),
        Command::Consistency(c) => consistency(c.resolve()?),
        Command::Switch(c) => switch(c.resolve()?),
        Command::Selftest => selftest(),
    }
}

fn prepare_out(cfg: &FlatConfig) -> Result<PathBuf> {
    let out = cfg.out_dir();
    fs::create_dir_all(&out).with_context(|| format!("out: cannot create {}", out.display()))?;
    Ok(out)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("cannot resolve {}", p.display()))
}

fn write_manifest(out: &Path, command: &str, seed: u64, input: Option<&[u8]>, echo: &FlatConfig, outputs: &[&str]) -> Result<()> {
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed,
        input_sha256: input.map(sha256_hex),
        config: echo,
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    write_atomic(&out.join(format!("{command}.manifest.json")), &json)?;
    Ok(())
}

fn catchup(cfg: FlatConfig) -> Result<()> {
    let input = cfg.input_path()?.to_path_buf();
    let seed = cfg.seed()?;
    let orders = cfg.orders.clone().unwrap_or_else(|| vec![1, 2]);
    let mut run_cfg = CatchupConfig::new(orders.clone());
    run_cfg.prior = cfg.prior_for(orders.len())?;
    run_cfg.stride = cfg.stride()?;
    run_cfg.validate()?;
    let out = prepare_out(&cfg)?;
    let bytes = fs::read(&input).with_context(|| format!("input: cannot read {}", input.display()))?;
    info!("catchup: {} bytes, orders {:?}", bytes.len(), orders);

    let rows = run_catchup(&bytes, &run_cfg).context("catchup")?;
    let (header, records) = catchup_table(&orders, &rows);
    write_csv(&out.join("catchup.csv"), &header, &records)?;
    if let Some(last) = rows.last() {
        info!("catchup: n={} switch {:.1} bits, bma {:.1} bits", last.n, last.switch_bits, last.bma_bits);
    }

    let echo = FlatConfig {
        input: Some(absolute(&input)?),
        out: Some(absolute(&out)?),
        orders: Some(orders),
        seed: Some(seed),
        stride: run_cfg.stride,
        theta: Some(run_cfg.prior.theta),
        prior_k: Some(cfg.prior_k.clone().unwrap_or_else(|| "harmonic".into())),
        prior_t: Some(cfg.prior_t.clone().unwrap_or_else(|| "harmonic".into())),
        ..Default::default()
    };
    write_manifest(&out, "catchup", seed, Some(&bytes), &echo, &["catchup.csv"])
}

fn histsim(cfg: FlatConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let density = cfg.density()?;
    let n_max = cfg.n.unwrap_or(20_000);
    let mut run_cfg = HistsimConfig::new(density, n_max, cfg.replicates(20)?, seed);
    run_cfg.estimators = cfg.estimators()?;
    run_cfg.kmax = cfg.kmax;
    if run_cfg.kmax == Some(0) {
        bail!("kmax: must be at least 1");
    }
    run_cfg.theta = cfg.theta()?;
    run_cfg.model_prior = cfg.model_prior(run_cfg.effective_kmax())?;
    run_cfg.switch_time_prior = cfg.switch_time_prior()?;
    run_cfg.stride = cfg.stride()?;
    run_cfg.workers = cfg.workers()?;
    run_cfg.validate()?;
    let out = prepare_out(&cfg)?;
    info!(
        "histsim: {} n_max={} replicates={} kmax={}",
        run_cfg.density,
        n_max,
        run_cfg.replicates,
        run_cfg.effective_kmax()
    );

    let output = run_histsim(&run_cfg).context("histsim")?;
    let (header, records) = histsim_table(&output);
    write_csv(&out.join("histsim.csv"), &header, &records)?;
    for c in &output.curves {
        info!("histsim: {} redundancy at n={}: {:.2} ± {:.2} bits", c.estimator, n_max, c.mean.last().unwrap_or(&f64::NAN), c.se.last().unwrap_or(&f64::NAN));
    }

    let echo = FlatConfig {
        out: Some(absolute(&out)?),
        n: Some(n_max),
        replicates: Some(run_cfg.replicates),
        density: Some(run_cfg.density.to_string()),
        estimators: Some(run_cfg.estimators.iter().map(|e| e.label()).collect()),
        seed: Some(seed),
        stride: run_cfg.stride,
        kmax: Some(run_cfg.effective_kmax()),
        theta: Some(run_cfg.theta),
        prior_k: Some(cfg.prior_k.clone().unwrap_or_else(|| "harmonic".into())),
        prior_t: Some(cfg.prior_t.clone().unwrap_or_else(|| "harmonic".into())),
        ..Default::default()
    };
    write_manifest(&out, "histsim", seed, None, &echo, &["histsim.csv"])
}

fn consistency(cfg: FlatConfig) -> Result<()> {
    let seed = cfg.seed()?;
    let source = cfg.source()?;
    let n = cfg.n.unwrap_or(10_000);
    let seeds = cfg.seeds.clone().unwrap_or_else(|| (0..10).map(|i| seed.wrapping_add(i)).collect());
    let models = cfg.models.clone().unwrap_or_else(|| vec!["laplace".into(), "markov:1:2".into()]);
    let mut run_cfg = ConsistencyConfig::new(source, n, seeds.clone());
    run_cfg.families = FlatConfig { models: Some(models.clone()), ..Default::default() }.families()?;
    if run_cfg.families.iter().any(|f| f.alphabet() != Alphabet::Finite(2)) {
        bail!("models: consistency needs binary models (laplace, markov:r:2)");
    }
    run_cfg.prior = cfg.prior_for(run_cfg.families.len())?;
    run_cfg.stride = cfg.stride()?;
    run_cfg.workers = cfg.workers()?;
    let out = prepare_out(&cfg)?;
    info!("consistency: {:?} n={} seeds={:?}", source, n, seeds);

    let traces = run_consistency(&run_cfg).context("consistency")?;
    let (header, records) = consistency_table(run_cfg.families.len(), &traces);
    write_csv(&out.join("consistency.csv"), &header, &records)?;
    let picks: Vec<usize> = traces.iter().filter_map(|t| t.final_selected()).collect();
    info!("consistency: final selections {picks:?}");

    let echo = FlatConfig {
        out: Some(absolute(&out)?),
        models: Some(models),
        n: Some(n),
        source: Some(cfg.source.clone().unwrap_or_else(|| "iid:0.7".into())),
        seed: Some(seed),
        seeds: Some(seeds),
        stride: run_cfg.stride,
        theta: Some(run_cfg.prior.theta),
        prior_k: Some(cfg.prior_k.clone().unwrap_or_else(|| "harmonic".into())),
        prior_t: Some(cfg.prior_t.clone().unwrap_or_else(|| "harmonic".into())),
        ..Default::default()
    };
    write_manifest(&out, "consistency", seed, None, &echo, &["consistency.csv"])
}

/// Interprets `bytes` in the alphabet of the models: 0/1 characters for
/// binary models, raw bytes for larger alphabets, whitespace-separated reals
/// for histograms.
fn read_outcomes(bytes: &[u8], families: &[Family]) -> Result<Vec<Outcome>> {
    match families[0].alphabet() {
        Alphabet::Finite(2) => bytes
            .iter()
            .filter(|b| !b.is_ascii_whitespace())
            .map(|&b| match b {
                b'0' => Ok(Outcome::Symbol(0)),
                b'1' => Ok(Outcome::Symbol(1)),
                _ => bail!("input: binary models need a file of 0/1 characters"),
            })
            .collect(),
        Alphabet::Finite(a) => bytes
            .iter()
            .map(|&b| {
                if (b as usize) < a {
                    Ok(Outcome::Symbol(b as usize))
                } else {
                    bail!("input: byte {b} is outside the alphabet of size {a}")
                }
            })
            .collect(),
        Alphabet::UnitInterval => std::str::from_utf8(bytes)
            .context("input: histogram models need a text file of numbers")?
            .split_whitespace()
            .map(|t| {
                let x: f64 = t.parse().with_context(|| format!("input: cannot parse `{t}` as a number"))?;
                if !(0.0..=1.0).contains(&x) {
                    bail!("input: {x} is outside [0, 1]");
                }
                Ok(Outcome::Point(x))
            })
            .collect(),
    }
}

fn switch(cfg: FlatConfig) -> Result<()> {
    let input = cfg.input_path()?.to_path_buf();
    let seed = cfg.seed()?;
    let families = cfg.families()?;
    let prior = cfg.prior_for(families.len())?;
    let stride = cfg.stride()?;
    let out = prepare_out(&cfg)?;
    let bytes = fs::read(&input).with_context(|| format!("input: cannot read {}", input.display()))?;
    let outcomes = read_outcomes(&bytes, &families)?;
    if outcomes.is_empty() {
        bail!("input: no outcomes in {}", input.display());
    }
    info!("switch: {} outcomes, {} models", outcomes.len(), families.len());

    let mut run = MixtureRun::new(&families, prior.clone()).context("switch")?;
    let grid = report_grid(outcomes.len() as u64, stride);
    let mut next = grid.iter().copied().peekable();
    let labels: Vec<String> = (1..=families.len()).map(|k| k.to_string()).collect();
    let mut header = vec!["n".to_string()];
    header.extend(labels.iter().map(|k| format!("codelen_bits_k{k}")));
    header.extend(["codelen_bits_bma".to_string(), "codelen_bits_sw".to_string()]);
    header.extend(labels.iter().map(|k| format!("post_k{k}")));
    header.push("selected".into());
    let mut records = Vec::new();
    let (mut chain_ok, mut norm_ok, mut band_ok) = (true, true, true);
    for &x in &outcomes {
        run.step(x).context("switch")?;
        let posterior = run.switch_posterior()?;
        chain_ok &= run.bayes_chain_gaps().holds(1e-9);
        norm_ok &= (posterior.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
        band_ok &= run.bma_band().holds(1e-9);
        if next.peek() == Some(&run.n()) {
            next.next();
            let mut rec = vec![run.n().to_string()];
            rec.extend(run.strategy_logliks().iter().map(|&l| (-nats_to_bits(l)).to_string()));
            rec.push((-nats_to_bits(run.bma_chain_loglik())).to_string());
            rec.push((-nats_to_bits(run.switch_chain_loglik())).to_string());
            rec.extend(posterior.iter().map(|p| p.to_string()));
            rec.push(run.selected()?.to_string());
            records.push(rec);
        }
    }
    let n = outcomes.len();
    let report = |ok: bool, what: &str| {
        if ok {
            info!("assertion passed: {what} on all {n} prefixes");
        } else {
            error!("assertion failed: {what}");
        }
    };
    report(chain_ok, "Bayes chain ln p_sw >= ln(1-theta) + ln p_bma >= ln(1-theta) + ln pi_k + ln p_k");
    report(norm_ok, "switch posterior sums to one");
    report(band_ok, "BMA within [0, -ln pi_k(best)] of the best model");
    if !(chain_ok && norm_ok && band_ok) {
        bail!("switch: runtime assertions failed");
    }
    write_csv(&out.join("switch.csv"), &header, &records)?;

    let echo = FlatConfig {
        input: Some(absolute(&input)?),
        out: Some(absolute(&out)?),
        models: cfg.models.clone(),
        seed: Some(seed),
        stride,
        theta: Some(prior.theta),
        prior_k: Some(cfg.prior_k.clone().unwrap_or_else(|| "harmonic".into())),
        prior_t: Some(cfg.prior_t.clone().unwrap_or_else(|| "harmonic".into())),
        ..Default::default()
    };
    write_manifest(&out, "switch", seed, Some(&bytes), &echo, &["switch.csv"])
}

fn selftest() -> Result<()> {
    let suites = selfcheck::run_all().map_err(anyhow::Error::msg)?;
    let mut failed = 0;
    for s in &suites {
        println!("{}: {} passed, {} failed", s.name, s.passed, s.failed);
        failed += s.failed;
    }
    if failed > 0 {
        bail!("selftest: {failed} checks failed");
    }
    Ok(())
}
