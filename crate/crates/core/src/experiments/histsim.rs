//! Monte Carlo estimates of cumulative redundancy for histogram density
//! estimators on a known source.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sources::{sample_source, KlEvaluator, SourceDensity};
use super::{fmt_f64, mean_se, report_grid, with_workers, ExperimentError};
use crate::baselines::cuberoot_criterion;
use crate::predictors::{Family, HistogramCounts, Outcome, PredictiveDistribution, StrategyState};
use crate::prior::{KSchedule, ModelPrior, SwitchPriorConfig, SwitchTimePrior};
use crate::runner::MixtureRun;

/// A density estimator compared in the risk experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Switch distribution over histograms with 1..=K_max bins.
    Switch,
    /// Bayesian model averaging over the same histograms.
    Bma,
    /// ⌈n^{1/3}⌉ bins after n observations.
    CubeRoot,
    /// A single histogram with a fixed number of bins.
    Fixed(usize),
}

impl Estimator {
    pub fn label(&self) -> String {
        match self {
            Estimator::Switch => "switch".into(),
            Estimator::Bma => "bma".into(),
            Estimator::CubeRoot => "cuberoot".into(),
            Estimator::Fixed(k) => format!("fixed_k{k}"),
        }
    }
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Estimator {
    type Err = ExperimentError;

    /// `switch`, `bma`, `cuberoot`, or `fixed:k` / `fixed_k<k>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let fixed = s.strip_prefix("fixed:").or_else(|| s.strip_prefix("fixed_k"));
        match (s, fixed) {
            ("switch", _) => Ok(Estimator::Switch),
            ("bma", _) => Ok(Estimator::Bma),
            ("cuberoot", _) => Ok(Estimator::CubeRoot),
            (_, Some(k)) => match k.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Estimator::Fixed(k)),
                _ => Err(ExperimentError::Config(format!("estimators: bad bin count in `{s}`"))),
            },
            _ => Err(ExperimentError::Config(format!("estimators: unknown estimator `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistsimConfig {
    pub density: SourceDensity,
    pub n_max: u64,
    pub replicates: usize,
    pub estimators: Vec<Estimator>,
    /// Largest histogram in the switch and BMA sets; defaults to ⌈√n_max⌉.
    pub kmax: Option<usize>,
    pub theta: f64,
    pub model_prior: ModelPrior,
    pub switch_time_prior: SwitchTimePrior,
    pub stride: Option<u64>,
    pub seed: u64,
    pub workers: Option<usize>,
}

impl HistsimConfig {
    pub fn new(density: SourceDensity, n_max: u64, replicates: usize, seed: u64) -> Self {
        Self {
            density,
            n_max,
            replicates,
            estimators: vec![Estimator::Switch, Estimator::Bma, Estimator::CubeRoot],
            kmax: None,
            theta: 0.5,
            model_prior: ModelPrior::Harmonic,
            switch_time_prior: SwitchTimePrior::Harmonic,
            stride: None,
            seed,
            workers: None,
        }
    }

    pub fn effective_kmax(&self) -> usize {
        self.kmax.unwrap_or_else(|| ((self.n_max as f64).sqrt().ceil() as usize).max(1))
    }

    pub fn prior(&self) -> SwitchPriorConfig {
        SwitchPriorConfig {
            theta: self.theta,
            model_prior: self.model_prior.clone(),
            switch_time_prior: self.switch_time_prior.clone(),
            schedule: KSchedule::Constant { kmax: self.effective_kmax() },
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.density.validate()?;
        if self.n_max == 0 {
            return Err(ExperimentError::Config("n_max: must be at least 1".into()));
        }
        if self.replicates == 0 {
            return Err(ExperimentError::Config("replicates: must be at least 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(ExperimentError::Config("estimators: at least one estimator is required".into()));
        }
        if self.kmax == Some(0) {
            return Err(ExperimentError::Config("kmax: must be at least 1".into()));
        }
        self.prior().validate().map_err(|e| ExperimentError::Config(format!("prior: {e}")))
    }
}

/// Mean cumulative redundancy of one estimator over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskCurve {
    pub estimator: String,
    pub grid: Vec<u64>,
    /// Bits.
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistsimOutput {
    pub grid: Vec<u64>,
    pub curves: Vec<RiskCurve>,
    /// Switch posterior mass on the 1-bin histogram, `[replicate][grid]`;
    /// empty unless the switch estimator ran.
    pub switch_post_k1: Vec<Vec<f64>>,
}

impl HistsimOutput {
    pub fn curve(&self, estimator: Estimator) -> Option<&RiskCurve> {
        let label = estimator.label();
        self.curves.iter().find(|c| c.estimator == label)
    }
}

struct ReplicateResult {
    /// `[estimator][grid]`, bits.
    redundancy: Vec<Vec<f64>>,
    post_k1: Vec<f64>,
}

/// ⌈n^{1/3}⌉-bin histogram refitted whenever the bin count changes.
struct CubeRootHistogram {
    counts: HistogramCounts,
}

impl CubeRootHistogram {
    fn log_predict(&mut self, past: &[f64], x: f64) -> Result<f64, ExperimentError> {
        let k = cuberoot_criterion(past.len() as u64);
        if k != self.counts.bins() {
            let mut fresh = HistogramCounts::new(k)?;
            for &y in past {
                fresh.observe(y)?;
            }
            self.counts = fresh;
        }
        let d = self.counts.density(x)?;
        self.counts.observe(x)?;
        Ok(d.ln())
    }
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn run_replicate(cfg: &HistsimConfig, grid: &[u64], replicate: usize) -> Result<ReplicateResult, ExperimentError> {
    let mut rng = replicate_rng(cfg.seed, replicate);
    let xs: Vec<f64> = (0..cfg.n_max).map(|_| sample_source(&cfg.density, &mut rng)).collect();

    let needs_mixture = cfg.estimators.iter().any(|e| matches!(e, Estimator::Switch | Estimator::Bma));
    let mut mixture = if needs_mixture {
        let families: Vec<Family> = (1..=cfg.effective_kmax()).map(|bins| Family::Histogram { bins }).collect();
        Some(MixtureRun::new(&families, cfg.prior())?)
    } else {
        None
    };
    let mut cube = CubeRootHistogram { counts: HistogramCounts::new(1)? };
    let mut fixed: Vec<(usize, StrategyState, f64)> = Vec::new();
    for e in &cfg.estimators {
        if let Estimator::Fixed(k) = *e {
            fixed.push((k, Family::Histogram { bins: k }.state()?, 0.0));
        }
    }

    let mut truth = 0.0;
    let mut cube_cum = 0.0;
    let mut redundancy = vec![Vec::with_capacity(grid.len()); cfg.estimators.len()];
    let mut post_k1 = Vec::new();
    let mut next = grid.iter().copied().peekable();
    for (i, &x) in xs.iter().enumerate() {
        truth += cfg.density.density(x).ln();
        if let Some(m) = mixture.as_mut() {
            m.step(Outcome::Point(x))?;
        }
        if cfg.estimators.contains(&Estimator::CubeRoot) {
            cube_cum += cube.log_predict(&xs[..i], x)?;
        }
        for (_, state, cum) in fixed.iter_mut() {
            *cum += state.predict_and_observe(Outcome::Point(x))?;
        }
        let n = i as u64 + 1;
        if next.peek() != Some(&n) {
            continue;
        }
        next.next();
        let mut fixed_iter = fixed.iter();
        for (e, out) in cfg.estimators.iter().zip(redundancy.iter_mut()) {
            let est = match e {
                Estimator::Switch => mixture.as_ref().map_or(0.0, |m| m.switch_chain_loglik()),
                Estimator::Bma => mixture.as_ref().map_or(0.0, |m| m.bma_chain_loglik()),
                Estimator::CubeRoot => cube_cum,
                Estimator::Fixed(_) => fixed_iter.next().map_or(0.0, |f| f.2),
            };
            out.push((truth - est) / std::f64::consts::LN_2);
        }
        if cfg.estimators.contains(&Estimator::Switch) {
            if let Some(m) = mixture.as_ref() {
                post_k1.push(m.switch_posterior()?[0]);
            }
        }
    }
    Ok(ReplicateResult { redundancy, post_k1 })
}

/// Samples `replicates` i.i.d. sequences of length `n_max` and averages the
/// realized redundancy log₂ p*(x^n) − log₂ p̂(x^n) of each estimator, with
/// p̂(x^n) the product of its one-step predictive densities.
///
/// Replicate r draws from ChaCha20 stream r of `seed`, so results do not
/// depend on the number of workers.
pub fn run_histsim(cfg: &HistsimConfig) -> Result<HistsimOutput, ExperimentError> {
    cfg.validate()?;
    let grid = report_grid(cfg.n_max, cfg.stride);
    let results: Vec<ReplicateResult> = with_workers(cfg.workers, || {
        (0..cfg.replicates)
            .into_par_iter()
            .map(|r| run_replicate(cfg, &grid, r))
            .collect::<Result<Vec<_>, _>>()
    })??;

    let curves = cfg
        .estimators
        .iter()
        .enumerate()
        .map(|(e, est)| {
            let (mean, se): (Vec<f64>, Vec<f64>) = (0..grid.len())
                .map(|g| {
                    let xs: Vec<f64> = results.iter().map(|r| r.redundancy[e][g]).collect();
                    mean_se(&xs)
                })
                .unzip();
            RiskCurve { estimator: est.label(), grid: grid.clone(), mean, se, replicates: cfg.replicates, seed: cfg.seed }
        })
        .collect();
    let switch_post_k1 = results.into_iter().map(|r| r.post_k1).filter(|p| !p.is_empty()).collect();
    Ok(HistsimOutput { grid, curves, switch_post_k1 })
}

/// Header and records of `histsim.csv`, ordered by n then estimator.
pub fn histsim_table(output: &HistsimOutput) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["n", "estimator", "redundancy_bits_mean", "redundancy_bits_se", "replicates"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut records = Vec::new();
    for (g, n) in output.grid.iter().enumerate() {
        for c in &output.curves {
            records.push(vec![
                n.to_string(),
                c.estimator.clone(),
                fmt_f64(c.mean[g]),
                fmt_f64(c.se[g]),
                c.replicates.to_string(),
            ]);
        }
    }
    (header, records)
}

/// Two estimates of the cumulative redundancy R_n of one histogram strategy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    /// Mean of log₂ p*(x^n) − log₂ p̂(x^n).
    pub realized_mean: f64,
    pub realized_se: f64,
    /// Mean of Σ_i D(p* ‖ p̂(· | x^{i-1})).
    pub kl_mean: f64,
    pub kl_se: f64,
}

impl CrossCheck {
    pub fn pooled_se(&self) -> f64 {
        self.realized_se.hypot(self.kl_se)
    }

    /// |realized − KL| ≤ `sigmas` pooled standard errors.
    pub fn agrees(&self, sigmas: f64) -> bool {
        (self.realized_mean - self.kl_mean).abs() <= sigmas * self.pooled_se()
    }
}

/// Estimates R_n of a histogram strategy both from realized log ratios and
/// from per-step KL risks along the same trajectories.
pub fn cross_check_redundancy(
    density: &SourceDensity,
    strategy: Family,
    n: u64,
    replicates: usize,
    seed: u64,
) -> Result<CrossCheck, ExperimentError> {
    density.validate()?;
    if !matches!(strategy, Family::Histogram { .. }) {
        return Err(ExperimentError::Config("strategy: cross-check needs a histogram strategy".into()));
    }
    if replicates == 0 {
        return Err(ExperimentError::Config("replicates: must be at least 1".into()));
    }
    let eval = KlEvaluator::new(density);
    let per_rep: Vec<(f64, f64)> = (0..replicates)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64), ExperimentError> {
            let mut rng = replicate_rng(seed, r);
            let mut state = strategy.state()?;
            let (mut realized, mut kl) = (0.0, 0.0);
            for _ in 0..n {
                let PredictiveDistribution::Histogram(heights) = state.predictive() else {
                    unreachable!("histogram strategies issue histogram predictives");
                };
                kl += eval.kl_bits(&heights)?;
                let x = sample_source(density, &mut rng);
                let lp = state.predict_and_observe(Outcome::Point(x))?;
                realized += (density.density(x).ln() - lp) / std::f64::consts::LN_2;
            }
            Ok((realized, kl))
        })
        .collect::<Result<_, _>>()?;
    let (realized, kl): (Vec<f64>, Vec<f64>) = per_rep.into_iter().unzip();
    let (realized_mean, realized_se) = mean_se(&realized);
    let (kl_mean, kl_se) = mean_se(&kl);
    Ok(CrossCheck { realized_mean, realized_se, kl_mean, kl_se })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> SourceDensity {
        SourceDensity::Linear { a: 0.5, b: 1.0 }
    }

    #[test]
    fn estimator_labels_round_trip() {
        for e in [Estimator::Switch, Estimator::Bma, Estimator::CubeRoot, Estimator::Fixed(7)] {
            assert_eq!(e.label().parse::<Estimator>().unwrap(), e);
        }
        assert_eq!("fixed:3".parse::<Estimator>().unwrap(), Estimator::Fixed(3));
        assert!("fixed:0".parse::<Estimator>().is_err());
        assert!("mdl".parse::<Estimator>().is_err());
    }

    #[test]
    fn one_bin_on_uniform_is_exact() {
        let mut cfg = HistsimConfig::new(SourceDensity::Uniform, 300, 3, 5);
        cfg.estimators = vec![Estimator::Fixed(1)];
        let out = run_histsim(&cfg).unwrap();
        let c = out.curve(Estimator::Fixed(1)).unwrap();
        assert!(c.mean.iter().all(|&m| m == 0.0));
        assert!(c.se.iter().all(|&s| s == 0.0));
        assert!(out.switch_post_k1.is_empty());
    }

    #[test]
    fn deterministic_across_worker_counts() {
        let mut cfg = HistsimConfig::new(linear(), 400, 4, 9);
        cfg.estimators = vec![Estimator::Switch, Estimator::Bma, Estimator::CubeRoot, Estimator::Fixed(3)];
        cfg.workers = Some(1);
        let a = run_histsim(&cfg).unwrap();
        cfg.workers = Some(3);
        let b = run_histsim(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(histsim_table(&a), histsim_table(&b));
    }

    #[test]
    fn switch_within_floor_of_bma_per_grid_point() {
        let mut cfg = HistsimConfig::new(linear(), 500, 3, 1);
        cfg.estimators = vec![Estimator::Switch, Estimator::Bma];
        let out = run_histsim(&cfg).unwrap();
        let sw = out.curve(Estimator::Switch).unwrap();
        let bma = out.curve(Estimator::Bma).unwrap();
        for g in 0..out.grid.len() {
            assert!(sw.mean[g] <= bma.mean[g] + 1.0 + 1e-9);
        }
        assert_eq!(out.switch_post_k1.len(), 3);
    }

    #[test]
    fn cube_root_refits_on_schedule() {
        let xs = [0.1, 0.9, 0.4, 0.6, 0.3, 0.8, 0.2, 0.7, 0.55, 0.45];
        let mut c = CubeRootHistogram { counts: HistogramCounts::new(1).unwrap() };
        for i in 0..xs.len() {
            let lp = c.log_predict(&xs[..i], xs[i]).unwrap();
            let k = cuberoot_criterion(i as u64);
            assert_eq!(c.counts.bins(), k);
            let mut fresh = HistogramCounts::new(k).unwrap();
            for &y in &xs[..i] {
                fresh.observe(y).unwrap();
            }
            assert!((lp - fresh.density(xs[i]).unwrap().ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_check_trivial_and_single_replicate() {
        let c = cross_check_redundancy(&SourceDensity::Uniform, Family::Histogram { bins: 1 }, 200, 4, 3).unwrap();
        assert_eq!((c.realized_mean, c.kl_mean), (0.0, 0.0));
        let one = cross_check_redundancy(&linear(), Family::Histogram { bins: 4 }, 200, 1, 3).unwrap();
        assert_eq!(one.pooled_se(), 0.0);
        assert_ne!(one.realized_mean, one.kl_mean);
        assert!(cross_check_redundancy(&linear(), Family::BernoulliLaplace, 10, 2, 3).is_err());
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut cfg = HistsimConfig::new(linear(), 100, 0, 1);
        assert!(run_histsim(&cfg).is_err());
        cfg.replicates = 2;
        cfg.theta = 1.0;
        assert!(run_histsim(&cfg).is_err());
        cfg.theta = 0.5;
        cfg.estimators.clear();
        assert!(run_histsim(&cfg).is_err());
    }
}
