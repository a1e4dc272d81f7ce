//! Bayesian model averaging, the data-independent ⌈n^{1/3}⌉ histogram
//! criterion, and a Monte Carlo check of the no-hypercompression inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logspace::{log_sum_exp, normalize_log_weights, LogDensity, LOG_ZERO};
use crate::predictors::{Family, Outcome, PredictiveDistribution, PredictorError};
use crate::prior::{PriorError, SwitchPriorConfig};
use crate::runner::{MixtureRun, RunError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BmaError {
    #[error("expected {expected} log predictives, got {got}")]
    Length { expected: usize, got: usize },

    #[error("every model weight is zero")]
    AllZero,

    #[error(transparent)]
    Prior(#[from] PriorError),
}

/// Log weights ln π_k(k) + ln p̄_k(x^n) of Bayesian model averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct BmaState {
    log_weights: Vec<f64>,
    n: u64,
}

impl BmaState {
    /// Weights start at the model prior restricted to `1..=models`.
    pub fn new(config: &SwitchPriorConfig, models: usize) -> Result<Self, BmaError> {
        config.model_prior.validate(models)?;
        Ok(Self { log_weights: (1..=models).map(|k| config.log_pi_k(k)).collect(), n: 0 })
    }

    pub fn from_log_prior(log_prior: Vec<f64>) -> Self {
        Self { log_weights: log_prior, n: 0 }
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// ln p_bma(x^n) = ln Σ_k π_k(k) p̄_k(x^n).
    pub fn log_marginal(&self) -> LogDensity {
        log_sum_exp(&self.log_weights)
    }

    /// w(k | x^n).
    pub fn posterior(&self) -> Result<Vec<f64>, BmaError> {
        normalize_log_weights(&self.log_weights).ok_or(BmaError::AllZero)
    }

    /// Posterior mixture of the models' one-step predictives.
    pub fn predictive(&self, predictives: &[PredictiveDistribution]) -> Result<PredictiveDistribution, PredictorError> {
        let post = self.posterior().map_err(|e| PredictorError::Incompatible(e.to_string()))?;
        PredictiveDistribution::mixture(&post, predictives)
    }
}

/// Multiplies each weight by its model's predictive probability of x_n.
///
/// Returns ln p_bma(x_n | x^{n-1}).
pub fn bma_step(state: &mut BmaState, log_predictives: &[f64]) -> Result<LogDensity, BmaError> {
    if log_predictives.len() != state.log_weights.len() {
        return Err(BmaError::Length { expected: state.log_weights.len(), got: log_predictives.len() });
    }
    let before = state.log_marginal();
    if before == LOG_ZERO {
        return Err(BmaError::AllZero);
    }
    for (w, l) in state.log_weights.iter_mut().zip(log_predictives) {
        *w += l;
    }
    state.n += 1;
    Ok(state.log_marginal() - before)
}

/// ⌈n^{1/3}⌉, with n = 0 mapped to one bin.
pub fn cuberoot_criterion(n: u64) -> usize {
    if n <= 1 {
        return 1;
    }
    let mut k = (n as f64).cbrt().ceil() as u64;
    while k > 1 && (k - 1).pow(3) >= n {
        k -= 1;
    }
    while k.pow(3) < n {
        k += 1;
    }
    k as usize
}

/// Which of the two mixtures generates the data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleFrom {
    /// Sample from BMA; ask how often the switch distribution beats it.
    Bma,
    /// Sample from the switch distribution; ask how often BMA beats it.
    Switch,
}

/// Result of a no-hypercompression run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercompressionOutcome {
    pub trials: usize,
    pub hits: usize,
    pub frequency: f64,
    /// 2^{-margin} + 3 binomial standard errors.
    pub bound: f64,
    pub passed: bool,
}

/// Samples `trials` sequences of length `n` from one mixture and records how
/// often the other mixture assigns a code length at least `margin_bits`
/// shorter.
///
/// Code lengths are the chain-rule sums of each mixture's one-step
/// predictives, which are proper distributions over sequences; the sampled
/// symbol is drawn from the exact mixture predictive. Trial `i` uses ChaCha20
/// stream `i` of `seed`.
pub fn no_hypercompression_check(
    families: &[Family],
    config: &SwitchPriorConfig,
    n: usize,
    trials: usize,
    margin_bits: f64,
    sample_from: SampleFrom,
    seed: u64,
) -> Result<HypercompressionOutcome, RunError> {
    if trials == 0 {
        return Err(RunError::Config("trials must be at least 1".into()));
    }
    let margin_nats = margin_bits * std::f64::consts::LN_2;
    let mut hits = 0;
    for trial in 0..trials {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(trial as u64);
        let mut run = MixtureRun::new(families, config.clone())?;
        for _ in 0..n {
            let dist = match sample_from {
                SampleFrom::Bma => run.bma_predictive()?,
                SampleFrom::Switch => run.switch_predictive()?,
            };
            let PredictiveDistribution::Finite(probs) = dist else {
                return Err(RunError::Config("hypercompression check needs a finite alphabet".into()));
            };
            let symbol = sample_index(&probs, rng.random::<f64>());
            run.step(Outcome::Symbol(symbol))?;
        }
        let (sampler, rival) = match sample_from {
            SampleFrom::Bma => (run.bma_chain_loglik(), run.switch_chain_loglik()),
            SampleFrom::Switch => (run.switch_chain_loglik(), run.bma_chain_loglik()),
        };
        if rival - sampler >= margin_nats {
            hits += 1;
        }
    }
    let p0 = (-margin_bits).exp2().min(1.0);
    let se = (p0 * (1.0 - p0) / trials as f64).sqrt();
    let bound = p0 + 3.0 * se;
    let frequency = hits as f64 / trials as f64;
    Ok(HypercompressionOutcome { trials, hits, frequency, bound, passed: frequency <= bound })
}

/// Inverse-CDF draw of an index from a probability vector.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding slack above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}
