//! Sequential prediction strategies.
//!
//! Each strategy keeps only sufficient statistics and issues a one-step
//! predictive distribution for the next outcome. All built-in families are
//! add-one (Dirichlet(1,…,1)) estimators, so their sequential predictions
//! coincide with the Bayesian predictive under a uniform parameter prior.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::logspace::LogDensity;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PredictorError {
    #[error("symbol {symbol} outside alphabet of size {size}")]
    SymbolOutOfRange { symbol: usize, size: usize },

    #[error("outcome {0} outside the unit interval")]
    OutsideUnitInterval(f64),

    #[error("outcome kind does not match alphabet {0}")]
    WrongOutcomeKind(Alphabet),

    #[error("invalid family parameters: {0}")]
    InvalidFamily(String),

    #[error("context length {got} does not match model order {order}")]
    ContextLength { got: usize, order: usize },

    #[error("incompatible predictive distributions: {0}")]
    Incompatible(String),
}

/// Sample space of a strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Alphabet {
    /// Symbols `0..size`.
    Finite(usize),
    /// Real outcomes in `[0, 1]`.
    UnitInterval,
}

impl fmt::Display for Alphabet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alphabet::Finite(n) => write!(f, "finite({n})"),
            Alphabet::UnitInterval => write!(f, "unit-interval"),
        }
    }
}

impl Alphabet {
    pub fn validate(&self, outcome: Outcome) -> Result<(), PredictorError> {
        match (*self, outcome) {
            (Alphabet::Finite(size), Outcome::Symbol(symbol)) => {
                if symbol < size {
                    Ok(())
                } else {
                    Err(PredictorError::SymbolOutOfRange { symbol, size })
                }
            }
            (Alphabet::UnitInterval, Outcome::Point(x)) => {
                if (0.0..=1.0).contains(&x) {
                    Ok(())
                } else {
                    Err(PredictorError::OutsideUnitInterval(x))
                }
            }
            (a, _) => Err(PredictorError::WrongOutcomeKind(a)),
        }
    }
}

/// A single observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Outcome {
    Symbol(usize),
    Point(f64),
}

impl From<usize> for Outcome {
    fn from(s: usize) -> Self {
        Outcome::Symbol(s)
    }
}

impl From<u8> for Outcome {
    fn from(s: u8) -> Self {
        Outcome::Symbol(s as usize)
    }
}

impl From<f64> for Outcome {
    fn from(x: f64) -> Self {
        Outcome::Point(x)
    }
}

/// Index of the equal-width bin holding `x`.
///
/// Bins are `[0, 1/k]`, `(1/k, 2/k]`, …, `((k-1)/k, 1]`.
pub fn bin_index(x: f64, bins: usize) -> usize {
    if x <= 0.0 {
        return 0;
    }
    let k = bins as f64;
    let mut i = ((x * k).ceil() as usize).saturating_sub(1).min(bins - 1);
    // x·k can round up across a boundary
    if i > 0 && x <= i as f64 / k {
        i -= 1;
    }
    i
}

/// One-step predictive law.
#[derive(Debug, Clone, PartialEq)]
pub enum PredictiveDistribution {
    /// Probability mass per symbol.
    Finite(Vec<f64>),
    /// Piecewise-constant density on `k` equal-width bins of `[0, 1]`.
    Histogram(Vec<f64>),
}

impl PredictiveDistribution {
    /// Probability (finite) or density (histogram) at `outcome`.
    pub fn density(&self, outcome: Outcome) -> Result<f64, PredictorError> {
        match self {
            PredictiveDistribution::Finite(p) => {
                Alphabet::Finite(p.len()).validate(outcome)?;
                let Outcome::Symbol(s) = outcome else { unreachable!() };
                Ok(p[s])
            }
            PredictiveDistribution::Histogram(d) => {
                Alphabet::UnitInterval.validate(outcome)?;
                let Outcome::Point(x) = outcome else { unreachable!() };
                Ok(d[bin_index(x, d.len())])
            }
        }
    }

    /// Total mass: the sum of probabilities, or the bin-width-weighted sum of densities.
    pub fn total_mass(&self) -> f64 {
        match self {
            PredictiveDistribution::Finite(p) => p.iter().sum(),
            PredictiveDistribution::Histogram(d) => d.iter().sum::<f64>() / d.len() as f64,
        }
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.total_mass() - 1.0).abs() <= tol
    }

    fn shape(&self) -> (bool, usize) {
        match self {
            PredictiveDistribution::Finite(p) => (true, p.len()),
            PredictiveDistribution::Histogram(d) => (false, d.len()),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            PredictiveDistribution::Finite(v) | PredictiveDistribution::Histogram(v) => v,
        }
    }

    /// Convex combination `Σ w_i · dists_i`. All distributions must share one shape.
    pub fn mixture(weights: &[f64], dists: &[PredictiveDistribution]) -> Result<Self, PredictorError> {
        if weights.len() != dists.len() || dists.is_empty() {
            return Err(PredictorError::Incompatible(format!(
                "{} weights for {} distributions",
                weights.len(),
                dists.len()
            )));
        }
        let shape = dists[0].shape();
        if let Some(bad) = dists.iter().find(|d| d.shape() != shape) {
            return Err(PredictorError::Incompatible(format!(
                "shape {:?} vs {:?}",
                bad.shape(),
                shape
            )));
        }
        let mut acc = vec![0.0; shape.1];
        for (w, d) in weights.iter().zip(dists) {
            for (a, v) in acc.iter_mut().zip(d.values()) {
                *a += w * v;
            }
        }
        Ok(if shape.0 {
            PredictiveDistribution::Finite(acc)
        } else {
            PredictiveDistribution::Histogram(acc)
        })
    }
}

/// Description of a strategy family with its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Binary outcomes with the Laplace estimator.
    BernoulliLaplace,
    /// Order-`order` Markov chain over `alphabet` symbols, Dirichlet(1,…,1) per context.
    Markov { order: usize, alphabet: usize },
    /// Equal-width histogram with `bins` bins on `[0, 1]`.
    Histogram { bins: usize },
}

impl Family {
    pub fn alphabet(&self) -> Alphabet {
        match *self {
            Family::BernoulliLaplace => Alphabet::Finite(2),
            Family::Markov { alphabet, .. } => Alphabet::Finite(alphabet),
            Family::Histogram { .. } => Alphabet::UnitInterval,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Family::BernoulliLaplace => "bernoulli".to_string(),
            Family::Markov { order, alphabet } => format!("markov{order}/{alphabet}"),
            Family::Histogram { bins } => format!("hist{bins}"),
        }
    }

    /// Fresh state with no observations.
    pub fn state(&self) -> Result<StrategyState, PredictorError> {
        Ok(match *self {
            Family::BernoulliLaplace => StrategyState::Bernoulli(BernoulliCounts::default()),
            Family::Markov { order, alphabet } => {
                StrategyState::Markov(MarkovCounts::new(order, alphabet)?)
            }
            Family::Histogram { bins } => StrategyState::Histogram(HistogramCounts::new(bins)?),
        })
    }
}

/// Counts for the Bernoulli–Laplace estimator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BernoulliCounts {
    pub zeros: u64,
    pub ones: u64,
}

impl BernoulliCounts {
    pub fn new(zeros: u64, ones: u64) -> Self {
        Self { zeros, ones }
    }

    /// P(1) = (n1 + 1) / (n + 2).
    pub fn prob_one(&self) -> f64 {
        (self.ones as f64 + 1.0) / ((self.zeros + self.ones) as f64 + 2.0)
    }

    pub fn predict(&self) -> PredictiveDistribution {
        let total = (self.zeros + self.ones) as f64 + 2.0;
        PredictiveDistribution::Finite(vec![(self.zeros as f64 + 1.0) / total, (self.ones as f64 + 1.0) / total])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ContextCounts {
    total: u64,
    counts: Vec<u32>,
}

/// Sufficient statistics of an order-r Markov chain with add-one smoothing.
///
/// Contexts are keyed by the base-`alphabet` value of the last `order`
/// symbols. The first `order` outcomes have no full context and are
/// predicted uniformly; they are kept only as part of the rolling key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkovCounts {
    order: usize,
    alphabet: usize,
    modulus: u64,
    key: u64,
    seen: u64,
    contexts: HashMap<u64, ContextCounts>,
}

impl MarkovCounts {
    pub fn new(order: usize, alphabet: usize) -> Result<Self, PredictorError> {
        if alphabet == 0 {
            return Err(PredictorError::InvalidFamily("alphabet size must be at least 1".into()));
        }
        let modulus = (alphabet as u64)
            .checked_pow(order as u32)
            .filter(|m| *m <= 1 << 62)
            .ok_or_else(|| {
                PredictorError::InvalidFamily(format!(
                    "alphabet {alphabet} with order {order} overflows the context key"
                ))
            })?;
        Ok(Self {
            order,
            alphabet,
            modulus,
            key: 0,
            seen: 0,
            contexts: HashMap::new(),
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alphabet(&self) -> usize {
        self.alphabet
    }

    fn warming_up(&self) -> bool {
        self.seen < self.order as u64
    }

    fn key_of(&self, context: &[usize]) -> Result<u64, PredictorError> {
        if context.len() != self.order {
            return Err(PredictorError::ContextLength { got: context.len(), order: self.order });
        }
        let mut key = 0u64;
        for &s in context {
            Alphabet::Finite(self.alphabet).validate(Outcome::Symbol(s))?;
            key = key * self.alphabet as u64 + s as u64;
        }
        Ok(key)
    }

    fn predict_key(&self, key: u64) -> PredictiveDistribution {
        let a = self.alphabet as f64;
        match self.contexts.get(&key) {
            None => PredictiveDistribution::Finite(vec![1.0 / a; self.alphabet]),
            Some(c) => {
                let denom = c.total as f64 + a;
                PredictiveDistribution::Finite(
                    c.counts.iter().map(|&n| (n as f64 + 1.0) / denom).collect(),
                )
            }
        }
    }

    fn prob_key(&self, key: u64, symbol: usize) -> f64 {
        match self.contexts.get(&key) {
            None => 1.0 / self.alphabet as f64,
            Some(c) => (c.counts[symbol] as f64 + 1.0) / (c.total as f64 + self.alphabet as f64),
        }
    }

    /// P(· | context) = (count(context, a) + 1) / (total(context) + A).
    pub fn predict_context(&self, context: &[usize]) -> Result<PredictiveDistribution, PredictorError> {
        Ok(self.predict_key(self.key_of(context)?))
    }

    /// Prediction for the next symbol given everything observed so far.
    pub fn predict(&self) -> PredictiveDistribution {
        if self.warming_up() {
            PredictiveDistribution::Finite(vec![1.0 / self.alphabet as f64; self.alphabet])
        } else {
            self.predict_key(self.key)
        }
    }

    pub fn prob(&self, symbol: usize) -> f64 {
        if self.warming_up() {
            1.0 / self.alphabet as f64
        } else {
            self.prob_key(self.key, symbol)
        }
    }

    /// Count of `symbol` after `context`.
    pub fn count(&self, context: &[usize], symbol: usize) -> Result<u32, PredictorError> {
        let key = self.key_of(context)?;
        Ok(self.contexts.get(&key).map_or(0, |c| c.counts[symbol]))
    }

    fn observe(&mut self, symbol: usize) {
        if !self.warming_up() {
            let alphabet = self.alphabet;
            let c = self.contexts.entry(self.key).or_insert_with(|| ContextCounts {
                total: 0,
                counts: vec![0; alphabet],
            });
            c.total += 1;
            c.counts[symbol] += 1;
        }
        if self.order > 0 {
            self.key = (self.key * self.alphabet as u64 + symbol as u64) % self.modulus;
        }
        self.seen += 1;
    }
}

/// Bin counts of an equal-width histogram on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistogramCounts {
    counts: Vec<u64>,
    n: u64,
}

impl HistogramCounts {
    pub fn new(bins: usize) -> Result<Self, PredictorError> {
        if bins == 0 {
            return Err(PredictorError::InvalidFamily("histogram needs at least one bin".into()));
        }
        Ok(Self { counts: vec![0; bins], n: 0 })
    }

    pub fn from_counts(counts: Vec<u64>) -> Result<Self, PredictorError> {
        if counts.is_empty() {
            return Err(PredictorError::InvalidFamily("histogram needs at least one bin".into()));
        }
        let n = counts.iter().sum();
        Ok(Self { counts, n })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn observed(&self) -> u64 {
        self.n
    }

    /// Density ((n_bin + 1) / (n + k)) · k at `x`.
    pub fn density(&self, x: f64) -> Result<f64, PredictorError> {
        Alphabet::UnitInterval.validate(Outcome::Point(x))?;
        let k = self.bins();
        Ok(self.bin_density(bin_index(x, k)))
    }

    fn bin_density(&self, bin: usize) -> f64 {
        let k = self.bins() as f64;
        (self.counts[bin] as f64 + 1.0) / (self.n as f64 + k) * k
    }

    pub fn predict(&self) -> PredictiveDistribution {
        PredictiveDistribution::Histogram((0..self.bins()).map(|b| self.bin_density(b)).collect())
    }

    pub fn observe(&mut self, x: f64) -> Result<(), PredictorError> {
        Alphabet::UnitInterval.validate(Outcome::Point(x))?;
        let b = bin_index(x, self.bins());
        self.counts[b] += 1;
        self.n += 1;
        Ok(())
    }
}

/// Mutable sufficient statistics of one prediction strategy.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyState {
    Bernoulli(BernoulliCounts),
    Markov(MarkovCounts),
    Histogram(HistogramCounts),
}

impl StrategyState {
    pub fn family(&self) -> Family {
        match self {
            StrategyState::Bernoulli(_) => Family::BernoulliLaplace,
            StrategyState::Markov(m) => Family::Markov { order: m.order, alphabet: m.alphabet },
            StrategyState::Histogram(h) => Family::Histogram { bins: h.bins() },
        }
    }

    pub fn alphabet(&self) -> Alphabet {
        self.family().alphabet()
    }

    /// Number of outcomes observed.
    pub fn observed(&self) -> u64 {
        match self {
            StrategyState::Bernoulli(b) => b.zeros + b.ones,
            StrategyState::Markov(m) => m.seen,
            StrategyState::Histogram(h) => h.n,
        }
    }

    pub fn predictive(&self) -> PredictiveDistribution {
        match self {
            StrategyState::Bernoulli(b) => b.predict(),
            StrategyState::Markov(m) => m.predict(),
            StrategyState::Histogram(h) => h.predict(),
        }
    }

    /// Probability or density of `outcome` under the current prediction.
    pub fn predict_density(&self, outcome: Outcome) -> Result<f64, PredictorError> {
        self.alphabet().validate(outcome)?;
        Ok(match (self, outcome) {
            (StrategyState::Bernoulli(b), Outcome::Symbol(s)) => {
                let p1 = b.prob_one();
                if s == 1 {
                    p1
                } else {
                    1.0 - p1
                }
            }
            (StrategyState::Markov(m), Outcome::Symbol(s)) => m.prob(s),
            (StrategyState::Histogram(h), Outcome::Point(x)) => h.bin_density(bin_index(x, h.bins())),
            _ => unreachable!("validated above"),
        })
    }

    /// Natural log of [`StrategyState::predict_density`].
    pub fn log_predict(&self, outcome: Outcome) -> Result<LogDensity, PredictorError> {
        Ok(self.predict_density(outcome)?.ln())
    }

    /// Adds one outcome to the statistics.
    pub fn observe(&mut self, outcome: Outcome) -> Result<(), PredictorError> {
        self.alphabet().validate(outcome)?;
        match (self, outcome) {
            (StrategyState::Bernoulli(b), Outcome::Symbol(s)) => {
                if s == 1 {
                    b.ones += 1
                } else {
                    b.zeros += 1
                }
            }
            (StrategyState::Markov(m), Outcome::Symbol(s)) => m.observe(s),
            (StrategyState::Histogram(h), Outcome::Point(x)) => h.observe(x)?,
            _ => unreachable!("validated above"),
        }
        Ok(())
    }

    /// Log predictive of `outcome`, then observe it.
    pub fn predict_and_observe(&mut self, outcome: Outcome) -> Result<LogDensity, PredictorError> {
        let lp = self.log_predict(outcome)?;
        self.observe(outcome)?;
        Ok(lp)
    }
}

/// Σ_i ln p(x_i | x^{i-1}) accumulated sequentially. Zero for an empty sequence.
pub fn strategy_log_marginal(family: Family, sequence: &[Outcome]) -> Result<LogDensity, PredictorError> {
    let mut state = family.state()?;
    let mut total = 0.0;
    for &x in sequence {
        total += state.predict_and_observe(x)?;
    }
    Ok(total)
}

/// ln(n1! · n0! / (n0 + n1 + 1)!), the Beta(1,1) Bernoulli marginal.
pub fn bernoulli_exact_marginal(zeros: u64, ones: u64) -> LogDensity {
    if zeros + ones == 0 {
        return 0.0;
    }
    let n0 = zeros as f64;
    let n1 = ones as f64;
    ln_gamma(n1 + 1.0) + ln_gamma(n0 + 1.0) - ln_gamma(n0 + n1 + 2.0)
}
