//! Catch-up curve: byte-level Markov chains of several orders on a text,
//! together with their Bayesian mixture and the switch distribution.

use serde::{Deserialize, Serialize};

use super::{fmt_f64, report_grid, ExperimentError};
use crate::logspace::nats_to_bits;
use crate::predictors::{Family, Outcome};
use crate::prior::{KSchedule, SwitchPriorConfig};
use crate::runner::MixtureRun;

/// Byte alphabet.
pub const BYTE_ALPHABET: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatchupConfig {
    /// Markov orders; strategy k is `orders[k-1]`.
    pub orders: Vec<usize>,
    pub prior: SwitchPriorConfig,
    /// Row spacing; `None` gives the geometric grid.
    pub stride: Option<u64>,
    /// Relative tolerance of the per-row Bayes-chain assertions.
    pub tolerance: f64,
}

impl CatchupConfig {
    /// Default priors over the given orders.
    pub fn new(orders: Vec<usize>) -> Self {
        let prior = SwitchPriorConfig::with_kmax(orders.len());
        Self { orders, prior, stride: None, tolerance: 1e-9 }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.orders.is_empty() {
            return Err(ExperimentError::Config("orders: at least one order is required".into()));
        }
        let mut sorted = self.orders.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.orders.len() {
            return Err(ExperimentError::Config("orders: orders must be distinct".into()));
        }
        if self.prior.schedule != (KSchedule::Constant { kmax: self.orders.len() }) {
            return Err(ExperimentError::Config("kmax: catch-up uses a constant set with one strategy per order".into()));
        }
        Ok(())
    }

    pub fn families(&self) -> Vec<Family> {
        self.orders.iter().map(|&order| Family::Markov { order, alphabet: BYTE_ALPHABET }).collect()
    }

    /// −log₂ π_m(1) − log₂ min_k π_k(k), the most by which the switch code
    /// can exceed the best order.
    pub fn tracking_bound_bits(&self) -> f64 {
        let min_pi = (1..=self.orders.len()).map(|k| self.prior.log_pi_k(k)).fold(f64::INFINITY, f64::min);
        -nats_to_bits(self.prior.log_pi_m_one()) - nats_to_bits(min_pi)
    }
}

/// State of the catch-up run after the first `n` bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct CatchupRow {
    pub n: u64,
    /// −log₂ p̄_k(x^n) per order.
    pub codelen_bits: Vec<f64>,
    /// Sequential code lengths Σ −log₂ p(x_i | x^{i-1}) of the two mixtures.
    pub bma_bits: f64,
    pub switch_bits: f64,
    /// π(K_{n+1} = k | x^n).
    pub posterior: Vec<f64>,
    /// Markov order with the largest posterior.
    pub selected: usize,
}

/// One pass over `bytes`, emitting a row at every grid point.
///
/// Each row is checked against the Bayes chain, the BMA band, posterior
/// normalization and the switch-versus-best-order bound; any violation is an
/// error.
pub fn run_catchup(bytes: &[u8], config: &CatchupConfig) -> Result<Vec<CatchupRow>, ExperimentError> {
    config.validate()?;
    if bytes.is_empty() {
        return Err(ExperimentError::Config("input: corpus is empty".into()));
    }
    let mut run = MixtureRun::new(&config.families(), config.prior.clone())?;
    let grid = report_grid(bytes.len() as u64, config.stride);
    let bound = config.tracking_bound_bits();
    let mut rows = Vec::with_capacity(grid.len());
    let mut next = grid.iter().copied().peekable();
    for (i, &b) in bytes.iter().enumerate() {
        run.step(Outcome::Symbol(b as usize))?;
        let n = i as u64 + 1;
        if next.peek() == Some(&n) {
            next.next();
            let row = snapshot(&run, config)?;
            check_row(&run, &row, bound, config.tolerance)?;
            rows.push(row);
        }
    }
    Ok(rows)
}

fn snapshot(run: &MixtureRun, config: &CatchupConfig) -> Result<CatchupRow, ExperimentError> {
    let posterior = run.switch_posterior()?;
    Ok(CatchupRow {
        n: run.n(),
        codelen_bits: run.strategy_logliks().iter().map(|&l| -nats_to_bits(l)).collect(),
        bma_bits: -nats_to_bits(run.bma_chain_loglik()),
        switch_bits: -nats_to_bits(run.switch_chain_loglik()),
        selected: config.orders[run.selected()? - 1],
        posterior,
    })
}

fn check_row(run: &MixtureRun, row: &CatchupRow, bound: f64, tol: f64) -> Result<(), ExperimentError> {
    let gaps = run.bayes_chain_gaps();
    if !gaps.holds(tol) {
        return Err(ExperimentError::Invariant(format!("Bayes chain fails at n={}: {gaps:?}", row.n)));
    }
    let band = run.bma_band();
    if !band.holds(tol) {
        return Err(ExperimentError::Invariant(format!("BMA band fails at n={}: {band:?}", row.n)));
    }
    let mass: f64 = row.posterior.iter().sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(ExperimentError::Invariant(format!("posterior sums to {mass} at n={}", row.n)));
    }
    let best = row.codelen_bits.iter().copied().fold(f64::INFINITY, f64::min);
    if row.switch_bits > best + bound + tol * row.switch_bits.max(1.0) {
        return Err(ExperimentError::Invariant(format!(
            "switch code length {} exceeds best order {} by more than {bound} bits at n={}",
            row.switch_bits, best, row.n
        )));
    }
    Ok(())
}

/// Header and records of `catchup.csv`.
pub fn catchup_table(orders: &[usize], rows: &[CatchupRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["n".to_string()];
    header.extend(orders.iter().map(|o| format!("codelen_bits_k{o}")));
    header.push("codelen_bits_bma".into());
    header.push("codelen_bits_sw".into());
    header.extend(orders.iter().map(|o| format!("post_k{o}")));
    header.push("selected".into());
    let records = rows
        .iter()
        .map(|r| {
            let mut rec = vec![r.n.to_string()];
            rec.extend(r.codelen_bits.iter().map(|&x| fmt_f64(x)));
            rec.push(fmt_f64(r.bma_bits));
            rec.push(fmt_f64(r.switch_bits));
            rec.extend(r.posterior.iter().map(|&x| fmt_f64(x)));
            rec.push(r.selected.to_string());
            rec
        })
        .collect();
    (header, records)
}

/// Sample sizes at which `a − b` changes sign between consecutive rows, for
/// two code-length columns.
pub fn sign_changes(rows: &[CatchupRow], a: usize, b: usize) -> Vec<u64> {
    let mut out = Vec::new();
    let mut prev: Option<bool> = None;
    for r in rows {
        let d = r.codelen_bits[a] - r.codelen_bits[b];
        if d == 0.0 {
            continue;
        }
        let positive = d > 0.0;
        if prev.is_some_and(|p| p != positive) {
            out.push(r.n);
        }
        prev = Some(positive);
    }
    out
}
