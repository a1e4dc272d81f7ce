//! Forward computation of the switch distribution.
//!
//! For every strategy index k the engine keeps two log weights:
//!
//! - `wa[k]`: ln P(x^n, M_{n+1} = 0, K_{n+1} = k), more switches may follow;
//! - `wb[k]`: ln P(x^n, M_{n+1} = 1, K_{n+1} = k), the last switch has happened.
//!
//! Each outcome costs one loss update and one share update over 𝒦_n, so a run
//! over N outcomes takes time proportional to Σ_n |𝒦_n|.

use thiserror::Error;

use crate::logspace::{log_add_exp, log_sum_exp, normalize_log_weights, LogDensity, LOG_ZERO};
use crate::predictors::{Outcome, PredictiveDistribution, PredictorError};
use crate::prior::{PriorError, SwitchPriorConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchError {
    #[error(transparent)]
    Prior(#[from] PriorError),

    #[error(transparent)]
    Predictor(#[from] PredictorError),

    #[error("expected {expected} log predictives for the active strategy set, got {got}")]
    IndexSet { expected: usize, got: usize },

    #[error("posterior undefined: every weight is zero")]
    UndefinedPosterior,

    #[error("non-finite log predictive {value} for strategy {k}")]
    NonFinite { k: usize, value: f64 },

    #[error("no snapshots to average")]
    EmptyCesaro,
}

/// Log-space weights of the forward recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchWeights {
    wa: Vec<f64>,
    wb: Vec<f64>,
    n: u64,
    log_loss: f64,
}

impl SwitchWeights {
    /// Outcomes consumed so far.
    pub fn n(&self) -> u64 {
        self.n
    }

    /// Number of active strategies, |𝒦_{n+1}|.
    pub fn len(&self) -> usize {
        self.wa.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wa.is_empty()
    }

    /// ln P(x^n, M_{n+1} = 0, K_{n+1} = k) for k = 1..
    pub fn unfrozen(&self) -> &[f64] {
        &self.wa
    }

    /// ln P(x^n, M_{n+1} = 1, K_{n+1} = k) for k = 1..
    pub fn frozen(&self) -> &[f64] {
        &self.wb
    }

    /// ln P(x^n, K_{n+1} = k) for k = 1..
    pub fn joint(&self) -> Vec<f64> {
        self.wa.iter().zip(&self.wb).map(|(&a, &b)| log_add_exp(a, b)).collect()
    }

    /// Σ of ln p_sw(x_i | x^{i-1}) over the consumed outcomes.
    ///
    /// Equals [`marginal_loglik`] whenever π_k sums to one on every 𝒦_n.
    pub fn chain_rule_loglik(&self) -> f64 {
        self.log_loss
    }

    fn total(&self) -> f64 {
        log_add_exp(log_sum_exp(&self.wa), log_sum_exp(&self.wb))
    }
}

/// Initial weights: wa_k = π_k(k)·θ, wb_k = π_k(k)·(1-θ) for k ∈ 𝒦_1.
pub fn switch_init(config: &SwitchPriorConfig) -> Result<SwitchWeights, SwitchError> {
    config.validate()?;
    let size = config.kset_size(1);
    let (lt, lnt) = (config.log_theta(), config.log_one_minus_theta());
    let wa = (1..=size).map(|k| config.log_pi_k(k) + lt).collect();
    let wb = (1..=size).map(|k| config.log_pi_k(k) + lnt).collect();
    Ok(SwitchWeights { wa, wb, n: 0, log_loss: 0.0 })
}

/// Consumes one outcome given ln p_k(x_n | x^{n-1}) for every k ∈ 𝒦_n.
///
/// Returns ln p_sw(x_n | x^{n-1}).
pub fn switch_step(
    weights: &mut SwitchWeights,
    log_predictives: &[f64],
    config: &SwitchPriorConfig,
) -> Result<LogDensity, SwitchError> {
    let active = weights.len();
    if log_predictives.len() != active {
        return Err(SwitchError::IndexSet { expected: active, got: log_predictives.len() });
    }
    if let Some((k, &value)) = log_predictives.iter().enumerate().find(|(_, v)| v.is_nan() || **v == f64::INFINITY) {
        return Err(SwitchError::NonFinite { k: k + 1, value });
    }
    let n = weights.n + 1;
    let (log_switch, log_stay) = config.switch_time_prior.log_hazard(n)?;

    let before = weights.total();
    if before == LOG_ZERO {
        return Err(SwitchError::UndefinedPosterior);
    }

    // loss update
    for ((a, b), &l) in weights.wa.iter_mut().zip(weights.wb.iter_mut()).zip(log_predictives) {
        *a += l;
        *b += l;
    }
    let after = weights.total();

    // share update
    let pool = log_switch + log_sum_exp(&weights.wa);
    let (lt, lnt) = (config.log_theta(), config.log_one_minus_theta());
    let next = config.kset_size(n + 1).max(active);
    weights.wa.resize(next, LOG_ZERO);
    weights.wb.resize(next, LOG_ZERO);
    for k in 1..=next {
        let share = pool + config.log_pi_k(k);
        let a = &mut weights.wa[k - 1];
        *a = log_add_exp(*a + log_stay, share + lt);
        let b = &mut weights.wb[k - 1];
        *b = log_add_exp(*b, share + lnt);
    }

    weights.n = n;
    let step = after - before;
    weights.log_loss += step;
    Ok(step)
}

/// ln p_sw(x^n) = ln Σ_k (wa_k + wb_k).
pub fn marginal_loglik(weights: &SwitchWeights) -> LogDensity {
    weights.total()
}

/// π(K_{n+1} = k | x^n) for k ∈ 𝒦_{n+1}.
pub fn posterior_next(weights: &SwitchWeights) -> Result<Vec<f64>, SwitchError> {
    normalize_log_weights(&weights.joint()).ok_or(SwitchError::UndefinedPosterior)
}

/// 1-based index of the most probable strategy; ties go to the smallest index.
pub fn select_model(posterior: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in posterior.iter().enumerate() {
        if p > posterior[best] {
            best = i;
        }
    }
    best + 1
}

/// One-step predictive of the switch distribution: the posterior mixture of
/// the strategies' predictives.
pub fn switch_predictive(
    weights: &SwitchWeights,
    strategy_predictives: &[PredictiveDistribution],
) -> Result<PredictiveDistribution, SwitchError> {
    let post = posterior_next(weights)?;
    if strategy_predictives.len() < post.len() {
        return Err(SwitchError::IndexSet { expected: post.len(), got: strategy_predictives.len() });
    }
    Ok(PredictiveDistribution::mixture(&post, &strategy_predictives[..post.len()])?)
}

/// Per-step record of a switch run.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchRecord {
    pub n: u64,
    pub log_marginal: f64,
    pub posterior: Vec<f64>,
    pub selected: usize,
}

impl SwitchRecord {
    pub fn of(weights: &SwitchWeights) -> Result<Self, SwitchError> {
        let posterior = posterior_next(weights)?;
        Ok(Self {
            n: weights.n(),
            log_marginal: marginal_loglik(weights),
            selected: select_model(&posterior),
            posterior,
        })
    }
}

/// Records collected along a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SwitchReport {
    pub records: Vec<SwitchRecord>,
}

/// Runs the recursion over a precomputed table `log_predictives[n][k]` and
/// reports after every outcome (including n = 0).
pub fn run_switch(
    config: &SwitchPriorConfig,
    log_predictives: &[Vec<f64>],
) -> Result<(SwitchWeights, SwitchReport), SwitchError> {
    let mut w = switch_init(config)?;
    let mut report = SwitchReport { records: vec![SwitchRecord::of(&w)?] };
    for row in log_predictives {
        let active = w.len();
        if row.len() < active {
            return Err(SwitchError::IndexSet { expected: active, got: row.len() });
        }
        switch_step(&mut w, &row[..active], config)?;
        report.records.push(SwitchRecord::of(&w)?);
    }
    Ok((w, report))
}

/// Cesàro average of the switch predictives issued at prefixes 0..n-1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CesaroPredictor {
    snapshots: Vec<PredictiveDistribution>,
}

impl CesaroPredictor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, predictive: PredictiveDistribution) {
        self.snapshots.push(predictive);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// (1/n) Σ_i p_sw(outcome | x^{i-1}).
    pub fn predict(&self, outcome: Outcome) -> Result<f64, SwitchError> {
        if self.snapshots.is_empty() {
            return Err(SwitchError::EmptyCesaro);
        }
        self.distribution()?.density(outcome).map_err(Into::into)
    }

    /// The averaged predictive distribution.
    pub fn distribution(&self) -> Result<PredictiveDistribution, SwitchError> {
        if self.snapshots.is_empty() {
            return Err(SwitchError::EmptyCesaro);
        }
        let w = vec![1.0 / self.snapshots.len() as f64; self.snapshots.len()];
        Ok(PredictiveDistribution::mixture(&w, &self.snapshots)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::Family;
    use crate::prior::{KSchedule, ModelPrior, SwitchTimePrior};

    fn uniform_cfg(k: usize) -> SwitchPriorConfig {
        SwitchPriorConfig::with_kmax(k).model_prior(ModelPrior::Uniform { size: k })
    }

    #[test]
    fn init_examples() {
        let w = switch_init(&uniform_cfg(2)).unwrap();
        for k in 0..2 {
            assert!((w.unfrozen()[k] - 0.25f64.ln()).abs() < 1e-15);
            assert!((w.frozen()[k] - 0.25f64.ln()).abs() < 1e-15);
        }
        assert!(marginal_loglik(&w).abs() < 1e-15);

        let w0 = switch_init(&uniform_cfg(3).theta(0.0)).unwrap();
        assert!(w0.unfrozen().iter().all(|&a| a == LOG_ZERO));

        let cfg = SwitchPriorConfig::with_kmax(3);
        let post = posterior_next(&switch_init(&cfg).unwrap()).unwrap();
        let z: f64 = (1..=3).map(|k| ModelPrior::Harmonic.mass(k)).sum();
        for k in 1..=3 {
            assert!((post[k - 1] - ModelPrior::Harmonic.mass(k) / z).abs() < 1e-15);
        }
    }

    #[test]
    fn theta_zero_never_switches() {
        let cfg = uniform_cfg(2).theta(0.0);
        let mut w = switch_init(&cfg).unwrap();
        let mut l1 = 0.0;
        let mut l2 = 0.0;
        for i in 0..50 {
            let a = (0.3 + 0.01 * (i % 7) as f64).ln();
            let b = (0.6 - 0.01 * (i % 5) as f64).ln();
            switch_step(&mut w, &[a, b], &cfg).unwrap();
            l1 += a;
            l2 += b;
        }
        let expected = log_add_exp(0.5f64.ln() + l1, 0.5f64.ln() + l2);
        assert!((marginal_loglik(&w) - expected).abs() < 1e-12);
    }

    #[test]
    fn single_strategy_reduces_to_its_marginal() {
        let cfg = SwitchPriorConfig::with_kmax(1).model_prior(ModelPrior::Uniform { size: 1 });
        let mut s = Family::BernoulliLaplace.state().unwrap();
        let mut w = switch_init(&cfg).unwrap();
        let mut direct = 0.0;
        for x in [1usize, 0, 0, 1, 1, 1, 0, 1, 1, 1, 1, 0] {
            let l = s.predict_and_observe(x.into()).unwrap();
            direct += l;
            let step = switch_step(&mut w, &[l], &cfg).unwrap();
            assert!((step - l).abs() < 1e-12);
            assert!((marginal_loglik(&w) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_strategies_keep_uniform_posterior() {
        let cfg = uniform_cfg(3);
        let mut w = switch_init(&cfg).unwrap();
        for i in 0..100 {
            let l = (0.1 + (i % 9) as f64 * 0.1).ln();
            switch_step(&mut w, &[l, l, l], &cfg).unwrap();
            for p in posterior_next(&w).unwrap() {
                assert!((p - 1.0 / 3.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn share_update_conserves_mass() {
        let cfg = uniform_cfg(4).theta(0.3);
        let mut w = switch_init(&cfg).unwrap();
        for i in 0..300 {
            let ls: Vec<f64> = (0..4).map(|k| (0.05 + ((i * 7 + k * 3) % 17) as f64 / 20.0).ln()).collect();
            let before = marginal_loglik(&w);
            let step = switch_step(&mut w, &ls, &cfg).unwrap();
            // after the share update the total equals the loss-updated total
            let after = marginal_loglik(&w);
            assert!(((after - before) - step).abs() < 1e-12, "i={i}");
            assert!((w.chain_rule_loglik() - after).abs() < 1e-9);
        }
    }

    #[test]
    fn mismatched_index_set_is_rejected() {
        let cfg = uniform_cfg(2);
        let mut w = switch_init(&cfg).unwrap();
        assert_eq!(
            switch_step(&mut w, &[0.0], &cfg),
            Err(SwitchError::IndexSet { expected: 2, got: 1 })
        );
        assert!(switch_step(&mut w, &[f64::NAN, 0.0], &cfg).is_err());
        assert_eq!(w.n(), 0);
    }

    #[test]
    fn growing_schedule_adds_strategies_with_pool_mass_only() {
        let cfg = SwitchPriorConfig::with_kmax(3).schedule(KSchedule::Growing { kmax: 3, tau: 0.5 });
        let mut w = switch_init(&cfg).unwrap();
        assert_eq!(w.len(), 1);
        switch_step(&mut w, &[0.5f64.ln()], &cfg).unwrap();
        // 𝒦_2 = {1, 2}
        assert_eq!(w.len(), 2);
        let (ls, _) = cfg.switch_time_prior.log_hazard(1).unwrap();
        let pool = ls + cfg.log_pi_k(1) + cfg.log_theta() + 0.5f64.ln();
        let expected = pool + cfg.log_pi_k(2) + cfg.log_theta();
        assert!((w.unfrozen()[1] - expected).abs() < 1e-12);
        for _ in 0..10 {
            let k = w.len();
            switch_step(&mut w, &vec![0.5f64.ln(); k], &cfg).unwrap();
        }
        assert_eq!(w.len(), 3);
    }

    #[test]
    fn selection_ties_favor_smaller_index() {
        assert_eq!(select_model(&[0.5, 0.5]), 1);
        assert_eq!(select_model(&[0.2, 0.8]), 2);
        assert_eq!(select_model(&[0.1, 0.45, 0.45]), 2);
        let raw = [3.0, 7.0, 1.0];
        let scaled: Vec<f64> = raw.iter().map(|x| x * 1e-200).collect();
        assert_eq!(select_model(&raw), select_model(&scaled));
    }

    #[test]
    fn all_zero_weights_have_no_posterior() {
        let cfg = uniform_cfg(2);
        let mut w = switch_init(&cfg).unwrap();
        switch_step(&mut w, &[LOG_ZERO, LOG_ZERO], &cfg).unwrap();
        assert_eq!(posterior_next(&w), Err(SwitchError::UndefinedPosterior));
        assert_eq!(switch_step(&mut w, &[0.0, 0.0], &cfg), Err(SwitchError::UndefinedPosterior));
    }

    #[test]
    fn geometric_time_prior_runs() {
        let cfg = uniform_cfg(2).switch_time_prior(SwitchTimePrior::Geometric { rho: 0.9 });
        let mut w = switch_init(&cfg).unwrap();
        for _ in 0..1000 {
            switch_step(&mut w, &[0.4f64.ln(), 0.6f64.ln()], &cfg).unwrap();
        }
        let post = posterior_next(&w).unwrap();
        assert!(post[1] > 0.99);
    }

    #[test]
    fn cesaro_examples() {
        let a = PredictiveDistribution::Finite(vec![0.2, 0.8]);
        let b = PredictiveDistribution::Finite(vec![0.6, 0.4]);
        let mut c = CesaroPredictor::new();
        assert_eq!(c.predict(Outcome::Symbol(0)), Err(SwitchError::EmptyCesaro));
        c.push(a.clone());
        assert_eq!(c.predict(Outcome::Symbol(1)).unwrap(), 0.8);
        c.push(b);
        assert!((c.predict(Outcome::Symbol(1)).unwrap() - 0.6).abs() < 1e-15);
        assert!(c.distribution().unwrap().is_normalized(1e-12));

        let mut same = CesaroPredictor::new();
        for _ in 0..5 {
            same.push(a.clone());
        }
        assert!((same.predict(Outcome::Symbol(0)).unwrap() - 0.2).abs() < 1e-15);

        c.push(PredictiveDistribution::Histogram(vec![1.0]));
        assert!(matches!(c.predict(Outcome::Symbol(0)), Err(SwitchError::Predictor(_))));
    }

    #[test]
    fn switch_predictive_matches_step_probability() {
        let cfg = SwitchPriorConfig::with_kmax(2);
        let fams = [Family::BernoulliLaplace, Family::Markov { order: 1, alphabet: 2 }];
        let mut states: Vec<_> = fams.iter().map(|f| f.state().unwrap()).collect();
        let mut w = switch_init(&cfg).unwrap();
        for x in [0usize, 1, 1, 0, 1, 1, 1, 0, 0, 1] {
            let preds: Vec<_> = states.iter().map(|s| s.predictive()).collect();
            let mix = switch_predictive(&w, &preds).unwrap();
            assert!(mix.is_normalized(1e-12));
            let ls: Vec<f64> = states.iter_mut().map(|s| s.predict_and_observe(x.into()).unwrap()).collect();
            let step = switch_step(&mut w, &ls, &cfg).unwrap();
            assert!((step.exp() - mix.density(x.into()).unwrap()).abs() < 1e-12);
        }
    }
}
