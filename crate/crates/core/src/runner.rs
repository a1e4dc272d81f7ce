//! Sequential driver that feeds one outcome stream to a set of strategies,
//! the switch distribution and Bayesian model averaging at once.

use thiserror::Error;

use crate::baselines::{bma_step, BmaError, BmaState};
use crate::logspace::{log_sum_exp, LogDensity};
use crate::predictors::{Family, Outcome, PredictiveDistribution, PredictorError, StrategyState};
use crate::prior::{PriorError, SwitchPriorConfig};
use crate::switch::{
    marginal_loglik, posterior_next, select_model, switch_init, switch_predictive, switch_step, SwitchError,
    SwitchWeights,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RunError {
    #[error(transparent)]
    Predictor(#[from] PredictorError),

    #[error(transparent)]
    Switch(#[from] SwitchError),

    #[error(transparent)]
    Bma(#[from] BmaError),

    #[error(transparent)]
    Prior(#[from] PriorError),

    #[error("{0}")]
    Config(String),
}

/// Gaps in the chain ln p_sw ≥ ln(1-θ) + ln p_bma ≥ ln(1-θ) + ln π_k(k) + ln p̄_k,
/// with BMA taken over the initial strategy set 𝒦_1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesChainGaps {
    /// ln p_sw(x^n) − ln(1-θ) − ln p_bma(x^n).
    pub switch_over_bma: f64,
    /// min over k of ln p_bma(x^n) − ln π_k(k) − ln p̄_k(x^n).
    pub bma_over_each: f64,
    /// max(1, |ln p_sw(x^n)|).
    pub scale: f64,
}

impl BayesChainGaps {
    /// Both gaps are at least −tol·scale. Accumulated log-likelihoods carry
    /// rounding error proportional to their magnitude, hence the scale.
    pub fn holds(&self, tol: f64) -> bool {
        let slack = tol * self.scale;
        self.switch_over_bma >= -slack && self.bma_over_each >= -slack
    }
}

/// Position of BMA relative to the best single model k̂ (largest p̄_k).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BmaBand {
    /// 1-based.
    pub best: usize,
    /// ln p̄_k̂(x^n) − ln p_bma(x^n), in nats.
    pub excess: f64,
    /// −ln π_k(k̂), in nats.
    pub upper: f64,
    /// max(1, |ln p_bma(x^n)|).
    pub scale: f64,
}

impl BmaBand {
    /// Tolerance is relative to `scale`, as for [`BayesChainGaps::holds`].
    pub fn holds(&self, tol: f64) -> bool {
        let slack = tol * self.scale;
        self.excess >= -slack && self.excess <= self.upper + slack
    }
}

/// Strategies, switch weights and BMA weights advanced in lockstep.
#[derive(Debug, Clone)]
pub struct MixtureRun {
    config: SwitchPriorConfig,
    states: Vec<StrategyState>,
    switch: SwitchWeights,
    bma: BmaState,
    bma_chain: f64,
    strategy_logliks: Vec<f64>,
    scratch: Vec<f64>,
}

impl MixtureRun {
    /// `families[k-1]` is strategy k; the schedule's `kmax` must match.
    pub fn new(families: &[Family], config: SwitchPriorConfig) -> Result<Self, RunError> {
        config.validate()?;
        if families.is_empty() {
            return Err(RunError::Config("at least one strategy is required".into()));
        }
        if config.schedule.kmax() != families.len() {
            return Err(RunError::Config(format!(
                "kmax is {} but {} strategies were given",
                config.schedule.kmax(),
                families.len()
            )));
        }
        let alphabet = families[0].alphabet();
        if let Some(f) = families.iter().find(|f| f.alphabet() != alphabet) {
            return Err(RunError::Config(format!("{} does not share the alphabet {alphabet}", f.label())));
        }
        let states = families.iter().map(|f| f.state()).collect::<Result<Vec<_>, _>>()?;
        let switch = switch_init(&config)?;
        let bma = BmaState::new(&config, families.len())?;
        Ok(Self {
            strategy_logliks: vec![0.0; families.len()],
            scratch: vec![0.0; families.len()],
            config,
            states,
            switch,
            bma,
            bma_chain: 0.0,
        })
    }

    pub fn config(&self) -> &SwitchPriorConfig {
        &self.config
    }

    pub fn n(&self) -> u64 {
        self.switch.n()
    }

    pub fn strategies(&self) -> &[StrategyState] {
        &self.states
    }

    pub fn switch_weights(&self) -> &SwitchWeights {
        &self.switch
    }

    pub fn bma(&self) -> &BmaState {
        &self.bma
    }

    /// Consumes one outcome. Returns ln p_sw(x_n | x^{n-1}).
    pub fn step(&mut self, outcome: Outcome) -> Result<LogDensity, RunError> {
        for (l, s) in self.scratch.iter_mut().zip(&self.states) {
            *l = s.log_predict(outcome)?;
        }
        let active = self.switch.len();
        let step = switch_step(&mut self.switch, &self.scratch[..active], &self.config)?;
        self.bma_chain += bma_step(&mut self.bma, &self.scratch)?;
        for ((cum, l), s) in self.strategy_logliks.iter_mut().zip(&self.scratch).zip(self.states.iter_mut()) {
            *cum += l;
            s.observe(outcome)?;
        }
        Ok(step)
    }

    /// ln p̄_k(x^n) for every strategy.
    pub fn strategy_logliks(&self) -> &[f64] {
        &self.strategy_logliks
    }

    /// ln p_sw(x^n) summed over all paths.
    pub fn switch_loglik(&self) -> f64 {
        marginal_loglik(&self.switch)
    }

    /// Σ ln p_sw(x_i | x^{i-1}).
    pub fn switch_chain_loglik(&self) -> f64 {
        self.switch.chain_rule_loglik()
    }

    /// ln Σ_k π_k(k) p̄_k(x^n).
    pub fn bma_loglik(&self) -> f64 {
        self.bma.log_marginal()
    }

    /// Σ ln p_bma(x_i | x^{i-1}).
    pub fn bma_chain_loglik(&self) -> f64 {
        self.bma_chain
    }

    /// π(K_{n+1} = k | x^n) over the active strategies.
    pub fn switch_posterior(&self) -> Result<Vec<f64>, RunError> {
        Ok(posterior_next(&self.switch)?)
    }

    pub fn bma_posterior(&self) -> Result<Vec<f64>, RunError> {
        Ok(self.bma.posterior()?)
    }

    /// 1-based MAP strategy under the switch posterior.
    pub fn selected(&self) -> Result<usize, RunError> {
        Ok(select_model(&self.switch_posterior()?))
    }

    pub fn strategy_predictives(&self) -> Vec<PredictiveDistribution> {
        self.states.iter().map(StrategyState::predictive).collect()
    }

    pub fn switch_predictive(&self) -> Result<PredictiveDistribution, RunError> {
        Ok(switch_predictive(&self.switch, &self.strategy_predictives())?)
    }

    pub fn bma_predictive(&self) -> Result<PredictiveDistribution, RunError> {
        Ok(self.bma.predictive(&self.strategy_predictives())?)
    }

    pub fn bayes_chain_gaps(&self) -> BayesChainGaps {
        let initial = self.config.kset_size(1).min(self.states.len());
        let bma = log_sum_exp(&self.bma.log_weights()[..initial]);
        let switch_over_bma = self.switch_loglik() - self.config.log_one_minus_theta() - bma;
        let bma_over_each = (1..=initial)
            .map(|k| bma - self.config.log_pi_k(k) - self.strategy_logliks[k - 1])
            .fold(f64::INFINITY, f64::min);
        BayesChainGaps { switch_over_bma, bma_over_each, scale: self.switch_loglik().abs().max(1.0) }
    }

    pub fn bma_band(&self) -> BmaBand {
        let mut best = 0;
        for (i, &l) in self.strategy_logliks.iter().enumerate() {
            if l > self.strategy_logliks[best] {
                best = i;
            }
        }
        BmaBand {
            best: best + 1,
            excess: self.strategy_logliks[best] - self.bma_loglik(),
            upper: -self.config.log_pi_k(best + 1),
            scale: self.bma_loglik().abs().max(1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::KSchedule;

    fn families() -> Vec<Family> {
        vec![
            Family::BernoulliLaplace,
            Family::Markov { order: 1, alphabet: 2 },
            Family::Markov { order: 2, alphabet: 2 },
        ]
    }

    #[test]
    fn rejects_mismatched_sets() {
        let cfg = SwitchPriorConfig::with_kmax(2);
        assert!(matches!(MixtureRun::new(&families(), cfg), Err(RunError::Config(_))));
        let mixed = [Family::BernoulliLaplace, Family::Histogram { bins: 2 }];
        assert!(MixtureRun::new(&mixed, SwitchPriorConfig::with_kmax(2)).is_err());
        assert!(MixtureRun::new(&[], SwitchPriorConfig::with_kmax(1)).is_err());
    }

    #[test]
    fn lockstep_matches_separate_marginals() {
        let fams = families();
        let mut run = MixtureRun::new(&fams, SwitchPriorConfig::with_kmax(3)).unwrap();
        let seq: Vec<Outcome> = (0..60).map(|i| Outcome::Symbol((i * i / 3) % 2)).collect();
        for &o in &seq {
            run.step(o).unwrap();
        }
        for (k, f) in fams.iter().enumerate() {
            let direct = crate::predictors::strategy_log_marginal(*f, &seq).unwrap();
            assert!((direct - run.strategy_logliks()[k]).abs() < 1e-9);
        }
        assert!(run.bayes_chain_gaps().holds(1e-9));
        assert!(run.bma_band().holds(1e-9));
        let ps = run.switch_predictive().unwrap();
        assert!(ps.is_normalized(1e-12));
    }

    #[test]
    fn predictive_probability_matches_step() {
        let mut run = MixtureRun::new(&families(), SwitchPriorConfig::with_kmax(3).theta(0.3)).unwrap();
        for i in 0..30usize {
            let o = Outcome::Symbol((i / 4) % 2);
            let want = run.switch_predictive().unwrap().density(o).unwrap().ln();
            let got = run.step(o).unwrap();
            assert!((want - got).abs() < 1e-10);
        }
    }

    #[test]
    fn growing_schedule_uses_prefix() {
        let cfg = SwitchPriorConfig::with_kmax(3).schedule(KSchedule::Growing { kmax: 3, tau: 0.5 });
        let mut run = MixtureRun::new(&families(), cfg).unwrap();
        let first = run.switch_posterior().unwrap().len();
        for i in 0..20usize {
            run.step(Outcome::Symbol(i % 2)).unwrap();
        }
        assert!(first <= run.switch_posterior().unwrap().len());
        assert!(run.bayes_chain_gaps().holds(1e-9));
    }
}
