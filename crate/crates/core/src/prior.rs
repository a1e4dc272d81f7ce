//! Prior over switching plans.
//!
//! The prior factorizes into a geometric law on the number of segments
//! (π_m(m) = θ^{m-1}(1-θ)), a prior on strategy indices π_k, and a prior on
//! switch times π_t. Only the hazard π_t(T = n | T ≥ n) and π_k(k) are needed
//! by the forward recursion, so both are supplied in closed form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::logspace::{LogDensity, LOG_ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorError {
    #[error("theta must lie in [0, 1), got {0}")]
    Theta(f64),

    #[error("switch-time prior exhausted: no mass at or after n = {0}")]
    Exhausted(u64),

    #[error("invalid model prior: {0}")]
    ModelPrior(String),

    #[error("invalid switch-time prior: {0}")]
    SwitchTimePrior(String),

    #[error("invalid strategy-set schedule: {0}")]
    Schedule(String),
}

/// Prior π_k on strategy indices `k ≥ 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelPrior {
    /// π_k(k) = 1 / (k(k+1)).
    #[default]
    Harmonic,
    /// π_k(k) = 1 / size for k ≤ size, zero beyond.
    Uniform { size: usize },
    /// π_k(k) = masses[k-1], zero beyond.
    Explicit { masses: Vec<f64> },
}

impl ModelPrior {
    pub fn log_mass(&self, k: usize) -> LogDensity {
        if k == 0 {
            return LOG_ZERO;
        }
        match self {
            ModelPrior::Harmonic => -((k as f64).ln() + ((k + 1) as f64).ln()),
            ModelPrior::Uniform { size } => {
                if k <= *size {
                    -(*size as f64).ln()
                } else {
                    LOG_ZERO
                }
            }
            ModelPrior::Explicit { masses } => masses.get(k - 1).map_or(LOG_ZERO, |m| m.ln()),
        }
    }

    pub fn mass(&self, k: usize) -> f64 {
        self.log_mass(k).exp()
    }

    /// Checks positivity on `1..=kmax` and total mass at most one.
    pub fn validate(&self, kmax: usize) -> Result<(), PriorError> {
        let mut total = 0.0;
        for k in 1..=kmax {
            let m = self.mass(k);
            if !m.is_finite() || m <= 0.0 {
                return Err(PriorError::ModelPrior(format!("π_k({k}) = {m} is not positive")));
            }
            total += m;
        }
        if let ModelPrior::Explicit { masses } = self {
            if masses.iter().any(|m| m.is_nan() || *m < 0.0) {
                return Err(PriorError::ModelPrior("negative or NaN mass".into()));
            }
            total = masses.iter().sum();
        }
        if total > 1.0 + 1e-12 {
            return Err(PriorError::ModelPrior(format!("total mass {total} exceeds 1")));
        }
        Ok(())
    }
}

/// Prior π_t on switch times `t ≥ 1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SwitchTimePrior {
    /// π_t(t) = 1 / (t(t+1)), tail Σ_{t≥n} = 1/n.
    #[default]
    Harmonic,
    /// π_t(t) = (1-ρ)ρ^{t-1}, tail ρ^{n-1}.
    Geometric { rho: f64 },
}

impl SwitchTimePrior {
    pub fn validate(&self) -> Result<(), PriorError> {
        match *self {
            SwitchTimePrior::Harmonic => Ok(()),
            SwitchTimePrior::Geometric { rho } if (0.0..1.0).contains(&rho) => Ok(()),
            SwitchTimePrior::Geometric { rho } => {
                Err(PriorError::SwitchTimePrior(format!("rho must lie in [0, 1), got {rho}")))
            }
        }
    }

    /// ln π_t(t).
    pub fn log_pmf(&self, t: u64) -> LogDensity {
        if t == 0 {
            return LOG_ZERO;
        }
        match *self {
            SwitchTimePrior::Harmonic => -((t as f64).ln() + ((t + 1) as f64).ln()),
            SwitchTimePrior::Geometric { rho } => {
                if t == 1 {
                    (1.0 - rho).ln()
                } else {
                    (1.0 - rho).ln() + (t - 1) as f64 * rho.ln()
                }
            }
        }
    }

    /// ln Σ_{t ≥ n} π_t(t).
    pub fn log_tail(&self, n: u64) -> LogDensity {
        if n <= 1 {
            return 0.0;
        }
        match *self {
            SwitchTimePrior::Harmonic => -(n as f64).ln(),
            SwitchTimePrior::Geometric { rho } => (n - 1) as f64 * rho.ln(),
        }
    }

    /// (ln π_t(T = n | T ≥ n), ln π_t(T > n | T ≥ n)).
    pub fn log_hazard(&self, n: u64) -> Result<(LogDensity, LogDensity), PriorError> {
        let tail = self.log_tail(n);
        if tail == LOG_ZERO || tail.is_nan() {
            return Err(PriorError::Exhausted(n));
        }
        let switch = self.log_pmf(n) - tail;
        let stay = self.log_tail(n + 1) - tail;
        Ok((switch, stay))
    }

    /// π_t(T = n | T ≥ n).
    pub fn hazard(&self, n: u64) -> Result<f64, PriorError> {
        Ok(self.log_hazard(n)?.0.exp())
    }
}

/// Nested strategy index sets 𝒦_n = {1, …, size(n)}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KSchedule {
    /// 𝒦_n = {1..kmax} for all n.
    Constant { kmax: usize },
    /// 𝒦_n = {1..min(kmax, ⌈n^tau⌉)}.
    Growing { kmax: usize, tau: f64 },
}

impl KSchedule {
    pub fn kmax(&self) -> usize {
        match *self {
            KSchedule::Constant { kmax } | KSchedule::Growing { kmax, .. } => kmax,
        }
    }

    /// |𝒦_n| for n ≥ 1.
    pub fn size(&self, n: u64) -> usize {
        match *self {
            KSchedule::Constant { kmax } => kmax,
            KSchedule::Growing { kmax, tau } => {
                let g = (n.max(1) as f64).powf(tau).ceil();
                (g as usize).clamp(1, kmax)
            }
        }
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if self.kmax() == 0 {
            return Err(PriorError::Schedule("kmax must be at least 1".into()));
        }
        if let KSchedule::Growing { tau, .. } = *self {
            if !tau.is_finite() || tau < 0.0 {
                return Err(PriorError::Schedule(format!("tau must be a non-negative real, got {tau}")));
            }
        }
        Ok(())
    }
}

/// Full prior configuration of a switch distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchPriorConfig {
    pub theta: f64,
    pub model_prior: ModelPrior,
    pub switch_time_prior: SwitchTimePrior,
    pub schedule: KSchedule,
}

impl SwitchPriorConfig {
    /// θ = 1/2, harmonic π_k and π_t, constant 𝒦 = {1..kmax}.
    pub fn with_kmax(kmax: usize) -> Self {
        Self {
            theta: 0.5,
            model_prior: ModelPrior::Harmonic,
            switch_time_prior: SwitchTimePrior::Harmonic,
            schedule: KSchedule::Constant { kmax },
        }
    }

    pub fn theta(mut self, theta: f64) -> Self {
        self.theta = theta;
        self
    }

    pub fn model_prior(mut self, prior: ModelPrior) -> Self {
        self.model_prior = prior;
        self
    }

    pub fn switch_time_prior(mut self, prior: SwitchTimePrior) -> Self {
        self.switch_time_prior = prior;
        self
    }

    pub fn schedule(mut self, schedule: KSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn validate(&self) -> Result<(), PriorError> {
        if !(0.0..1.0).contains(&self.theta) {
            return Err(PriorError::Theta(self.theta));
        }
        self.schedule.validate()?;
        self.model_prior.validate(self.schedule.kmax())?;
        self.switch_time_prior.validate()
    }

    pub fn log_theta(&self) -> f64 {
        self.theta.ln()
    }

    /// ln θ^j, with θ^0 = 1 even when θ = 0.
    pub fn log_theta_pow(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            j as f64 * self.log_theta()
        }
    }

    pub fn log_one_minus_theta(&self) -> f64 {
        (-self.theta).ln_1p()
    }

    /// ln π_m(1) = ln(1-θ): the never-switch segment count.
    pub fn log_pi_m_one(&self) -> f64 {
        self.log_one_minus_theta()
    }

    pub fn log_pi_k(&self, k: usize) -> f64 {
        self.model_prior.log_mass(k)
    }

    pub fn hazard(&self, n: u64) -> Result<f64, PriorError> {
        self.switch_time_prior.hazard(n)
    }

    /// |𝒦_n|.
    pub fn kset_size(&self, n: u64) -> usize {
        self.schedule.size(n)
    }
}
