//! Sequential prediction under logarithmic loss with the switch distribution.
//!
//! The crate provides:
//!
//! - prequential strategies (Laplace, order-r Markov, regular histograms) in [`predictors`];
//! - the switch prior and its forward recursion in [`prior`] and [`switch`];
//! - an exhaustive reference implementation for tiny inputs in [`oracle`];
//! - Bayesian model averaging and the cube-root histogram rule in [`baselines`];
//! - the experiment drivers that write CSV results in [`experiments`].

pub mod baselines;
pub mod experiments;
pub mod logspace;
pub mod oracle;
pub mod predictors;
pub mod prior;
pub mod runner;
pub mod selfcheck;
pub mod switch;

pub use baselines::{bma_step, cuberoot_criterion, BmaState};
pub use logspace::{LogDensity, LOG_ZERO};
pub use predictors::{Alphabet, Family, Outcome, PredictiveDistribution, StrategyState};
pub use prior::{KSchedule, ModelPrior, SwitchPriorConfig, SwitchTimePrior};
pub use runner::{MixtureRun, RunError};
pub use switch::{marginal_loglik, posterior_next, select_model, switch_init, switch_step, SwitchWeights};
