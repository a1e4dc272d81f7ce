//! Built-in consistency suites: the forward recursion against exhaustive
//! enumeration, the Bayes chain on random data, and the total mass of the
//! prior process.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::logspace::log_sum_exp;
use crate::oracle::{brute_force_switch, for_each_path, path_prior, OracleError};
use crate::predictors::{Family, Outcome, PredictorError};
use crate::prior::{ModelPrior, SwitchPriorConfig};
use crate::runner::MixtureRun;
use crate::switch::run_switch;

/// Binary strategies used by the suites: Laplace, then Markov orders 1 and 2.
pub fn binary_families(k: usize) -> Vec<Family> {
    let all = [
        Family::BernoulliLaplace,
        Family::Markov { order: 1, alphabet: 2 },
        Family::Markov { order: 2, alphabet: 2 },
        Family::Markov { order: 3, alphabet: 2 },
    ];
    all[..k].to_vec()
}

/// `table[n][k]` = ln p_k(x_{n+1} | x^n).
pub fn log_predictive_table(families: &[Family], seq: &[Outcome]) -> Result<Vec<Vec<f64>>, PredictorError> {
    let mut states = families.iter().map(|f| f.state()).collect::<Result<Vec<_>, _>>()?;
    seq.iter()
        .map(|&x| states.iter_mut().map(|s| s.predict_and_observe(x)).collect())
        .collect()
}

/// All binary strings of length `len`.
pub fn binary_strings(len: usize) -> impl Iterator<Item = Vec<Outcome>> {
    (0..1u32 << len).map(move |bits| (0..len).map(|i| Outcome::Symbol(((bits >> i) & 1) as usize)).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuiteResult {
    pub name: String,
    pub passed: usize,
    pub failed: usize,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        Self { name: name.into(), passed: 0, failed: 0 }
    }

    fn record(&mut self, ok: bool) {
        if ok {
            self.passed += 1
        } else {
            self.failed += 1
        }
    }

    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

fn logs_match(a: f64, b: f64, tol: f64) -> bool {
    (a == f64::NEG_INFINITY && b == f64::NEG_INFINITY) || (a - b).abs() <= tol
}

/// Forward recursion versus path enumeration over all binary strings of
/// length ≤ `max_len`, K ∈ 1..=3 and θ ∈ {0.1, 0.5, 0.9}.
pub fn oracle_equivalence(max_len: usize, tol: f64) -> Result<SuiteResult, OracleError> {
    let mut res = SuiteResult::new("oracle-equivalence");
    for k in 1..=3 {
        let families = binary_families(k);
        for theta in [0.1, 0.5, 0.9] {
            let cfg = SwitchPriorConfig::with_kmax(k).theta(theta);
            for len in 0..=max_len {
                for seq in binary_strings(len) {
                    let table = log_predictive_table(&families, &seq).map_err(|e| OracleError::InvalidParameter(e.to_string()))?;
                    let oracle = brute_force_switch(&table, &cfg)?;
                    let ok = match run_switch(&cfg, &table) {
                        Ok((w, _)) => {
                            w.unfrozen().len() == oracle.unfrozen.len()
                                && w.unfrozen().iter().zip(&oracle.unfrozen).all(|(&a, &b)| logs_match(a, b, tol))
                                && w.frozen().iter().zip(&oracle.frozen).all(|(&a, &b)| logs_match(a, b, tol))
                                && logs_match(crate::switch::marginal_loglik(&w), oracle.log_marginal(), tol)
                        }
                        Err(_) => false,
                    };
                    res.record(ok);
                }
            }
        }
    }
    Ok(res)
}

/// Bayes chain and BMA band on every prefix of `sequences` random binary
/// strings of length `n`.
pub fn bayes_chain_suite(sequences: usize, n: usize, seed: u64, tol: f64) -> Result<SuiteResult, crate::runner::RunError> {
    let mut res = SuiteResult::new("bayes_chain");
    let families = binary_families(3);
    for i in 0..sequences {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let p: f64 = rng.random_range(0.05..0.95);
        let theta = [0.1, 0.5, 0.9][i % 3];
        let mut run = MixtureRun::new(&families, SwitchPriorConfig::with_kmax(3).theta(theta))?;
        let mut ok = true;
        for _ in 0..n {
            run.step(Outcome::Symbol(usize::from(rng.random::<f64>() < p)))?;
            ok &= run.bayes_chain_gaps().holds(tol) && run.bma_band().holds(tol);
        }
        res.record(ok);
    }
    Ok(res)
}

/// Σ exp(path prior) over all paths of each length ≤ `max_len` with a
/// uniform π_k, which sums to one over 𝒦.
pub fn prior_mass_suite(max_len: usize, tol: f64) -> Result<SuiteResult, OracleError> {
    let mut res = SuiteResult::new("prior-mass");
    for k in 1..=3 {
        for theta in [0.1, 0.5, 0.9] {
            let cfg = SwitchPriorConfig::with_kmax(k).theta(theta).model_prior(ModelPrior::Uniform { size: k });
            for len in 1..=max_len {
                let mut logs = Vec::new();
                for_each_path(len, &cfg.schedule, |p| logs.push(path_prior(p, &cfg)))?;
                res.record((log_sum_exp(&logs).exp() - 1.0).abs() <= tol);
            }
        }
    }
    Ok(res)
}

/// Runs the three suites at their standard sizes.
pub fn run_all() -> Result<Vec<SuiteResult>, String> {
    Ok(vec![
        oracle_equivalence(6, 1e-12).map_err(|e| e.to_string())?,
        bayes_chain_suite(100, 500, 20_240_601, 1e-9).map_err(|e| e.to_string())?,
        prior_mass_suite(6, 1e-12).map_err(|e| e.to_string())?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suites_pass() {
        let o = oracle_equivalence(3, 1e-12).unwrap();
        assert!(o.ok() && o.passed > 0, "{o:?}");
        let l = bayes_chain_suite(5, 60, 1, 1e-9).unwrap();
        assert_eq!((l.passed, l.failed), (5, 0));
        let m = prior_mass_suite(4, 1e-12).unwrap();
        assert!(m.ok());
    }

    #[test]
    fn table_shape() {
        let seq: Vec<Outcome> = binary_strings(3).nth(5).unwrap();
        let t = log_predictive_table(&binary_families(2), &seq).unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().all(|r| r.len() == 2));
        assert_eq!(binary_strings(4).count(), 16);
    }
}
