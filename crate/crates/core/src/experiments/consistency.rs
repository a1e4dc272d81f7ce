//! Posterior traces of the switch distribution's model selection on binary
//! data from a known source.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fmt_f64, report_grid, with_workers, ExperimentError};
use crate::predictors::{Family, Outcome};
use crate::prior::SwitchPriorConfig;
use crate::runner::MixtureRun;

/// Binary data source.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinarySource {
    /// i.i.d. Bernoulli(theta).
    Iid { theta: f64 },
    /// First-order chain with P(1 | 0) and P(1 | 1), started from its
    /// stationary distribution.
    Markov1 { p1_given0: f64, p1_given1: f64 },
}

impl BinarySource {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        let valid = match *self {
            BinarySource::Iid { theta } => ok(theta),
            BinarySource::Markov1 { p1_given0, p1_given1 } => {
                ok(p1_given0) && ok(p1_given1) && p1_given0 + (1.0 - p1_given1) > 0.0
            }
        };
        if valid {
            Ok(())
        } else {
            Err(ExperimentError::Config(format!("source: invalid probabilities in {self:?}")))
        }
    }

    /// Draws `n` symbols.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        let bit = |p: f64, rng: &mut R| usize::from(rng.random::<f64>() < p);
        match *self {
            BinarySource::Iid { theta } => out.extend((0..n).map(|_| bit(theta, rng))),
            BinarySource::Markov1 { p1_given0, p1_given1 } => {
                let stationary = p1_given0 / (p1_given0 + 1.0 - p1_given1);
                let mut prev = None;
                for _ in 0..n {
                    let p = match prev {
                        None => stationary,
                        Some(0) => p1_given0,
                        Some(_) => p1_given1,
                    };
                    let x = bit(p, rng);
                    out.push(x);
                    prev = Some(x);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    pub source: BinarySource,
    pub n: u64,
    pub seeds: Vec<u64>,
    /// Nested models, simplest first.
    pub families: Vec<Family>,
    pub prior: SwitchPriorConfig,
    pub stride: Option<u64>,
    /// Number of final steps recorded individually.
    pub tail: u64,
    pub workers: Option<usize>,
}

impl ConsistencyConfig {
    /// Order-0 Laplace against an order-1 binary Markov chain.
    pub fn new(source: BinarySource, n: u64, seeds: Vec<u64>) -> Self {
        Self {
            source,
            n,
            seeds,
            families: vec![Family::BernoulliLaplace, Family::Markov { order: 1, alphabet: 2 }],
            prior: SwitchPriorConfig::with_kmax(2),
            stride: None,
            tail: 100,
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.source.validate()?;
        if self.n == 0 {
            return Err(ExperimentError::Config("n: must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(ExperimentError::Config("seeds: at least one seed is required".into()));
        }
        if self.families.is_empty() {
            return Err(ExperimentError::Config("models: at least one model is required".into()));
        }
        Ok(())
    }

    fn recorded(&self) -> Vec<u64> {
        let mut ns = report_grid(self.n, self.stride);
        ns.extend(self.n.saturating_sub(self.tail) + 1..=self.n);
        ns.sort_unstable();
        ns.dedup();
        ns
    }
}

/// π(K_{n+1} = · | x^n) and the selected model at one sample size.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub n: u64,
    pub posterior: Vec<f64>,
    /// 1-based model index.
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyTrace {
    pub seed: u64,
    pub points: Vec<TracePoint>,
}

impl ConsistencyTrace {
    pub fn final_selected(&self) -> Option<usize> {
        self.points.last().map(|p| p.selected)
    }

    /// Smallest posterior mass on model `k` (1-based) over the last `steps`
    /// recorded sample sizes.
    pub fn min_tail_posterior(&self, k: usize, steps: usize) -> f64 {
        let start = self.points.len().saturating_sub(steps);
        self.points[start..].iter().map(|p| p.posterior[k - 1]).fold(f64::INFINITY, f64::min)
    }
}

fn trace_for_seed(cfg: &ConsistencyConfig, recorded: &[u64], seed: u64) -> Result<ConsistencyTrace, ExperimentError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = cfg.source.sample(cfg.n as usize, &mut rng);
    let mut run = MixtureRun::new(&cfg.families, cfg.prior.clone())?;
    let mut points = Vec::with_capacity(recorded.len());
    let mut next = recorded.iter().copied().peekable();
    for &x in &data {
        run.step(Outcome::Symbol(x))?;
        if next.peek() == Some(&run.n()) {
            next.next();
            let posterior = run.switch_posterior()?;
            points.push(TracePoint { n: run.n(), selected: crate::switch::select_model(&posterior), posterior });
        }
    }
    Ok(ConsistencyTrace { seed, points })
}

/// One posterior trace per seed, recorded at the grid points and at each of
/// the last `tail` steps. Seed s draws from ChaCha20 seeded with s.
pub fn run_consistency(cfg: &ConsistencyConfig) -> Result<Vec<ConsistencyTrace>, ExperimentError> {
    cfg.validate()?;
    let recorded = cfg.recorded();
    with_workers(cfg.workers, || {
        cfg.seeds.par_iter().map(|&s| trace_for_seed(cfg, &recorded, s)).collect::<Result<Vec<_>, _>>()
    })?
}

/// Header and records of `consistency.csv`.
pub fn consistency_table(models: usize, traces: &[ConsistencyTrace]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["seed".to_string(), "n".to_string()];
    header.extend((1..=models).map(|k| format!("post_k{k}")));
    header.push("selected".into());
    let mut records = Vec::new();
    for t in traces {
        for p in &t.points {
            let mut rec = vec![t.seed.to_string(), p.n.to_string()];
            rec.extend((0..models).map(|k| fmt_f64(p.posterior.get(k).copied().unwrap_or(0.0))));
            rec.push(p.selected.to_string());
            records.push(rec);
        }
    }
    (header, records)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn markov_source_frequencies() {
        let src = BinarySource::Markov1 { p1_given0: 0.9, p1_given1: 0.2 };
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let xs = src.sample(200_000, &mut rng);
        let (mut c0, mut c01, mut c1, mut c11) = (0.0, 0.0, 0.0, 0.0);
        for w in xs.windows(2) {
            if w[0] == 0 {
                c0 += 1.0;
                c01 += w[1] as f64;
            } else {
                c1 += 1.0;
                c11 += w[1] as f64;
            }
        }
        assert!((c01 / c0 - 0.9).abs() < 0.01);
        assert!((c11 / c1 - 0.2).abs() < 0.01);
    }

    #[test]
    fn recorded_points_include_tail() {
        let cfg = ConsistencyConfig::new(BinarySource::Iid { theta: 0.5 }, 1000, vec![1]);
        let r = cfg.recorded();
        assert!(r.windows(2).all(|w| w[0] < w[1]));
        assert!((901..=1000).all(|n| r.contains(&n)));
        assert_eq!(r[0], 1);
    }

    #[test]
    fn traces_are_normalized_and_deterministic() {
        let mut cfg = ConsistencyConfig::new(BinarySource::Iid { theta: 0.7 }, 500, vec![1, 2, 3]);
        cfg.tail = 10;
        let a = run_consistency(&cfg).unwrap();
        cfg.workers = Some(1);
        let b = run_consistency(&cfg).unwrap();
        assert_eq!(a, b);
        for t in &a {
            for p in &t.points {
                assert!((p.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let (header, recs) = consistency_table(2, &a);
        assert_eq!(header, ["seed", "n", "post_k1", "post_k2", "selected"]);
        assert_eq!(recs.len(), a.iter().map(|t| t.points.len()).sum::<usize>());
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(run_consistency(&ConsistencyConfig::new(BinarySource::Iid { theta: 1.5 }, 10, vec![1])).is_err());
        assert!(run_consistency(&ConsistencyConfig::new(BinarySource::Iid { theta: 0.5 }, 10, vec![])).is_err());
        assert!(run_consistency(&ConsistencyConfig::new(BinarySource::Iid { theta: 0.5 }, 0, vec![1])).is_err());
    }
}
