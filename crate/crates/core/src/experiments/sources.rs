//! Densities on [0, 1] used as true sources, with inverse-CDF sampling and
//! exact per-step KL risk of histogram predictives.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::predictors::{bin_index, PredictiveDistribution};

/// A true density p* on [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceDensity {
    Uniform,
    /// p*(x) = a + b·x.
    Linear { a: f64, b: f64 },
    /// Equal-width pieces over [0, 1] with the given heights.
    PiecewiseConstant { heights: Vec<f64> },
}

impl fmt::Display for SourceDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceDensity::Uniform => write!(f, "uniform"),
            SourceDensity::Linear { a, b } => write!(f, "linear:{a},{b}"),
            SourceDensity::PiecewiseConstant { heights } => {
                let hs: Vec<String> = heights.iter().map(|h| h.to_string()).collect();
                write!(f, "piecewise:{}", hs.join(","))
            }
        }
    }
}

impl FromStr for SourceDensity {
    type Err = ExperimentError;

    /// `uniform`, `linear:a,b` or `piecewise:h1,h2,...`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, args) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<f64>, ExperimentError> {
            args.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| ExperimentError::Config(format!("density: cannot parse `{t}` as a number")))
                })
                .collect()
        };
        let density = match kind.trim() {
            "uniform" if args.is_empty() => SourceDensity::Uniform,
            "linear" => match nums()?[..] {
                [a, b] => SourceDensity::Linear { a, b },
                _ => return Err(ExperimentError::Config("density: linear takes exactly two numbers a,b".into())),
            },
            "piecewise" => SourceDensity::PiecewiseConstant { heights: nums()? },
            _ => return Err(ExperimentError::Config(format!("density: unknown density `{s}`"))),
        };
        density.validate()?;
        Ok(density)
    }
}

/// Envelope of a density: c0 ≤ p* ≤ c1 and |p*'| ≤ c2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityBounds {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl SourceDensity {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |msg: String| Err(ExperimentError::Config(format!("density: {msg}")));
        match self {
            SourceDensity::Uniform => Ok(()),
            SourceDensity::Linear { a, b } => {
                if !a.is_finite() || !b.is_finite() || *a < 0.0 || a + b < 0.0 {
                    return bad(format!("a + b·x must be non-negative on [0,1], got a={a}, b={b}"));
                }
                if (a + b / 2.0 - 1.0).abs() > 1e-12 {
                    return bad(format!("a + b/2 must equal 1, got {}", a + b / 2.0));
                }
                Ok(())
            }
            SourceDensity::PiecewiseConstant { heights } => {
                if heights.is_empty() || heights.iter().any(|h| !h.is_finite() || *h < 0.0) {
                    return bad("piecewise heights must be non-negative and non-empty".into());
                }
                let mean = heights.iter().sum::<f64>() / heights.len() as f64;
                if (mean - 1.0).abs() > 1e-12 {
                    return bad(format!("piecewise heights must average 1, got {mean}"));
                }
                Ok(())
            }
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            return 0.0;
        }
        match self {
            SourceDensity::Uniform => 1.0,
            SourceDensity::Linear { a, b } => a + b * x,
            SourceDensity::PiecewiseConstant { heights } => heights[bin_index(x, heights.len())],
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match self {
            SourceDensity::Uniform => x,
            SourceDensity::Linear { a, b } => a * x + 0.5 * b * x * x,
            SourceDensity::PiecewiseConstant { heights } => {
                let m = heights.len();
                let pos = x * m as f64;
                let full = (pos.floor() as usize).min(m);
                let mut acc: f64 = heights[..full].iter().sum();
                if full < m {
                    acc += heights[full] * (pos - full as f64);
                }
                (acc / m as f64).min(1.0)
            }
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let x = match self {
            SourceDensity::Uniform => u,
            SourceDensity::Linear { a, b } => {
                // positive root of (b/2)x² + a·x − u = 0
                let denom = a + (a * a + 2.0 * b * u).sqrt();
                if denom > 0.0 {
                    2.0 * u / denom
                } else {
                    0.0
                }
            }
            SourceDensity::PiecewiseConstant { heights } => {
                let m = heights.len() as f64;
                let target = u * m;
                let mut acc = 0.0;
                let mut x = 1.0;
                for (i, &h) in heights.iter().enumerate() {
                    if h > 0.0 && acc + h >= target {
                        x = (i as f64 + (target - acc) / h) / m;
                        break;
                    }
                    acc += h;
                }
                x
            }
        };
        x.clamp(0.0, 1.0)
    }

    pub fn bounds(&self) -> DensityBounds {
        match self {
            SourceDensity::Uniform => DensityBounds { c0: 1.0, c1: 1.0, c2: 0.0 },
            SourceDensity::Linear { a, b } => {
                DensityBounds { c0: a.min(a + b), c1: a.max(a + b), c2: b.abs() }
            }
            SourceDensity::PiecewiseConstant { heights } => {
                let c0 = heights.iter().copied().fold(f64::INFINITY, f64::min);
                let c1 = heights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                DensityBounds { c0, c1, c2: if c0 == c1 { 0.0 } else { f64::INFINITY } }
            }
        }
    }

    /// Bounded away from zero and infinity with 0 < c0 < 1 < c1 and a
    /// bounded derivative.
    pub fn in_risk_class(&self) -> bool {
        let b = self.bounds();
        b.c0 > 0.0 && b.c0 < 1.0 && 1.0 < b.c1 && b.c2.is_finite()
    }

    /// P*(bin i) for the i-th (0-based) of `bins` equal-width bins.
    pub fn bin_mass(&self, bins: usize, i: usize) -> f64 {
        let k = bins as f64;
        self.cdf((i + 1) as f64 / k) - self.cdf(i as f64 / k)
    }

    /// ∫ p* log₂ p* dx.
    pub fn neg_entropy_bits(&self) -> f64 {
        let plogp = |p: f64| if p > 0.0 { p * p.log2() } else { 0.0 };
        match self {
            SourceDensity::Uniform => 0.0,
            SourceDensity::Linear { .. } => gauss_legendre_01(|x| plogp(self.density(x))),
            SourceDensity::PiecewiseConstant { heights } => {
                heights.iter().map(|&h| plogp(h)).sum::<f64>() / heights.len() as f64
            }
        }
    }
}

/// Inverse-CDF transform of a uniform variate.
pub fn sample_source<R: Rng + ?Sized>(density: &SourceDensity, rng: &mut R) -> f64 {
    density.inverse_cdf(rng.random::<f64>())
}

const GL_NODES: usize = 64;

/// Nodes and weights of the 64-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| legendre_rule(GL_NODES))
}

fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// ∫_0^1 f(x) dx by 64-point Gauss–Legendre.
pub fn gauss_legendre_01<F: Fn(f64) -> f64>(f: F) -> f64 {
    let (nodes, weights) = gauss_legendre_rule();
    nodes.iter().zip(weights).map(|(&t, &w)| 0.5 * w * f(0.5 * (t + 1.0))).sum()
}

/// D(p* ‖ p̂) in bits for a histogram predictive p̂.
pub fn exact_step_kl(density: &SourceDensity, predictive: &PredictiveDistribution) -> Result<f64, ExperimentError> {
    let PredictiveDistribution::Histogram(heights) = predictive else {
        return Err(ExperimentError::Config("exact_step_kl needs a histogram predictive".into()));
    };
    let cross = cross_entropy_term(density, heights)?;
    Ok(density.neg_entropy_bits() - cross)
}

fn cross_entropy_term(density: &SourceDensity, heights: &[f64]) -> Result<f64, ExperimentError> {
    let k = heights.len();
    let mut acc = 0.0;
    for (i, &h) in heights.iter().enumerate() {
        let mass = density.bin_mass(k, i);
        if mass == 0.0 {
            continue;
        }
        if h <= 0.0 {
            return Err(ExperimentError::Invariant(format!("predictive has zero density on bin {} with mass {mass}", i + 1)));
        }
        acc += mass * h.log2();
    }
    Ok(acc)
}

/// [`exact_step_kl`] with the entropy term computed once.
#[derive(Debug, Clone)]
pub struct KlEvaluator {
    density: SourceDensity,
    neg_entropy: f64,
}

impl KlEvaluator {
    pub fn new(density: &SourceDensity) -> Self {
        Self { density: density.clone(), neg_entropy: density.neg_entropy_bits() }
    }

    pub fn kl_bits(&self, heights: &[f64]) -> Result<f64, ExperimentError> {
        Ok(self.neg_entropy - cross_entropy_term(&self.density, heights)?)
    }
}
