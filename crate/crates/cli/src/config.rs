//! Flat run configuration: command-line flags layered over an optional JSON
//! file, then validated into the typed experiment configs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use switchcast::experiments::{BinarySource, Estimator, SourceDensity};
use switchcast::predictors::Family;
use switchcast::prior::{KSchedule, ModelPrior, SwitchPriorConfig, SwitchTimePrior};

pub const SEED_ENV: &str = "SWITCHCAST_SEED";

/// Every setting of every subcommand. Unset fields fall back to the config
/// file, then to defaults.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatConfig {
    /// Flat JSON config file (or a previous run manifest); flags win
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Input file
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,

    /// Output directory
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    /// Markov orders for catchup, comma separated
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<usize>>,

    /// Model families for the switch command, e.g. markov:1,laplace,histogram:4
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<String>>,

    /// Sample size (histsim: n_max)
    #[arg(long, alias = "n-max")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,

    /// Source density: uniform, linear:a,b or piecewise:h1,h2,...
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,

    /// Estimators for histsim: switch, bma, cuberoot, fixed:k
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimators: Option<Vec<String>>,

    /// Binary source for consistency: iid:theta or markov1:p1|0,p1|1
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,

    /// Top-level seed (falls back to SWITCHCAST_SEED)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,

    /// Explicit seed list for consistency; defaults to seed, seed+1, ...
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,

    /// Report every `stride` outcomes instead of the geometric grid
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,

    /// Worker threads for replicates (default: logical processors)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,

    /// Number of strategies (histsim: largest histogram)
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kmax: Option<usize>,

    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,

    /// Model prior: harmonic, uniform or explicit:m1,m2,...
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_k: Option<String>,

    /// Switch-time prior: harmonic or geometric:rho
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prior_t: Option<String>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident, $($f:ident),*) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl FlatConfig {
    /// Fills unset flags from the config file named by `--config`. Relative
    /// paths in the file are resolved against the file's directory.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path).with_context(|| format!("config: cannot read {}", path.display()))?;
        let mut value: serde_json::Value =
            serde_json::from_str(&text).with_context(|| format!("config: {} is not valid JSON", path.display()))?;
        if let Some(inner) = value.get("config").filter(|v| v.is_object()) {
            value = inner.clone();
        }
        let mut file: FlatConfig =
            serde_json::from_value(value).with_context(|| format!("config: invalid field in {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut file.input, &mut file.out].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        overlay!(
            self, file, input, out, orders, models, n, replicates, density, estimators, source, seed, seeds, stride,
            workers, kmax, theta, prior_k, prior_t
        );
        Ok(self)
    }

    pub fn seed(&self) -> Result<u64> {
        if let Some(s) = self.seed {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v.trim().parse().map_err(|_| anyhow!("seed: {SEED_ENV}={v} is not an unsigned integer")),
            Err(_) => Ok(0),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn input_path(&self) -> Result<&Path> {
        let p = self.input.as_deref().ok_or_else(|| anyhow!("input: --input is required"))?;
        if !p.is_file() {
            bail!("input: file not found: {}", p.display());
        }
        Ok(p)
    }

    pub fn theta(&self) -> Result<f64> {
        let t = self.theta.unwrap_or(0.5);
        if !(0.0..1.0).contains(&t) {
            bail!("theta: must lie in [0, 1), got {t}");
        }
        Ok(t)
    }

    pub fn replicates(&self, default: usize) -> Result<usize> {
        match self.replicates.unwrap_or(default) {
            0 => bail!("replicates: must be at least 1"),
            r => Ok(r),
        }
    }

    pub fn workers(&self) -> Result<Option<usize>> {
        match self.workers {
            Some(0) => bail!("workers: must be at least 1"),
            w => Ok(w),
        }
    }

    pub fn stride(&self) -> Result<Option<u64>> {
        match self.stride {
            Some(0) => bail!("stride: must be at least 1"),
            s => Ok(s),
        }
    }

    pub fn model_prior(&self, kmax: usize) -> Result<ModelPrior> {
        let spec = self.prior_k.as_deref().unwrap_or("harmonic");
        let prior = match spec.split_once(':') {
            None if spec == "harmonic" => ModelPrior::Harmonic,
            None if spec == "uniform" => ModelPrior::Uniform { size: kmax },
            Some(("explicit", rest)) => ModelPrior::Explicit { masses: parse_list(rest, "prior_k")? },
            _ => bail!("prior_k: expected harmonic, uniform or explicit:m1,m2,..., got `{spec}`"),
        };
        prior.validate(kmax).map_err(|e| anyhow!("prior_k: {e}"))?;
        Ok(prior)
    }

    pub fn switch_time_prior(&self) -> Result<SwitchTimePrior> {
        let spec = self.prior_t.as_deref().unwrap_or("harmonic");
        let prior = match spec.split_once(':') {
            None if spec == "harmonic" => SwitchTimePrior::Harmonic,
            Some(("geometric", rho)) => SwitchTimePrior::Geometric {
                rho: rho.trim().parse().map_err(|_| anyhow!("prior_t: cannot parse rho `{rho}`"))?,
            },
            _ => bail!("prior_t: expected harmonic or geometric:rho, got `{spec}`"),
        };
        prior.validate().map_err(|e| anyhow!("prior_t: {e}"))?;
        Ok(prior)
    }

    /// Prior over a fixed set of `models` strategies.
    pub fn prior_for(&self, models: usize) -> Result<SwitchPriorConfig> {
        if let Some(k) = self.kmax {
            if k != models {
                bail!("kmax: must equal the number of models ({models}), got {k}");
            }
        }
        Ok(SwitchPriorConfig {
            theta: self.theta()?,
            model_prior: self.model_prior(models)?,
            switch_time_prior: self.switch_time_prior()?,
            schedule: KSchedule::Constant { kmax: models },
        })
    }

    pub fn density(&self) -> Result<SourceDensity> {
        let spec = self.density.as_deref().unwrap_or("linear:0.5,1");
        spec.parse().map_err(|e| anyhow!("{e}"))
    }

    pub fn estimators(&self) -> Result<Vec<Estimator>> {
        match &self.estimators {
            None => Ok(vec![Estimator::Switch, Estimator::Bma, Estimator::CubeRoot]),
            Some(list) => list.iter().map(|s| s.parse().map_err(|e| anyhow!("{e}"))).collect(),
        }
    }

    pub fn source(&self) -> Result<BinarySource> {
        let spec = self.source.as_deref().unwrap_or("iid:0.7");
        let (kind, args) = spec.split_once(':').ok_or_else(|| anyhow!("source: expected kind:params, got `{spec}`"))?;
        let nums = parse_list(args, "source")?;
        let src = match (kind, nums.as_slice()) {
            ("iid", [theta]) => BinarySource::Iid { theta: *theta },
            ("markov1", [a, b]) => BinarySource::Markov1 { p1_given0: *a, p1_given1: *b },
            _ => bail!("source: expected iid:theta or markov1:p1|0,p1|1, got `{spec}`"),
        };
        src.validate().map_err(|e| anyhow!("{e}"))?;
        Ok(src)
    }

    pub fn families(&self) -> Result<Vec<Family>> {
        let list = self.models.as_ref().ok_or_else(|| anyhow!("models: at least one model is required"))?;
        if list.is_empty() {
            bail!("models: at least one model is required");
        }
        list.iter().map(|s| parse_family(s)).collect()
    }
}

fn parse_list(s: &str, field: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("{field}: cannot parse `{t}` as a number")))
        .collect()
}

/// `laplace`, `markov:r` (bytes), `markov:r:A`, or `histogram:k`.
pub fn parse_family(s: &str) -> Result<Family> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |t: &str| t.parse::<usize>().map_err(|_| anyhow!("models: cannot parse `{t}` in `{s}`"));
    let family = match parts.as_slice() {
        ["laplace"] => Family::BernoulliLaplace,
        ["markov", r] => Family::Markov { order: num(r)?, alphabet: 256 },
        ["markov", r, a] => Family::Markov { order: num(r)?, alphabet: num(a)? },
        ["histogram", k] => Family::Histogram { bins: num(k)? },
        _ => bail!("models: unknown model `{s}`"),
    };
    family.state().map_err(|e| anyhow!("models: {e}"))?;
    Ok(family)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_parse() {
        assert_eq!(parse_family("laplace").unwrap(), Family::BernoulliLaplace);
        assert_eq!(parse_family("markov:2").unwrap(), Family::Markov { order: 2, alphabet: 256 });
        assert_eq!(parse_family("markov:1:2").unwrap(), Family::Markov { order: 1, alphabet: 2 });
        assert_eq!(parse_family("histogram:5").unwrap(), Family::Histogram { bins: 5 });
        assert!(parse_family("histogram:0").is_err());
        assert!(parse_family("ctw").is_err());
    }

    #[test]
    fn theta_range_is_enforced() {
        let cfg = FlatConfig { theta: Some(1.0), ..Default::default() };
        assert!(cfg.theta().unwrap_err().to_string().starts_with("theta"));
        let ok = FlatConfig { theta: Some(0.0), ..Default::default() };
        assert_eq!(ok.theta().unwrap(), 0.0);
    }

    #[test]
    fn priors_parse() {
        let cfg = FlatConfig { prior_k: Some("explicit:0.5,0.5".into()), prior_t: Some("geometric:0.9".into()), ..Default::default() };
        assert_eq!(cfg.model_prior(2).unwrap(), ModelPrior::Explicit { masses: vec![0.5, 0.5] });
        assert_eq!(cfg.switch_time_prior().unwrap(), SwitchTimePrior::Geometric { rho: 0.9 });
        let bad = FlatConfig { prior_t: Some("geometric:1.5".into()), ..Default::default() };
        assert!(bad.switch_time_prior().is_err());
        let kmax = FlatConfig { kmax: Some(3), ..Default::default() };
        assert!(kmax.prior_for(2).unwrap_err().to_string().starts_with("kmax"));
    }

    #[test]
    fn sources_parse() {
        let cfg = FlatConfig { source: Some("markov1:0.9,0.2".into()), ..Default::default() };
        assert_eq!(cfg.source().unwrap(), BinarySource::Markov1 { p1_given0: 0.9, p1_given1: 0.2 });
        assert!(FlatConfig { source: Some("iid:2".into()), ..Default::default() }.source().is_err());
    }

    #[test]
    fn file_values_fill_unset_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.json");
        fs::write(&path, r#"{"theta": 0.25, "seed": 3, "input": "data.txt", "orders": [1, 2]}"#).unwrap();
        let cfg = FlatConfig { config: Some(path.clone()), seed: Some(9), ..Default::default() }.resolve().unwrap();
        assert_eq!(cfg.theta, Some(0.25));
        assert_eq!(cfg.seed, Some(9));
        assert_eq!(cfg.orders, Some(vec![1, 2]));
        assert_eq!(cfg.input, Some(dir.path().join("data.txt")));

        fs::write(&path, r#"{"thetta": 0.25}"#).unwrap();
        let err = FlatConfig { config: Some(path), ..Default::default() }.resolve().unwrap_err();
        assert!(format!("{err:#}").contains("thetta"));
    }
}
