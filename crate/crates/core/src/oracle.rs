//! Brute-force ground truth for tiny instances.
//!
//! Two independent formulations of the switch distribution are enumerated:
//!
//! - the prior as a sequential process over triples ξ_n = (S_n, M_n, K_n),
//!   where S_n marks a switch just before outcome n, M_n marks that the last
//!   switch has already happened, and K_n is the strategy predicting outcome n;
//! - explicit switching plans s = ((t_1,k_1),…,(t_m,k_m)) weighted by the
//!   factorized prior π_m(m)·π_k(k_1)·Π π_t(t_i | t_i > t_{i-1})·π_k(k_i).
//!
//! Both blow up exponentially and are guarded by hard caps.

use thiserror::Error;

use crate::logspace::{log_add_exp, LogDensity, LOG_ZERO};
use crate::prior::{KSchedule, PriorError, SwitchPriorConfig};

/// Largest sequence length accepted by the enumerators.
pub const MAX_ORACLE_LEN: usize = 8;
/// Largest strategy set accepted by the enumerators.
pub const MAX_ORACLE_K: usize = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration cap exceeded: length {len} (max {MAX_ORACLE_LEN}), |K| {k} (max {MAX_ORACLE_K})")]
    CapExceeded { len: usize, k: usize },

    #[error("invalid switch parameter: {0}")]
    InvalidParameter(String),

    #[error("log-predictive table row {row} has {got} entries, need {need}")]
    Table { row: usize, got: usize, need: usize },

    #[error(transparent)]
    Prior(#[from] PriorError),
}

fn check_caps(len: usize, schedule: &KSchedule) -> Result<(), OracleError> {
    let k = schedule.kmax();
    if len > MAX_ORACLE_LEN || k > MAX_ORACLE_K {
        return Err(OracleError::CapExceeded { len, k });
    }
    Ok(())
}

/// An explicit switching plan.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SwitchParameter {
    points: Vec<(u64, usize)>,
}

impl SwitchParameter {
    /// `points` must start at t = 0, have strictly increasing times and
    /// positive strategy indices.
    pub fn new(points: Vec<(u64, usize)>) -> Result<Self, OracleError> {
        match points.first() {
            None => return Err(OracleError::InvalidParameter("empty plan".into())),
            Some(&(t, _)) if t != 0 => {
                return Err(OracleError::InvalidParameter(format!("first switch point is {t}, not 0")))
            }
            _ => {}
        }
        if points.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(OracleError::InvalidParameter("switch points must strictly increase".into()));
        }
        if points.iter().any(|&(_, k)| k == 0) {
            return Err(OracleError::InvalidParameter("strategy indices start at 1".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[(u64, usize)] {
        &self.points
    }

    /// Number of segments m.
    pub fn segments(&self) -> usize {
        self.points.len()
    }

    /// Strategy used to predict outcome `n` (n ≥ 1): the last k_i with t_i < n.
    pub fn strategy_for(&self, n: u64) -> usize {
        self.points.iter().take_while(|&&(t, _)| t < n).last().map_or(self.points[0].1, |p| p.1)
    }

    /// ln π(s) under the factorized prior.
    pub fn log_prior(&self, config: &SwitchPriorConfig) -> LogDensity {
        let log_pi_m = config.log_theta_pow(self.segments() - 1) + config.log_one_minus_theta();
        log_pi_m + self.log_plan_factor(config)
    }

    /// π_k(k_1)·Π_{i≥2} π_t(t_i | t_i > t_{i-1})·π_k(k_i), in log space.
    fn log_plan_factor(&self, config: &SwitchPriorConfig) -> LogDensity {
        let time = &config.switch_time_prior;
        let mut v = config.log_pi_k(self.points[0].1);
        for w in self.points.windows(2) {
            let (prev, (t, k)) = (w[0].0, w[1]);
            v += time.log_pmf(t) - time.log_tail(prev + 1) + config.log_pi_k(k);
        }
        v
    }
}

/// ln q_s(x^n) = Σ_{i≤n} ln p_{K_i(s)}(x_i | x^{i-1}).
///
/// `log_predictives[i][k-1]` holds ln p_k(x_{i+1} | x^i).
pub fn q_s_loglik(s: &SwitchParameter, log_predictives: &[Vec<f64>]) -> Result<LogDensity, OracleError> {
    let mut total = 0.0;
    for (i, row) in log_predictives.iter().enumerate() {
        let k = s.strategy_for(i as u64 + 1);
        total += *row.get(k - 1).ok_or(OracleError::Table { row: i, got: row.len(), need: k })?;
    }
    Ok(total)
}

/// One element ξ_n of a prior path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PathStep {
    /// S_n: a switch point falls just before outcome n.
    pub switched: bool,
    /// M_n: no switch points remain after outcome n-1.
    pub frozen: bool,
    /// K_n: strategy predicting outcome n.
    pub k: usize,
}

impl PathStep {
    pub fn new(switched: bool, frozen: bool, k: usize) -> Self {
        Self { switched, frozen, k }
    }
}

/// ξ_1, …, ξ_N.
pub type PriorPath = Vec<PathStep>;

/// Visits every valid path of length `len`, reusing one buffer.
pub fn for_each_path<F: FnMut(&[PathStep])>(
    len: usize,
    schedule: &KSchedule,
    mut visit: F,
) -> Result<(), OracleError> {
    check_caps(len.saturating_sub(1), schedule)?;
    if len == 0 {
        visit(&[]);
        return Ok(());
    }
    let mut buf = Vec::with_capacity(len);
    for k in 1..=schedule.size(1) {
        for frozen in [false, true] {
            buf.push(PathStep::new(true, frozen, k));
            extend(&mut buf, len, schedule, &mut visit);
            buf.pop();
        }
    }
    Ok(())
}

fn extend<F: FnMut(&[PathStep])>(buf: &mut Vec<PathStep>, len: usize, schedule: &KSchedule, visit: &mut F) {
    if buf.len() == len {
        visit(buf);
        return;
    }
    let last = *buf.last().expect("non-empty");
    buf.push(PathStep::new(false, last.frozen, last.k));
    extend(buf, len, schedule, visit);
    buf.pop();
    if !last.frozen {
        let n = buf.len() as u64 + 1;
        for k in 1..=schedule.size(n) {
            for frozen in [false, true] {
                buf.push(PathStep::new(true, frozen, k));
                extend(buf, len, schedule, visit);
                buf.pop();
            }
        }
    }
}

/// All valid paths of length `len`.
pub fn enumerate_paths(len: usize, schedule: &KSchedule) -> Result<Vec<PriorPath>, OracleError> {
    let mut out = Vec::new();
    for_each_path(len, schedule, |p| out.push(p.to_vec()))?;
    Ok(out)
}

/// ln π(ξ_1)·Π π(ξ_{n+1} | M_n, K_n), or `LOG_ZERO` for an impossible path.
pub fn path_prior(path: &[PathStep], config: &SwitchPriorConfig) -> LogDensity {
    let Some(first) = path.first() else { return 0.0 };
    if !first.switched || first.k == 0 || first.k > config.kset_size(1) {
        return LOG_ZERO;
    }
    let (lt, lnt) = (config.log_theta(), config.log_one_minus_theta());
    let mut v = config.log_pi_k(first.k) + if first.frozen { lnt } else { lt };
    for (i, w) in path.windows(2).enumerate() {
        let n = i as u64 + 1;
        let (prev, next) = (w[0], w[1]);
        let factor = match (prev.frozen, next.switched, next.frozen) {
            (false, false, false) if next.k == prev.k => match config.switch_time_prior.log_hazard(n) {
                Ok((_, stay)) => stay,
                Err(_) => LOG_ZERO,
            },
            (true, false, true) if next.k == prev.k => 0.0,
            (false, true, m) if next.k >= 1 && next.k <= config.kset_size(n + 1) => {
                match config.switch_time_prior.log_hazard(n) {
                    Ok((sw, _)) => sw + config.log_pi_k(next.k) + if m { lnt } else { lt },
                    Err(_) => LOG_ZERO,
                }
            }
            _ => LOG_ZERO,
        };
        v += factor;
        if v == LOG_ZERO {
            return LOG_ZERO;
        }
    }
    v
}

/// ln π(ξ^N) computed from the whole history: the switch points and
/// strategies read off the path, the segment-count prior, and the
/// probability that the next switch point (if any) lies at or after N.
pub fn path_prior_from_history(path: &[PathStep], config: &SwitchPriorConfig) -> LogDensity {
    let Some(last) = path.last() else { return 0.0 };
    // structural validity
    if !path[0].switched {
        return LOG_ZERO;
    }
    for (i, w) in path.windows(2).enumerate() {
        let n = i as u64 + 1;
        let (prev, next) = (w[0], w[1]);
        let ok = if next.switched {
            !prev.frozen && next.k <= config.kset_size(n + 1)
        } else {
            next.k == prev.k && next.frozen == prev.frozen
        };
        if !ok {
            return LOG_ZERO;
        }
    }
    if path[0].k == 0 || path[0].k > config.kset_size(1) {
        return LOG_ZERO;
    }
    let points: Vec<(u64, usize)> = path
        .iter()
        .enumerate()
        .filter(|(_, x)| x.switched)
        .map(|(i, x)| (i as u64, x.k))
        .collect();
    let segments = points.len();
    let plan = SwitchParameter { points };
    let factor = plan.log_plan_factor(config);
    let time = &config.switch_time_prior;
    if last.frozen {
        // π_m(m = A)
        config.log_theta_pow(segments - 1) + config.log_one_minus_theta() + factor
    } else {
        // π_m(m > A) · π_t(t_{A+1} ≥ N | t_{A+1} > t_A)
        let t_last = plan.points.last().expect("at least one switch").0;
        let n = path.len() as u64;
        config.log_theta_pow(segments) + factor + time.log_tail(n) - time.log_tail(t_last + 1)
    }
}

/// Joint masses P(x^N, M_{N+1} = m, K_{N+1} = k), in log space.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMasses {
    /// m = 0, indexed by k-1.
    pub unfrozen: Vec<f64>,
    /// m = 1, indexed by k-1.
    pub frozen: Vec<f64>,
}

impl OracleMasses {
    /// ln p_sw(x^N).
    pub fn log_marginal(&self) -> LogDensity {
        self.unfrozen.iter().chain(&self.frozen).fold(LOG_ZERO, |acc, &x| log_add_exp(acc, x))
    }
}

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    c: f64,
}

impl Compensated {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

fn check_table(log_predictives: &[Vec<f64>], config: &SwitchPriorConfig) -> Result<(), OracleError> {
    for (i, row) in log_predictives.iter().enumerate() {
        let need = config.kset_size(i as u64 + 1);
        if row.len() < need {
            return Err(OracleError::Table { row: i, got: row.len(), need });
        }
    }
    Ok(())
}

/// Path-enumeration oracle: sums prior × likelihood over every path ξ_1..ξ_{N+1}.
pub fn brute_force_switch(
    log_predictives: &[Vec<f64>],
    config: &SwitchPriorConfig,
) -> Result<OracleMasses, OracleError> {
    config.validate()?;
    check_table(log_predictives, config)?;
    let n = log_predictives.len();
    check_caps(n, &config.schedule)?;
    let kmax = config.schedule.kmax();
    let mut unfrozen = vec![Compensated::default(); kmax];
    let mut frozen = vec![Compensated::default(); kmax];
    for_each_path(n + 1, &config.schedule, |path| {
        let prior = path_prior(path, config);
        if prior == LOG_ZERO {
            return;
        }
        let lik: f64 = path[..n]
            .iter()
            .zip(log_predictives)
            .map(|(step, row)| row[step.k - 1])
            .sum();
        let last = path[n];
        let bucket = if last.frozen { &mut frozen } else { &mut unfrozen };
        bucket[last.k - 1].add((prior + lik).exp());
    })?;
    let to_log = |v: Vec<Compensated>| v.iter().map(|c| c.value().ln()).collect();
    Ok(OracleMasses { unfrozen: to_log(unfrozen), frozen: to_log(frozen) })
}

/// Switching plans whose switch points all lie in 1..=horizon, with every
/// segment's strategy allowed by the schedule when it starts.
pub fn enumerate_parameters(horizon: u64, config: &SwitchPriorConfig) -> Result<Vec<SwitchParameter>, OracleError> {
    check_caps(horizon as usize, &config.schedule)?;
    let mut out = Vec::new();
    let mut stack: Vec<(u64, usize)> = Vec::new();
    fn rec(
        stack: &mut Vec<(u64, usize)>,
        from: u64,
        horizon: u64,
        config: &SwitchPriorConfig,
        out: &mut Vec<SwitchParameter>,
    ) {
        out.push(SwitchParameter { points: stack.clone() });
        for t in from..=horizon {
            for k in 1..=config.kset_size(t + 1) {
                stack.push((t, k));
                rec(stack, t + 1, horizon, config, out);
                stack.pop();
            }
        }
    }
    for k in 1..=config.kset_size(1) {
        stack.push((0, k));
        rec(&mut stack, 1, horizon, config, &mut out);
        stack.pop();
    }
    Ok(out)
}

/// Plan-enumeration oracle.
///
/// Every plan is truncated to its switch points in 0..=N. A truncated plan
/// with m points contributes π_m(m)·(plan factor) to M_{N+1} = 1, and the
/// mass of all its extensions whose next switch point is at least N+1,
/// π_m(m' > m)·(plan factor)·π_t(T ≥ N+1 | T > t_m), to M_{N+1} = 0.
pub fn brute_force_by_parameters(
    log_predictives: &[Vec<f64>],
    config: &SwitchPriorConfig,
) -> Result<OracleMasses, OracleError> {
    config.validate()?;
    check_table(log_predictives, config)?;
    let n = log_predictives.len() as u64;
    let kmax = config.schedule.kmax();
    let mut unfrozen = vec![LOG_ZERO; kmax];
    let mut frozen = vec![LOG_ZERO; kmax];
    let time = &config.switch_time_prior;
    for s in enumerate_parameters(n, config)? {
        let lik = q_s_loglik(&s, log_predictives)?;
        let m = s.segments();
        let factor = s.log_plan_factor(config);
        let &(t_last, k_next) = s.points().last().expect("non-empty");
        let stop = config.log_theta_pow(m - 1) + config.log_one_minus_theta() + factor;
        let go_on = config.log_theta_pow(m) + factor + time.log_tail(n + 1) - time.log_tail(t_last + 1);
        frozen[k_next - 1] = log_add_exp(frozen[k_next - 1], stop + lik);
        unfrozen[k_next - 1] = log_add_exp(unfrozen[k_next - 1], go_on + lik);
    }
    Ok(OracleMasses { unfrozen, frozen })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::ModelPrior;
    use std::collections::HashSet;

    fn cfg(k: usize, theta: f64) -> SwitchPriorConfig {
        SwitchPriorConfig::with_kmax(k).theta(theta).model_prior(ModelPrior::Uniform { size: k })
    }

    #[test]
    fn single_step_paths() {
        let one = enumerate_paths(1, &KSchedule::Constant { kmax: 1 }).unwrap();
        let set: HashSet<_> = one.into_iter().collect();
        assert_eq!(set.len(), 2);
        assert!(set.contains(&vec![PathStep::new(true, false, 1)]));
        assert!(set.contains(&vec![PathStep::new(true, true, 1)]));
        assert_eq!(enumerate_paths(1, &KSchedule::Constant { kmax: 2 }).unwrap().len(), 4);
    }

    /// Generates every (S, M, K) triple sequence and keeps those obeying the
    /// transition table directly.
    fn count_by_filtering(len: usize, k: usize) -> usize {
        let triples: Vec<PathStep> = (1..=k)
            .flat_map(|kk| {
                [(false, false), (false, true), (true, false), (true, true)]
                    .into_iter()
                    .map(move |(s, m)| PathStep::new(s, m, kk))
            })
            .collect();
        let mut count = 0;
        let total = triples.len().pow(len as u32);
        for code in 0..total {
            let mut c = code;
            let path: Vec<PathStep> = (0..len)
                .map(|_| {
                    let t = triples[c % triples.len()];
                    c /= triples.len();
                    t
                })
                .collect();
            if !path[0].switched {
                continue;
            }
            let ok = path.windows(2).all(|w| {
                let (a, b) = (w[0], w[1]);
                match (b.switched, a.frozen, b.frozen) {
                    (false, false, false) => b.k == a.k,
                    (false, true, true) => b.k == a.k,
                    (true, false, _) => true,
                    _ => false,
                }
            });
            if ok {
                count += 1;
            }
        }
        count
    }

    #[test]
    fn path_counts_match_filtered_generation() {
        for k in 1..=3 {
            for len in 1..=4 {
                let paths = enumerate_paths(len, &KSchedule::Constant { kmax: k }).unwrap();
                let distinct: HashSet<_> = paths.iter().cloned().collect();
                assert_eq!(distinct.len(), paths.len());
                assert_eq!(paths.len(), count_by_filtering(len, k), "len={len} k={k}");
            }
        }
    }

    #[test]
    fn first_step_prior() {
        let c = SwitchPriorConfig::with_kmax(3).theta(0.3);
        let frozen = path_prior(&[PathStep::new(true, true, 2)], &c);
        assert!((frozen.exp() - (1.0 / 6.0) * 0.7).abs() < 1e-15);
        let open = path_prior(&[PathStep::new(true, false, 2)], &c);
        assert!((open.exp() - (1.0 / 6.0) * 0.3).abs() < 1e-15);
        assert_eq!(path_prior(&[PathStep::new(false, false, 1)], &c), LOG_ZERO);
    }

    #[test]
    fn invalid_transitions_have_zero_prior() {
        let c = cfg(2, 0.5);
        let bad = [
            vec![PathStep::new(true, true, 1), PathStep::new(true, true, 2)],
            vec![PathStep::new(true, false, 1), PathStep::new(false, false, 2)],
            vec![PathStep::new(true, true, 1), PathStep::new(false, false, 1)],
            vec![PathStep::new(true, false, 1), PathStep::new(false, true, 1)],
        ];
        for p in &bad {
            assert_eq!(path_prior(p, &c), LOG_ZERO, "{p:?}");
            assert_eq!(path_prior_from_history(p, &c), LOG_ZERO, "{p:?}");
        }
    }

    #[test]
    fn total_prior_mass_is_one() {
        for k in 1..=3 {
            for theta in [0.1, 0.5, 0.9] {
                let c = cfg(k, theta);
                for len in 1..=6 {
                    let mut total = Compensated::default();
                    for_each_path(len, &c.schedule, |p| total.add(path_prior(p, &c).exp())).unwrap();
                    assert!((total.value() - 1.0).abs() < 1e-12, "k={k} θ={theta} len={len}");
                }
            }
        }
    }

    #[test]
    fn conditionals_depend_only_on_last_state() {
        for theta in [0.1, 0.5, 0.9] {
            let c = SwitchPriorConfig::with_kmax(3).theta(theta);
            for p in enumerate_paths(5, &c.schedule).unwrap() {
                for len in 1..=p.len() {
                    let a = path_prior(&p[..len], &c);
                    let b = path_prior_from_history(&p[..len], &c);
                    assert!((a - b).abs() < 1e-12, "{p:?} len={len}");
                }
            }
        }
    }

    #[test]
    fn caps_fail_loudly() {
        let c = cfg(2, 0.5);
        let table = vec![vec![0.0; 2]; 9];
        assert!(matches!(brute_force_switch(&table, &c), Err(OracleError::CapExceeded { .. })));
        assert!(matches!(
            enumerate_paths(3, &KSchedule::Constant { kmax: 5 }),
            Err(OracleError::CapExceeded { .. })
        ));
    }

    #[test]
    fn parameter_validation_and_lookup() {
        assert!(SwitchParameter::new(vec![]).is_err());
        assert!(SwitchParameter::new(vec![(1, 1)]).is_err());
        assert!(SwitchParameter::new(vec![(0, 1), (2, 2), (2, 1)]).is_err());
        assert!(SwitchParameter::new(vec![(0, 0)]).is_err());
        let s = SwitchParameter::new(vec![(0, 1), (2, 3), (5, 2)]).unwrap();
        let ks: Vec<usize> = (1..=7).map(|n| s.strategy_for(n)).collect();
        assert_eq!(ks, vec![1, 1, 3, 3, 3, 2, 2]);
    }

    #[test]
    fn q_s_examples() {
        let table = vec![vec![0.2f64.ln(), 0.7f64.ln()], vec![0.4f64.ln(), 0.9f64.ln()]];
        let base = SwitchParameter::new(vec![(0, 1)]).unwrap();
        let p1 = 0.2f64.ln() + 0.4f64.ln();
        assert!((q_s_loglik(&base, &table).unwrap() - p1).abs() < 1e-15);
        let same = SwitchParameter::new(vec![(0, 1), (1, 1)]).unwrap();
        assert!((q_s_loglik(&same, &table).unwrap() - p1).abs() < 1e-15);
        let sw = SwitchParameter::new(vec![(0, 1), (1, 2)]).unwrap();
        assert!((q_s_loglik(&sw, &table).unwrap() - (0.2f64.ln() + 0.9f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn empty_sequence_gives_prior_masses() {
        let c = SwitchPriorConfig::with_kmax(3).theta(0.3);
        let m = brute_force_switch(&[], &c).unwrap();
        for k in 1..=3 {
            assert!((m.unfrozen[k - 1] - (c.log_pi_k(k) + 0.3f64.ln())).abs() < 1e-14);
            assert!((m.frozen[k - 1] - (c.log_pi_k(k) + 0.7f64.ln())).abs() < 1e-14);
        }
    }

    #[test]
    fn single_strategy_oracle_is_its_marginal() {
        let c = cfg(1, 0.5);
        let table: Vec<Vec<f64>> = [0.3, 0.8, 0.5, 0.6].iter().map(|p: &f64| vec![p.ln()]).collect();
        let direct: f64 = table.iter().map(|r| r[0]).sum();
        let m = brute_force_switch(&table, &c).unwrap();
        assert!((m.log_marginal() - direct).abs() < 1e-12);
    }

    #[test]
    fn plan_enumeration_agrees_with_paths() {
        let table: Vec<Vec<f64>> = vec![
            vec![0.5f64.ln(), 0.3f64.ln(), 0.9f64.ln()],
            vec![0.5f64.ln(), 0.6f64.ln(), 0.2f64.ln()],
            vec![0.4f64.ln(), 0.7f64.ln(), 0.5f64.ln()],
            vec![0.45f64.ln(), 0.65f64.ln(), 0.1f64.ln()],
        ];
        for theta in [0.1, 0.5, 0.9] {
            for k in 1..=3 {
                let c = SwitchPriorConfig::with_kmax(k).theta(theta);
                for n in 0..=4 {
                    let a = brute_force_switch(&table[..n], &c).unwrap();
                    let b = brute_force_by_parameters(&table[..n], &c).unwrap();
                    assert!((a.log_marginal() - b.log_marginal()).abs() < 1e-10);
                    for i in 0..k {
                        assert!((a.unfrozen[i] - b.unfrozen[i]).abs() < 1e-10);
                        assert!((a.frozen[i] - b.frozen[i]).abs() < 1e-10);
                    }
                }
            }
        }
    }
}
