use proptest::prelude::*;

use switchcast::baselines::{bma_step, BmaState};
use switchcast::logspace::log_sum_exp;
use switchcast::oracle::{brute_force_by_parameters, brute_force_switch};
use switchcast::predictors::{Family, Outcome};
use switchcast::prior::{ModelPrior, SwitchPriorConfig, SwitchTimePrior};
use switchcast::runner::MixtureRun;
use switchcast::switch::{marginal_loglik, posterior_next, run_switch, switch_init, switch_step};

fn log_table(max_len: usize, k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-6.0f64..0.0, k), 0..=max_len)
}

fn normalized(k: usize) -> ModelPrior {
    ModelPrior::Uniform { size: k }
}

fn config(k: usize, theta: f64, uniform: bool, geometric: Option<f64>) -> SwitchPriorConfig {
    let mut cfg = SwitchPriorConfig::with_kmax(k).theta(theta);
    if uniform {
        cfg = cfg.model_prior(normalized(k));
    }
    if let Some(rho) = geometric {
        cfg = cfg.switch_time_prior(SwitchTimePrior::Geometric { rho });
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn recursion_matches_both_oracles(
        k in 1usize..=3,
        theta in 0.05f64..0.95,
        uniform in any::<bool>(),
        geometric in prop::option::of(0.05f64..0.95),
        table in log_table(5, 3),
    ) {
        let cfg = config(k, theta, uniform, geometric);
        let t: Vec<Vec<f64>> = table.into_iter().map(|r| r[..k].to_vec()).collect();
        let (w, _) = run_switch(&cfg, &t).unwrap();
        let paths = brute_force_switch(&t, &cfg).unwrap();
        let plans = brute_force_by_parameters(&t, &cfg).unwrap();
        let dp = marginal_loglik(&w);
        prop_assert!((dp - paths.log_marginal()).abs() <= 1e-10 * dp.abs().max(1.0));
        prop_assert!((dp - plans.log_marginal()).abs() <= 1e-10 * dp.abs().max(1.0));
    }

    #[test]
    fn posterior_is_normalized(
        k in 1usize..=4,
        theta in 0.0f64..0.99,
        table in log_table(40, 4),
    ) {
        let cfg = config(k, theta, false, None);
        let mut w = switch_init(&cfg).unwrap();
        for row in &table {
            switch_step(&mut w, &row[..k], &cfg).unwrap();
            let post = posterior_next(&w).unwrap();
            prop_assert!((post.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(post.iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn normalized_prior_conserves_mass(
        k in 1usize..=4,
        theta in 0.0f64..0.99,
        table in log_table(40, 4),
    ) {
        // each step is a proper conditional, so the marginal equals the chain rule
        let cfg = config(k, theta, true, None);
        let mut w = switch_init(&cfg).unwrap();
        prop_assert!(marginal_loglik(&w).abs() <= 1e-12);
        let mut chain = 0.0;
        for row in &table {
            let lse = log_sum_exp(&row[..k]);
            let normalized: Vec<f64> = row[..k].iter().map(|l| l - lse).collect();
            chain += switch_step(&mut w, &normalized, &cfg).unwrap();
        }
        prop_assert!((marginal_loglik(&w) - chain).abs() <= 1e-9 * chain.abs().max(1.0));
    }

    #[test]
    fn bayes_chain_on_random_tables(
        k in 1usize..=4,
        theta in 0.0f64..0.99,
        uniform in any::<bool>(),
        table in log_table(60, 4),
    ) {
        let cfg = config(k, theta, uniform, None);
        let mut w = switch_init(&cfg).unwrap();
        let mut bma = BmaState::new(&cfg, k).unwrap();
        let mut each = vec![0.0; k];
        for row in &table {
            switch_step(&mut w, &row[..k], &cfg).unwrap();
            bma_step(&mut bma, &row[..k]).unwrap();
            for (e, l) in each.iter_mut().zip(row) {
                *e += l;
            }
            let sw = marginal_loglik(&w);
            let lb = bma.log_marginal();
            let lnt = cfg.log_one_minus_theta();
            let slack = 1e-9 * sw.abs().max(1.0);
            prop_assert!(sw >= lnt + lb - slack);
            for (i, e) in each.iter().enumerate() {
                prop_assert!(lb >= cfg.log_pi_k(i + 1) + e - slack);
            }
        }
    }

    #[test]
    fn identical_strategies_reduce_to_that_strategy(
        k in 1usize..=4,
        theta in 0.0f64..0.99,
        bits in prop::collection::vec(0usize..2, 1..80),
    ) {
        let fams = vec![Family::Markov { order: 1, alphabet: 2 }; k];
        let mut run = MixtureRun::new(&fams, SwitchPriorConfig::with_kmax(k).theta(theta)).unwrap();
        for &b in &bits {
            run.step(Outcome::Symbol(b)).unwrap();
        }
        let single = run.strategy_logliks()[0];
        prop_assert!((run.switch_chain_loglik() - single).abs() <= 1e-9 * single.abs().max(1.0));
        prop_assert!((run.bma_chain_loglik() - single).abs() <= 1e-9 * single.abs().max(1.0));
    }
}

#[test]
fn bma_band_on_random_binary_sequences() {
    use rand::{Rng, SeedableRng};
    let fams = [Family::BernoulliLaplace, Family::Markov { order: 1, alphabet: 2 }, Family::Markov { order: 3, alphabet: 2 }];
    for seed in 0..100u64 {
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut run = MixtureRun::new(&fams, SwitchPriorConfig::with_kmax(3)).unwrap();
        for _ in 0..500 {
            run.step(Outcome::Symbol(rng.random_range(0..2))).unwrap();
            assert!(run.bma_band().holds(1e-9), "seed {seed} n {}", run.n());
            assert!(run.bayes_chain_gaps().holds(1e-9), "seed {seed} n {}", run.n());
        }
    }
}

#[test]
fn single_strategy_with_unit_prior_is_that_strategy() {
    let cfg = SwitchPriorConfig::with_kmax(1).model_prior(ModelPrior::Uniform { size: 1 });
    let table: Vec<Vec<f64>> = (0..30).map(|i| vec![-(1.0 + (i % 3) as f64)]).collect();
    let (w, _) = run_switch(&cfg, &table).unwrap();
    let total: f64 = table.iter().map(|r| r[0]).sum();
    assert!((marginal_loglik(&w) - total).abs() < 1e-10);
}
