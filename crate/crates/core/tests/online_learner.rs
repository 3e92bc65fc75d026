//! The three-phase learner: concentration radii, the probability phase, the
//! cost bisection, the commit construction and whole runs.

mod common;

use acqlab::online::{self, StopScope, Termination};
use acqlab::{offline, Dims, Environment, Error, GameInstance, IncentivizingRules, LearnerConfig, LearnerSettings};
use approx::assert_abs_diff_eq;
use rand::Rng;

fn learnable_config(settings: &LearnerSettings) -> (GameInstance, LearnerConfig) {
    let inst = common::learnable_instance();
    let rules = offline::build_incentivizing_rules(&inst, inst.budget()).unwrap();
    let cfg = LearnerConfig::new(settings, rules, inst.budget()).unwrap();
    (inst, cfg)
}

fn settings(horizon: usize, seed: u64) -> LearnerSettings {
    LearnerSettings { seed, ..LearnerSettings::with_horizon(horizon) }
}

/// Placeholder rules with a positive margin, for phases that only need a rule per action.
fn flat_rules(d: &Dims) -> IncentivizingRules {
    IncentivizingRules { rules: vec![vec![vec![0.0; d.l * d.m]; d.k]; d.n], margins: vec![vec![1.0; d.k]; d.n], margin: 1.0 }
}

#[test]
fn hoeffding_radius_values() {
    assert_abs_diff_eq!(online::hoeffding_radius(1, 1.0, 2.0 / std::f64::consts::E.powi(2)), 1.0, epsilon = 1e-15);
    // sqrt(ln 20 / 40000)
    assert_abs_diff_eq!(online::hoeffding_radius(20_000, 1.0, 0.1), 0.008_654_091_913, epsilon = 1e-12);
    assert_eq!(online::hoeffding_radius(0, 1.0, 0.1), f64::INFINITY);
    assert_abs_diff_eq!(online::hoeffding_radius(50, 3.0, 0.2), 3.0 * online::hoeffding_radius(50, 1.0, 0.2), epsilon = 1e-15);
}

#[test]
fn hoeffding_radius_covers_bernoulli_means() {
    let mut rng = common::rng(99);
    let (n, delta, p) = (200, 0.05, 0.3);
    let radius = online::hoeffding_radius(n, 1.0, delta);
    let trials = 10_000;
    let covered = (0..trials)
        .filter(|_| {
            let hits = (0..n).filter(|_| rng.random::<f64>() < p).count();
            (hits as f64 / n as f64 - p).abs() <= radius
        })
        .count();
    assert!(covered as f64 / trials as f64 >= 1.0 - delta, "coverage {covered}/{trials}");
}

#[test]
fn integer_exponent_helpers() {
    assert_eq!(online::ceil_pow_two_thirds(0), 0);
    assert_eq!(online::ceil_pow_two_thirds(1), 1);
    assert_eq!(online::ceil_pow_two_thirds(8), 4);
    assert_eq!(online::ceil_pow_two_thirds(27), 9);
    assert_eq!(online::ceil_pow_two_thirds(28), 10);
    assert_eq!(online::ceil_pow_two_thirds(50_000), 1358);
    assert_eq!(online::ceil_pow_two_thirds(1_000_000), 10_000);
    assert_eq!(online::ceil_log2(1), 0);
    assert_eq!(online::ceil_log2(2), 1);
    assert_eq!(online::ceil_log2(1024), 10);
    assert_eq!(online::ceil_log2(1025), 11);
    assert_eq!(online::ceil_log2(50_000), 16);
}

#[test]
fn settings_defaults_and_json() {
    let s = LearnerSettings::from_json_str(r#"{"T": 50000, "delta": 0.1}"#, "inline").unwrap();
    assert_eq!(s.horizon, 50_000);
    assert_eq!(s.resolved_n1(), 1358);
    assert_eq!(s.resolved_n3(), 1358);
    assert_eq!(s.resolved_n2(), 16);
    assert_eq!(s.stop_scope, StopScope::Profile);
    assert!(!s.strict_ic);
    let s = LearnerSettings::from_json_str(r#"{"T": 100, "N1": 5, "N2": 3, "N3": 7, "stop_scope": "global"}"#, "inline").unwrap();
    assert_eq!((s.resolved_n1(), s.resolved_n2(), s.resolved_n3()), (5, 3, 7));
    assert_eq!(s.stop_scope, StopScope::Global);
    assert!(LearnerSettings::from_json_str(r#"{"T": 100, "bogus": 1}"#, "inline").is_err());
    assert!(LearnerSettings::from_json_str(r#"{"delta": 0.1}"#, "inline").is_err());
}

#[test]
fn config_rejects_bad_parameters() {
    let d = common::dims2();
    let mut s = settings(1000, 0);
    s.delta = 1.5;
    assert!(LearnerConfig::new(&s, flat_rules(&d), 1.0).is_err());
    let mut s = settings(1000, 0);
    s.n2 = Some(0);
    assert!(LearnerConfig::new(&s, flat_rules(&d), 1.0).is_err());
    let mut rules = flat_rules(&d);
    rules.margin = 0.0;
    assert!(LearnerConfig::new(&settings(1000, 0), rules, 1.0).is_err());
}

#[test]
fn direct_radius_value() {
    let d = common::dims2();
    let s = LearnerSettings { n2: Some(10), n3: Some(10_000), delta: 0.1, ..LearnerSettings::with_horizon(1_000_000) };
    let cfg = LearnerConfig::new(&s, flat_rules(&d), 1.0).unwrap();
    let want = 2.0 * ((320.0f64).ln() / 20_000.0).sqrt() + 2f64.powi(-10);
    assert_abs_diff_eq!(cfg.direct_chi(&d), want, epsilon = 1e-15);
    assert_abs_diff_eq!(cfg.direct_chi(&d), 0.034_942_195_118, epsilon = 1e-12);
    assert_abs_diff_eq!(online::chi_bound(&d, &cfg), 8.0 * want, epsilon = 1e-14);
    assert_eq!(online::cost_round_bound(&d, &cfg), 2 * 8 * 4 * 10_010);
    assert_abs_diff_eq!(cfg.k_constant(&d), 6.0 * 4.0 * 1e6 * 4.0 * 2.0 * 2.0, epsilon = 1e-6);
}

/// One action per agent; both agents observe the state exactly.
fn revealing_instance() -> GameInstance {
    let d = Dims::new(2, 1, 2, 2, 2).unwrap();
    let ns = d.num_signal_profiles();
    let mut table = vec![0.0; ns * d.m];
    table[d.encode(&[0, 0], d.l) * d.m] = 0.4;
    table[d.encode(&[1, 1], d.l) * d.m + 1] = 0.6;
    GameInstance::new(d, vec![0.4, 0.6], vec![table], vec![vec![0.0]; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap()
}

#[test]
fn probability_phase_on_a_revealing_instance() {
    let inst = revealing_instance();
    let d = inst.dims();
    let s = LearnerSettings { n1: Some(200), ..settings(100_000, 3) };
    let cfg = LearnerConfig::new(&s, flat_rules(&d), 1.0).unwrap();
    let mut env = Environment::new(inst.clone(), 3).unwrap();
    let est = online::estimate_prob(&mut env, &cfg).unwrap();
    assert_eq!(est.counts, vec![env.round()]);
    assert!(est.counts[0] >= 200);
    assert_abs_diff_eq!(est.zeta[0].iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    // Only the two revealing cells are ever observed.
    for (idx, &z) in est.zeta[0].iter().enumerate() {
        if inst.joint(0)[idx] == 0.0 {
            assert_eq!(z, 0.0);
        }
    }
    for i in 0..2 {
        assert_eq!(est.posterior_estimate(i, 0, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(est.posterior_estimate(i, 0, 1).unwrap(), vec![0.0, 1.0]);
    }
    assert_abs_diff_eq!(est.ell_hat(), 2.0, epsilon = 1e-15);
    assert_abs_diff_eq!(est.h_constant(), 0.5, epsilon = 1e-15);
    assert!(est.rho <= 2.0 / 26.0);
    let clean = online::clean_prob_event(&inst, &est, cfg.delta);
    assert!(clean.holds());
    assert_eq!(clean.max_posterior_error, 0.0);
}

#[test]
fn unobserved_signal_blocks_the_probability_phase() {
    // Signal 1 never occurs, so its cells keep an infinite radius.
    let d = Dims::new(2, 1, 2, 2, 2).unwrap();
    let ns = d.num_signal_profiles();
    let mut table = vec![0.0; ns * d.m];
    table[d.encode(&[0, 0], d.l) * d.m] = 0.5;
    table[d.encode(&[0, 0], d.l) * d.m + 1] = 0.5;
    let inst = GameInstance::new(d, vec![0.5, 0.5], vec![table], vec![vec![0.0]; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0).unwrap();
    let s = LearnerSettings { n1: Some(10), ..settings(100_000, 0) };
    let cfg = LearnerConfig::new(&s, flat_rules(&d), 1.0).unwrap();
    let mut env = Environment::new(inst, 0).unwrap();
    match online::estimate_prob(&mut env, &cfg) {
        Err(Error::HorizonExhausted { rounds, .. }) => assert_eq!(rounds, 10 * cfg.abort_factor),
        other => panic!("expected HorizonExhausted, got {other:?}"),
    }
}

/// Largest radius over the cells of the last targeted profile.
fn last_profile_radius(est: &acqlab::ProbEstimates) -> f64 {
    let d = est.dims;
    let last = d.decode(d.num_profiles() - 1, d.k);
    let mut worst: f64 = 0.0;
    for (i, &b_i) in last.iter().enumerate() {
        for s in 0..d.l {
            worst = worst.max(est.rho_cells[i][b_i * d.l + s]);
        }
    }
    worst
}

#[test]
fn stopping_rule_holds_when_the_phase_ends() {
    for scope in [StopScope::Profile, StopScope::Global] {
        let s = LearnerSettings { stop_scope: scope, ..settings(200_000, 1) };
        let (inst, cfg) = learnable_config(&s);
        let d = inst.dims();
        let mut env = Environment::new(inst, 1).unwrap();
        let est = online::estimate_prob(&mut env, &cfg).unwrap();
        assert!(est.counts.iter().all(|&c| c >= cfg.n1));
        assert_eq!(est.target_rounds.iter().sum::<usize>(), env.round());
        assert_eq!(est.off_target_rounds, 0, "incentivizing rules make agents follow the target");
        // The last profile stopped on the final counts.
        let last = d.decode(d.num_profiles() - 1, d.k);
        let gap = match scope {
            StopScope::Global => est.ell_hat(),
            StopScope::Profile => (0..d.n)
                .map(|i| {
                    let p0 = est.posterior_estimate(i, last[i], 0).unwrap();
                    let p1 = est.posterior_estimate(i, last[i], 1).unwrap();
                    p0.iter().zip(&p1).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min),
        };
        assert!(last_profile_radius(&est) <= gap / (13.0 * d.m as f64), "{scope:?}");
    }
}

#[test]
fn probability_phase_reports_an_exhausted_horizon() {
    let (inst, cfg) = learnable_config(&settings(10, 0));
    let mut env = Environment::new(inst, 0).unwrap();
    match online::estimate_prob(&mut env, &cfg) {
        Err(Error::HorizonExhausted { rounds, .. }) => assert_eq!(rounds, 10),
        other => panic!("expected HorizonExhausted, got {other:?}"),
    }
}

#[test]
fn cost_phase_bisection_and_bounds() {
    let s = LearnerSettings { n2: Some(10), n3: Some(2000), ..settings(1_000_000, 5) };
    let (inst, cfg) = learnable_config(&s);
    let d = inst.dims();
    let mut env = Environment::new(inst.clone(), 5).unwrap();
    let costs = online::estimate_costs(&mut env, &cfg).unwrap();
    assert_eq!(costs.rounds, env.round());
    assert!(costs.rounds <= online::cost_round_bound(&d, &cfg));
    assert!(costs.chi <= online::chi_bound(&d, &cfg) + 1e-15);
    assert!(costs.max_depth <= d.k * d.l * d.l);
    assert!(!costs.log.is_empty());
    for entry in &costs.log {
        assert_eq!(entry.search_steps, 10);
        assert!(entry.final_gap <= inst.budget() / 1024.0 + 1e-15, "gap {}", entry.final_gap);
        assert!(entry.final_gap <= entry.initial_gap / 1024.0 + 1e-15);
        assert_eq!(entry.payments_lo.len(), 2000);
        assert_abs_diff_eq!(entry.lambda, entry.f_hat_lo - entry.f_hat_hi, epsilon = 1e-15);
        assert_abs_diff_eq!(entry.chi, cfg.direct_chi(&d), epsilon = 1e-15);
    }
    for i in 0..d.n {
        for b in 0..d.k {
            assert_eq!(costs.get(i, b, b), (0.0, 0.0));
            for bp in 0..d.k {
                assert!(costs.visited[i][b * d.k + bp]);
                assert_eq!(costs.lambda[i][b * d.k + bp], -costs.lambda[i][bp * d.k + b]);
                assert_eq!(costs.chi_table[i][b * d.k + bp], costs.chi_table[i][bp * d.k + b]);
            }
        }
    }
    let clean = online::clean_cost_event(&inst, &costs);
    assert!(clean.holds, "max error {} > chi {}", clean.max_error, costs.chi);
    assert!(clean.entrywise);
}

#[test]
fn commit_coefficients_without_estimation_error() {
    let d = common::dims2();
    let [eps, lambda, ell_bar, ell_under, alpha, beta] = online::commit_coefficients(&d, 1.0, 0.0, 0.0, 0.0, 0.3, 0.05);
    assert_eq!(eps, 0.0);
    assert_eq!(lambda, 0.0);
    assert_eq!(ell_bar, 0.3);
    assert_eq!(ell_under, 0.3);
    assert_abs_diff_eq!(alpha, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(beta, 45.3 / (0.9 + 45.3), epsilon = 1e-15);

    let [eps, lambda, ell_bar, ell_under, alpha, _] = online::commit_coefficients(&d, 1.0, 0.01, 0.02, 0.001, 0.3, 0.05);
    assert_abs_diff_eq!(eps, 2.0 * 4.0 * 2.0 * 0.01 + 0.02, epsilon = 1e-15);
    assert_abs_diff_eq!(lambda, 2.0 * 4.0 * 2.0 * 3.0 * 0.03, epsilon = 1e-15);
    assert_abs_diff_eq!(ell_bar - ell_under, 16.0 * 0.001, epsilon = 1e-15);
    assert!(alpha > 0.0 && alpha < 1.0);
}

#[test]
fn completed_run_on_the_learnable_instance() {
    let (inst, cfg) = learnable_config(&settings(100_000, 2));
    let d = inst.dims();
    let env = Environment::new(inst.clone(), 2).unwrap().keep_records(false);
    let out = online::run(env, &cfg).unwrap();
    assert_eq!(out.termination, Termination::Completed);
    assert_eq!(out.trace.len(), 100_000);
    let (mech, art) = out.commit.as_ref().unwrap();
    mech.check(&d, inst.budget()).unwrap();
    for rules in &art.gamma_hat {
        for rule in rules {
            assert!(rule.iter().all(|&v| (-1e-12..=1.5 + 1e-12).contains(&v)), "{rule:?}");
        }
    }
    assert!(art.alpha > 0.0 && art.alpha <= 1.0);
    assert!(art.beta > 0.0 && art.beta < 1.0);
    assert!(art.ell_under > 0.0);

    let s = &out.trace.summary;
    assert_eq!(s.uncorrelated_rounds, out.exploration_rounds());
    assert!(s.correlated_rounds * 2 > 100_000, "only {} commit rounds", s.correlated_rounds);
    let explore = s.uncorrelated / s.uncorrelated_rounds as f64;
    let commit = s.correlated / s.correlated_rounds as f64;
    assert!(commit <= explore, "commit {commit} > exploration {explore}");

    let bound = online::regret_bound(&inst.constants(), &d, 100_000, cfg.delta, inst.budget(), cfg.rules.margin);
    assert!(out.regret() <= bound);
    assert_eq!(out.commit_is_ic(cfg.ic_tolerance), Some(true));
    let prob = out.prob.as_ref().unwrap();
    assert!(online::clean_prob_event(&inst, prob, cfg.delta).holds());
}

#[test]
fn short_horizon_truncates_without_committing() {
    let (inst, cfg) = learnable_config(&settings(100, 0));
    let env = Environment::new(inst, 0).unwrap();
    let out = online::run(env, &cfg).unwrap();
    assert!(matches!(out.termination, Termination::Truncated { .. }));
    assert_eq!(out.termination.label(), "truncated");
    assert_eq!(out.trace.len(), 100);
    assert_eq!(out.trace.summary.correlated_rounds, 0);
    assert!(out.commit.is_none());
}

#[test]
fn regret_bound_shape() {
    let inst = common::learnable_instance();
    let d = inst.dims();
    let c = inst.constants();
    let mut last = 0.0;
    for t in [10, 100, 1_000, 10_000, 100_000, 1_000_000] {
        let b = online::regret_bound(&c, &d, t, 0.1, 1.0, 0.01);
        assert!(b.is_finite() && b >= last);
        last = b;
    }
    let counter = common::counterexample().constants();
    assert_eq!(counter.ell, 0.0);
    assert_eq!(online::regret_bound(&counter, &d, 1000, 0.1, 1.0, 0.01), f64::INFINITY);
    let mut no_coverage = c.clone();
    no_coverage.iota = 0.0;
    assert_eq!(online::regret_bound(&no_coverage, &d, 1000, 0.1, 1.0, 0.01), f64::INFINITY);
    assert_eq!(online::regret_bound(&c, &d, 1000, 0.1, 1.0, 0.0), f64::INFINITY);
}

#[test]
fn runs_are_reproducible() {
    let (inst, cfg) = learnable_config(&settings(20_000, 7));
    let a = online::run(Environment::new(inst.clone(), 7).unwrap(), &cfg).unwrap();
    let b = online::run(Environment::new(inst.clone(), 7).unwrap(), &cfg).unwrap();
    assert_eq!(a.trace, b.trace);
    let c = online::run(Environment::new(inst, 8).unwrap(), &cfg).unwrap();
    assert_ne!(a.trace.records, c.trace.records);
}
