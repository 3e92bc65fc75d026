//! Game model: validation, marginals, posteriors, constants, serialization and generators.

mod common;

use acqlab::game::{self, Violation};
use acqlab::generate::{self, GenKind, GenOptions};
use acqlab::offline;
use acqlab::{Dims, Error, GameInstance};
use approx::assert_abs_diff_eq;
use common::{counterexample, dims2, uniform_independent, K, LEFT, RIGHT};

#[test]
fn counterexample_passes_core_validation() {
    let inst = counterexample();
    let report = inst.validate();
    assert!(report.core().is_valid(), "{report}");
}

#[test]
fn counterexample_second_agent_marginal_depends_on_first_agent_action() {
    // Agent 1's signal is uninformative when agent 0 plays ▷ and informative
    // when agent 0 plays ◁, whatever agent 1 does: the tables violate peer
    // independence for agent 1 and only for agent 1.
    let inst = counterexample();
    let report = inst.validate();
    let peer = report.peer_independence();
    assert!(!peer.is_empty());
    for v in peer {
        match v {
            Violation::PeerIndependence { agent, residual, .. } => {
                assert_eq!(*agent, 1);
                assert_abs_diff_eq!(residual.abs(), 1.0 / 3.0 - 1.0 / 4.0, epsilon = 1e-12);
            }
            other => panic!("unexpected violation {other:?}"),
        }
    }
}

#[test]
fn joint_row_summing_to_nine_tenths_is_named() {
    let inst = counterexample();
    let mut joint = inst.joint_tables().to_vec();
    let b = 2;
    let scale = 0.9;
    joint[b].iter_mut().for_each(|v| *v *= scale);
    let bad = GameInstance::new(inst.dims(), inst.prior().to_vec(), joint, inst.costs().to_vec(), inst.utility().to_vec(), 1.0).unwrap();
    let report = bad.validate();
    let key = inst.dims().profile_key(b, 2);
    assert!(report.violations.iter().any(|v| matches!(v, Violation::JointNotNormalized { profile, sum, .. } if *profile == key && (sum - 0.9).abs() < 1e-12)));
    assert!(report.to_string().contains(&key));
}

#[test]
fn perturbed_table_breaks_peer_independence() {
    let inst = common::random_instance(GenKind::Pis, dims2(), 11);
    assert!(inst.validate().is_valid());
    // Move mass between two signal profiles that differ in agent 0's signal
    // only, under one profile: agent 0's marginal now depends on agent 1's action.
    let d = inst.dims();
    let mut joint = inst.joint_tables().to_vec();
    let b = d.encode(&[0, 1], d.k);
    let from = d.encode(&[0, 0], d.l) * d.m;
    let to = d.encode(&[1, 0], d.l) * d.m;
    let delta = 0.5 * joint[b][from];
    joint[b][from] -= delta;
    joint[b][to] += delta;
    let sum: f64 = joint[b].iter().sum();
    joint[b].iter_mut().for_each(|v| *v /= sum);
    let bad = GameInstance::new(d, inst.prior().to_vec(), joint.clone(), inst.costs().to_vec(), inst.utility().to_vec(), 1.0).unwrap();
    let peer = bad.validate();
    let peer = peer.peer_independence();
    assert!(peer.iter().any(|v| matches!(v, Violation::PeerIndependence { agent: 0, .. })));
    // Direct comparison of the two marginals agrees with the validator.
    let a = common::brute_marginal_at(&bad, 0, d.encode(&[0, 0], d.k));
    let c = common::brute_marginal_at(&bad, 0, b);
    assert!(a.iter().zip(&c).any(|(x, y)| (x - y).abs() > 1e-9));
}

#[test]
fn counterexample_marginal_of_first_agent_after_left() {
    let inst = counterexample();
    let marg = inst.marginal(0, LEFT).unwrap();
    let expected = [1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 3.0];
    for (a, e) in marg.iter().zip(expected) {
        assert_abs_diff_eq!(*a, e, epsilon = 1e-15);
    }
}

#[test]
fn uniform_independent_marginal_is_prior_over_l() {
    let d = Dims::new(2, 2, 3, 2, 2).unwrap();
    let prior = vec![0.3, 0.7];
    let inst = uniform_independent(d, prior.clone(), vec![vec![0.0, 0.5]; 2], vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1.0);
    for i in 0..2 {
        for b in 0..2 {
            let marg = inst.marginal(i, b).unwrap();
            for s in 0..3 {
                for t in 0..2 {
                    assert_abs_diff_eq!(marg[s * 2 + t], prior[t] / 3.0, epsilon = 1e-15);
                }
            }
            for s in 0..3 {
                let post = inst.posterior(i, b, s).unwrap();
                assert_abs_diff_eq!(post[0], 0.3, epsilon = 1e-12);
                assert_abs_diff_eq!(post[1], 0.7, epsilon = 1e-12);
            }
        }
    }
    let c = inst.constants();
    assert_abs_diff_eq!(c.ell, 0.0, epsilon = 1e-15);
    assert_abs_diff_eq!(c.iota, 1.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn marginals_match_exhaustive_summation() {
    for (seed, kind) in [(1, GenKind::Pis), (2, GenKind::General), (3, GenKind::General)] {
        let d = Dims::new(3, 2, 2, 2, 2).unwrap();
        let inst = common::random_instance(kind, d, seed);
        for i in 0..d.n {
            for b in 0..d.k {
                let want = common::brute_marginal(&inst, i, b);
                for (a, e) in inst.marginal(i, b).unwrap().iter().zip(&want) {
                    assert_abs_diff_eq!(*a, *e, epsilon = 1e-14);
                }
            }
        }
    }
}

#[test]
fn counterexample_posterior_after_left_and_right_signal() {
    let post = counterexample().posterior(0, LEFT, RIGHT).unwrap();
    assert_abs_diff_eq!(post[0], 2.0 / 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(post[1], 1.0 / 3.0, epsilon = 1e-15);
}

#[test]
fn posteriors_match_bayes_quotient() {
    let d = Dims::new(2, 3, 3, 3, 2).unwrap();
    let inst = common::random_instance(GenKind::General, d, 7);
    for i in 0..d.n {
        for b in 0..d.k {
            let marg = common::brute_marginal(&inst, i, b);
            for s in 0..d.l {
                let mass: f64 = marg[s * d.m..(s + 1) * d.m].iter().sum();
                let post = inst.posterior(i, b, s).unwrap();
                for t in 0..d.m {
                    assert_abs_diff_eq!(post[t], marg[s * d.m + t] / mass, epsilon = 1e-13);
                }
            }
        }
    }
}

#[test]
fn zero_probability_signal_has_no_posterior() {
    let d = Dims::new(1, 1, 2, 2, 1).unwrap();
    let inst = GameInstance::new(d, vec![0.5, 0.5], vec![vec![0.5, 0.5, 0.0, 0.0]], vec![vec![0.0]], vec![vec![0.0, 0.0]], 1.0).unwrap();
    assert!(matches!(inst.posterior(0, 0, 1), Err(Error::ZeroProbabilitySignal { agent: 0, action: 0, signal: 1 })));
    assert_eq!(inst.constants().zero_signals, vec![(0, 0, 1)]);
}

#[test]
fn counterexample_constants() {
    let c = counterexample().constants();
    assert_abs_diff_eq!(c.cost_diffs[0][LEFT * 2 + RIGHT], K, epsilon = 1e-15);
    // The smallest signal marginal: every table row pair sums to 1/2 here.
    assert_abs_diff_eq!(c.iota, 0.5, epsilon = 1e-15);
    // Agent 1's averaged posteriors coincide, so the separation vanishes.
    assert_abs_diff_eq!(c.ell, 0.0, epsilon = 1e-15);
}

#[test]
fn cost_differences_are_antisymmetric() {
    let d = Dims::new(3, 3, 2, 2, 2).unwrap();
    let inst = common::random_instance(GenKind::Pis, d, 5);
    let c = inst.constants();
    for i in 0..d.n {
        for b in 0..d.k {
            assert_eq!(c.cost_diffs[i][b * d.k + b], 0.0);
            for bp in 0..d.k {
                assert_eq!(c.cost_diffs[i][b * d.k + bp], -c.cost_diffs[i][bp * d.k + b]);
            }
        }
    }
}

#[test]
fn constants_match_pairwise_scan() {
    let d = Dims::new(2, 2, 3, 2, 2).unwrap();
    let inst = common::random_instance(GenKind::General, d, 21);
    let mut ell = f64::INFINITY;
    let mut iota = f64::INFINITY;
    for i in 0..d.n {
        for b in 0..d.k {
            let marg = common::brute_marginal(&inst, i, b);
            let mass: Vec<f64> = (0..d.l).map(|s| marg[s * d.m..(s + 1) * d.m].iter().sum()).collect();
            for s in 0..d.l {
                iota = iota.min(mass[s]);
                for s2 in 0..d.l {
                    if s2 != s {
                        let dist: f64 = (0..d.m).map(|t| (marg[s * d.m + t] / mass[s] - marg[s2 * d.m + t] / mass[s2]).powi(2)).sum();
                        ell = ell.min(dist);
                    }
                }
            }
        }
    }
    let c = inst.constants();
    assert_abs_diff_eq!(c.ell, ell, epsilon = 1e-13);
    assert_abs_diff_eq!(c.iota, iota, epsilon = 1e-15);
}

#[test]
fn save_then_load_round_trips_bit_identically() {
    let inst = counterexample();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("inst.json");
    game::save(&inst, &path).unwrap();
    let back = game::load(&path).unwrap();
    assert_eq!(back, inst);
    for (a, b) in back.joint_tables().iter().flatten().zip(inst.joint_tables().iter().flatten()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn random_instance_round_trips_and_validates() {
    let inst = common::random_instance(GenKind::General, Dims::new(2, 3, 2, 3, 2).unwrap(), 9);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("random.json");
    inst.save(&path).unwrap();
    let back = game::load(&path).unwrap();
    assert_eq!(back, inst);
    assert!(back.validate().is_valid());
}

#[test]
fn missing_prior_is_a_parse_error_naming_the_field() {
    let text = counterexample().to_json();
    let mut value: serde_json::Value = serde_json::from_str(&text).unwrap();
    value.as_object_mut().unwrap().remove("prior");
    let err = GameInstance::from_json_str(&value.to_string(), "broken.json").unwrap_err();
    match &err {
        Error::Parse { source_name, message, .. } => {
            assert_eq!(source_name, "broken.json");
            assert!(message.contains("prior"), "{message}");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn load_rejects_unnormalized_tables() {
    let inst = counterexample();
    let mut joint = inst.joint_tables().to_vec();
    joint[0][0] += 0.1;
    let bad = GameInstance::new(inst.dims(), inst.prior().to_vec(), joint, inst.costs().to_vec(), inst.utility().to_vec(), 1.0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    bad.save(&path).unwrap();
    assert!(matches!(game::load(&path), Err(Error::Validation(_))));
}

#[test]
fn counterexample_tables_and_decision_values() {
    let inst = counterexample();
    let d = inst.dims();
    let ll = d.encode(&[LEFT, LEFT], d.k);
    let rr = d.encode(&[RIGHT, RIGHT], d.k);
    let s = |a, b| d.encode(&[a, b], d.l);
    let table = inst.joint(ll);
    let expected = [(s(RIGHT, RIGHT), 0, 1.0 / 3.0), (s(LEFT, LEFT), 0, 1.0 / 6.0), (s(RIGHT, RIGHT), 1, 1.0 / 6.0), (s(LEFT, LEFT), 1, 1.0 / 3.0)];
    let mut total = 0.0;
    for (sig, t, p) in expected {
        assert_eq!(table[sig * d.m + t], p);
        total += p;
    }
    assert_abs_diff_eq!(total, 1.0, epsilon = 1e-15);
    for sig in [s(RIGHT, LEFT), s(LEFT, RIGHT)] {
        assert_eq!(table[sig * d.m], 0.0);
        assert_eq!(table[sig * d.m + 1], 0.0);
    }
    assert_abs_diff_eq!(common::decision_value(&inst, rr), 0.5, epsilon = 1e-15);
    assert_abs_diff_eq!(common::decision_value(&inst, ll), 2.0 / 3.0, epsilon = 1e-15);
    assert_eq!(inst.cost(0, LEFT), K);
    assert_eq!(inst.cost(0, RIGHT), 0.0);
    assert_eq!(inst.costs()[1], vec![0.0, 0.0]);
}

#[test]
fn counterexample_rejects_out_of_range_cost() {
    assert!(matches!(generate::gen_counterexample(0.0, 1.0), Err(Error::InvalidArgument(_))));
    assert!(matches!(generate::gen_counterexample(0.05, 1.0), Err(Error::InvalidArgument(_))));
    assert!(generate::gen_counterexample(1.0 / 24.0, 1.0).is_ok());
}

#[test]
fn product_form_generator_output_factorizes() {
    for seed in 0..10 {
        let inst = common::random_instance(GenKind::Pis, Dims::new(3, 2, 2, 2, 2).unwrap(), seed);
        let (_, residual) = offline::product_form_factors(&inst);
        assert!(residual <= offline::PRODUCT_FORM_TOLERANCE, "seed {seed}: residual {residual}");
    }
}

#[test]
fn correlated_generator_output_is_peer_independent_but_not_product_form() {
    let mut correlated = 0;
    for seed in 0..10 {
        let inst = common::random_instance(GenKind::General, dims2(), seed);
        let report = inst.validate();
        assert!(report.is_valid(), "seed {seed}: {report}");
        if offline::product_form_factors(&inst).1 > offline::PRODUCT_FORM_TOLERANCE {
            correlated += 1;
        }
    }
    assert!(correlated >= 9, "only {correlated} of 10 instances carry correlation");
}

#[test]
fn generator_is_deterministic_in_the_seed() {
    let d = Dims::new(2, 3, 2, 2, 3).unwrap();
    for kind in [GenKind::Pis, GenKind::General] {
        let a = common::random_instance(kind, d, 42);
        let b = common::random_instance(kind, d, 42);
        let c = common::random_instance(kind, d, 43);
        assert_eq!(a.to_json(), b.to_json());
        assert_ne!(a.to_json(), c.to_json());
    }
}

#[test]
fn generator_honours_thresholds_and_gives_up() {
    let inst = generate::gen_random(GenKind::Pis, dims2(), 3, 0.2, 0.1, &GenOptions::default()).unwrap();
    let c = inst.constants();
    assert!(c.iota >= 0.2 && c.ell >= 0.1);
    let opts = GenOptions { max_attempts: 5, ..GenOptions::default() };
    assert!(matches!(generate::gen_random(GenKind::Pis, dims2(), 3, 0.6, 0.0, &opts), Err(Error::GenerationTimeout { attempts: 5 })));
}
