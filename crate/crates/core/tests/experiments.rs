//! Seeded batches: determinism across worker counts and aggregate bookkeeping.

mod common;

use acqlab::experiment::{self, BatchContext, ExperimentSpec};
use acqlab::{Error, LearnerSettings};
use approx::assert_abs_diff_eq;

fn context(horizon: usize) -> BatchContext {
    BatchContext::new(common::learnable_instance(), &LearnerSettings::with_horizon(horizon)).unwrap()
}

#[test]
fn batches_do_not_depend_on_the_worker_count() {
    let ctx = context(20_000);
    let seeds: Vec<u64> = (0..6).collect();
    let one = experiment::run_batch(&ctx, &seeds, Some(1), true).unwrap();
    let four = experiment::run_batch(&ctx, &seeds, Some(4), true).unwrap();
    assert_eq!(one, four);
    for ((summary, trace), seed) in one.iter().zip(&seeds) {
        assert_eq!(summary.seed, *seed);
        let trace = trace.as_ref().unwrap();
        assert_eq!(trace.len(), 20_000);
        assert_eq!(trace.records.last().unwrap().cum_regret, summary.regret);
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    one[2].1.as_ref().unwrap().write_csv(&ctx.instance.dims(), &mut a).unwrap();
    four[2].1.as_ref().unwrap().write_csv(&ctx.instance.dims(), &mut b).unwrap();
    assert_eq!(a, b, "trace CSVs are byte-identical");
}

#[test]
fn aggregate_total_is_the_sum_of_final_cumulative_regrets() {
    let ctx = context(50_000);
    let seeds: Vec<u64> = (10..16).collect();
    let runs = experiment::run_batch(&ctx, &seeds, None, true).unwrap();
    let results: Vec<_> = runs.iter().map(|(r, _)| r.clone()).collect();
    let agg = experiment::aggregate(&results, &[0.0, 0.5, 1.0]);
    let finals: f64 = runs.iter().map(|(_, t)| t.as_ref().unwrap().records.last().unwrap().cum_regret).sum();
    assert_eq!(agg.runs, 6);
    assert_abs_diff_eq!(agg.total_regret, finals, epsilon = 1e-9);
    assert_abs_diff_eq!(agg.mean_regret, finals / 6.0, epsilon = 1e-9);
    assert_abs_diff_eq!(agg.mean_regret_per_round, finals / 6.0 / 50_000.0, epsilon = 1e-12);
    let min = results.iter().map(|r| r.regret).fold(f64::INFINITY, f64::min);
    let max = results.iter().map(|r| r.regret).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(agg.quantiles[0], (0.0, min));
    assert_eq!(agg.quantiles[2], (1.0, max));
    assert_eq!(agg.truncated + agg.fallbacks, 0);
    assert_eq!(agg.ic_pass_rate, 1.0);
    for r in &results {
        assert_eq!(r.termination, "completed");
        assert_eq!(r.prob_rounds + r.cost_rounds + r.commit_rounds, 50_000);
        assert!(r.regret <= r.bound);
        approx::assert_relative_eq!(r.regret_uncorrelated + r.regret_correlated, r.regret, max_relative = 1e-10);
    }
}

#[test]
fn truncated_runs_are_counted() {
    let ctx = context(2_000);
    let runs = experiment::run_batch(&ctx, &[0, 1], Some(2), false).unwrap();
    assert!(runs.iter().all(|(_, t)| t.is_none()));
    let results: Vec<_> = runs.into_iter().map(|(r, _)| r).collect();
    let agg = experiment::aggregate(&results, &[]);
    assert_eq!(agg.truncated, 2);
    assert_eq!(agg.ic_pass_rate, 0.0);
    assert_eq!(agg.ic_pass_given_clean, None);
    assert_eq!(agg.clean_prob_rate, None);
}

#[test]
fn counterexample_cannot_host_the_learner() {
    let err = BatchContext::new(common::counterexample(), &LearnerSettings::with_horizon(1000)).unwrap_err();
    assert!(matches!(err, Error::AssumptionFails { agent: 1, .. }));
}

#[test]
fn quantiles_interpolate_between_order_statistics() {
    let sorted = [1.0, 2.0, 4.0, 8.0];
    assert_eq!(experiment::quantile(&sorted, 0.0), 1.0);
    assert_eq!(experiment::quantile(&sorted, 1.0), 8.0);
    assert_abs_diff_eq!(experiment::quantile(&sorted, 0.5), 3.0, epsilon = 1e-15);
    assert_abs_diff_eq!(experiment::quantile(&sorted, 0.25), 1.75, epsilon = 1e-15);
    assert!(experiment::quantile(&[], 0.5).is_nan());
}

#[test]
fn experiment_specs_are_checked() {
    let spec = ExperimentSpec {
        instance: "inst.json".into(),
        settings: LearnerSettings::with_horizon(100),
        seeds: vec![1, 2, 3],
        out_dir: "out".into(),
        per_seed_traces: true,
        quantiles: vec![0.1, 0.9],
    };
    spec.check().unwrap();
    assert!(ExperimentSpec { seeds: vec![1, 1], ..spec.clone() }.check().is_err());
    assert!(ExperimentSpec { seeds: vec![], ..spec.clone() }.check().is_err());
    assert!(ExperimentSpec { quantiles: vec![1.5], ..spec }.check().is_err());
}
