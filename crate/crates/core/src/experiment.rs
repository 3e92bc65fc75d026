//! Seeded multi-run batches of the learner and their aggregates.
//!
//! Seeds fan out over a bounded rayon pool; each worker owns its environment
//! and the results are returned in seed order, so a batch is reproducible
//! regardless of the pool size.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::TieBreak;
use crate::error::{Error, Result};
use crate::game::GameInstance;
use crate::offline::{self, IncentivizingRules};
use crate::online::{self, LearnerConfig, LearnerSettings, RunOutcome};
use crate::sim::{Environment, Trace};

/// What to run and where to write it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Instance file.
    pub instance: PathBuf,
    /// Learner settings (the seed field is overridden per run).
    pub settings: LearnerSettings,
    /// Distinct run seeds.
    pub seeds: Vec<u64>,
    /// Output directory.
    pub out_dir: PathBuf,
    /// Write one trace CSV per seed.
    pub per_seed_traces: bool,
    /// Quantile levels of `R^T` in the aggregate.
    pub quantiles: Vec<f64>,
}

impl ExperimentSpec {
    /// Checks that seeds are distinct and quantile levels lie in `[0, 1]`.
    pub fn check(&self) -> Result<()> {
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidArgument("seeds must be distinct".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidArgument("at least one seed is required".into()));
        }
        if self.quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::InvalidArgument("quantile levels must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Summary of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    /// Run seed.
    pub seed: u64,
    /// Horizon.
    pub horizon: usize,
    /// `R^T`.
    pub regret: f64,
    /// Regret accumulated in uncorrelated rounds.
    pub regret_uncorrelated: f64,
    /// Regret accumulated in correlated rounds.
    pub regret_correlated: f64,
    /// Rounds of the probability phase.
    pub prob_rounds: usize,
    /// Rounds of the cost phase.
    pub cost_rounds: usize,
    /// Commit rounds.
    pub commit_rounds: usize,
    /// `completed`, `truncated` or `fallback`.
    pub termination: String,
    /// Probability clean event, when the phase completed.
    pub clean_prob: Option<bool>,
    /// Cost clean event, when the phase completed.
    pub clean_cost: Option<bool>,
    /// IC slack of the committed mechanism on the true instance.
    pub commit_ic_slack: Option<f64>,
    /// IC verdict of the committed mechanism.
    pub commit_ic: Option<bool>,
    /// Regret bound for this configuration.
    pub bound: f64,
    /// Rounds with indifferent agents.
    pub tie_rounds: usize,
}

/// Aggregate over the runs of a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    /// Number of runs.
    pub runs: usize,
    /// Sum of `R^T` over runs.
    pub total_regret: f64,
    /// Mean `R^T`.
    pub mean_regret: f64,
    /// Mean `R^T / T`.
    pub mean_regret_per_round: f64,
    /// `(level, value)` quantiles of `R^T`.
    pub quantiles: Vec<(f64, f64)>,
    /// Fraction of runs whose probability clean event held (runs that reached it).
    pub clean_prob_rate: Option<f64>,
    /// Fraction of runs whose cost clean event held (runs that reached it).
    pub clean_cost_rate: Option<f64>,
    /// Fraction of all runs that committed an IC mechanism.
    pub ic_pass_rate: f64,
    /// Among runs with both clean events, the fraction that committed an IC mechanism.
    pub ic_pass_given_clean: Option<f64>,
    /// Runs truncated by the horizon.
    pub truncated: usize,
    /// Runs that fell back to zero payments.
    pub fallbacks: usize,
}

/// Number of workers: `ACQLAB_THREADS` when set to a positive integer, else rayon's default.
pub fn worker_count() -> Option<usize> {
    std::env::var("ACQLAB_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Shared, seed-independent ingredients of a batch.
#[derive(Debug, Clone)]
pub struct BatchContext {
    /// The true instance.
    pub instance: GameInstance,
    /// Learner configuration (seed-independent).
    pub config: LearnerConfig,
    /// Offline optimum.
    pub optimum: f64,
    /// Regret bound for the configuration.
    pub bound: f64,
    /// How simulated agents break ties.
    pub tie_break: TieBreak,
}

impl BatchContext {
    /// Builds the incentivizing rules, the configuration and the offline optimum.
    pub fn new(instance: GameInstance, settings: &LearnerSettings) -> Result<Self> {
        let rules: IncentivizingRules = offline::build_incentivizing_rules(&instance, instance.budget())?;
        let config = LearnerConfig::new(settings, rules, instance.budget())?;
        let (_, optimum) = offline::solve_offline_optimal(&instance)?;
        let bound = online::regret_bound(&instance.constants(), &instance.dims(), config.horizon, config.delta, config.budget, config.rules.margin);
        Ok(BatchContext { instance, config, optimum, bound, tie_break: TieBreak::default() })
    }

    /// The same context with simulated agents breaking ties by `tie_break`.
    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }

    /// One learner run.
    pub fn run_seed(&self, seed: u64, keep_records: bool) -> Result<RunOutcome> {
        let env = Environment::with_optimum(self.instance.clone(), seed, self.optimum)
            .keep_records(keep_records)
            .with_ic_tolerance(self.config.ic_tolerance)
            .with_tie_break(self.tie_break);
        online::run(env, &self.config)
    }

    /// Summarises one run.
    pub fn summarize(&self, seed: u64, out: &RunOutcome) -> SeedResult {
        let clean_prob = out.prob.as_ref().map(|p| online::clean_prob_event(&self.instance, p, self.config.delta).holds());
        let clean_cost = out.costs.as_ref().map(|c| online::clean_cost_event(&self.instance, c).holds);
        let s = &out.trace.summary;
        SeedResult {
            seed,
            horizon: self.config.horizon,
            regret: s.total,
            regret_uncorrelated: s.uncorrelated,
            regret_correlated: s.correlated,
            prob_rounds: out.prob_rounds,
            cost_rounds: out.cost_rounds,
            commit_rounds: s.correlated_rounds,
            termination: out.termination.label().to_string(),
            clean_prob,
            clean_cost,
            commit_ic_slack: out.commit_ic.as_ref().map(|r| r.min_slack),
            commit_ic: out.commit_is_ic(self.config.ic_tolerance),
            bound: self.bound,
            tie_rounds: out.trace.tie_rounds.len(),
        }
    }
}

/// Runs every seed, in parallel over at most `threads` workers, returning the
/// summaries (and the traces when `keep_traces`) in seed order.
pub fn run_batch(ctx: &BatchContext, seeds: &[u64], threads: Option<usize>, keep_traces: bool) -> Result<Vec<(SeedResult, Option<Trace>)>> {
    let work = || -> Result<Vec<(SeedResult, Option<Trace>)>> {
        seeds
            .par_iter()
            .map(|&seed| {
                let out = ctx.run_seed(seed, keep_traces)?;
                let summary = ctx.summarize(seed, &out);
                Ok((summary, keep_traces.then_some(out.trace)))
            })
            .collect()
    };
    match threads {
        Some(n) => {
            rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?.install(work)
        }
        None => work(),
    }
}

/// Empirical quantile (linear interpolation between order statistics).
pub fn quantile(sorted: &[f64], level: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = level.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn rate(flags: impl Iterator<Item = bool>) -> Option<f64> {
    let (hits, total) = flags.fold((0usize, 0usize), |(h, t), f| (h + f as usize, t + 1));
    (total > 0).then(|| hits as f64 / total as f64)
}

/// Aggregates per-seed summaries.
pub fn aggregate(results: &[SeedResult], levels: &[f64]) -> Aggregate {
    let runs = results.len();
    let total_regret: f64 = results.iter().map(|r| r.regret).sum();
    let mut sorted: Vec<f64> = results.iter().map(|r| r.regret).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let per_round: f64 = results.iter().map(|r| r.regret / r.horizon.max(1) as f64).sum::<f64>() / runs.max(1) as f64;
    Aggregate {
        runs,
        total_regret,
        mean_regret: total_regret / runs.max(1) as f64,
        mean_regret_per_round: per_round,
        quantiles: levels.iter().map(|&q| (q, quantile(&sorted, q))).collect(),
        clean_prob_rate: rate(results.iter().filter_map(|r| r.clean_prob)),
        clean_cost_rate: rate(results.iter().filter_map(|r| r.clean_cost)),
        ic_pass_rate: results.iter().filter(|r| r.commit_ic == Some(true)).count() as f64 / runs.max(1) as f64,
        ic_pass_given_clean: rate(results.iter().filter(|r| r.clean_prob == Some(true) && r.clean_cost == Some(true)).map(|r| r.commit_ic == Some(true))),
        truncated: results.iter().filter(|r| r.termination == "truncated").count(),
        fallbacks: results.iter().filter(|r| r.termination == "fallback").count(),
    }
}
