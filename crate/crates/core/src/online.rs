//! The explore-then-commit learner.
//!
//! A run has three phases:
//!
//! 1. [`estimate_prob`] commits to the profile rules `gamma^b` of the known
//!    incentivizing rules and estimates the joint laws `zeta_b` and the
//!    posteriors `xi`;
//! 2. [`estimate_costs`] runs a memoized bisection between pairs of rules to
//!    bracket every cost difference `C_i(b, b')`;
//! 3. [`build_commit_mechanism`] solves the relaxed program `LP(zeta, Lambda, eps)`
//!    once and mixes its payments with the incentivizing rules and
//!    strictly proper quadratic scores so the committed mechanism stays IC.
//!
//! [`run`] orchestrates the phases on an [`Environment`] and always fills the
//! horizon: truncated explorations and failed constructions are flagged.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::{self, IcReport};
use crate::error::{Error, Result};
use crate::game::{Dims, GameInstance, InstanceConstants};
use crate::lp;
use crate::mechanism::{CorrelatedMechanism, UncorrelatedMechanism};
use crate::offline::{self, IncentivizingRules};
use crate::sim::{Environment, Phase, Trace};

/// `(b - a) * sqrt(ln(2 / delta) / (2 n))`: the Hoeffding radius of the mean of
/// `n_samples` independent draws in an interval of width `range_width`.
///
/// Returns `+inf` for zero samples.
pub fn hoeffding_radius(n_samples: usize, range_width: f64, delta_local: f64) -> f64 {
    if n_samples == 0 {
        return f64::INFINITY;
    }
    range_width * ((2.0 / delta_local).ln() / (2.0 * n_samples as f64)).sqrt()
}

/// Smallest integer `c` with `c^3 >= t^2`, i.e. `ceil(t^(2/3))` computed exactly.
pub fn ceil_pow_two_thirds(t: usize) -> usize {
    let target = (t as u128) * (t as u128);
    let mut c = (t as f64).powf(2.0 / 3.0).floor() as u128;
    while c > 0 && (c - 1) * (c - 1) * (c - 1) >= target {
        c -= 1;
    }
    while c * c * c < target {
        c += 1;
    }
    c as usize
}

/// Smallest integer `c` with `2^c >= t`, i.e. `ceil(log2 t)` (0 for `t <= 1`).
pub fn ceil_log2(t: usize) -> usize {
    if t <= 1 {
        0
    } else {
        (usize::BITS - (t - 1).leading_zeros()) as usize
    }
}

/// Which cells the stopping rule of the probability phase inspects.
///
/// The radius side always ranges over the current profile's cells: cells of
/// actions outside the profile receive no samples while it is held, so a
/// radius taken over them could never shrink.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopScope {
    /// The posterior gap is taken over the actions of the current profile.
    #[default]
    Profile,
    /// The posterior gap is taken over every action targeted so far.
    Global,
}

fn default_delta() -> f64 {
    0.1
}

fn default_ic_tolerance() -> f64 {
    agent::DEFAULT_IC_TOLERANCE
}

/// Learner configuration as read from JSON:
/// `{ "T", "N1", "N2", "N3", "delta", "ic_tolerance", "seed" }`.
///
/// Missing `N1`/`N3` default to `ceil(T^(2/3))` and `N2` to `ceil(log2 T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSettings {
    /// Horizon.
    #[serde(rename = "T")]
    pub horizon: usize,
    /// Minimum rounds per profile in the probability phase.
    #[serde(rename = "N1", default, skip_serializing_if = "Option::is_none")]
    pub n1: Option<usize>,
    /// Bisection steps per pair.
    #[serde(rename = "N2", default, skip_serializing_if = "Option::is_none")]
    pub n2: Option<usize>,
    /// Payment-estimation rounds per rule.
    #[serde(rename = "N3", default, skip_serializing_if = "Option::is_none")]
    pub n3: Option<usize>,
    /// Confidence parameter.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// IC tolerance of the commit-phase checks.
    #[serde(default = "default_ic_tolerance")]
    pub ic_tolerance: f64,
    /// Run seed.
    #[serde(default)]
    pub seed: u64,
    /// Scope of the probability-phase stopping rule.
    #[serde(default)]
    pub stop_scope: StopScope,
    /// Refuse to commit a mechanism that fails IC verification on the true instance.
    #[serde(default)]
    pub strict_ic: bool,
}

impl LearnerSettings {
    /// Settings with every optional field at its default.
    pub fn with_horizon(horizon: usize) -> Self {
        LearnerSettings {
            horizon,
            n1: None,
            n2: None,
            n3: None,
            delta: default_delta(),
            ic_tolerance: default_ic_tolerance(),
            seed: 0,
            stop_scope: StopScope::default(),
            strict_ic: false,
        }
    }

    /// Parses settings from JSON text.
    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { source_name: source_name.into(), line: e.line(), column: e.column(), message: e.to_string() })
    }

    /// Reads settings from a JSON file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        Self::from_json_str(&text, &path.display().to_string())
    }

    /// `N1`, resolved.
    pub fn resolved_n1(&self) -> usize {
        self.n1.unwrap_or_else(|| ceil_pow_two_thirds(self.horizon))
    }

    /// `N2`, resolved.
    pub fn resolved_n2(&self) -> usize {
        self.n2.unwrap_or_else(|| ceil_log2(self.horizon))
    }

    /// `N3`, resolved.
    pub fn resolved_n3(&self) -> usize {
        self.n3.unwrap_or_else(|| ceil_pow_two_thirds(self.horizon))
    }
}

/// Full learner configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    /// Horizon `T`.
    pub horizon: usize,
    /// `N1`.
    pub n1: usize,
    /// `N2`.
    pub n2: usize,
    /// `N3`.
    pub n3: usize,
    /// `delta`.
    pub delta: f64,
    /// Payment cap `M`.
    pub budget: f64,
    /// Known incentivizing rules and their margin `rho`.
    pub rules: IncentivizingRules,
    /// IC tolerance.
    pub ic_tolerance: f64,
    /// Stopping-rule scope of the probability phase.
    pub stop_scope: StopScope,
    /// The probability phase gives up on a profile after `abort_factor * N1` rounds.
    pub abort_factor: usize,
    /// Refuse to commit a non-IC mechanism.
    pub strict_ic: bool,
}

impl LearnerConfig {
    /// Resolves settings against the known rules and the payment cap.
    pub fn new(settings: &LearnerSettings, rules: IncentivizingRules, budget: f64) -> Result<Self> {
        let cfg = LearnerConfig {
            horizon: settings.horizon,
            n1: settings.resolved_n1(),
            n2: settings.resolved_n2(),
            n3: settings.resolved_n3(),
            delta: settings.delta,
            budget,
            rules,
            ic_tolerance: settings.ic_tolerance,
            stop_scope: settings.stop_scope,
            abort_factor: 50,
            strict_ic: settings.strict_ic,
        };
        cfg.check()?;
        Ok(cfg)
    }

    /// Checks the configuration invariants.
    pub fn check(&self) -> Result<()> {
        if self.n1 < 1 || self.n2 < 1 || self.n3 < 1 {
            return Err(Error::InvalidArgument(format!("N1, N2, N3 must be positive (got {}, {}, {})", self.n1, self.n2, self.n3)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.rules.margin > 0.0) {
            return Err(Error::InvalidArgument(format!("incentivizing margin must be positive, got {}", self.rules.margin)));
        }
        if !(self.budget >= 0.0) || !(self.ic_tolerance >= 0.0) {
            return Err(Error::InvalidArgument("budget and IC tolerance must be non-negative".into()));
        }
        Ok(())
    }

    /// The union-bound constant `K = 6 |B| T |S| n m`.
    pub fn k_constant(&self, dims: &Dims) -> f64 {
        6.0 * dims.num_profiles() as f64 * self.horizon as f64 * dims.num_signal_profiles() as f64 * dims.n as f64 * dims.m as f64
    }

    /// Radius `chi` of one directly estimated cost difference.
    pub fn direct_chi(&self, dims: &Dims) -> f64 {
        let k = dims.k as f64;
        2.0 * self.budget * ((4.0 * dims.n as f64 * k * k / self.delta).ln() / (2.0 * self.n3 as f64)).sqrt() + self.budget / 2f64.powi(self.n2 as i32)
    }
}

/// Estimates of the joint laws and posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEstimates {
    /// `K = 6 |B| T |S| n m`.
    pub k_const: f64,
    /// `ln(2K / delta)`.
    pub log_term: f64,
    /// `|T_p(b)|` per profile.
    pub counts: Vec<usize>,
    /// Sample counts per profile, `[b][s * m + theta]`.
    pub joint_counts: Vec<Vec<usize>>,
    /// `zeta_b` (uniform for unobserved profiles).
    pub zeta: Vec<Vec<f64>>,
    /// `nu_b` (`+inf` for unobserved profiles).
    pub nu_b: Vec<f64>,
    /// `nu = max_b nu_b`.
    pub nu: f64,
    /// `|T_p^(i)(b_i, s_i)|`, `[i][b_i * l + s_i]`.
    pub cell_counts: Vec<Vec<usize>>,
    /// State counts per cell, `[i][(b_i * l + s_i) * m + theta]`.
    pub state_counts: Vec<Vec<usize>>,
    /// `xi`, `[i][b_i * l + s_i][theta]` (empty for unobserved cells).
    pub xi: Vec<Vec<Vec<f64>>>,
    /// `varrho` per cell (`+inf` for unobserved cells).
    pub rho_cells: Vec<Vec<f64>>,
    /// `varrho = max` over cells.
    pub rho: f64,
    /// Rounds spent while targeting each profile.
    pub target_rounds: Vec<usize>,
    /// Rounds in which the played profile differed from the targeted one.
    pub off_target_rounds: usize,
    /// Dimensions.
    pub dims: Dims,
}

impl ProbEstimates {
    fn empty(dims: Dims, k_const: f64, delta: f64) -> Self {
        let nb = dims.num_profiles();
        let cells = dims.k * dims.l;
        ProbEstimates {
            k_const,
            log_term: (2.0 * k_const / delta).ln(),
            counts: vec![0; nb],
            joint_counts: vec![vec![0; dims.num_signal_profiles() * dims.m]; nb],
            zeta: Vec::new(),
            nu_b: Vec::new(),
            nu: f64::INFINITY,
            cell_counts: vec![vec![0; cells]; dims.n],
            state_counts: vec![vec![0; cells * dims.m]; dims.n],
            xi: Vec::new(),
            rho_cells: Vec::new(),
            rho: f64::INFINITY,
            target_rounds: vec![0; nb],
            off_target_rounds: 0,
            dims,
        }
    }

    fn observe(&mut self, b: usize, s: usize, theta: usize) {
        let d = self.dims;
        self.counts[b] += 1;
        self.joint_counts[b][s * d.m + theta] += 1;
        for i in 0..d.n {
            let cell = d.digit(b, i, d.k) * d.l + d.digit(s, i, d.l);
            self.cell_counts[i][cell] += 1;
            self.state_counts[i][cell * d.m + theta] += 1;
        }
    }

    fn radius(&self, count: usize) -> f64 {
        if count == 0 {
            f64::INFINITY
        } else {
            (self.log_term / (2.0 * count as f64)).sqrt()
        }
    }

    /// Empirical posterior of a cell, if observed.
    pub fn posterior_estimate(&self, i: usize, b_i: usize, s_i: usize) -> Option<Vec<f64>> {
        let d = self.dims;
        let cell = b_i * d.l + s_i;
        let n = self.cell_counts[i][cell];
        (n > 0).then(|| (0..d.m).map(|t| self.state_counts[i][cell * d.m + t] as f64 / n as f64).collect())
    }

    /// Largest radius over the cells of the given agent actions (`actions[i]` lists actions of agent `i`).
    fn max_radius(&self, actions: &[Vec<usize>]) -> f64 {
        let d = self.dims;
        let mut worst: f64 = 0.0;
        for (i, acts) in actions.iter().enumerate() {
            for &b_i in acts {
                for s_i in 0..d.l {
                    worst = worst.max(self.radius(self.cell_counts[i][b_i * d.l + s_i]));
                }
            }
        }
        worst
    }

    /// Smallest squared posterior gap over observed signal pairs of the given actions.
    fn min_gap(&self, actions: &[Vec<usize>]) -> f64 {
        let d = self.dims;
        let mut best = f64::INFINITY;
        for (i, acts) in actions.iter().enumerate() {
            for &b_i in acts {
                let posts: Vec<Option<Vec<f64>>> = (0..d.l).map(|s| self.posterior_estimate(i, b_i, s)).collect();
                for s in 0..d.l {
                    for sp in (s + 1)..d.l {
                        if let (Some(a), Some(c)) = (&posts[s], &posts[sp]) {
                            best = best.min(sq_dist(a, c));
                        }
                    }
                }
            }
        }
        best
    }

    /// `hat ell`: smallest squared gap between estimated posteriors of distinct
    /// signals over all agents and actions (`+inf` without any observed pair).
    pub fn ell_hat(&self) -> f64 {
        let d = self.dims;
        let all: Vec<Vec<usize>> = (0..d.n).map(|_| (0..d.k).collect()).collect();
        self.min_gap(&all)
    }

    /// `H = max_{i, b_i, s_i} 0.5 * ||xi||^2` over observed cells.
    pub fn h_constant(&self) -> f64 {
        let d = self.dims;
        let mut h: f64 = 0.0;
        for i in 0..d.n {
            for b_i in 0..d.k {
                for s in 0..d.l {
                    if let Some(p) = self.posterior_estimate(i, b_i, s) {
                        h = h.max(0.5 * p.iter().map(|v| v * v).sum::<f64>());
                    }
                }
            }
        }
        h
    }

    /// Recomputes `zeta`, `nu`, `xi` and `varrho` from the counts.
    pub fn finalize(&mut self) {
        let d = self.dims;
        let width = d.num_signal_profiles() * d.m;
        self.zeta = (0..d.num_profiles())
            .map(|b| {
                let n = self.counts[b];
                if n == 0 {
                    vec![1.0 / width as f64; width]
                } else {
                    self.joint_counts[b].iter().map(|&c| c as f64 / n as f64).collect()
                }
            })
            .collect();
        self.nu_b = self.counts.iter().map(|&n| self.radius(n)).collect();
        self.nu = self.nu_b.iter().copied().fold(0.0, f64::max);
        self.xi = (0..d.n).map(|i| (0..d.k * d.l).map(|c| self.posterior_estimate(i, c / d.l, c % d.l).unwrap_or_default()).collect()).collect();
        self.rho_cells = self.cell_counts.iter().map(|row| row.iter().map(|&n| self.radius(n)).collect()).collect();
        self.rho = self.rho_cells.iter().flatten().copied().fold(0.0, f64::max);
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The probability-estimation phase.
///
/// Profiles are targeted in index order; each is held for at least `N1`
/// rounds and until `max varrho <= min gap / (13 m)` over the cells in scope.
pub fn estimate_prob(env: &mut Environment, cfg: &LearnerConfig) -> Result<ProbEstimates> {
    let d = env.instance().dims();
    let mut est = ProbEstimates::empty(d, cfg.k_constant(&d), cfg.delta);
    let limit = cfg.abort_factor.saturating_mul(cfg.n1);
    let mut targeted: Vec<Vec<bool>> = vec![vec![false; d.k]; d.n];
    for b in 0..d.num_profiles() {
        let parts = d.decode(b, d.k);
        for (i, &b_i) in parts.iter().enumerate() {
            targeted[i][b_i] = true;
        }
        let current: Vec<Vec<usize>> = parts.iter().map(|&b_i| vec![b_i]).collect();
        let gap_scope: Vec<Vec<usize>> = match cfg.stop_scope {
            StopScope::Profile => current.clone(),
            StopScope::Global => targeted.iter().map(|row| (0..d.k).filter(|&a| row[a]).collect()).collect(),
        };
        let mech = UncorrelatedMechanism::with_uniform_pi(&d, cfg.rules.profile_rules(&d, b));
        let prepared = env.prepare_uncorrelated(&mech)?;
        let mut spent = 0;
        loop {
            let enough = est.counts[b] >= cfg.n1;
            // An unobserved signal keeps an infinite radius and blocks stopping.
            let radius = est.max_radius(&current);
            if enough && radius.is_finite() && radius <= est.min_gap(&gap_scope) / (13.0 * d.m as f64) {
                break;
            }
            if env.round() >= cfg.horizon || spent >= limit {
                est.target_rounds[b] = spent;
                return Err(Error::HorizonExhausted { phase: Phase::EstimateProb.as_str().into(), rounds: env.round() });
            }
            let rec = env.step_prepared_uncorrelated(&prepared);
            if rec.b_played != b {
                est.off_target_rounds += 1;
            }
            est.observe(rec.b_played, rec.s_reported, rec.theta);
            spent += 1;
        }
        est.target_rounds[b] = spent;
    }
    est.finalize();
    Ok(est)
}

/// One directly estimated cost difference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BsLogEntry {
    /// Agent.
    pub agent: usize,
    /// Action incentivized by `gamma_lo`.
    pub b: usize,
    /// Action incentivized by `gamma_hi`.
    pub b_prime: usize,
    /// Split depth at which the pair was resolved.
    pub depth: usize,
    /// Search steps performed.
    pub search_steps: usize,
    /// `||gamma_lo - gamma_hi||_inf` before the search phase.
    pub initial_gap: f64,
    /// `||gamma_lo - gamma_hi||_inf` after the search phase.
    pub final_gap: f64,
    /// Final rule incentivizing `b`.
    pub gamma_lo: Vec<f64>,
    /// Final rule incentivizing `b'`.
    pub gamma_hi: Vec<f64>,
    /// Observed payments to the agent under `gamma_lo`.
    pub payments_lo: Vec<f64>,
    /// Observed payments to the agent under `gamma_hi`.
    pub payments_hi: Vec<f64>,
    /// Actions the agent played under `gamma_lo` in the payment phase.
    pub actions_lo: Vec<usize>,
    /// Actions the agent played under `gamma_hi` in the payment phase.
    pub actions_hi: Vec<usize>,
    /// `hat F°(gamma_lo | b)`.
    pub f_hat_lo: f64,
    /// `hat F°(gamma_hi | b')`.
    pub f_hat_hi: f64,
    /// `Lambda_i(b, b')`.
    pub lambda: f64,
    /// `chi_i[b, b']`.
    pub chi: f64,
}

/// A cost difference obtained by splitting through a third action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    /// Agent.
    pub agent: usize,
    /// First action.
    pub b: usize,
    /// Last action.
    pub b_prime: usize,
    /// Intermediate action met by the search.
    pub via: usize,
    /// Split depth of the composite pair.
    pub depth: usize,
    /// Sum of the parts' estimates.
    pub lambda: f64,
    /// Sum of the parts' radii.
    pub chi: f64,
}

/// Estimates of the cost differences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostEstimates {
    /// `Lambda_i`, `[i][b * k + b']`.
    pub lambda: Vec<Vec<f64>>,
    /// `chi_i[b, b']`, `[i][b * k + b']`.
    pub chi_table: Vec<Vec<f64>>,
    /// `chi = max` entry of `chi_table`.
    pub chi: f64,
    /// Resolved ordered pairs, `[i][b * k + b']`.
    pub visited: Vec<Vec<bool>>,
    /// Pairs estimated directly through a payment phase, `[i][b * k + b']`.
    pub direct: Vec<Vec<bool>>,
    /// Payment-phase log of every direct estimate.
    pub log: Vec<BsLogEntry>,
    /// Log of every split.
    pub splits: Vec<SplitEntry>,
    /// Rounds used by the phase.
    pub rounds: usize,
    /// Deepest split level reached.
    pub max_depth: usize,
    /// Number of actions per agent.
    pub k: usize,
}

impl CostEstimates {
    fn new(n: usize, k: usize) -> Self {
        let mut visited = vec![vec![false; k * k]; n];
        for row in &mut visited {
            for b in 0..k {
                row[b * k + b] = true;
            }
        }
        CostEstimates {
            lambda: vec![vec![0.0; k * k]; n],
            chi_table: vec![vec![0.0; k * k]; n],
            chi: 0.0,
            visited,
            direct: vec![vec![false; k * k]; n],
            log: Vec::new(),
            splits: Vec::new(),
            rounds: 0,
            max_depth: 0,
            k,
        }
    }

    fn store(&mut self, i: usize, b: usize, bp: usize, lambda: f64, chi: f64) {
        let k = self.k;
        self.lambda[i][b * k + bp] = lambda;
        self.chi_table[i][b * k + bp] = chi;
        self.visited[i][b * k + bp] = true;
        if !self.visited[i][bp * k + b] {
            self.lambda[i][bp * k + b] = -lambda;
            self.chi_table[i][bp * k + b] = chi;
            self.visited[i][bp * k + b] = true;
        }
    }

    /// `(Lambda_i(b, b'), chi_i[b, b'])`.
    pub fn get(&self, i: usize, b: usize, bp: usize) -> (f64, f64) {
        (self.lambda[i][b * self.k + bp], self.chi_table[i][b * self.k + bp])
    }
}

fn sup_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn single_agent_mechanism(dims: &Dims, i: usize, gamma_i: &[f64]) -> UncorrelatedMechanism {
    let mut gamma = vec![vec![0.0; dims.l * dims.m]; dims.n];
    gamma[i] = gamma_i.to_vec();
    UncorrelatedMechanism::with_uniform_pi(dims, gamma)
}

fn costs_round(env: &mut Environment, cfg: &LearnerConfig, mech: &UncorrelatedMechanism, costs: &mut CostEstimates) -> Result<crate::sim::RoundRecord> {
    if env.round() >= cfg.horizon {
        return Err(Error::HorizonExhausted { phase: Phase::EstimateCosts.as_str().into(), rounds: env.round() });
    }
    costs.rounds += 1;
    env.step_uncorrelated(mech)
}

/// Bisection between `gamma_lo` (incentivizing `b`) and `gamma_hi`
/// (incentivizing `b'`) for agent `i`, returning `(Lambda_i(b, b'), chi_i[b, b'])`.
///
/// Other agents face zero payments; the principal plays uniformly at random.
/// Resolved pairs are memoized in `memo`.
#[allow(clippy::too_many_arguments)]
pub fn binary_search(
    env: &mut Environment,
    cfg: &LearnerConfig,
    i: usize,
    b: usize,
    bp: usize,
    gamma_lo: &[f64],
    gamma_hi: &[f64],
    memo: &mut CostEstimates,
    depth: usize,
) -> Result<(f64, f64)> {
    let d = env.instance().dims();
    let k = d.k;
    if memo.visited[i][b * k + bp] {
        return Ok(memo.get(i, b, bp));
    }
    let limit = d.k * d.l * d.l;
    if depth > limit {
        return Err(Error::RecursionOverflow { depth, limit });
    }
    memo.max_depth = memo.max_depth.max(depth);
    let mut lo = gamma_lo.to_vec();
    let mut hi = gamma_hi.to_vec();
    let initial_gap = sup_dist(&lo, &hi);
    for _ in 0..cfg.n2 {
        let mid: Vec<f64> = lo.iter().zip(&hi).map(|(x, y)| 0.5 * x + 0.5 * y).collect();
        let mech = single_agent_mechanism(&d, i, &mid);
        let rec = costs_round(env, cfg, &mech, memo)?;
        let played = d.digit(rec.b_played, i, k);
        if played == b {
            lo = mid;
        } else if played == bp {
            hi = mid;
        } else {
            let (x1, y1) = binary_search(env, cfg, i, b, played, &lo, &mid, memo, depth + 1)?;
            let (x2, y2) = binary_search(env, cfg, i, played, bp, &mid, &hi, memo, depth + 1)?;
            memo.splits.push(SplitEntry { agent: i, b, b_prime: bp, via: played, depth, lambda: x1 + x2, chi: y1 + y2 });
            memo.store(i, b, bp, x1 + x2, y1 + y2);
            return Ok((x1 + x2, y1 + y2));
        }
    }
    let final_gap = sup_dist(&lo, &hi);
    let mut observe = |rule: &[f64], memo: &mut CostEstimates| -> Result<(Vec<f64>, Vec<usize>)> {
        let mech = single_agent_mechanism(&d, i, rule);
        let mut pays = Vec::with_capacity(cfg.n3);
        let mut acts = Vec::with_capacity(cfg.n3);
        for _ in 0..cfg.n3 {
            let rec = costs_round(env, cfg, &mech, memo)?;
            pays.push(rec.payments[i]);
            acts.push(d.digit(rec.b_played, i, k));
        }
        Ok((pays, acts))
    };
    let (payments_lo, actions_lo) = observe(&lo, memo)?;
    let (payments_hi, actions_hi) = observe(&hi, memo)?;
    let f_hat_lo = payments_lo.iter().sum::<f64>() / cfg.n3 as f64;
    let f_hat_hi = payments_hi.iter().sum::<f64>() / cfg.n3 as f64;
    let lambda = f_hat_lo - f_hat_hi;
    let chi = cfg.direct_chi(&d);
    memo.log.push(BsLogEntry {
        agent: i,
        b,
        b_prime: bp,
        depth,
        search_steps: cfg.n2,
        initial_gap,
        final_gap,
        gamma_lo: lo,
        gamma_hi: hi,
        payments_lo,
        payments_hi,
        actions_lo,
        actions_hi,
        f_hat_lo,
        f_hat_hi,
        lambda,
        chi,
    });
    memo.direct[i][b * k + bp] = true;
    memo.store(i, b, bp, lambda, chi);
    Ok((lambda, chi))
}

/// The cost-estimation phase: a memoized bisection for every agent and ordered pair.
pub fn estimate_costs(env: &mut Environment, cfg: &LearnerConfig) -> Result<CostEstimates> {
    let d = env.instance().dims();
    let mut memo = CostEstimates::new(d.n, d.k);
    for i in 0..d.n {
        for b in 0..d.k {
            for bp in 0..d.k {
                if b == bp || memo.visited[i][b * d.k + bp] {
                    continue;
                }
                let lo = cfg.rules.rules[i][b].clone();
                let hi = cfg.rules.rules[i][bp].clone();
                binary_search(env, cfg, i, b, bp, &lo, &hi, &mut memo, 0)?;
            }
        }
    }
    memo.chi = memo.chi_table.iter().flatten().copied().fold(0.0, f64::max);
    Ok(memo)
}

/// Upper bound on the rounds of the cost phase, `n k^3 l^2 (N2 + N3)`.
pub fn cost_round_bound(dims: &Dims, cfg: &LearnerConfig) -> usize {
    dims.n * dims.k.pow(3) * dims.l * dims.l * (cfg.n2 + cfg.n3)
}

/// Upper bound on `chi`: `2 k l^2 M sqrt(ln(4 n k^2 / delta) / (2 N3)) + k l^2 M / 2^N2`.
pub fn chi_bound(dims: &Dims, cfg: &LearnerConfig) -> f64 {
    let kl2 = (dims.k * dims.l * dims.l) as f64;
    kl2 * cfg.direct_chi(dims)
}

/// Everything computed while building the committed mechanism.
#[derive(Debug, Clone, PartialEq)]
pub struct CommitArtifacts {
    /// `nu`.
    pub nu: f64,
    /// `chi`.
    pub chi: f64,
    /// `varrho`.
    pub rho_post: f64,
    /// Incentivizing margin `rho`.
    pub margin: f64,
    /// `eps = 2 M |S| m nu + chi`.
    pub eps: f64,
    /// `lambda = 2 M |S| m (k + 1) (nu + chi)`.
    pub lambda: f64,
    /// `hat ell`.
    pub ell_hat: f64,
    /// `bar ell = hat ell + 4 m varrho`.
    pub ell_bar: f64,
    /// `underline ell = hat ell - 4 m varrho`.
    pub ell_under: f64,
    /// `alpha = rho ell_under / (rho ell_bar + 65 lambda)`.
    pub alpha: f64,
    /// `beta = (45 + ell_bar) / (18 rho + 45 + ell_bar)`.
    pub beta: f64,
    /// `H = max 0.5 ||xi||^2`.
    pub h: f64,
    /// Strictly proper rules `hat gamma`, `[i][b_i][s_i * m + theta]`.
    pub gamma_hat: Vec<Vec<Vec<f64>>>,
    /// Mechanism recovered from `LP(zeta, Lambda, eps)`.
    pub tilde: CorrelatedMechanism,
    /// Optimal value of `LP(zeta, Lambda, eps)`.
    pub lp_value: f64,
}

/// The commitment parameters `(eps, lambda, ell_bar, ell_under, alpha, beta)`
/// from the raw estimation radii.
pub fn commit_coefficients(dims: &Dims, budget: f64, nu: f64, chi: f64, rho_post: f64, ell_hat: f64, margin: f64) -> [f64; 6] {
    let s = dims.num_signal_profiles() as f64;
    let m = dims.m as f64;
    let eps = 2.0 * budget * s * m * nu + chi;
    let lambda = 2.0 * budget * s * m * (dims.k as f64 + 1.0) * (nu + chi);
    let ell_bar = ell_hat + 4.0 * m * rho_post;
    let ell_under = ell_hat - 4.0 * m * rho_post;
    let alpha = margin * ell_under / (margin * ell_bar + 65.0 * lambda);
    let beta = (45.0 + ell_bar) / (18.0 * margin + 45.0 + ell_bar);
    [eps, lambda, ell_bar, ell_under, alpha, beta]
}

/// Builds the committed mechanism from the estimates.
pub fn build_commit_mechanism(
    dims: &Dims,
    utility: &[Vec<f64>],
    prob: &ProbEstimates,
    costs: &CostEstimates,
    cfg: &LearnerConfig,
) -> Result<(CorrelatedMechanism, CommitArtifacts)> {
    build_commit_mechanism_with(dims, utility, prob, costs, cfg, &lp::DenseSimplex::default())
}

/// [`build_commit_mechanism`] with an explicit LP backend.
pub fn build_commit_mechanism_with(
    dims: &Dims,
    utility: &[Vec<f64>],
    prob: &ProbEstimates,
    costs: &CostEstimates,
    cfg: &LearnerConfig,
    backend: &dyn lp::LpBackend,
) -> Result<(CorrelatedMechanism, CommitArtifacts)> {
    let ell_hat = prob.ell_hat();
    let margin = cfg.rules.margin;
    let [eps, lambda, ell_bar, ell_under, alpha, beta] = commit_coefficients(dims, cfg.budget, prob.nu, costs.chi, prob.rho, ell_hat, margin);
    if !(ell_under > 0.0) || !alpha.is_finite() {
        return Err(Error::NonPositiveEllUnder { value: ell_under });
    }
    let (program, vars) = offline::build_lp(dims, utility, &prob.zeta, &costs.lambda, eps, cfg.budget)?;
    let sol = backend.solve(&program)?.into_optimal("commit-phase program")?;
    let tilde = offline::recover_mechanism(&sol, &vars, cfg.budget)?;

    let h = prob.h_constant();
    let m = dims.m;
    let gamma_hat: Vec<Vec<Vec<f64>>> = (0..dims.n)
        .map(|i| {
            (0..dims.k)
                .map(|b_i| {
                    let mut rule = vec![0.0; dims.l * m];
                    for s in 0..dims.l {
                        let xi = &prob.xi[i][b_i * dims.l + s];
                        let half_norm = 0.5 * xi.iter().map(|v| v * v).sum::<f64>();
                        for t in 0..m {
                            rule[s * m + t] = xi[t] + h - half_norm;
                        }
                    }
                    rule
                })
                .collect()
        })
        .collect();

    let ns = dims.num_signal_profiles();
    let mut gamma = tilde.gamma.clone();
    for (i, g) in gamma.iter_mut().enumerate() {
        for b in 0..dims.num_profiles() {
            let b_i = dims.digit(b, i, dims.k);
            let base = &cfg.rules.rules[i][b_i];
            let proper = &gamma_hat[i][b_i];
            for s in 0..ns {
                let s_i = dims.digit(s, i, dims.l);
                for t in 0..m {
                    let idx = (b * ns + s) * m + t;
                    let mix = beta * base[s_i * m + t] + (1.0 - beta) * proper[s_i * m + t];
                    g[idx] = alpha * g[idx] + (1.0 - alpha) * mix;
                }
            }
        }
    }
    let mech = CorrelatedMechanism { mu: tilde.mu.clone(), gamma, pi: tilde.pi.clone() };
    let artifacts = CommitArtifacts {
        nu: prob.nu,
        chi: costs.chi,
        rho_post: prob.rho,
        margin,
        eps,
        lambda,
        ell_hat,
        ell_bar,
        ell_under,
        alpha,
        beta,
        h,
        gamma_hat,
        tilde,
        lp_value: sol.objective,
    };
    Ok((mech, artifacts))
}

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    /// All three phases ran; the constructed mechanism was committed until the horizon.
    Completed,
    /// Exploration consumed the whole horizon.
    Truncated {
        /// Phase that was running at the horizon.
        phase: Phase,
    },
    /// The learner gave up and committed zero payments with a uniform policy.
    Fallback {
        /// Phase that failed.
        phase: Phase,
        /// Error kind.
        reason: String,
        /// Error message.
        message: String,
    },
}

impl Termination {
    /// Short label.
    pub fn label(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Truncated { .. } => "truncated",
            Termination::Fallback { .. } => "fallback",
        }
    }
}

/// Result of one learner run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    /// Round log.
    pub trace: Trace,
    /// How the run ended.
    pub termination: Termination,
    /// Probability estimates, when the phase completed.
    pub prob: Option<ProbEstimates>,
    /// Cost estimates, when the phase completed.
    pub costs: Option<CostEstimates>,
    /// Committed mechanism and its construction, when built.
    pub commit: Option<(CorrelatedMechanism, CommitArtifacts)>,
    /// IC verification of the committed mechanism against the true instance.
    pub commit_ic: Option<IcReport>,
    /// Rounds spent in the probability phase.
    pub prob_rounds: usize,
    /// Rounds spent in the cost phase.
    pub cost_rounds: usize,
}

impl RunOutcome {
    /// `R^T`.
    pub fn regret(&self) -> f64 {
        self.trace.summary.total
    }

    /// Rounds spent exploring.
    pub fn exploration_rounds(&self) -> usize {
        self.prob_rounds + self.cost_rounds
    }

    /// `true` when the committed mechanism passed IC verification.
    pub fn commit_is_ic(&self, tolerance: f64) -> Option<bool> {
        self.commit_ic.as_ref().map(|r| r.is_ic(tolerance))
    }
}

fn is_horizon(e: &Error) -> bool {
    matches!(e, Error::HorizonExhausted { .. })
}

/// Runs the learner for exactly `cfg.horizon` rounds.
pub fn run(mut env: Environment, cfg: &LearnerConfig) -> Result<RunOutcome> {
    cfg.check()?;
    let dims = env.instance().dims();
    let mut outcome = RunOutcome {
        trace: Trace::new(dims.n),
        termination: Termination::Completed,
        prob: None,
        costs: None,
        commit: None,
        commit_ic: None,
        prob_rounds: 0,
        cost_rounds: 0,
    };

    let mut fallback: Option<(Phase, Error)> = None;
    env.set_phase(Phase::EstimateProb);
    let start = env.round();
    match estimate_prob(&mut env, cfg) {
        Ok(p) => outcome.prob = Some(p),
        Err(e) if is_horizon(&e) && env.round() >= cfg.horizon => {
            outcome.prob_rounds = env.round() - start;
            outcome.termination = Termination::Truncated { phase: Phase::EstimateProb };
            outcome.trace = env.into_trace();
            return Ok(outcome);
        }
        Err(e) if is_horizon(&e) => fallback = Some((Phase::EstimateProb, e)),
        Err(e) => return Err(e),
    }
    outcome.prob_rounds = env.round() - start;

    if fallback.is_none() {
        env.set_phase(Phase::EstimateCosts);
        let start = env.round();
        match estimate_costs(&mut env, cfg) {
            Ok(c) => outcome.costs = Some(c),
            Err(e) if is_horizon(&e) => {
                outcome.cost_rounds = env.round() - start;
                outcome.termination = Termination::Truncated { phase: Phase::EstimateCosts };
                outcome.trace = env.into_trace();
                return Ok(outcome);
            }
            Err(e) => return Err(e),
        }
        outcome.cost_rounds = env.round() - start;
    }

    if fallback.is_none() {
        let prob = outcome.prob.as_ref().expect("probability estimates present");
        let costs = outcome.costs.as_ref().expect("cost estimates present");
        match build_commit_mechanism(&dims, env.instance().utility(), prob, costs, cfg) {
            Ok((mech, art)) => {
                outcome.commit_ic = Some(agent::verify_ic(env.instance(), &mech)?);
                outcome.commit = Some((mech, art));
            }
            Err(e @ (Error::NonPositiveEllUnder { .. } | Error::LpInfeasible(_))) => fallback = Some((Phase::Commit, e)),
            Err(e) => return Err(e),
        }
    }

    if let Some((phase, e)) = fallback {
        outcome.termination = Termination::Fallback { phase, reason: e.kind().to_string(), message: e.to_string() };
        env.set_phase(Phase::Fallback);
        let mech = UncorrelatedMechanism::uniform_zero(&dims);
        let prepared = env.prepare_uncorrelated(&mech)?;
        while env.round() < cfg.horizon {
            env.step_prepared_uncorrelated(&prepared);
        }
    } else if let Some((mech, _)) = &outcome.commit {
        env.set_phase(Phase::Commit);
        let prepared = env.prepare_correlated(mech, cfg.strict_ic)?;
        while env.round() < cfg.horizon {
            env.step_prepared_correlated(&prepared);
        }
    }
    outcome.trace = env.into_trace();
    Ok(outcome)
}

/// The regret bound of the learner run with `N1 = N3 = T^(2/3)`:
///
/// `(1567 / (rho ell)) M^3 |B| |S| m n k^3 l^2 (sqrt(ln(12 |B| T |S| n m / delta)) + 1) max{T^(2/3), kappa} + (n M + 1) ln T`
///
/// with `kappa = (289 / 2) m^2 ln(12 |B| |S| T m n / delta) / (iota^2 ell^2)`.
/// Returns `+inf` when `ell`, `iota` or `rho` is not positive.
pub fn regret_bound(constants: &InstanceConstants, dims: &Dims, horizon: usize, delta: f64, budget: f64, margin: f64) -> f64 {
    let (ell, iota) = (constants.ell, constants.iota);
    if !(ell > 0.0 && iota > 0.0 && margin > 0.0) || !ell.is_finite() {
        return f64::INFINITY;
    }
    let nb = dims.num_profiles() as f64;
    let ns = dims.num_signal_profiles() as f64;
    let (n, k, l, m) = (dims.n as f64, dims.k as f64, dims.l as f64, dims.m as f64);
    let t = horizon as f64;
    let log_term = (12.0 * nb * t * ns * n * m / delta).ln();
    let kappa = 144.5 * m * m * log_term / (iota * iota * ell * ell);
    let lead = 1567.0 / (margin * ell) * budget.powi(3) * nb * ns * m * n * k.powi(3) * l * l;
    lead * (log_term.sqrt() + 1.0) * t.powf(2.0 / 3.0).max(kappa) + (n * budget + 1.0) * t.max(1.0).ln()
}

/// Outcome of checking the probability clean event on final estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanProbReport {
    /// `|zeta_b - P(.|b)| <= nu` everywhere.
    pub joint_ok: bool,
    /// `|xi - posterior| <= varrho` on every observed cell.
    pub posterior_ok: bool,
    /// `|T_p^(i)(b_i, s_i)| >= iota |T_p(b)| / 2` for profiles with `|T_p(b)| >= kappa`.
    pub coverage_ok: bool,
    /// Largest joint estimation error.
    pub max_joint_error: f64,
    /// Largest posterior estimation error.
    pub max_posterior_error: f64,
}

impl CleanProbReport {
    /// `true` when all three parts hold.
    pub fn holds(&self) -> bool {
        self.joint_ok && self.posterior_ok && self.coverage_ok
    }
}

/// Checks the probability clean event against the true instance.
pub fn clean_prob_event(inst: &GameInstance, est: &ProbEstimates, delta: f64) -> CleanProbReport {
    let d = inst.dims();
    let mut max_joint: f64 = 0.0;
    for b in 0..d.num_profiles() {
        if est.counts[b] == 0 {
            continue;
        }
        for (z, p) in est.zeta[b].iter().zip(inst.joint(b)) {
            max_joint = max_joint.max((z - p).abs());
        }
    }
    let mut max_post: f64 = 0.0;
    for i in 0..d.n {
        for b_i in 0..d.k {
            for s in 0..d.l {
                if let (Some(xi), Ok(post)) = (est.posterior_estimate(i, b_i, s), inst.posterior(i, b_i, s)) {
                    for (a, c) in xi.iter().zip(&post) {
                        max_post = max_post.max((a - c).abs());
                    }
                }
            }
        }
    }
    let constants = inst.constants();
    let log_term = (2.0 * est.k_const / delta).ln();
    let kappa = if constants.ell > 0.0 && constants.iota > 0.0 && constants.ell.is_finite() {
        144.5 * (d.m * d.m) as f64 * log_term / (constants.iota * constants.iota * constants.ell * constants.ell)
    } else {
        f64::INFINITY
    };
    let mut coverage_ok = true;
    for b in 0..d.num_profiles() {
        let nb = est.counts[b] as f64;
        if nb < kappa || nb == 0.0 {
            continue;
        }
        for i in 0..d.n {
            let b_i = d.digit(b, i, d.k);
            for s in 0..d.l {
                if (est.cell_counts[i][b_i * d.l + s] as f64) < 0.5 * constants.iota * nb {
                    coverage_ok = false;
                }
            }
        }
    }
    CleanProbReport { joint_ok: max_joint <= est.nu, posterior_ok: max_post <= est.rho, coverage_ok, max_joint_error: max_joint, max_posterior_error: max_post }
}

/// Outcome of checking the cost clean event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleanCostReport {
    /// `|Lambda - C| <= chi` for every agent and pair.
    pub holds: bool,
    /// Largest `|Lambda - C|`.
    pub max_error: f64,
    /// `|Lambda - C| <= chi_i[b, b']` entrywise.
    pub entrywise: bool,
}

/// Checks the cost clean event against the true instance.
pub fn clean_cost_event(inst: &GameInstance, est: &CostEstimates) -> CleanCostReport {
    let d = inst.dims();
    let mut max_error: f64 = 0.0;
    let mut entrywise = true;
    for i in 0..d.n {
        for b in 0..d.k {
            for bp in 0..d.k {
                let (lam, chi) = est.get(i, b, bp);
                let err = (lam - inst.cost_diff(i, b, bp)).abs();
                max_error = max_error.max(err);
                entrywise &= err <= chi;
            }
        }
    }
    CleanCostReport { holds: max_error <= est.chi, max_error, entrywise }
}
