//! Seeded round-by-round environment.
//!
//! Every round draws from three independent ChaCha8 streams of the run seed —
//! one for the recommendation `mu`, one for `(s, theta)`, one for the principal
//! action — each positioned at a round-specific offset, so a trace depends only
//! on the seed and the sequence of committed mechanisms.

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{self, BestResponse, TieBreak};
use crate::error::{Error, Result};
use crate::game::GameInstance;
use crate::mechanism::{sample_index, CorrelatedMechanism, UncorrelatedMechanism};
use crate::offline;

const STREAM_MU: u64 = 1;
const STREAM_OUTCOME: u64 = 2;
const STREAM_POLICY: u64 = 3;
/// 32-bit words reserved per round in every stream.
const WORDS_PER_ROUND: u128 = 16;

/// Phase of the learner a round belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    /// Joint-law and posterior estimation.
    EstimateProb,
    /// Cost-difference binary search and payment estimation.
    EstimateCosts,
    /// Commitment to the constructed mechanism.
    Commit,
    /// Zero-payment fallback after the learner gave up.
    Fallback,
    /// Rounds driven directly by a caller outside the learner.
    Manual,
}

impl Phase {
    /// Name used in trace files.
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::EstimateProb => "estimate-prob",
            Phase::EstimateCosts => "estimate-costs",
            Phase::Commit => "commit",
            Phase::Fallback => "fallback",
            Phase::Manual => "manual",
        }
    }

    /// `true` for the two exploration phases.
    pub fn is_exploration(self) -> bool {
        matches!(self, Phase::EstimateProb | Phase::EstimateCosts)
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Kind of mechanism committed in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MechanismKind {
    /// `(mu, gamma, pi)` with recommendations.
    Correlated,
    /// `(gamma, pi)` without recommendations.
    Uncorrelated,
}

impl MechanismKind {
    /// Name used in trace files.
    pub fn as_str(self) -> &'static str {
        match self {
            MechanismKind::Correlated => "correlated",
            MechanismKind::Uncorrelated => "uncorrelated",
        }
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Zero-based round index.
    pub round: usize,
    /// Learner phase.
    pub phase: Phase,
    /// Mechanism kind.
    pub kind: MechanismKind,
    /// Recommended profile (correlated mechanisms only).
    pub b_rec: Option<usize>,
    /// Played profile.
    pub b_played: usize,
    /// True signal profile.
    pub s_true: usize,
    /// Reported signal profile.
    pub s_reported: usize,
    /// Realised state.
    pub theta: usize,
    /// Principal action.
    pub a: usize,
    /// Realised payment of every agent.
    pub payments: Vec<f64>,
    /// Expected principal utility of the committed mechanism under the true instance.
    pub exp_utility: f64,
    /// Offline optimum minus `exp_utility`.
    pub exp_regret: f64,
    /// Running sum of `exp_regret`, this round included.
    pub cum_regret: f64,
    /// `true` when some agent was indifferent between responses.
    pub tie: bool,
}

impl RoundRecord {
    /// Realised principal net payoff `u(a, theta) - sum_i payment_i`.
    pub fn realized_utility(&self, inst: &GameInstance) -> f64 {
        inst.utility()[self.a][self.theta] - self.payments.iter().sum::<f64>()
    }
}

/// Running totals of a trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    /// Number of rounds.
    pub rounds: usize,
    /// Total expected regret `R^T`.
    pub total: f64,
    /// Regret accumulated in uncorrelated (exploration) rounds.
    pub uncorrelated: f64,
    /// Regret accumulated in correlated (commit) rounds.
    pub correlated: f64,
    /// Number of uncorrelated rounds.
    pub uncorrelated_rounds: usize,
    /// Number of correlated rounds.
    pub correlated_rounds: usize,
}

/// Per-round log of a simulation.
///
/// Records may be dropped to save memory (see [`Environment::keep_records`]);
/// the running regret totals and the tie log are always maintained.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    /// Number of agents (fixes the payment columns).
    pub n_agents: usize,
    /// Stored rounds.
    pub records: Vec<RoundRecord>,
    /// Running totals over all rounds, stored or not.
    pub summary: RegretSummary,
    /// Rounds in which some agent was indifferent.
    pub tie_rounds: Vec<usize>,
}

impl Trace {
    /// Empty trace for `n_agents` agents.
    pub fn new(n_agents: usize) -> Self {
        Trace { n_agents, ..Default::default() }
    }

    /// Number of rounds simulated.
    pub fn len(&self) -> usize {
        self.summary.rounds
    }

    /// `true` before the first round.
    pub fn is_empty(&self) -> bool {
        self.summary.rounds == 0
    }

    fn push(&mut self, record: RoundRecord, keep: bool) {
        let s = &mut self.summary;
        s.rounds += 1;
        s.total = record.cum_regret;
        match record.kind {
            MechanismKind::Uncorrelated => {
                s.uncorrelated += record.exp_regret;
                s.uncorrelated_rounds += 1;
            }
            MechanismKind::Correlated => {
                s.correlated += record.exp_regret;
                s.correlated_rounds += 1;
            }
        }
        if record.tie {
            self.tie_rounds.push(record.round);
        }
        if keep {
            self.records.push(record);
        }
    }

    /// Number of rounds spent in `phase` (stored records only).
    pub fn rounds_in(&self, phase: Phase) -> usize {
        self.records.iter().filter(|r| r.phase == phase).count()
    }

    /// Writes the trace as CSV.
    ///
    /// Columns: `round, phase, kind, b_rec, b_played, s_true, s_reported,
    /// theta, a, pay_1..pay_n, exp_utility, exp_regret, cum_regret`; profiles
    /// are written as comma-joined per-agent indices.
    pub fn write_csv<W: Write>(&self, dims: &crate::game::Dims, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> =
            ["round", "phase", "kind", "b_rec", "b_played", "s_true", "s_reported", "theta", "a"].iter().map(|s| s.to_string()).collect();
        header.extend((1..=self.n_agents).map(|i| format!("pay_{i}")));
        header.extend(["exp_utility", "exp_regret", "cum_regret"].iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_error)?;
        for r in &self.records {
            let mut row = vec![
                r.round.to_string(),
                r.phase.as_str().to_string(),
                r.kind.as_str().to_string(),
                r.b_rec.map(|b| dims.profile_key(b, dims.k)).unwrap_or_default(),
                dims.profile_key(r.b_played, dims.k),
                dims.profile_key(r.s_true, dims.l),
                dims.profile_key(r.s_reported, dims.l),
                r.theta.to_string(),
                r.a.to_string(),
            ];
            row.extend(r.payments.iter().map(|p| p.to_string()));
            row.push(r.exp_utility.to_string());
            row.push(r.exp_regret.to_string());
            row.push(r.cum_regret.to_string());
            w.write_record(&row).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Io { path: "<trace>".into(), source: e })?;
        Ok(())
    }

    /// Writes the trace as CSV to `path`.
    pub fn save_csv(&self, dims: &crate::game::Dims, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        self.write_csv(dims, std::io::BufWriter::new(file))
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::NumericalFailure(format!("CSV write failed: {e}"))
}

/// `R^T` and the per-round regret series of a trace.
///
/// The series covers stored records only; the total always covers every round.
pub fn cumulative_regret(trace: &Trace) -> Result<(f64, Vec<f64>)> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("cumulative regret of an empty trace".into()));
    }
    Ok((trace.summary.total, trace.records.iter().map(|r| r.exp_regret).collect()))
}

/// An uncorrelated mechanism together with the agents' responses and its value.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedUncorrelated {
    /// The mechanism.
    pub mech: UncorrelatedMechanism,
    /// Agents' best responses under the environment tie-break.
    pub responses: Vec<BestResponse>,
    /// `U°` under the environment tie-break.
    pub utility: f64,
    /// `true` when some agent is indifferent.
    pub tie: bool,
    /// Played profile.
    pub played: usize,
}

/// A correlated mechanism together with its value.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedCorrelated {
    /// The mechanism.
    pub mech: CorrelatedMechanism,
    /// `U` under truthful, obedient play.
    pub utility: f64,
    /// Smallest IC slack, when verified.
    pub ic_slack: Option<f64>,
}

/// Seeded environment holding the true instance.
#[derive(Debug, Clone)]
pub struct Environment {
    inst: GameInstance,
    seed: u64,
    round: usize,
    optimum: f64,
    tie_break: TieBreak,
    ic_tolerance: f64,
    keep_records: bool,
    phase: Phase,
    trace: Trace,
    rng_mu: ChaCha8Rng,
    rng_outcome: ChaCha8Rng,
    rng_policy: ChaCha8Rng,
    last_unc: Option<PreparedUncorrelated>,
    last_corr: Option<(PreparedCorrelated, bool)>,
}

impl Environment {
    /// New environment; solves the offline optimum once for regret accounting.
    pub fn new(inst: GameInstance, seed: u64) -> Result<Self> {
        let (_, optimum) = offline::solve_offline_optimal(&inst)?;
        Ok(Self::with_optimum(inst, seed, optimum))
    }

    /// New environment with a precomputed offline optimum.
    pub fn with_optimum(inst: GameInstance, seed: u64, optimum: f64) -> Self {
        let n = inst.dims().n;
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        Environment {
            inst,
            seed,
            round: 0,
            optimum,
            tie_break: TieBreak::Lexicographic,
            ic_tolerance: agent::DEFAULT_IC_TOLERANCE,
            keep_records: true,
            phase: Phase::Manual,
            trace: Trace::new(n),
            rng_mu: stream(STREAM_MU),
            rng_outcome: stream(STREAM_OUTCOME),
            rng_policy: stream(STREAM_POLICY),
            last_unc: None,
            last_corr: None,
        }
    }

    /// Tie-break used by simulated agents and by `U°` in regret accounting.
    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self.last_unc = None;
        self
    }

    /// IC tolerance used by strict correlated steps.
    pub fn with_ic_tolerance(mut self, tol: f64) -> Self {
        self.ic_tolerance = tol;
        self
    }

    /// Whether per-round records are stored (totals are always kept).
    pub fn keep_records(mut self, keep: bool) -> Self {
        self.keep_records = keep;
        self
    }

    /// The true instance.
    pub fn instance(&self) -> &GameInstance {
        &self.inst
    }

    /// Seed of the run.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of rounds played so far.
    pub fn round(&self) -> usize {
        self.round
    }

    /// Offline optimum used as the regret benchmark.
    pub fn optimum(&self) -> f64 {
        self.optimum
    }

    /// Tie-break of simulated agents.
    pub fn tie_break(&self) -> TieBreak {
        self.tie_break
    }

    /// Labels subsequent rounds with `phase`.
    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Current phase label.
    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// The trace so far.
    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    /// Consumes the environment, returning the trace.
    pub fn into_trace(self) -> Trace {
        self.trace
    }

    fn position(&mut self) {
        let pos = self.round as u128 * WORDS_PER_ROUND;
        self.rng_mu.set_word_pos(pos);
        self.rng_outcome.set_word_pos(pos);
        self.rng_policy.set_word_pos(pos);
    }

    /// Computes the agents' responses and `U°` for an uncorrelated mechanism.
    pub fn prepare_uncorrelated(&self, mech: &UncorrelatedMechanism) -> Result<PreparedUncorrelated> {
        let d = self.inst.dims();
        let (utility, responses) = agent::uncorrelated_outcome(&self.inst, mech, self.tie_break)?;
        let mut tie = false;
        for (i, g) in mech.gamma.iter().enumerate() {
            tie |= agent::is_indifferent(&self.inst, i, g)?;
        }
        let actions: Vec<usize> = responses.iter().map(|r| r.action).collect();
        Ok(PreparedUncorrelated { mech: mech.clone(), responses, utility, tie, played: d.encode(&actions, d.k) })
    }

    /// Computes `U` (and, when `strict`, the IC slack) of a correlated mechanism.
    pub fn prepare_correlated(&self, mech: &CorrelatedMechanism, strict: bool) -> Result<PreparedCorrelated> {
        let utility = offline::principal_utility(&self.inst, mech)?;
        let ic_slack = if strict {
            let report = agent::verify_ic(&self.inst, mech)?;
            if !report.is_ic(self.ic_tolerance) {
                return Err(Error::NonIcMechanismCommitted { slack: report.min_slack });
            }
            Some(report.min_slack)
        } else {
            None
        };
        Ok(PreparedCorrelated { mech: mech.clone(), utility, ic_slack })
    }

    /// Plays one round against an uncorrelated mechanism.
    pub fn step_uncorrelated(&mut self, mech: &UncorrelatedMechanism) -> Result<RoundRecord> {
        let cached = matches!(&self.last_unc, Some(p) if p.mech == *mech);
        if !cached {
            self.last_unc = Some(self.prepare_uncorrelated(mech)?);
        }
        let prepared = self.last_unc.take().expect("prepared mechanism present");
        let record = self.step_prepared_uncorrelated(&prepared);
        self.last_unc = Some(prepared);
        Ok(record)
    }

    /// Plays one round against a prepared uncorrelated mechanism.
    pub fn step_prepared_uncorrelated(&mut self, p: &PreparedUncorrelated) -> RoundRecord {
        let d = self.inst.dims();
        self.position();
        let b = p.played;
        let st = sample_index(self.inst.joint(b), self.rng_outcome.random::<f64>());
        let (s, theta) = (st / d.m, st % d.m);
        let reported: Vec<usize> = (0..d.n).map(|i| p.responses[i].report_map[d.digit(s, i, d.l)]).collect();
        let s_rep = d.encode(&reported, d.l);
        let a = sample_index(p.mech.pi_row(&d, s_rep), self.rng_policy.random::<f64>());
        let payments: Vec<f64> = (0..d.n).map(|i| p.mech.gamma[i][reported[i] * d.m + theta]).collect();
        self.finish(MechanismKind::Uncorrelated, None, b, s, s_rep, theta, a, payments, p.utility, p.tie)
    }

    /// Plays one round against a correlated mechanism with truthful, obedient agents.
    ///
    /// With `strict`, the mechanism must pass IC verification first.
    pub fn step_correlated(&mut self, mech: &CorrelatedMechanism, strict: bool) -> Result<RoundRecord> {
        let cached = matches!(&self.last_corr, Some((p, st)) if p.mech == *mech && (*st || !strict));
        if !cached {
            self.last_corr = Some((self.prepare_correlated(mech, strict)?, strict));
        }
        let (prepared, st) = self.last_corr.take().expect("prepared mechanism present");
        let record = self.step_prepared_correlated(&prepared);
        self.last_corr = Some((prepared, st));
        Ok(record)
    }

    /// Plays one round against a prepared correlated mechanism.
    pub fn step_prepared_correlated(&mut self, p: &PreparedCorrelated) -> RoundRecord {
        let d = self.inst.dims();
        self.position();
        let b = sample_index(&p.mech.mu, self.rng_mu.random::<f64>());
        let st = sample_index(self.inst.joint(b), self.rng_outcome.random::<f64>());
        let (s, theta) = (st / d.m, st % d.m);
        let a = sample_index(p.mech.pi_row(&d, b, s), self.rng_policy.random::<f64>());
        let payments: Vec<f64> = (0..d.n).map(|i| p.mech.gamma_at(&d, i, b, s, theta)).collect();
        self.finish(MechanismKind::Correlated, Some(b), b, s, s, theta, a, payments, p.utility, false)
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &mut self,
        kind: MechanismKind,
        b_rec: Option<usize>,
        b_played: usize,
        s_true: usize,
        s_reported: usize,
        theta: usize,
        a: usize,
        payments: Vec<f64>,
        exp_utility: f64,
        tie: bool,
    ) -> RoundRecord {
        let exp_regret = self.optimum - exp_utility;
        let record = RoundRecord {
            round: self.round,
            phase: self.phase,
            kind,
            b_rec,
            b_played,
            s_true,
            s_reported,
            theta,
            a,
            payments,
            exp_utility,
            exp_regret,
            cum_regret: self.trace.summary.total + exp_regret,
            tie,
        };
        self.round += 1;
        self.trace.push(record.clone(), self.keep_records);
        record
    }
}
