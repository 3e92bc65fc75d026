//! Exact agent behaviour: best responses to uncorrelated scoring rules,
//! optimal deviations against correlated mechanisms, incentive-compatibility
//! verification and auxiliary payoff functionals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Dims, GameInstance};
use crate::mechanism::{CorrelatedMechanism, DeviationPolicy, UncorrelatedMechanism};

/// Two agent payoffs closer than this are treated as a tie.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Default tolerance of the incentive-compatibility check.
pub const DEFAULT_IC_TOLERANCE: f64 = 1e-8;

/// Upper limit on the number of joint responses enumerated by the
/// principal-favourable tie-break before it falls back to lexicographic
/// report maps.
const MAX_JOINT_CANDIDATES: usize = 1 << 16;

/// How an agent that is indifferent between several responses chooses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreak {
    /// Smallest action index, then the truthful report, then the smallest report index.
    #[default]
    Lexicographic,
    /// Among agent-optimal responses, the one maximising the principal's net utility.
    PrincipalFavorable,
}

/// An agent's response to an uncorrelated scoring rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestResponse {
    /// Action played.
    pub action: usize,
    /// Reported signal for every observed signal.
    pub report_map: Vec<usize>,
    /// Expected payment minus cost.
    pub agent_value: f64,
}

/// Expected payment of reporting `s_rep` when `s` is observed after playing the
/// action whose marginal table is `marg` (indexed `[s * m + theta]`).
#[inline]
fn report_payoff(marg: &[f64], gamma: &[f64], m: usize, s: usize, s_rep: usize) -> f64 {
    let p = &marg[s * m..(s + 1) * m];
    let g = &gamma[s_rep * m..(s_rep + 1) * m];
    p.iter().zip(g).map(|(a, b)| a * b).sum()
}

/// Per-signal payoffs of every report, `[s][s']`.
fn report_payoffs(marg: &[f64], gamma: &[f64], l: usize, m: usize) -> Vec<Vec<f64>> {
    (0..l).map(|s| (0..l).map(|r| report_payoff(marg, gamma, m, s, r)).collect()).collect()
}

/// Lexicographic report: the truthful report when optimal, else the smallest optimal index.
fn lexicographic_report(payoffs: &[f64], s: usize, best: f64) -> usize {
    if payoffs[s] >= best - TIE_TOLERANCE {
        s
    } else {
        payoffs.iter().position(|&v| v >= best - TIE_TOLERANCE).unwrap_or(s)
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `F°_i(gamma_i | b_i)`: the largest expected payment agent `i` can obtain
/// with any report map after playing `b_i`.
pub fn f_circ(inst: &GameInstance, i: usize, gamma_i: &[f64], b_i: usize) -> Result<f64> {
    let d = inst.dims();
    check_rule(&d, gamma_i)?;
    let marg = inst.marginal(i, b_i)?;
    Ok(report_payoffs(marg, gamma_i, d.l, d.m).iter().map(|row| max_of(row)).sum())
}

fn check_rule(d: &Dims, gamma_i: &[f64]) -> Result<()> {
    if gamma_i.len() != d.l * d.m {
        return Err(Error::DimensionMismatch(format!("scoring rule has {} entries, expected {}", gamma_i.len(), d.l * d.m)));
    }
    Ok(())
}

/// Per action: agent value and the per-signal sets of optimal reports
/// (lexicographic preference first).
struct ActionOptions {
    value: f64,
    reports: Vec<Vec<usize>>,
}

fn action_options(inst: &GameInstance, i: usize, gamma_i: &[f64]) -> Vec<ActionOptions> {
    let d = inst.dims();
    (0..d.k)
        .map(|b| {
            let marg = &inst.marginal_tables()[i][b];
            let pay = report_payoffs(marg, gamma_i, d.l, d.m);
            let mut value = -inst.cost(i, b);
            let mut reports = Vec::with_capacity(d.l);
            for (s, row) in pay.iter().enumerate() {
                let best = max_of(row);
                value += best;
                let first = lexicographic_report(row, s, best);
                let mut set = vec![first];
                set.extend((0..d.l).filter(|&r| r != first && row[r] >= best - TIE_TOLERANCE));
                reports.push(set);
            }
            ActionOptions { value, reports }
        })
        .collect()
}

/// Lexicographic best response of agent `i` to `gamma_i`.
pub fn best_response_lexicographic(inst: &GameInstance, i: usize, gamma_i: &[f64]) -> Result<BestResponse> {
    let d = inst.dims();
    check_rule(&d, gamma_i)?;
    if i >= d.n {
        return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", d.n)));
    }
    Ok(lexicographic_from_options(&action_options(inst, i, gamma_i)))
}

fn lexicographic_from_options(opts: &[ActionOptions]) -> BestResponse {
    let best = opts.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
    let action = opts.iter().position(|o| o.value >= best - TIE_TOLERANCE).unwrap_or(0);
    BestResponse { action, report_map: opts[action].reports.iter().map(|r| r[0]).collect(), agent_value: opts[action].value }
}

/// Best response of agent `i` to the scoring rule `gamma_i`.
///
/// With [`TieBreak::PrincipalFavorable`] the full mechanism is needed to
/// evaluate the principal's utility; pass it as `context`. Without context the
/// principal-favourable mode falls back to the lexicographic order.
pub fn best_response(inst: &GameInstance, i: usize, gamma_i: &[f64], tie_break: TieBreak, context: Option<&UncorrelatedMechanism>) -> Result<BestResponse> {
    match (tie_break, context) {
        (TieBreak::PrincipalFavorable, Some(mech)) => {
            if mech.gamma.get(i).map(|g| g.as_slice()) != Some(gamma_i) {
                let mut m2 = mech.clone();
                m2.gamma[i] = gamma_i.to_vec();
                return Ok(joint_best_responses(inst, &m2, TieBreak::PrincipalFavorable)?.remove(i));
            }
            Ok(joint_best_responses(inst, mech, TieBreak::PrincipalFavorable)?.remove(i))
        }
        _ => best_response_lexicographic(inst, i, gamma_i),
    }
}

/// Best responses of all agents to an uncorrelated mechanism.
pub fn joint_best_responses(inst: &GameInstance, mech: &UncorrelatedMechanism, tie_break: TieBreak) -> Result<Vec<BestResponse>> {
    let d = inst.dims();
    mech.check(&d, f64::INFINITY)?;
    let options: Vec<Vec<ActionOptions>> = (0..d.n).map(|i| action_options(inst, i, &mech.gamma[i])).collect();
    if tie_break == TieBreak::Lexicographic {
        return Ok(options.iter().map(|o| lexicographic_from_options(o)).collect());
    }
    // Candidate (action, report map) pairs per agent, lexicographic order first.
    let mut per_agent: Vec<Vec<BestResponse>> = Vec::with_capacity(d.n);
    let full_count: usize = options
        .iter()
        .map(|opts| {
            let best = opts.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
            opts.iter().filter(|o| o.value >= best - TIE_TOLERANCE).map(|o| o.reports.iter().map(|r| r.len()).product::<usize>()).sum::<usize>()
        })
        .try_fold(1usize, |acc, c| acc.checked_mul(c))
        .unwrap_or(usize::MAX);
    let restrict_reports = full_count > MAX_JOINT_CANDIDATES;
    for opts in &options {
        let best = opts.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
        let mut cands = Vec::new();
        for (b, o) in opts.iter().enumerate() {
            if o.value < best - TIE_TOLERANCE {
                continue;
            }
            let sets: Vec<Vec<usize>> = if restrict_reports { o.reports.iter().map(|r| vec![r[0]]).collect() } else { o.reports.clone() };
            for map in cartesian(&sets) {
                cands.push(BestResponse { action: b, report_map: map, agent_value: o.value });
            }
        }
        per_agent.push(cands);
    }
    let sets: Vec<Vec<usize>> = per_agent.iter().map(|c| (0..c.len()).collect()).collect();
    let mut best_u = f64::NEG_INFINITY;
    let mut best_choice: Vec<usize> = vec![0; d.n];
    for choice in cartesian(&sets) {
        let responses: Vec<&BestResponse> = choice.iter().enumerate().map(|(i, &c)| &per_agent[i][c]).collect();
        let u = utility_given_responses(inst, mech, &responses);
        if u > best_u + TIE_TOLERANCE {
            best_u = u;
            best_choice = choice;
        }
    }
    Ok(best_choice.iter().enumerate().map(|(i, &c)| per_agent[i][c].clone()).collect())
}

/// All combinations of one element per set, in lexicographic order of positions.
fn cartesian(sets: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::with_capacity(sets.len())];
    for set in sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for prefix in &out {
            for &v in set {
                let mut p = prefix.clone();
                p.push(v);
                next.push(p);
            }
        }
        out = next;
    }
    out
}

/// Principal net utility when the agents respond with the given (action, report map) pairs.
fn utility_given_responses(inst: &GameInstance, mech: &UncorrelatedMechanism, responses: &[&BestResponse]) -> f64 {
    let d = inst.dims();
    let actions: Vec<usize> = responses.iter().map(|r| r.action).collect();
    let b = d.encode(&actions, d.k);
    let table = inst.joint(b);
    let mut total = 0.0;
    for s in 0..d.num_signal_profiles() {
        let reported: Vec<usize> = (0..d.n).map(|i| responses[i].report_map[d.digit(s, i, d.l)]).collect();
        let s_rep = d.encode(&reported, d.l);
        let pi = mech.pi_row(&d, s_rep);
        for theta in 0..d.m {
            let p = table[s * d.m + theta];
            if p == 0.0 {
                continue;
            }
            let decision: f64 = (0..d.d).map(|a| pi[a] * inst.utility()[a][theta]).sum();
            let payments: f64 = (0..d.n).map(|i| mech.gamma[i][reported[i] * d.m + theta]).sum();
            total += p * (decision - payments);
        }
    }
    total
}

/// Principal net utility `U°` of an uncorrelated mechanism when the agents
/// best-respond with the given tie-break, together with the responses.
pub fn uncorrelated_outcome(inst: &GameInstance, mech: &UncorrelatedMechanism, tie_break: TieBreak) -> Result<(f64, Vec<BestResponse>)> {
    let responses = joint_best_responses(inst, mech, tie_break)?;
    let refs: Vec<&BestResponse> = responses.iter().collect();
    Ok((utility_given_responses(inst, mech, &refs), responses))
}

/// `F_i(mu, gamma)`: expected payment of agent `i` under truthful, obedient play.
pub fn expected_payment(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize) -> Result<f64> {
    let d = inst.dims();
    mech.check(&d, f64::INFINITY)?;
    if i >= d.n {
        return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", d.n)));
    }
    let ns = d.num_signal_profiles();
    let mut total = 0.0;
    for b in 0..d.num_profiles() {
        if mech.mu[b] == 0.0 {
            continue;
        }
        let table = inst.joint(b);
        let g = &mech.gamma[i][b * ns * d.m..(b + 1) * ns * d.m];
        total += mech.mu[b] * table.iter().zip(g).map(|(p, v)| p * v).sum::<f64>();
    }
    Ok(total)
}

/// `F_i^{phi,psi}(mu, gamma)`: expected payment of agent `i` under the deviation `dev`.
pub fn expected_payment_dev(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize, dev: &DeviationPolicy) -> Result<f64> {
    let d = inst.dims();
    mech.check(&d, f64::INFINITY)?;
    if i >= d.n {
        return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", d.n)));
    }
    dev.check(d.k, d.l)?;
    let ns = d.num_signal_profiles();
    let mut total = 0.0;
    for b in 0..d.num_profiles() {
        if mech.mu[b] == 0.0 {
            continue;
        }
        let b_i = d.digit(b, i, d.k);
        let played = d.with_digit(b, i, d.k, dev.action_map[b_i]);
        let table = inst.joint(played);
        let mut acc = 0.0;
        for s in 0..ns {
            let s_rep = d.with_digit(s, i, d.l, dev.report_map[b_i][d.digit(s, i, d.l)]);
            for theta in 0..d.m {
                acc += mech.gamma_at(&d, i, b, s_rep, theta) * table[s * d.m + theta];
            }
        }
        total += mech.mu[b] * acc;
    }
    Ok(total)
}

/// Conditional deviation payoffs of agent `i`:
/// `g[b_i][b'][s_i][s']` = `sum_{b_-i, s_-i, theta} mu[b] gamma_i[b, (s', s_-i), theta] P((s_i, s_-i), theta | (b', b_-i))`
/// where `b = (b_i, b_-i)`.
pub(crate) fn deviation_payoffs(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize) -> Vec<f64> {
    let d = inst.dims();
    let (k, l, m) = (d.k, d.l, d.m);
    let ns = d.num_signal_profiles();
    let mut g = vec![0.0; k * k * l * l];
    for b in 0..d.num_profiles() {
        let w = mech.mu[b];
        if w == 0.0 {
            continue;
        }
        let b_i = d.digit(b, i, k);
        let gamma = &mech.gamma[i][b * ns * m..(b + 1) * ns * m];
        for bp in 0..k {
            let table = inst.joint(d.with_digit(b, i, k, bp));
            for s in 0..ns {
                let s_i = d.digit(s, i, l);
                let p = &table[s * m..(s + 1) * m];
                for sp in 0..l {
                    let s_rep = d.with_digit(s, i, l, sp);
                    let gr = &gamma[s_rep * m..(s_rep + 1) * m];
                    let v: f64 = p.iter().zip(gr).map(|(a, c)| a * c).sum();
                    g[((b_i * k + bp) * l + s_i) * l + sp] += w * v;
                }
            }
        }
    }
    g
}

/// The most profitable deviation of agent `i` and its gain over truthful,
/// obedient play (`>= 0`; the identity is preferred among optimal deviations).
pub fn best_deviation(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize) -> Result<(DeviationPolicy, f64)> {
    let d = inst.dims();
    mech.check(&d, f64::INFINITY)?;
    if i >= d.n {
        return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", d.n)));
    }
    let (k, l) = (d.k, d.l);
    let g = deviation_payoffs(inst, mech, i);
    let mu_i: Vec<f64> = (0..k).map(|b_i| d.profiles_with(i, k, b_i).iter().map(|&b| mech.mu[b]).sum()).collect();
    let mut dev = DeviationPolicy::identity(k, l);
    let mut gain = 0.0;
    for b_i in 0..k {
        let value_of = |bp: usize| -> (f64, Vec<usize>) {
            let mut total = -mu_i[b_i] * inst.cost(i, bp);
            let mut reports = Vec::with_capacity(l);
            for s in 0..l {
                let row: Vec<f64> = (0..l).map(|sp| g[((b_i * k + bp) * l + s) * l + sp]).collect();
                let best = max_of(&row);
                total += best;
                reports.push(if bp == b_i { lexicographic_report(&row, s, best) } else { row.iter().position(|&v| v >= best - TIE_TOLERANCE).unwrap_or(0) });
            }
            (total, reports)
        };
        let truthful: f64 = (0..l).map(|s| g[((b_i * k + b_i) * l + s) * l + s]).sum::<f64>() - mu_i[b_i] * inst.cost(i, b_i);
        let (mut best_val, mut best_reports) = value_of(b_i);
        let mut best_action = b_i;
        for bp in 0..k {
            if bp == b_i {
                continue;
            }
            let (v, r) = value_of(bp);
            if v > best_val + TIE_TOLERANCE {
                best_val = v;
                best_reports = r;
                best_action = bp;
            }
        }
        // The exact gain is accumulated; the reported policy keeps the identity
        // on recommendations where deviating gains no more than the tie tolerance.
        let local_gain = (best_val - truthful).max(0.0);
        gain += local_gain;
        if local_gain > TIE_TOLERANCE {
            dev.action_map[b_i] = best_action;
            dev.report_map[b_i] = best_reports;
        }
    }
    Ok((dev, gain))
}

/// Worst deviation and slack of one agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentIc {
    /// Most profitable deviation.
    pub deviation: DeviationPolicy,
    /// `F_i - F_i^{dev} - sum_b mu[b] C_i(b_i, phi(b_i))` at that deviation (<= 0).
    pub slack: f64,
}

/// Outcome of [`verify_ic`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcReport {
    /// Per-agent worst deviation.
    pub agents: Vec<AgentIc>,
    /// Smallest slack over agents.
    pub min_slack: f64,
}

impl IcReport {
    /// `true` when every slack is at least `-tolerance`.
    pub fn is_ic(&self, tolerance: f64) -> bool {
        self.min_slack >= -tolerance
    }
}

/// Verifies the incentive-compatibility constraints of a correlated mechanism.
pub fn verify_ic(inst: &GameInstance, mech: &CorrelatedMechanism) -> Result<IcReport> {
    let d = inst.dims();
    let mut agents = Vec::with_capacity(d.n);
    for i in 0..d.n {
        let (deviation, gain) = best_deviation(inst, mech, i)?;
        agents.push(AgentIc { deviation, slack: -gain });
    }
    let min_slack = agents.iter().map(|a| a.slack).fold(f64::INFINITY, f64::min);
    Ok(IcReport { agents, min_slack })
}

/// Absorbs every agent's optimal report map into the mechanism, so that
/// truthful reporting becomes optimal while `U°` is preserved.
pub fn make_truthful(inst: &GameInstance, mech: &UncorrelatedMechanism) -> Result<UncorrelatedMechanism> {
    let d = inst.dims();
    let responses = joint_best_responses(inst, mech, TieBreak::PrincipalFavorable)?;
    let m = d.m;
    let gamma: Vec<Vec<f64>> = (0..d.n)
        .map(|i| {
            let mut g = vec![0.0; d.l * m];
            for s in 0..d.l {
                let r = responses[i].report_map[s];
                g[s * m..(s + 1) * m].copy_from_slice(&mech.gamma[i][r * m..(r + 1) * m]);
            }
            g
        })
        .collect();
    let mut pi = vec![0.0; mech.pi.len()];
    for s in 0..d.num_signal_profiles() {
        let mapped: Vec<usize> = (0..d.n).map(|i| responses[i].report_map[d.digit(s, i, d.l)]).collect();
        let sr = d.encode(&mapped, d.l);
        pi[s * d.d..(s + 1) * d.d].copy_from_slice(mech.pi_row(&d, sr));
    }
    Ok(UncorrelatedMechanism { gamma, pi })
}

/// Result of scanning best responses along a segment of scoring rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrScan {
    /// Number of distinct (action, report map) responses met.
    pub distinct: usize,
    /// Number of maximal runs of equal responses along the grid.
    pub segments: usize,
    /// `true` when a response reappears after a different one (a non-convex region).
    pub revisits: bool,
}

/// Scans `gamma^alpha = alpha * gamma_a + (1 - alpha) * gamma_b` on a uniform
/// grid of `grid_size` points with lexicographic tie-breaking.
pub fn scan_br_regions(inst: &GameInstance, i: usize, gamma_a: &[f64], gamma_b: &[f64], grid_size: usize) -> Result<BrScan> {
    let d = inst.dims();
    check_rule(&d, gamma_a)?;
    check_rule(&d, gamma_b)?;
    if grid_size < 2 {
        return Err(Error::InvalidArgument("grid_size must be at least 2".into()));
    }
    let mut seen: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut last: Option<(usize, Vec<usize>)> = None;
    let mut segments = 0;
    let mut revisits = false;
    let mut gamma = vec![0.0; gamma_a.len()];
    for step in 0..grid_size {
        let alpha = step as f64 / (grid_size - 1) as f64;
        for (g, (a, b)) in gamma.iter_mut().zip(gamma_a.iter().zip(gamma_b)) {
            *g = alpha * a + (1.0 - alpha) * b;
        }
        let br = best_response_lexicographic(inst, i, &gamma)?;
        let key = (br.action, br.report_map);
        if last.as_ref() != Some(&key) {
            segments += 1;
            if seen.contains(&key) {
                revisits = true;
            } else {
                seen.push(key.clone());
            }
            last = Some(key);
        }
    }
    Ok(BrScan { distinct: seen.len(), segments, revisits })
}

/// Number of distinct best responses along the segment between two scoring rules.
pub fn count_br_regions(inst: &GameInstance, i: usize, gamma_a: &[f64], gamma_b: &[f64], grid_size: usize) -> Result<usize> {
    Ok(scan_br_regions(inst, i, gamma_a, gamma_b, grid_size)?.distinct)
}

/// `true` when agent `i` has more than one optimal (action, report map) pair
/// against `gamma_i`, i.e. when the tie-break rule decides its behaviour.
pub fn is_indifferent(inst: &GameInstance, i: usize, gamma_i: &[f64]) -> Result<bool> {
    let d = inst.dims();
    check_rule(&d, gamma_i)?;
    if i >= d.n {
        return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", d.n)));
    }
    let opts = action_options(inst, i, gamma_i);
    let best = opts.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
    let optimal: Vec<&ActionOptions> = opts.iter().filter(|o| o.value >= best - TIE_TOLERANCE).collect();
    Ok(optimal.len() > 1 || optimal.iter().any(|o| o.reports.iter().any(|r| r.len() > 1)))
}
