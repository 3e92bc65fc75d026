//! Ground-truth game model: dimensions, the joint signal/state law per
//! action profile, costs, utilities, validation, derived probability
//! quantities and JSON (de)serialization.
//!
//! Profiles of actions and of signals are encoded as mixed-radix integers
//! with agent 0 as the most significant digit, so for two agents with two
//! signals the signal profiles are ordered `00, 01, 10, 11`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on table normalisation.
pub const SUM_TOLERANCE: f64 = 1e-12;
/// Tolerance on cross-table consistency (prior agreement, peer independence).
pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

/// Cardinalities of a game: `n` agents with `k` actions and `l` signals each,
/// `m` states and `d` principal actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    /// Number of agents.
    pub n: usize,
    /// Actions per agent.
    pub k: usize,
    /// Signals per agent.
    pub l: usize,
    /// Number of states.
    pub m: usize,
    /// Number of principal actions.
    pub d: usize,
}

impl Dims {
    /// Creates a dimension record; every cardinality must be at least one.
    pub fn new(n: usize, k: usize, l: usize, m: usize, d: usize) -> Result<Self> {
        let dims = Dims { n, k, l, m, d };
        dims.check()?;
        Ok(dims)
    }

    /// Checks that every cardinality is positive and the profile spaces fit in memory.
    pub fn check(&self) -> Result<()> {
        if self.n == 0 || self.k == 0 || self.l == 0 || self.m == 0 || self.d == 0 {
            return Err(Error::InvalidArgument(format!("all cardinalities must be >= 1, got {self:?}")));
        }
        let too_big = |base: usize| (0..self.n).try_fold(1usize, |acc, _| acc.checked_mul(base)).map_or(true, |v| v > 1 << 24);
        if too_big(self.k) || too_big(self.l) {
            return Err(Error::InvalidArgument(format!("profile space too large for {self:?}")));
        }
        Ok(())
    }

    /// Number of action profiles `|B| = k^n`.
    pub fn num_profiles(&self) -> usize {
        self.k.pow(self.n as u32)
    }

    /// Number of signal profiles `|S| = l^n`.
    pub fn num_signal_profiles(&self) -> usize {
        self.l.pow(self.n as u32)
    }

    /// Number of action profiles of the other agents `k^(n-1)`.
    pub fn num_other_profiles(&self) -> usize {
        self.k.pow(self.n as u32 - 1)
    }

    /// Number of signal profiles of the other agents `l^(n-1)`.
    pub fn num_other_signal_profiles(&self) -> usize {
        self.l.pow(self.n as u32 - 1)
    }

    /// Place value of agent `i`'s digit in a profile with the given base.
    #[inline]
    pub fn stride(&self, i: usize, base: usize) -> usize {
        base.pow((self.n - 1 - i) as u32)
    }

    /// Agent `i`'s component of an encoded profile.
    #[inline]
    pub fn digit(&self, profile: usize, i: usize, base: usize) -> usize {
        (profile / self.stride(i, base)) % base
    }

    /// Replaces agent `i`'s component of an encoded profile.
    #[inline]
    pub fn with_digit(&self, profile: usize, i: usize, base: usize, value: usize) -> usize {
        let stride = self.stride(i, base);
        let current = (profile / stride) % base;
        profile - current * stride + value * stride
    }

    /// Decodes a profile into per-agent components.
    pub fn decode(&self, profile: usize, base: usize) -> Vec<usize> {
        (0..self.n).map(|i| self.digit(profile, i, base)).collect()
    }

    /// Encodes per-agent components into a profile index.
    pub fn encode(&self, parts: &[usize], base: usize) -> usize {
        parts.iter().fold(0, |acc, &p| acc * base + p)
    }

    /// Enumerates the profiles whose agent-`i` component equals `value`, in increasing order.
    pub fn profiles_with(&self, i: usize, base: usize, value: usize) -> Vec<usize> {
        let total = base.pow(self.n as u32);
        (0..total).filter(|&p| self.digit(p, i, base) == value).collect()
    }

    /// Comma-joined rendering of a profile, e.g. `"0,1"`.
    pub fn profile_key(&self, profile: usize, base: usize) -> String {
        self.decode(profile, base).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// Full ground truth of an information-acquisition game.
///
/// The struct is immutable once built; the per-agent marginal tables are
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct GameInstance {
    dims: Dims,
    prior: Vec<f64>,
    joint: Vec<Vec<f64>>,
    costs: Vec<Vec<f64>>,
    utility: Vec<Vec<f64>>,
    budget: f64,
    marginals: Vec<Vec<Vec<f64>>>,
}

impl GameInstance {
    /// Builds an instance after checking shapes and finiteness.
    ///
    /// * `joint[b][s * m + theta]` is `P(s, theta | b)`;
    /// * `costs[i][b_i]`, `utility[a][theta]`.
    ///
    /// Probabilistic invariants are checked separately by [`GameInstance::validate`].
    pub fn new(dims: Dims, prior: Vec<f64>, joint: Vec<Vec<f64>>, costs: Vec<Vec<f64>>, utility: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        dims.check()?;
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        let shape = |what: &str, got: usize, want: usize| -> Result<()> {
            if got != want {
                Err(Error::DimensionMismatch(format!("{what}: expected {want}, got {got}")))
            } else {
                Ok(())
            }
        };
        shape("prior length", prior.len(), dims.m)?;
        shape("number of joint tables", joint.len(), nb)?;
        for (b, table) in joint.iter().enumerate() {
            shape(&format!("joint table {} length", dims.profile_key(b, dims.k)), table.len(), ns * dims.m)?;
        }
        shape("number of cost vectors", costs.len(), dims.n)?;
        for (i, c) in costs.iter().enumerate() {
            shape(&format!("cost vector of agent {i}"), c.len(), dims.k)?;
        }
        shape("utility rows", utility.len(), dims.d)?;
        for (a, row) in utility.iter().enumerate() {
            shape(&format!("utility row {a}"), row.len(), dims.m)?;
        }
        let all_finite = prior.iter().chain(joint.iter().flatten()).chain(costs.iter().flatten()).chain(utility.iter().flatten()).all(|v| v.is_finite());
        if !all_finite || !budget.is_finite() {
            return Err(Error::InvalidArgument("instance contains non-finite numbers".into()));
        }
        let marginals = compute_marginals(&dims, &joint);
        Ok(GameInstance { dims, prior, joint, costs, utility, budget, marginals })
    }

    /// Game cardinalities.
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Prior over states.
    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    /// All joint tables, indexed `[b][s * m + theta]`.
    pub fn joint_tables(&self) -> &[Vec<f64>] {
        &self.joint
    }

    /// Joint table of profile `b`, indexed `[s * m + theta]`.
    pub fn joint(&self, b: usize) -> &[f64] {
        &self.joint[b]
    }

    /// `P(s, theta | b)`.
    #[inline]
    pub fn prob(&self, b: usize, s: usize, theta: usize) -> f64 {
        self.joint[b][s * self.dims.m + theta]
    }

    /// Cost vectors, indexed `[i][b_i]`.
    pub fn costs(&self) -> &[Vec<f64>] {
        &self.costs
    }

    /// Cost of action `b_i` for agent `i`.
    #[inline]
    pub fn cost(&self, i: usize, b_i: usize) -> f64 {
        self.costs[i][b_i]
    }

    /// Cost difference `C_i(b, b') = c_i(b) - c_i(b')`.
    #[inline]
    pub fn cost_diff(&self, i: usize, b: usize, b_prime: usize) -> f64 {
        self.costs[i][b] - self.costs[i][b_prime]
    }

    /// Principal utility table, indexed `[a][theta]`.
    pub fn utility(&self) -> &[Vec<f64>] {
        &self.utility
    }

    /// Payment cap `M`.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Returns a copy with a different payment cap.
    pub fn with_budget(&self, budget: f64) -> Self {
        GameInstance { budget, ..self.clone() }
    }

    /// Cached marginal tables `[i][b_i][s_i * m + theta]` (see [`GameInstance::marginal`]).
    pub fn marginal_tables(&self) -> &[Vec<Vec<f64>>] {
        &self.marginals
    }

    /// Marginal law `P^(i)(s_i, theta | b_i)` of agent `i`'s signal and the state,
    /// indexed `[s_i * m + theta]`.
    ///
    /// For peer-independent instances the marginal does not depend on the
    /// other agents' actions; the table is the average over all `b_{-i}`
    /// (which coincides with the value at any fixed `b_{-i}` in that case).
    pub fn marginal(&self, i: usize, b_i: usize) -> Result<&[f64]> {
        self.check_agent_action(i, b_i)?;
        Ok(&self.marginals[i][b_i])
    }

    /// Marginal `P^(i)(s_i | b_i)` of agent `i`'s signal.
    pub fn signal_prob(&self, i: usize, b_i: usize, s_i: usize) -> Result<f64> {
        self.check_agent_action(i, b_i)?;
        if s_i >= self.dims.l {
            return Err(Error::IndexOutOfRange(format!("signal {s_i} >= l = {}", self.dims.l)));
        }
        let m = self.dims.m;
        Ok(self.marginals[i][b_i][s_i * m..(s_i + 1) * m].iter().sum())
    }

    /// Bayes posterior `P^(i)(theta | b_i, s_i)`.
    pub fn posterior(&self, i: usize, b_i: usize, s_i: usize) -> Result<Vec<f64>> {
        let mass = self.signal_prob(i, b_i, s_i)?;
        if mass <= 0.0 {
            return Err(Error::ZeroProbabilitySignal { agent: i, action: b_i, signal: s_i });
        }
        let m = self.dims.m;
        Ok(self.marginals[i][b_i][s_i * m..(s_i + 1) * m].iter().map(|v| v / mass).collect())
    }

    fn check_agent_action(&self, i: usize, b_i: usize) -> Result<()> {
        if i >= self.dims.n {
            return Err(Error::IndexOutOfRange(format!("agent {i} >= n = {}", self.dims.n)));
        }
        if b_i >= self.dims.k {
            return Err(Error::IndexOutOfRange(format!("action {b_i} >= k = {}", self.dims.k)));
        }
        Ok(())
    }

    /// Checks every invariant and reports all violations.
    pub fn validate(&self) -> ValidationReport {
        let d = self.dims;
        let m = d.m;
        let mut violations = Vec::new();

        let prior_sum: f64 = self.prior.iter().sum();
        if self.prior.iter().any(|&p| p < 0.0) || (prior_sum - 1.0).abs() > SUM_TOLERANCE {
            violations.push(Violation::PriorNotDistribution { sum: prior_sum });
        }
        for (b, table) in self.joint.iter().enumerate() {
            let key = d.profile_key(b, d.k);
            for (idx, &v) in table.iter().enumerate() {
                if v < 0.0 {
                    violations.push(Violation::JointNegative { profile: key.clone(), signal: idx / m, state: idx % m, value: v });
                }
            }
            let sum: f64 = table.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                violations.push(Violation::JointNotNormalized { profile: key.clone(), sum, residual: sum - 1.0 });
            }
            for theta in 0..m {
                let marg: f64 = (0..d.num_signal_profiles()).map(|s| table[s * m + theta]).sum();
                let residual = marg - self.prior[theta];
                if residual.abs() > CONSISTENCY_TOLERANCE {
                    violations.push(Violation::PriorMismatch { profile: key.clone(), state: theta, residual });
                }
            }
        }
        violations.extend(self.peer_independence_violations());
        for (i, c) in self.costs.iter().enumerate() {
            for (b, &v) in c.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::CostOutOfRange { agent: i, action: b, value: v });
                }
            }
        }
        for (a, row) in self.utility.iter().enumerate() {
            for (theta, &v) in row.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::UtilityOutOfRange { action: a, state: theta, value: v });
                }
            }
        }
        if self.budget < 0.0 {
            violations.push(Violation::NegativeBudget { value: self.budget });
        }
        ValidationReport { violations }
    }

    /// Per `(i, b_i)`, the worst disagreement between the marginal tables
    /// obtained under different `b_{-i}`.
    fn peer_independence_violations(&self) -> Vec<Violation> {
        let d = self.dims;
        let m = d.m;
        let mut out = Vec::new();
        for i in 0..d.n {
            for b_i in 0..d.k {
                let profiles = d.profiles_with(i, d.k, b_i);
                let tables: Vec<Vec<f64>> = profiles.iter().map(|&b| agent_marginal_at(&d, &self.joint[b], i)).collect();
                let mut worst: Option<Violation> = None;
                let mut worst_res = CONSISTENCY_TOLERANCE;
                for (p, table) in tables.iter().enumerate().skip(1) {
                    for idx in 0..d.l * m {
                        let residual = table[idx] - tables[0][idx];
                        if residual.abs() > worst_res {
                            worst_res = residual.abs();
                            worst = Some(Violation::PeerIndependence {
                                agent: i,
                                action: b_i,
                                signal: idx / m,
                                state: idx % m,
                                profile_a: d.profile_key(profiles[0], d.k),
                                profile_b: d.profile_key(profiles[p], d.k),
                                residual,
                            });
                        }
                    }
                }
                out.extend(worst);
            }
        }
        out
    }

    /// Derived constants: posterior separation `ell`, minimum signal probability `iota`
    /// and the exact cost-difference tables.
    pub fn constants(&self) -> InstanceConstants {
        let d = self.dims;
        let m = d.m;
        let mut ell = f64::INFINITY;
        let mut iota = f64::INFINITY;
        let mut zero_signals = Vec::new();
        for i in 0..d.n {
            for b_i in 0..d.k {
                let table = &self.marginals[i][b_i];
                let mass: Vec<f64> = (0..d.l).map(|s| table[s * m..(s + 1) * m].iter().sum()).collect();
                let posts: Vec<Option<Vec<f64>>> =
                    (0..d.l).map(|s| (mass[s] > 0.0).then(|| table[s * m..(s + 1) * m].iter().map(|v| v / mass[s]).collect())).collect();
                for s in 0..d.l {
                    iota = iota.min(mass[s]);
                    if mass[s] <= 0.0 {
                        zero_signals.push((i, b_i, s));
                    }
                }
                for s in 0..d.l {
                    for s2 in (s + 1)..d.l {
                        if let (Some(p), Some(q)) = (&posts[s], &posts[s2]) {
                            ell = ell.min(squared_distance(p, q));
                        }
                    }
                }
            }
        }
        let cost_diffs = (0..d.n)
            .map(|i| {
                let mut table = vec![0.0; d.k * d.k];
                for b in 0..d.k {
                    for b2 in 0..d.k {
                        table[b * d.k + b2] = self.cost_diff(i, b, b2);
                    }
                }
                table
            })
            .collect();
        InstanceConstants { ell, iota, cost_diffs, zero_signals }
    }

    /// Serializes the instance to its JSON file representation.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&InstanceFile::from(self)).expect("instance serialization cannot fail")
    }

    /// Parses the JSON representation and checks shapes; probabilistic
    /// invariants are not enforced (see [`load`]).
    pub fn from_json_str(text: &str, source_name: &str) -> Result<Self> {
        let file: InstanceFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        file.into_instance(source_name)
    }

    /// Writes the instance as JSON to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io { path: path.display().to_string(), source })
    }
}

/// Reads an instance from `path` and enforces the core invariants
/// (normalisation, prior agreement, ranges). Peer-independence violations are
/// reported by [`GameInstance::validate`] but do not prevent loading.
pub fn load(path: impl AsRef<Path>) -> Result<GameInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
    let inst = GameInstance::from_json_str(&text, &path.display().to_string())?;
    let report = inst.validate().core();
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    Ok(inst)
}

/// Writes `inst` to `path` (free-function form of [`GameInstance::save`]).
pub fn save(inst: &GameInstance, path: impl AsRef<Path>) -> Result<()> {
    inst.save(path)
}

fn squared_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Marginal of agent `i` under a single joint table, indexed `[s_i * m + theta]`.
fn agent_marginal_at(d: &Dims, table: &[f64], i: usize) -> Vec<f64> {
    let m = d.m;
    let mut out = vec![0.0; d.l * m];
    for s in 0..d.num_signal_profiles() {
        let s_i = d.digit(s, i, d.l);
        for theta in 0..m {
            out[s_i * m + theta] += table[s * m + theta];
        }
    }
    out
}

fn compute_marginals(d: &Dims, joint: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    (0..d.n)
        .map(|i| {
            (0..d.k)
                .map(|b_i| {
                    let profiles = d.profiles_with(i, d.k, b_i);
                    let mut acc = vec![0.0; d.l * d.m];
                    for &b in &profiles {
                        for (a, v) in acc.iter_mut().zip(agent_marginal_at(d, &joint[b], i)) {
                            *a += v;
                        }
                    }
                    let w = profiles.len() as f64;
                    acc.iter_mut().for_each(|v| *v /= w);
                    acc
                })
                .collect()
        })
        .collect()
}

/// Derived constants of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceConstants {
    /// Minimum squared L2 distance between posteriors of distinct signals
    /// (over positive-probability signals; `+inf` when no pair exists).
    pub ell: f64,
    /// Minimum marginal signal probability.
    pub iota: f64,
    /// Per agent, `C_i(b, b')` stored at `[b * k + b']`.
    pub cost_diffs: Vec<Vec<f64>>,
    /// Signals `(i, b_i, s_i)` that have zero probability.
    pub zero_signals: Vec<(usize, usize, usize)>,
}

/// A single violated invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// The prior is not a probability vector.
    PriorNotDistribution {
        /// Sum of the entries.
        sum: f64,
    },
    /// A joint table entry is negative.
    JointNegative {
        /// Profile key.
        profile: String,
        /// Signal-profile index.
        signal: usize,
        /// State index.
        state: usize,
        /// Offending entry.
        value: f64,
    },
    /// A joint table does not sum to one.
    JointNotNormalized {
        /// Profile key.
        profile: String,
        /// Table sum.
        sum: f64,
        /// `sum - 1`.
        residual: f64,
    },
    /// The state marginal of a joint table disagrees with the prior.
    PriorMismatch {
        /// Profile key.
        profile: String,
        /// State index.
        state: usize,
        /// Marginal minus prior.
        residual: f64,
    },
    /// An agent's marginal depends on the other agents' actions.
    PeerIndependence {
        /// Agent index.
        agent: usize,
        /// Agent action.
        action: usize,
        /// Agent signal of the worst cell.
        signal: usize,
        /// State of the worst cell.
        state: usize,
        /// Reference profile.
        profile_a: String,
        /// Disagreeing profile.
        profile_b: String,
        /// Difference of the two marginal entries.
        residual: f64,
    },
    /// A cost lies outside `[0, 1]`.
    CostOutOfRange {
        /// Agent index.
        agent: usize,
        /// Action index.
        action: usize,
        /// Offending value.
        value: f64,
    },
    /// A utility lies outside `[0, 1]`.
    UtilityOutOfRange {
        /// Principal action.
        action: usize,
        /// State.
        state: usize,
        /// Offending value.
        value: f64,
    },
    /// The payment cap is negative.
    NegativeBudget {
        /// Offending value.
        value: f64,
    },
}

/// Outcome of [`GameInstance::validate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    /// Every violated invariant.
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    /// `true` when no invariant is violated.
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    /// The report restricted to the core invariants (everything except peer independence).
    pub fn core(&self) -> ValidationReport {
        ValidationReport { violations: self.violations.iter().filter(|v| !matches!(v, Violation::PeerIndependence { .. })).cloned().collect() }
    }

    /// Only the peer-independence violations.
    pub fn peer_independence(&self) -> Vec<&Violation> {
        self.violations.iter().filter(|v| matches!(v, Violation::PeerIndependence { .. })).collect()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "pass");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| format!("{v:?}")).collect();
        write!(f, "{} violation(s): {}", parts.len(), parts.join("; "))
    }
}

/// On-disk JSON layout of an instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceFile {
    n_agents: usize,
    k: usize,
    l: usize,
    m: usize,
    d: usize,
    prior: Vec<f64>,
    joint: BTreeMap<String, Vec<Vec<f64>>>,
    costs: Vec<Vec<f64>>,
    utility: Vec<Vec<f64>>,
    budget: f64,
}

impl From<&GameInstance> for InstanceFile {
    fn from(inst: &GameInstance) -> Self {
        let d = inst.dims;
        let joint = (0..d.num_profiles()).map(|b| (d.profile_key(b, d.k), inst.joint[b].chunks(d.m).map(|r| r.to_vec()).collect())).collect();
        InstanceFile {
            n_agents: d.n,
            k: d.k,
            l: d.l,
            m: d.m,
            d: d.d,
            prior: inst.prior.clone(),
            joint,
            costs: inst.costs.clone(),
            utility: inst.utility.clone(),
            budget: inst.budget,
        }
    }
}

impl InstanceFile {
    fn into_instance(self, source_name: &str) -> Result<GameInstance> {
        let field_err = |message: String| Error::Parse { source_name: source_name.to_string(), line: 0, column: 0, message };
        let dims = Dims { n: self.n_agents, k: self.k, l: self.l, m: self.m, d: self.d };
        dims.check().map_err(|e| field_err(format!("field `n_agents/k/l/m/d`: {e}")))?;
        let nb = dims.num_profiles();
        let mut joint = vec![Vec::new(); nb];
        let mut seen = vec![false; nb];
        for (key, rows) in self.joint {
            let parts: std::result::Result<Vec<usize>, _> = key.split(',').map(|p| p.trim().parse::<usize>()).collect();
            let parts = parts.map_err(|_| field_err(format!("field `joint`: malformed profile key {key:?}")))?;
            if parts.len() != dims.n || parts.iter().any(|&p| p >= dims.k) {
                return Err(field_err(format!("field `joint`: profile key {key:?} out of range")));
            }
            let b = dims.encode(&parts, dims.k);
            if rows.len() != dims.num_signal_profiles() || rows.iter().any(|r| r.len() != dims.m) {
                return Err(field_err(format!("field `joint`: table {key:?} must have {} rows of {} entries", dims.num_signal_profiles(), dims.m)));
            }
            seen[b] = true;
            joint[b] = rows.into_iter().flatten().collect();
        }
        if let Some(b) = seen.iter().position(|s| !s) {
            return Err(field_err(format!("field `joint`: missing table for profile {:?}", dims.profile_key(b, dims.k))));
        }
        GameInstance::new(dims, self.prior, joint, self.costs, self.utility, self.budget).map_err(|e| field_err(e.to_string()))
    }
}
