//! Commitment objects of the principal: correlated mechanisms `(mu, gamma, pi)`,
//! uncorrelated mechanisms `(gamma, pi)` and agent deviation policies.
//!
//! Tables are stored flat for speed:
//!
//! * correlated `gamma[i][(b * |S| + s) * m + theta]`, `pi[(b * |S| + s) * d + a]`;
//! * uncorrelated `gamma[i][s_i * m + theta]`, `pi[s * d + a]`.
//!
//! The JSON form is nested (`gamma[i][b][s][theta]`, `pi[b][s][a]`), mirroring
//! the instance file layout.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::Dims;

/// Tolerance used when checking that distributions sum to one.
pub const DIST_TOLERANCE: f64 = 1e-9;

/// A correlated mechanism: recommendation distribution, correlated scoring
/// rules and a principal action policy that may depend on the recommendation.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelatedMechanism {
    /// Distribution over action profiles.
    pub mu: Vec<f64>,
    /// Per agent, payments indexed `[(b * |S| + s) * m + theta]`.
    pub gamma: Vec<Vec<f64>>,
    /// Principal policy indexed `[(b * |S| + s) * d + a]`.
    pub pi: Vec<f64>,
}

impl CorrelatedMechanism {
    /// Zero payments, uniform recommendation and uniform principal policy.
    pub fn uniform_zero(dims: &Dims) -> Self {
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        CorrelatedMechanism { mu: vec![1.0 / nb as f64; nb], gamma: vec![vec![0.0; nb * ns * dims.m]; dims.n], pi: vec![1.0 / dims.d as f64; nb * ns * dims.d] }
    }

    /// Payment to agent `i` at `(b, s, theta)`.
    #[inline]
    pub fn gamma_at(&self, dims: &Dims, i: usize, b: usize, s: usize, theta: usize) -> f64 {
        self.gamma[i][(b * dims.num_signal_profiles() + s) * dims.m + theta]
    }

    /// Principal action distribution at `(b, s)`.
    #[inline]
    pub fn pi_row(&self, dims: &Dims, b: usize, s: usize) -> &[f64] {
        let start = (b * dims.num_signal_profiles() + s) * dims.d;
        &self.pi[start..start + dims.d]
    }

    /// Checks shapes, that `mu` and every `pi` row are distributions, and
    /// that payments lie in `[0, cap]` (within `1e-9`).
    pub fn check(&self, dims: &Dims, cap: f64) -> Result<()> {
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        if self.mu.len() != nb || self.gamma.len() != dims.n || self.pi.len() != nb * ns * dims.d {
            return Err(Error::DimensionMismatch("correlated mechanism shape does not match the instance".into()));
        }
        if self.gamma.iter().any(|g| g.len() != nb * ns * dims.m) {
            return Err(Error::DimensionMismatch("correlated scoring rule shape does not match the instance".into()));
        }
        check_distribution(&self.mu, "mu")?;
        for (r, row) in self.pi.chunks(dims.d).enumerate() {
            check_distribution(row, &format!("pi row {r}"))?;
        }
        check_range(self.gamma.iter().flatten(), cap)
    }

    /// Nested JSON representation.
    pub fn to_json(&self, dims: &Dims) -> serde_json::Value {
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        let gamma: Vec<Vec<Vec<Vec<f64>>>> = self
            .gamma
            .iter()
            .map(|g| (0..nb).map(|b| (0..ns).map(|s| g[(b * ns + s) * dims.m..(b * ns + s + 1) * dims.m].to_vec()).collect()).collect())
            .collect();
        let pi: Vec<Vec<Vec<f64>>> = (0..nb).map(|b| (0..ns).map(|s| self.pi_row(dims, b, s).to_vec()).collect()).collect();
        serde_json::json!({ "kind": "correlated", "mu": self.mu, "gamma": gamma, "pi": pi })
    }

    /// Parses the nested JSON representation and checks it against `dims`.
    pub fn from_json(value: &serde_json::Value, dims: &Dims) -> Result<Self> {
        let wire: CorrelatedWire = serde_json::from_value(value.clone()).map_err(|e| parse_err(e.to_string()))?;
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        let bad = || Error::DimensionMismatch("correlated mechanism JSON does not match instance dimensions".into());
        if wire.gamma.len() != dims.n || wire.pi.len() != nb || wire.mu.len() != nb {
            return Err(bad());
        }
        let mut gamma = Vec::with_capacity(dims.n);
        for g in wire.gamma {
            if g.len() != nb || g.iter().any(|rows| rows.len() != ns || rows.iter().any(|r| r.len() != dims.m)) {
                return Err(bad());
            }
            gamma.push(g.into_iter().flatten().flatten().collect());
        }
        if wire.pi.iter().any(|rows| rows.len() != ns || rows.iter().any(|r| r.len() != dims.d)) {
            return Err(bad());
        }
        Ok(CorrelatedMechanism { mu: wire.mu, gamma, pi: wire.pi.into_iter().flatten().flatten().collect() })
    }
}

/// An uncorrelated mechanism: each agent is paid on her own report and the
/// state only, and the principal acts on the reported signal profile.
#[derive(Debug, Clone, PartialEq)]
pub struct UncorrelatedMechanism {
    /// Per agent, payments indexed `[s_i * m + theta]`.
    pub gamma: Vec<Vec<f64>>,
    /// Principal policy indexed `[s * d + a]`.
    pub pi: Vec<f64>,
}

impl UncorrelatedMechanism {
    /// Zero payments and a uniform principal policy.
    pub fn uniform_zero(dims: &Dims) -> Self {
        UncorrelatedMechanism { gamma: vec![vec![0.0; dims.l * dims.m]; dims.n], pi: vec![1.0 / dims.d as f64; dims.num_signal_profiles() * dims.d] }
    }

    /// The given scoring rules with a uniform principal policy.
    pub fn with_uniform_pi(dims: &Dims, gamma: Vec<Vec<f64>>) -> Self {
        UncorrelatedMechanism { gamma, pi: vec![1.0 / dims.d as f64; dims.num_signal_profiles() * dims.d] }
    }

    /// Principal action distribution at reported signal profile `s`.
    #[inline]
    pub fn pi_row(&self, dims: &Dims, s: usize) -> &[f64] {
        &self.pi[s * dims.d..(s + 1) * dims.d]
    }

    /// Checks shapes, distributions and the payment range `[0, cap]`.
    pub fn check(&self, dims: &Dims, cap: f64) -> Result<()> {
        if self.gamma.len() != dims.n || self.gamma.iter().any(|g| g.len() != dims.l * dims.m) || self.pi.len() != dims.num_signal_profiles() * dims.d {
            return Err(Error::DimensionMismatch("uncorrelated mechanism shape does not match the instance".into()));
        }
        for (r, row) in self.pi.chunks(dims.d).enumerate() {
            check_distribution(row, &format!("pi row {r}"))?;
        }
        check_range(self.gamma.iter().flatten(), cap)
    }

    /// Nested JSON representation.
    pub fn to_json(&self, dims: &Dims) -> serde_json::Value {
        let gamma: Vec<Vec<Vec<f64>>> = self.gamma.iter().map(|g| g.chunks(dims.m).map(|r| r.to_vec()).collect()).collect();
        let pi: Vec<Vec<f64>> = self.pi.chunks(dims.d).map(|r| r.to_vec()).collect();
        serde_json::json!({ "kind": "uncorrelated", "gamma": gamma, "pi": pi })
    }

    /// Parses the nested JSON representation and checks it against `dims`.
    pub fn from_json(value: &serde_json::Value, dims: &Dims) -> Result<Self> {
        let wire: UncorrelatedWire = serde_json::from_value(value.clone()).map_err(|e| parse_err(e.to_string()))?;
        let bad = || Error::DimensionMismatch("uncorrelated mechanism JSON does not match instance dimensions".into());
        if wire.gamma.len() != dims.n
            || wire.gamma.iter().any(|g| g.len() != dims.l || g.iter().any(|r| r.len() != dims.m))
            || wire.pi.len() != dims.num_signal_profiles()
            || wire.pi.iter().any(|r| r.len() != dims.d)
        {
            return Err(bad());
        }
        Ok(UncorrelatedMechanism {
            gamma: wire.gamma.into_iter().map(|g| g.into_iter().flatten().collect()).collect(),
            pi: wire.pi.into_iter().flatten().collect(),
        })
    }
}

/// Either kind of mechanism, as read from a mechanism file.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyMechanism {
    /// A correlated mechanism.
    Correlated(CorrelatedMechanism),
    /// An uncorrelated mechanism.
    Uncorrelated(UncorrelatedMechanism),
}

impl AnyMechanism {
    /// Parses a mechanism file, dispatching on its `kind` field (or its shape).
    pub fn from_json(value: &serde_json::Value, dims: &Dims) -> Result<Self> {
        let is_correlated = match value.get("kind").and_then(|k| k.as_str()) {
            Some("correlated") => true,
            Some("uncorrelated") => false,
            Some(other) => return Err(parse_err(format!("field `kind`: unknown mechanism kind {other:?}"))),
            None => value.get("mu").is_some(),
        };
        if is_correlated {
            CorrelatedMechanism::from_json(value, dims).map(AnyMechanism::Correlated)
        } else {
            UncorrelatedMechanism::from_json(value, dims).map(AnyMechanism::Uncorrelated)
        }
    }

    /// Reads and parses a mechanism file.
    pub fn load(path: impl AsRef<Path>, dims: &Dims) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.display().to_string(), source })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
            source_name: path.display().to_string(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_json(&value, dims)
    }
}

/// A deviation of one agent: the action actually played for every
/// recommendation, and the signal reported for every (recommendation, signal).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviationPolicy {
    /// `action_map[b_i]` is the action played when `b_i` is recommended.
    pub action_map: Vec<usize>,
    /// `report_map[b_i][s_i]` is the signal reported.
    pub report_map: Vec<Vec<usize>>,
}

impl DeviationPolicy {
    /// The truthful, obedient policy.
    pub fn identity(k: usize, l: usize) -> Self {
        DeviationPolicy { action_map: (0..k).collect(), report_map: vec![(0..l).collect(); k] }
    }

    /// `true` for the truthful, obedient policy.
    pub fn is_identity(&self) -> bool {
        self.action_map.iter().enumerate().all(|(b, &v)| b == v) && self.report_map.iter().all(|r| r.iter().enumerate().all(|(s, &v)| s == v))
    }

    /// Checks that the maps are total and in range.
    pub fn check(&self, k: usize, l: usize) -> Result<()> {
        let ok = self.action_map.len() == k
            && self.action_map.iter().all(|&v| v < k)
            && self.report_map.len() == k
            && self.report_map.iter().all(|r| r.len() == l && r.iter().all(|&v| v < l));
        if ok {
            Ok(())
        } else {
            Err(Error::DimensionMismatch("deviation policy maps are not total over their domains".into()))
        }
    }
}

#[derive(Deserialize)]
struct CorrelatedWire {
    mu: Vec<f64>,
    gamma: Vec<Vec<Vec<Vec<f64>>>>,
    pi: Vec<Vec<Vec<f64>>>,
}

#[derive(Deserialize)]
struct UncorrelatedWire {
    gamma: Vec<Vec<Vec<f64>>>,
    pi: Vec<Vec<f64>>,
}

fn parse_err(message: String) -> Error {
    Error::Parse { source_name: "mechanism".into(), line: 0, column: 0, message }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    let sum: f64 = row.iter().sum();
    if row.iter().any(|&v| v < -DIST_TOLERANCE || !v.is_finite()) || (sum - 1.0).abs() > DIST_TOLERANCE {
        return Err(Error::InvalidArgument(format!("{what} is not a probability distribution (sum {sum})")));
    }
    Ok(())
}

fn check_range<'a>(values: impl Iterator<Item = &'a f64>, cap: f64) -> Result<()> {
    for &v in values {
        if !v.is_finite() || v < -DIST_TOLERANCE || v > cap + DIST_TOLERANCE {
            return Err(Error::InvalidArgument(format!("payment {v} outside [0, {cap}]")));
        }
    }
    Ok(())
}

/// Samples an index from a discrete distribution given a uniform draw `u` in `[0, 1)`.
///
/// Falls back to the last positive-weight index when rounding leaves `u`
/// beyond the cumulative mass.
pub fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (idx, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = idx;
            if u < acc {
                return idx;
            }
        }
    }
    last_positive
}
