//! Instance generators: the two-agent separation instance and seeded random
//! instances with product-form (`Pis`) or correlated (`General`) signals.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{Dims, GameInstance};

/// Rejection budget of [`gen_random`].
pub const MAX_ATTEMPTS: usize = 10_000;

/// Two agents with actions `{▷, ◁}` (indices 0, 1), signals `{▷, ◁}`, two
/// states and two principal actions with `u(a_j, theta_j) = 1`.
///
/// Agent 0 pays `K` for action ◁; every other cost is zero. Profiles where
/// agent 0 plays ▷ yield uninformative signals (decision value 1/2); profiles
/// where it plays ◁ yield decision value 2/3. The payment cap is `budget`.
pub fn gen_counterexample(k_cost: f64, budget: f64) -> Result<GameInstance> {
    if !(k_cost > 0.0 && k_cost <= 1.0 / 24.0) {
        return Err(Error::InvalidArgument(format!("K must lie in (0, 1/24], got {k_cost}")));
    }
    let dims = Dims::new(2, 2, 2, 2, 2)?;
    let flat = |theta1: [f64; 4], theta2: [f64; 4]| -> Vec<f64> { (0..4).flat_map(|s| [theta1[s], theta2[s]]).collect() };
    let e = 1.0 / 8.0;
    let joint = vec![
        flat([e; 4], [e; 4]),
        flat([e; 4], [e; 4]),
        flat([1.0 / 6.0, 1.0 / 6.0, 1.0 / 12.0, 1.0 / 12.0], [1.0 / 12.0, 1.0 / 12.0, 1.0 / 6.0, 1.0 / 6.0]),
        flat([1.0 / 3.0, 0.0, 0.0, 1.0 / 6.0], [1.0 / 6.0, 0.0, 0.0, 1.0 / 3.0]),
    ];
    GameInstance::new(dims, vec![0.5, 0.5], joint, vec![vec![0.0, k_cost], vec![0.0, 0.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]], budget)
}

/// Signal structure of a random instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GenKind {
    /// Signals independent across agents given the state.
    Pis,
    /// Correlated signals with peer-independent marginals.
    General,
}

impl FromStr for GenKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pis" => Ok(GenKind::Pis),
            "general" => Ok(GenKind::General),
            other => Err(Error::InvalidArgument(format!("unknown instance kind `{other}` (expected `pis` or `general`)"))),
        }
    }
}

impl fmt::Display for GenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GenKind::Pis => "pis",
            GenKind::General => "general",
        })
    }
}

/// Knobs of [`gen_random`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenOptions {
    /// Costs are drawn uniformly from `[0, cost_scale]`.
    pub cost_scale: f64,
    /// Payment cap `M`.
    pub budget: f64,
    /// Dirichlet concentration of the signal rows (small values give sharper signals).
    pub concentration: f64,
    /// Rejection budget.
    pub max_attempts: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        GenOptions { cost_scale: 1.0, budget: 1.0, concentration: 1.0, max_attempts: MAX_ATTEMPTS }
    }
}

fn dirichlet_row(rng: &mut ChaCha8Rng, len: usize, alpha: f64) -> Result<Vec<f64>> {
    if len == 1 {
        return Ok(vec![1.0]);
    }
    // Normalised independent Gamma(alpha, 1) draws are Dirichlet(alpha, ..., alpha).
    let dist = Gamma::new(alpha, 1.0).map_err(|e| Error::InvalidArgument(format!("Dirichlet parameters: {e}")))?;
    let mut row: Vec<f64> = (0..len).map(|_| dist.sample(rng)).collect();
    let sum: f64 = row.iter().sum();
    if !(sum > 0.0) {
        return Ok(vec![1.0 / len as f64; len]);
    }
    row.iter_mut().for_each(|v| *v /= sum);
    Ok(row)
}

/// Comonotone coupling of the distributions `marginals[i]` (each over `0..l`),
/// returned over mixed-radix signal profiles.
fn comonotone(dims: &Dims, marginals: &[&[f64]]) -> Vec<f64> {
    let mut cuts: Vec<f64> = Vec::new();
    let cums: Vec<Vec<f64>> = marginals
        .iter()
        .map(|q| {
            let mut acc = 0.0;
            q.iter()
                .map(|v| {
                    acc += v;
                    acc
                })
                .collect()
        })
        .collect();
    for c in &cums {
        cuts.extend(c.iter().copied().filter(|&v| v > 0.0 && v < 1.0));
    }
    cuts.push(1.0);
    cuts.sort_by(|a, b| a.total_cmp(b));
    cuts.dedup();
    let mut table = vec![0.0; dims.num_signal_profiles()];
    let mut prev = 0.0;
    for &cut in &cuts {
        let mass = cut - prev;
        if mass > 0.0 {
            let mid = 0.5 * (prev + cut);
            let parts: Vec<usize> = cums.iter().map(|c| c.iter().position(|&v| v >= mid).unwrap_or(c.len() - 1)).collect();
            table[dims.encode(&parts, dims.l)] += mass;
        }
        prev = cut;
    }
    table
}

fn candidate(kind: GenKind, dims: &Dims, rng: &mut ChaCha8Rng, opts: &GenOptions) -> Result<GameInstance> {
    let (n, k, l, m) = (dims.n, dims.k, dims.l, dims.m);
    let prior = dirichlet_row(rng, m, 1.0)?;
    // psi[i][b_i][theta] is a distribution over S_i.
    let mut psi = vec![vec![Vec::with_capacity(m); k]; n];
    for row in psi.iter_mut() {
        for cell in row.iter_mut() {
            for _ in 0..m {
                cell.push(dirichlet_row(rng, l, opts.concentration)?);
            }
        }
    }
    let weight = match kind {
        GenKind::Pis => 1.0,
        GenKind::General => rng.random_range(0.3..=0.9),
    };
    let ns = dims.num_signal_profiles();
    let mut joint = Vec::with_capacity(dims.num_profiles());
    for b in 0..dims.num_profiles() {
        let bs = dims.decode(b, k);
        let mut table = vec![0.0; ns * m];
        for t in 0..m {
            let margs: Vec<&[f64]> = (0..n).map(|i| psi[i][bs[i]][t].as_slice()).collect();
            let coupled = if weight < 1.0 { comonotone(dims, &margs) } else { Vec::new() };
            for s in 0..ns {
                let ss = dims.decode(s, l);
                let product: f64 = (0..n).map(|i| margs[i][ss[i]]).product();
                let mixed = if weight < 1.0 { weight * product + (1.0 - weight) * coupled[s] } else { product };
                table[s * m + t] = prior[t] * mixed;
            }
        }
        joint.push(table);
    }
    let costs: Vec<Vec<f64>> = (0..n).map(|_| (0..k).map(|_| opts.cost_scale * rng.random::<f64>()).collect()).collect();
    let utility: Vec<Vec<f64>> = (0..dims.d).map(|_| (0..m).map(|_| rng.random::<f64>()).collect()).collect();
    GameInstance::new(*dims, prior, joint, costs, utility, opts.budget)
}

/// Seeded random instance with `iota >= min_iota` and `ell >= min_ell`.
///
/// `Pis` instances have the product form `p[theta] prod_i psi_i(s_i | b_i, theta)`;
/// `General` instances mix such a product with the comonotone coupling of the
/// same per-agent likelihoods, which correlates signals while keeping every
/// agent's marginal independent of the others' actions.
pub fn gen_random(kind: GenKind, dims: Dims, seed: u64, min_iota: f64, min_ell: f64, opts: &GenOptions) -> Result<GameInstance> {
    dims.check()?;
    if !(opts.cost_scale >= 0.0 && opts.cost_scale <= 1.0) || !(opts.budget >= 0.0) || !(opts.concentration > 0.0) {
        return Err(Error::InvalidArgument("cost_scale must lie in [0, 1], budget must be non-negative, concentration positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..opts.max_attempts {
        let inst = candidate(kind, &dims, &mut rng, opts)?;
        let c = inst.constants();
        let ell = if c.ell.is_finite() { c.ell } else { f64::INFINITY };
        if c.iota >= min_iota && ell >= min_ell && inst.validate().is_valid() {
            return Ok(inst);
        }
    }
    Err(Error::GenerationTimeout { attempts: opts.max_attempts })
}
