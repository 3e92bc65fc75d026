//! Offline mechanism design: the linear program `LP(zeta, Lambda, eps)`,
//! recovery of the optimal correlated mechanism, principal utilities, the
//! optimal uncorrelated benchmark, the product-form uncorrelation and the
//! construction of strictly incentivizing scoring rules.

use serde::{Deserialize, Serialize};

use crate::agent::{self, TieBreak};
use crate::error::{Error, Result};
use crate::game::{Dims, GameInstance};
use crate::lp::{self, LinearProgram, LpSolution, LpStatus, Sense};
use crate::mechanism::{CorrelatedMechanism, UncorrelatedMechanism};

/// Below this recommendation probability the recovered rules fall back to
/// zero payments and a uniform principal policy.
pub const MU_FLOOR: f64 = 1e-10;

/// Margins at or below this value mean an action cannot be strictly incentivized.
pub const MARGIN_FLOOR: f64 = 1e-9;

/// Tolerance of the product-form check.
pub const PRODUCT_FORM_TOLERANCE: f64 = 1e-8;

/// Index maps of the LP variables `x_i[b,s,theta]`, `y[b,s,a]`,
/// `z_i[b_i,b_i',s_i]` and `mu[b]` into the flat variable vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpMechanismVars {
    /// Game dimensions.
    pub dims: Dims,
    /// Offset of the `x` block.
    pub x_offset: usize,
    /// Offset of the `y` block.
    pub y_offset: usize,
    /// Offset of the `z` block.
    pub z_offset: usize,
    /// Offset of the `mu` block.
    pub mu_offset: usize,
    /// Total number of variables.
    pub total: usize,
}

impl LpMechanismVars {
    /// Lays out the four blocks contiguously in the order x, y, z, mu.
    pub fn new(dims: Dims) -> Self {
        let nb = dims.num_profiles();
        let ns = dims.num_signal_profiles();
        let x_offset = 0;
        let y_offset = x_offset + dims.n * nb * ns * dims.m;
        let z_offset = y_offset + nb * ns * dims.d;
        let mu_offset = z_offset + dims.n * dims.k * dims.k * dims.l;
        LpMechanismVars { dims, x_offset, y_offset, z_offset, mu_offset, total: mu_offset + nb }
    }

    /// Index of `x_i[b, s, theta]`.
    #[inline]
    pub fn x(&self, i: usize, b: usize, s: usize, theta: usize) -> usize {
        let d = &self.dims;
        self.x_offset + ((i * d.num_profiles() + b) * d.num_signal_profiles() + s) * d.m + theta
    }

    /// Index of `y[b, s, a]`.
    #[inline]
    pub fn y(&self, b: usize, s: usize, a: usize) -> usize {
        self.y_offset + (b * self.dims.num_signal_profiles() + s) * self.dims.d + a
    }

    /// Index of `z_i[b_i, b_i', s_i]`.
    #[inline]
    pub fn z(&self, i: usize, b_i: usize, b_dev: usize, s_i: usize) -> usize {
        let d = &self.dims;
        self.z_offset + ((i * d.k + b_i) * d.k + b_dev) * d.l + s_i
    }

    /// Index of `mu[b]`.
    #[inline]
    pub fn mu(&self, b: usize) -> usize {
        self.mu_offset + b
    }

    /// Human-readable variable names (for LP dumps).
    pub fn names(&self) -> Vec<String> {
        let d = &self.dims;
        let mut names = vec![String::new(); self.total];
        for i in 0..d.n {
            for b in 0..d.num_profiles() {
                for s in 0..d.num_signal_profiles() {
                    for t in 0..d.m {
                        names[self.x(i, b, s, t)] = format!("x_{i}_{b}_{s}_{t}");
                    }
                }
            }
        }
        for b in 0..d.num_profiles() {
            for s in 0..d.num_signal_profiles() {
                for a in 0..d.d {
                    names[self.y(b, s, a)] = format!("y_{b}_{s}_{a}");
                }
            }
            names[self.mu(b)] = format!("mu_{b}");
        }
        for i in 0..d.n {
            for b in 0..d.k {
                for bp in 0..d.k {
                    for s in 0..d.l {
                        names[self.z(i, b, bp, s)] = format!("z_{i}_{b}_{bp}_{s}");
                    }
                }
            }
        }
        names
    }
}

/// Builds `LP(zeta, Lambda, eps)`.
///
/// * `utility[a][theta]` is the principal's utility;
/// * `zeta[b][s * m + theta]` is the (estimated) joint law per profile;
/// * `lambda[i][b * k + b']` is the (estimated) cost difference `C_i(b, b')`.
pub fn build_lp(dims: &Dims, utility: &[Vec<f64>], zeta: &[Vec<f64>], lambda: &[Vec<f64>], eps: f64, budget: f64) -> Result<(LinearProgram, LpMechanismVars)> {
    dims.check()?;
    let (n, k, l, m, dd) = (dims.n, dims.k, dims.l, dims.m, dims.d);
    let nb = dims.num_profiles();
    let ns = dims.num_signal_profiles();
    if utility.len() != dd || utility.iter().any(|r| r.len() != m) {
        return Err(Error::DimensionMismatch("utility table shape".into()));
    }
    if zeta.len() != nb || zeta.iter().any(|z| z.len() != ns * m) {
        return Err(Error::DimensionMismatch("zeta must hold one S x Theta table per action profile".into()));
    }
    for (b, z) in zeta.iter().enumerate() {
        let sum: f64 = z.iter().sum();
        if z.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("zeta row {b} is not a distribution (sum {sum})")));
        }
    }
    if lambda.len() != n || lambda.iter().any(|t| t.len() != k * k) {
        return Err(Error::DimensionMismatch("Lambda must hold one k x k table per agent".into()));
    }
    for (i, t) in lambda.iter().enumerate() {
        for b in 0..k {
            for bp in 0..k {
                if (t[b * k + bp] + t[bp * k + b]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!("Lambda of agent {i} is not antisymmetric at ({b}, {bp})")));
                }
            }
        }
    }
    if eps < 0.0 || budget < 0.0 {
        return Err(Error::InvalidArgument("eps and the budget must be non-negative".into()));
    }

    let vars = LpMechanismVars::new(*dims);
    let mut prog = LinearProgram::new(vars.total);
    prog.var_names = vars.names();

    // Objective: sum y * zeta * u - sum x * zeta.
    for b in 0..nb {
        for s in 0..ns {
            for a in 0..dd {
                prog.objective[vars.y(b, s, a)] = (0..m).map(|t| zeta[b][s * m + t] * utility[a][t]).sum();
            }
            for i in 0..n {
                for t in 0..m {
                    prog.objective[vars.x(i, b, s, t)] = -zeta[b][s * m + t];
                }
            }
        }
    }

    for i in 0..n {
        for b_i in 0..k {
            let profiles = dims.profiles_with(i, k, b_i);
            for bp in 0..k {
                // No profitable deviation from recommendation b_i to action bp.
                let mut terms = Vec::new();
                for &b in &profiles {
                    for s in 0..ns {
                        for t in 0..m {
                            terms.push((vars.x(i, b, s, t), zeta[b][s * m + t]));
                        }
                    }
                    terms.push((vars.mu(b), -lambda[i][b_i * k + bp]));
                }
                for s_i in 0..l {
                    terms.push((vars.z(i, b_i, bp, s_i), -1.0));
                }
                prog.add_sparse_constraint(&terms, Sense::Ge, -eps);

                // z bounds the payoff of every report s' after observing s_i.
                for s_i in 0..l {
                    for sp in 0..l {
                        let mut terms = vec![(vars.z(i, b_i, bp, s_i), 1.0)];
                        for &b in &profiles {
                            let played = dims.with_digit(b, i, k, bp);
                            for s in 0..ns {
                                if dims.digit(s, i, l) != s_i {
                                    continue;
                                }
                                let s_rep = dims.with_digit(s, i, l, sp);
                                for t in 0..m {
                                    terms.push((vars.x(i, b, s_rep, t), -zeta[played][s * m + t]));
                                }
                            }
                        }
                        prog.add_sparse_constraint(&terms, Sense::Ge, 0.0);
                    }
                }
            }
        }
    }

    for b in 0..nb {
        for s in 0..ns {
            let mut terms: Vec<(usize, f64)> = (0..dd).map(|a| (vars.y(b, s, a), 1.0)).collect();
            terms.push((vars.mu(b), -1.0));
            prog.add_sparse_constraint(&terms, Sense::Eq, 0.0);
        }
    }
    for i in 0..n {
        for b in 0..nb {
            for s in 0..ns {
                for t in 0..m {
                    prog.add_sparse_constraint(&[(vars.x(i, b, s, t), 1.0), (vars.mu(b), -budget)], Sense::Le, 0.0);
                }
            }
        }
    }
    let simplex: Vec<(usize, f64)> = (0..nb).map(|b| (vars.mu(b), 1.0)).collect();
    prog.add_sparse_constraint(&simplex, Sense::Eq, 1.0);
    Ok((prog, vars))
}

/// Recovers the correlated mechanism encoded by an optimal LP solution.
pub fn recover_mechanism(solution: &LpSolution, vars: &LpMechanismVars, budget: f64) -> Result<CorrelatedMechanism> {
    if solution.status != LpStatus::Optimal {
        return Err(Error::InvalidArgument("cannot recover a mechanism from a non-optimal solution".into()));
    }
    let d = vars.dims;
    let nb = d.num_profiles();
    let ns = d.num_signal_profiles();
    let x = &solution.x;
    let mu_raw: Vec<f64> = (0..nb).map(|b| x[vars.mu(b)].max(0.0)).collect();
    let mu_sum: f64 = mu_raw.iter().sum();
    let mu: Vec<f64> = mu_raw.iter().map(|v| v / mu_sum).collect();
    let mut gamma = vec![vec![0.0; nb * ns * d.m]; d.n];
    let mut pi = vec![1.0 / d.d as f64; nb * ns * d.d];
    for b in 0..nb {
        let w = mu_raw[b];
        if w <= MU_FLOOR {
            continue;
        }
        for s in 0..ns {
            let row: Vec<f64> = (0..d.d).map(|a| (x[vars.y(b, s, a)] / w).max(0.0)).collect();
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::NumericalFailure(format!("recovered pi row ({b}, {s}) sums to {sum}")));
            }
            for a in 0..d.d {
                pi[(b * ns + s) * d.d + a] = row[a] / sum;
            }
            for i in 0..d.n {
                for t in 0..d.m {
                    gamma[i][(b * ns + s) * d.m + t] = (x[vars.x(i, b, s, t)] / w).clamp(0.0, budget);
                }
            }
        }
    }
    Ok(CorrelatedMechanism { mu, gamma, pi })
}

/// Principal net utility `U(mu, gamma, pi)` under truthful, obedient play.
pub fn principal_utility(inst: &GameInstance, mech: &CorrelatedMechanism) -> Result<f64> {
    let d = inst.dims();
    mech.check(&d, f64::INFINITY)?;
    let ns = d.num_signal_profiles();
    let mut total = 0.0;
    for b in 0..d.num_profiles() {
        if mech.mu[b] == 0.0 {
            continue;
        }
        let table = inst.joint(b);
        let mut acc = 0.0;
        for s in 0..ns {
            let pi = mech.pi_row(&d, b, s);
            for t in 0..d.m {
                let p = table[s * d.m + t];
                if p == 0.0 {
                    continue;
                }
                let decision: f64 = (0..d.d).map(|a| pi[a] * inst.utility()[a][t]).sum();
                let pay: f64 = (0..d.n).map(|i| mech.gamma_at(&d, i, b, s, t)).sum();
                acc += p * (decision - pay);
            }
        }
        total += mech.mu[b] * acc;
    }
    Ok(total)
}

/// Principal net utility `U°` of an uncorrelated mechanism with principal-favourable ties.
pub fn principal_utility_unc(inst: &GameInstance, mech: &UncorrelatedMechanism) -> Result<f64> {
    Ok(agent::uncorrelated_outcome(inst, mech, TieBreak::PrincipalFavorable)?.0)
}

/// Principal net utility of an uncorrelated mechanism under the given tie-break.
pub fn principal_utility_unc_with(inst: &GameInstance, mech: &UncorrelatedMechanism, tie_break: TieBreak) -> Result<f64> {
    Ok(agent::uncorrelated_outcome(inst, mech, tie_break)?.0)
}

/// True cost-difference tables `[i][b * k + b']`.
pub fn true_cost_differences(inst: &GameInstance) -> Vec<Vec<f64>> {
    inst.constants().cost_diffs
}

/// Optimal correlated mechanism and its value, from `LP(P, C, 0)`.
pub fn solve_offline_optimal(inst: &GameInstance) -> Result<(CorrelatedMechanism, f64)> {
    solve_offline_optimal_with(inst, &lp::DenseSimplex::default())
}

/// [`solve_offline_optimal`] with an explicit LP backend.
pub fn solve_offline_optimal_with(inst: &GameInstance, backend: &dyn lp::LpBackend) -> Result<(CorrelatedMechanism, f64)> {
    let d = inst.dims();
    let (prog, vars) = build_lp(&d, inst.utility(), inst.joint_tables(), &true_cost_differences(inst), 0.0, inst.budget())?;
    let sol = backend.solve(&prog)?.into_optimal("offline optimal mechanism")?;
    let mech = recover_mechanism(&sol, &vars, inst.budget())?;
    Ok((mech, sol.objective))
}

/// Posterior-myopic principal policy for profile `b`: the best action for the
/// joint law of every signal profile (smallest index among ties).
fn myopic_policy(inst: &GameInstance, b: usize) -> (Vec<f64>, f64) {
    let d = inst.dims();
    let ns = d.num_signal_profiles();
    let table = inst.joint(b);
    let mut pi = vec![0.0; ns * d.d];
    let mut value = 0.0;
    for s in 0..ns {
        let scores: Vec<f64> = (0..d.d).map(|a| (0..d.m).map(|t| table[s * d.m + t] * inst.utility()[a][t]).sum()).collect();
        let best = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let a = scores.iter().position(|&v| v == best).unwrap_or(0);
        pi[s * d.d + a] = 1.0;
        value += best;
    }
    (pi, value)
}

/// Minimum expected payment that makes `b_i` (with truthful reporting) a best
/// response of agent `i`, and the corresponding scoring rule; `None` when infeasible.
fn min_payment_rule(inst: &GameInstance, i: usize, b_i: usize) -> Result<Option<(Vec<f64>, f64)>> {
    let d = inst.dims();
    let (k, l, m) = (d.k, d.l, d.m);
    let budget = inst.budget();
    let marg = |b: usize| &inst.marginal_tables()[i][b];
    let g = |s: usize, t: usize| s * m + t;
    let n_gamma = l * m;
    let others: Vec<usize> = (0..k).filter(|&b| b != b_i).collect();
    let z = |o: usize, s: usize| n_gamma + o * l + s;
    let mut prog = LinearProgram::new(n_gamma + others.len() * l);
    for j in 0..n_gamma {
        prog.set_bounds(j, 0.0, budget);
        prog.objective[j] = -marg(b_i)[j];
    }
    for s in 0..l {
        for sp in 0..l {
            if sp == s {
                continue;
            }
            let terms: Vec<(usize, f64)> = (0..m).flat_map(|t| [(g(s, t), marg(b_i)[s * m + t]), (g(sp, t), -marg(b_i)[s * m + t])]).collect();
            prog.add_sparse_constraint(&terms, Sense::Ge, 0.0);
        }
    }
    for (o, &bp) in others.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = (0..n_gamma).map(|j| (j, marg(b_i)[j])).collect();
        terms.extend((0..l).map(|s| (z(o, s), -1.0)));
        prog.add_sparse_constraint(&terms, Sense::Ge, inst.cost(i, b_i) - inst.cost(i, bp));
        for s in 0..l {
            for sp in 0..l {
                let mut terms = vec![(z(o, s), 1.0)];
                terms.extend((0..m).map(|t| (g(sp, t), -marg(bp)[s * m + t])));
                prog.add_sparse_constraint(&terms, Sense::Ge, 0.0);
            }
        }
    }
    let sol = lp::solve(&prog)?;
    match sol.status {
        LpStatus::Optimal => Ok(Some((sol.x[..n_gamma].to_vec(), -sol.objective))),
        LpStatus::Infeasible => Ok(None),
        LpStatus::Unbounded => Err(Error::NumericalFailure("minimum-payment program reported unbounded".into())),
    }
}

/// Optimal uncorrelated mechanism over pure target profiles, and its value.
pub fn solve_optimal_uncorrelated(inst: &GameInstance) -> Result<(UncorrelatedMechanism, f64)> {
    let d = inst.dims();
    let mut best: Option<(UncorrelatedMechanism, f64)> = None;
    'profiles: for b in 0..d.num_profiles() {
        let parts = d.decode(b, d.k);
        let mut gamma = Vec::with_capacity(d.n);
        let mut payments = 0.0;
        for (i, &b_i) in parts.iter().enumerate() {
            match min_payment_rule(inst, i, b_i)? {
                Some((rule, pay)) => {
                    gamma.push(rule);
                    payments += pay;
                }
                None => continue 'profiles,
            }
        }
        let (pi, decision) = myopic_policy(inst, b);
        let value = decision - payments;
        if best.as_ref().map_or(true, |(_, v)| value > *v + 1e-12) {
            best = Some((UncorrelatedMechanism { gamma, pi }, value));
        }
    }
    best.ok_or(Error::AllProfilesInfeasible)
}

/// Per-agent signal likelihoods `psi_i(s_i | b_i, theta)` of a product-form
/// instance, indexed `[i][b_i][s_i * m + theta]`, and the largest factorisation residual.
pub fn product_form_factors(inst: &GameInstance) -> (Vec<Vec<Vec<f64>>>, f64) {
    let d = inst.dims();
    let m = d.m;
    let psi: Vec<Vec<Vec<f64>>> = (0..d.n)
        .map(|i| {
            (0..d.k)
                .map(|b_i| {
                    let marg = &inst.marginal_tables()[i][b_i];
                    (0..d.l * m)
                        .map(|idx| {
                            let p = inst.prior()[idx % m];
                            if p > 0.0 {
                                marg[idx] / p
                            } else {
                                1.0 / d.l as f64
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let mut residual: f64 = 0.0;
    for b in 0..d.num_profiles() {
        let bs = d.decode(b, d.k);
        for s in 0..d.num_signal_profiles() {
            let ss = d.decode(s, d.l);
            for t in 0..m {
                let model = inst.prior()[t] * (0..d.n).map(|i| psi[i][bs[i]][ss[i] * m + t]).product::<f64>();
                residual = residual.max((inst.prob(b, s, t) - model).abs());
            }
        }
    }
    (psi, residual)
}

/// Converts a correlated mechanism on a product-form instance into an
/// uncorrelated one achieving at least the same principal utility.
pub fn uncorrelate_pis(inst: &GameInstance, corr: &CorrelatedMechanism) -> Result<UncorrelatedMechanism> {
    let d = inst.dims();
    corr.check(&d, f64::INFINITY)?;
    let (psi, residual) = product_form_factors(inst);
    if residual > PRODUCT_FORM_TOLERANCE {
        return Err(Error::NotProductForm { residual });
    }
    let ns = d.num_signal_profiles();
    let m = d.m;
    // G(b): utility conditional on recommending b.
    let mut best_b = None;
    let mut best_g = f64::NEG_INFINITY;
    for b in 0..d.num_profiles() {
        if corr.mu[b] <= MU_FLOOR {
            continue;
        }
        let table = inst.joint(b);
        let mut g = 0.0;
        for s in 0..ns {
            let pi = corr.pi_row(&d, b, s);
            for t in 0..m {
                let decision: f64 = (0..d.d).map(|a| pi[a] * inst.utility()[a][t]).sum();
                let pay: f64 = (0..d.n).map(|i| corr.gamma_at(&d, i, b, s, t)).sum();
                g += table[s * m + t] * (decision - pay);
            }
        }
        if g > best_g {
            best_g = g;
            best_b = Some(b);
        }
    }
    let b_bar = best_b.ok_or_else(|| Error::InvalidArgument("recommendation distribution has no positive entry".into()))?;
    let b_bar_parts = d.decode(b_bar, d.k);

    let mut gamma = Vec::with_capacity(d.n);
    for i in 0..d.n {
        let profiles = d.profiles_with(i, d.k, b_bar_parts[i]);
        let weight: f64 = profiles.iter().map(|&b| corr.mu[b]).sum();
        let mut rule = vec![0.0; d.l * m];
        for &b in &profiles {
            let w = corr.mu[b];
            if w == 0.0 {
                continue;
            }
            let bs = d.decode(b, d.k);
            for s in 0..ns {
                let ss = d.decode(s, d.l);
                let s_i = ss[i];
                for t in 0..m {
                    let others: f64 = (0..d.n).filter(|&j| j != i).map(|j| psi[j][bs[j]][ss[j] * m + t]).product();
                    rule[s_i * m + t] += w * others * corr.gamma_at(&d, i, b, s, t);
                }
            }
        }
        rule.iter_mut().for_each(|v| *v /= weight);
        gamma.push(rule);
    }
    let pi: Vec<f64> = (0..ns).flat_map(|s| corr.pi_row(&d, b_bar, s).to_vec()).collect();
    Ok(UncorrelatedMechanism { gamma, pi })
}

/// Strictly incentivizing scoring rules, one per agent and action, with their common margin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncentivizingRules {
    /// `rules[i][b_i]` indexed `[s_i * m + theta]`.
    pub rules: Vec<Vec<Vec<f64>>>,
    /// Per `(i, b_i)` optimal margin.
    pub margins: Vec<Vec<f64>>,
    /// Common margin: the smallest entry of `margins`.
    pub margin: f64,
}

impl IncentivizingRules {
    /// The profile rule `gamma^b = (gamma_1^{b_1}, ..., gamma_n^{b_n})`.
    pub fn profile_rules(&self, dims: &Dims, b: usize) -> Vec<Vec<f64>> {
        (0..dims.n).map(|i| self.rules[i][dims.digit(b, i, dims.k)].clone()).collect()
    }
}

/// The program shared by [`incentivizing_rule`] and [`cheapest_incentivizing_rule`]:
/// variables `gamma` (first `l m`), the deviation bounds `z`, and the margin `r` (last).
fn incentivizing_program(inst: &GameInstance, i: usize, b_i: usize, budget: f64) -> Result<LinearProgram> {
    let d = inst.dims();
    let (k, l, m) = (d.k, d.l, d.m);
    inst.marginal(i, b_i)?;
    let marg = |b: usize| &inst.marginal_tables()[i][b];
    let n_gamma = l * m;
    let others: Vec<usize> = (0..k).filter(|&b| b != b_i).collect();
    let z = |o: usize, s: usize| n_gamma + o * l + s;
    let r = n_gamma + others.len() * l;
    let mut prog = LinearProgram::new(r + 1);
    for j in 0..n_gamma {
        prog.set_bounds(j, 0.0, budget);
    }
    prog.set_bounds(r, -(budget + 2.0), 1.0);
    // Strict preference for b_i over every other action, whatever the reports.
    for (o, &bp) in others.iter().enumerate() {
        let mut terms: Vec<(usize, f64)> = (0..n_gamma).map(|j| (j, marg(b_i)[j])).collect();
        terms.extend((0..l).map(|s| (z(o, s), -1.0)));
        terms.push((r, -1.0));
        prog.add_sparse_constraint(&terms, Sense::Ge, inst.cost(i, b_i) - inst.cost(i, bp));
        for s in 0..l {
            for sp in 0..l {
                let mut terms = vec![(z(o, s), 1.0)];
                terms.extend((0..m).map(|t| (sp * m + t, -marg(bp)[s * m + t])));
                prog.add_sparse_constraint(&terms, Sense::Ge, 0.0);
            }
        }
    }
    // Posterior properness: truthful reporting is weakly optimal after b_i.
    for s in 0..l {
        let mass: f64 = marg(b_i)[s * m..(s + 1) * m].iter().sum();
        if mass <= 0.0 {
            continue;
        }
        for sp in 0..l {
            if sp == s {
                continue;
            }
            let terms: Vec<(usize, f64)> = (0..m)
                .flat_map(|t| {
                    let post = marg(b_i)[s * m + t] / mass;
                    [(s * m + t, post), (sp * m + t, -post)]
                })
                .collect();
            prog.add_sparse_constraint(&terms, Sense::Ge, 0.0);
        }
    }
    Ok(prog)
}

/// Margin-maximising scoring rule for agent `i` and action `b_i`, with the
/// optimal margin (which may be non-positive).
pub fn incentivizing_rule(inst: &GameInstance, i: usize, b_i: usize, budget: f64) -> Result<(Vec<f64>, f64)> {
    let mut prog = incentivizing_program(inst, i, b_i, budget)?;
    let r = prog.num_vars - 1;
    prog.objective[r] = 1.0;
    let sol = lp::solve(&prog)?.into_optimal("incentivizing rule")?;
    let n_gamma = inst.dims().l * inst.dims().m;
    let rule: Vec<f64> = sol.x[..n_gamma].iter().map(|v| v.clamp(0.0, budget)).collect();
    Ok((rule, sol.x[r]))
}

/// Scoring rule for `(i, b_i)` with margin at least `margin` and the smallest
/// expected truthful payment; `None` when no such rule exists.
pub fn cheapest_incentivizing_rule(inst: &GameInstance, i: usize, b_i: usize, budget: f64, margin: f64) -> Result<Option<Vec<f64>>> {
    let mut prog = incentivizing_program(inst, i, b_i, budget)?;
    let r = prog.num_vars - 1;
    let hi = prog.upper[r];
    if margin > hi {
        return Ok(None);
    }
    prog.set_bounds(r, margin, hi);
    let n_gamma = inst.dims().l * inst.dims().m;
    let marg = inst.marginal(i, b_i)?;
    for j in 0..n_gamma {
        prog.objective[j] = -marg[j];
    }
    let sol = lp::solve(&prog)?;
    Ok((sol.status == LpStatus::Optimal).then(|| sol.x[..n_gamma].iter().map(|v| v.clamp(0.0, budget)).collect()))
}

/// Builds one strictly incentivizing rule per agent and action.
///
/// Each action's margin-maximising program is solved first; the common margin
/// is the smallest optimum. Every action then keeps, among the rules reaching
/// the common margin, one with the smallest expected truthful payment (the
/// margin-maximising rule when that second program fails). The reported common
/// margin is re-measured by enumeration on the kept rules.
///
/// Fails with [`Error::AssumptionFails`] when some action cannot be strictly
/// incentivized (margin at most `1e-9`).
pub fn build_incentivizing_rules(inst: &GameInstance, budget: f64) -> Result<IncentivizingRules> {
    let d = inst.dims();
    let mut best = Vec::with_capacity(d.n);
    let mut margins = Vec::with_capacity(d.n);
    for i in 0..d.n {
        let mut ri = Vec::with_capacity(d.k);
        let mut mi = Vec::with_capacity(d.k);
        for b_i in 0..d.k {
            let (rule, margin) = incentivizing_rule(inst, i, b_i, budget)?;
            if margin <= MARGIN_FLOOR {
                return Err(Error::AssumptionFails { agent: i, action: b_i, margin });
            }
            ri.push(rule);
            mi.push(margin);
        }
        best.push(ri);
        margins.push(mi);
    }
    let common = margins.iter().flatten().copied().fold(f64::INFINITY, f64::min);
    let mut rules = Vec::with_capacity(d.n);
    let (mut margin, mut worst) = (common, (0, 0));
    for i in 0..d.n {
        let mut ri = Vec::with_capacity(d.k);
        for b_i in 0..d.k {
            let mut rule = best[i][b_i].clone();
            if let Some(cheap) = cheapest_incentivizing_rule(inst, i, b_i, budget, common)? {
                let (strict, prop) = incentivizing_slacks(inst, i, b_i, &cheap)?;
                if strict >= common - MARGIN_FLOOR && prop >= -MARGIN_FLOOR {
                    rule = cheap;
                }
            }
            let (strict, _) = incentivizing_slacks(inst, i, b_i, &rule)?;
            if strict < margin {
                (margin, worst) = (strict, (i, b_i));
            }
            ri.push(rule);
        }
        rules.push(ri);
    }
    if margin <= MARGIN_FLOOR {
        return Err(Error::AssumptionFails { agent: worst.0, action: worst.1, margin });
    }
    Ok(IncentivizingRules { rules, margins, margin })
}

/// Slacks of a candidate rule for `(i, b_i)`: the strict-preference slack
/// `min_{b' != b_i} [truthful payment - F°(gamma | b') - C_i(b_i, b')]` and
/// the posterior-properness slack, both computed by enumeration.
pub fn incentivizing_slacks(inst: &GameInstance, i: usize, b_i: usize, rule: &[f64]) -> Result<(f64, f64)> {
    let d = inst.dims();
    let m = d.m;
    let marg = inst.marginal(i, b_i)?;
    let truthful: f64 = marg.iter().zip(rule).map(|(p, g)| p * g).sum();
    let mut strict = f64::INFINITY;
    for bp in 0..d.k {
        if bp != b_i {
            strict = strict.min(truthful - agent::f_circ(inst, i, rule, bp)? - inst.cost_diff(i, b_i, bp));
        }
    }
    let mut prop = f64::INFINITY;
    for s in 0..d.l {
        let Ok(post) = inst.posterior(i, b_i, s) else { continue };
        for sp in 0..d.l {
            let v: f64 = (0..m).map(|t| post[t] * (rule[s * m + t] - rule[sp * m + t])).sum();
            prop = prop.min(v);
        }
    }
    Ok((strict, prop))
}
