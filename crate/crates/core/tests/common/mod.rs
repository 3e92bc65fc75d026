//! Fixtures and independent brute-force oracles shared by the integration tests.

#![allow(dead_code, clippy::needless_range_loop)]

use acqlab::agent;
use acqlab::generate::{self, GenKind, GenOptions};
use acqlab::lp::{LinearProgram, Sense};
use acqlab::{CorrelatedMechanism, DeviationPolicy, Dims, GameInstance, UncorrelatedMechanism};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cost of agent 0's informative action in the separation instance.
pub const K: f64 = 1.0 / 24.0;

/// Index of the "▷" action / signal.
pub const RIGHT: usize = 0;
/// Index of the "◁" action / signal.
pub const LEFT: usize = 1;

/// The two-agent separation instance with `K = 1/24` and `M = 1`.
pub fn counterexample() -> GameInstance {
    generate::gen_counterexample(K, 1.0).expect("valid K")
}

/// Dimensions `(2, 2, 2, 2, 2)`.
pub fn dims2() -> Dims {
    Dims::new(2, 2, 2, 2, 2).unwrap()
}

/// The correlated mechanism that recommends `◁◁` with probability `eps` and
/// `◁▷` otherwise, pays agent 0 one unit on `(◁◁, ▷▷, θ1)` and `(◁◁, ◁◁, θ2)`,
/// pays agent 1 nothing, and lets the principal act on the posterior mode.
pub fn separating_mechanism(eps: f64) -> CorrelatedMechanism {
    let d = dims2();
    let ns = d.num_signal_profiles();
    let ll = d.encode(&[LEFT, LEFT], d.k);
    let lr = d.encode(&[LEFT, RIGHT], d.k);
    let mut mech = CorrelatedMechanism::uniform_zero(&d);
    mech.mu = vec![0.0; d.num_profiles()];
    mech.mu[ll] = eps;
    mech.mu[lr] = 1.0 - eps;
    let s_rr = d.encode(&[RIGHT, RIGHT], d.l);
    let s_ll = d.encode(&[LEFT, LEFT], d.l);
    mech.gamma[0][(ll * ns + s_rr) * d.m] = 1.0;
    mech.gamma[0][(ll * ns + s_ll) * d.m + 1] = 1.0;
    let inst = counterexample();
    for b in 0..d.num_profiles() {
        let table = inst.joint(b);
        for s in 0..ns {
            let a = if table[s * d.m] >= table[s * d.m + 1] { 0 } else { 1 };
            let row = &mut mech.pi[(b * ns + s) * d.d..(b * ns + s + 1) * d.d];
            row.fill(0.0);
            row[a] = 1.0;
        }
    }
    mech
}

/// A low-cost, well-separated instance on which the learner's assumptions hold
/// with a positive incentivizing margin.
pub fn learnable_instance() -> GameInstance {
    let opts = GenOptions { concentration: 0.2, cost_scale: 0.05, ..GenOptions::default() };
    generate::gen_random(GenKind::General, dims2(), 4, 0.25, 0.8, &opts).expect("generator succeeds")
}

/// Every joint table equal to `prior[θ] / |S|`: signals carry no information.
pub fn uniform_independent(dims: Dims, prior: Vec<f64>, costs: Vec<Vec<f64>>, utility: Vec<Vec<f64>>, budget: f64) -> GameInstance {
    let ns = dims.num_signal_profiles();
    let table: Vec<f64> = (0..ns * dims.m).map(|idx| prior[idx % dims.m] / ns as f64).collect();
    GameInstance::new(dims, prior, vec![table; dims.num_profiles()], costs, utility, budget).unwrap()
}

/// Seeded random instance with the default generator options.
pub fn random_instance(kind: GenKind, dims: Dims, seed: u64) -> GameInstance {
    generate::gen_random(kind, dims, seed, 0.0, 0.0, &GenOptions::default()).expect("generator succeeds")
}

/// Random scoring rule with entries in `[0, cap]`.
pub fn random_rule(rng: &mut ChaCha8Rng, len: usize, cap: f64) -> Vec<f64> {
    (0..len).map(|_| cap * rng.random::<f64>()).collect()
}

fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random::<f64>() + 1e-3).collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|v| v / sum).collect()
}

/// Random correlated mechanism with payments in `[0, cap]`.
pub fn random_correlated(rng: &mut ChaCha8Rng, dims: &Dims, cap: f64) -> CorrelatedMechanism {
    let nb = dims.num_profiles();
    let ns = dims.num_signal_profiles();
    CorrelatedMechanism {
        mu: random_distribution(rng, nb),
        gamma: (0..dims.n).map(|_| random_rule(rng, nb * ns * dims.m, cap)).collect(),
        pi: (0..nb * ns).flat_map(|_| random_distribution(rng, dims.d)).collect(),
    }
}

/// Random uncorrelated mechanism with payments in `[0, cap]`.
pub fn random_uncorrelated(rng: &mut ChaCha8Rng, dims: &Dims, cap: f64) -> UncorrelatedMechanism {
    UncorrelatedMechanism {
        gamma: (0..dims.n).map(|_| random_rule(rng, dims.l * dims.m, cap)).collect(),
        pi: (0..dims.num_signal_profiles()).flat_map(|_| random_distribution(rng, dims.d)).collect(),
    }
}

/// Seeded RNG for test data.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// All maps `0..len -> 0..base`, in lexicographic order.
pub fn all_maps(len: usize, base: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out.into_iter().flat_map(|p| (0..base).map(move |v| [p.clone(), vec![v]].concat())).collect();
    }
    out
}

/// Agent marginal `P^(i)(s_i, θ | b)` under one profile, summed by brute force.
pub fn brute_marginal_at(inst: &GameInstance, i: usize, b: usize) -> Vec<f64> {
    let d = inst.dims();
    let mut out = vec![0.0; d.l * d.m];
    for s in 0..d.num_signal_profiles() {
        let parts = d.decode(s, d.l);
        for t in 0..d.m {
            out[parts[i] * d.m + t] += inst.prob(b, s, t);
        }
    }
    out
}

/// Agent marginal averaged over the other agents' actions, by brute force.
pub fn brute_marginal(inst: &GameInstance, i: usize, b_i: usize) -> Vec<f64> {
    let d = inst.dims();
    let profiles: Vec<usize> = (0..d.num_profiles()).filter(|&b| d.decode(b, d.k)[i] == b_i).collect();
    let mut acc = vec![0.0; d.l * d.m];
    for &b in &profiles {
        for (a, v) in acc.iter_mut().zip(brute_marginal_at(inst, i, b)) {
            *a += v;
        }
    }
    acc.iter().map(|v| v / profiles.len() as f64).collect()
}

/// Agent value of every `(action, report map)` pair against `gamma_i`, by enumeration.
pub fn brute_response_values(inst: &GameInstance, i: usize, gamma_i: &[f64]) -> Vec<(usize, Vec<usize>, f64)> {
    let d = inst.dims();
    let mut out = Vec::new();
    for b in 0..d.k {
        let marg = brute_marginal(inst, i, b);
        for map in all_maps(d.l, d.l) {
            let mut v = -inst.cost(i, b);
            for s in 0..d.l {
                for t in 0..d.m {
                    v += marg[s * d.m + t] * gamma_i[map[s] * d.m + t];
                }
            }
            out.push((b, map, v));
        }
    }
    out
}

/// `max` over report maps of the expected payment after playing `b_i`, by enumeration.
pub fn brute_f_circ(inst: &GameInstance, i: usize, gamma_i: &[f64], b_i: usize) -> f64 {
    let d = inst.dims();
    let marg = brute_marginal(inst, i, b_i);
    all_maps(d.l, d.l)
        .iter()
        .map(|map| (0..d.l).map(|s| (0..d.m).map(|t| marg[s * d.m + t] * gamma_i[map[s] * d.m + t]).sum::<f64>()).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Expected payment minus expected cost of agent `i` under a deviation, computed
/// directly from the definition.
pub fn brute_deviation_value(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize, dev: &DeviationPolicy) -> f64 {
    let d = inst.dims();
    let ns = d.num_signal_profiles();
    let mut total = 0.0;
    for b in 0..d.num_profiles() {
        let w = mech.mu[b];
        if w == 0.0 {
            continue;
        }
        let mut parts = d.decode(b, d.k);
        let b_i = parts[i];
        parts[i] = dev.action_map[b_i];
        let played = d.encode(&parts, d.k);
        for s in 0..ns {
            let mut sp = d.decode(s, d.l);
            sp[i] = dev.report_map[b_i][sp[i]];
            let s_rep = d.encode(&sp, d.l);
            for t in 0..d.m {
                total += w * inst.prob(played, s, t) * mech.gamma[i][(b * ns + s_rep) * d.m + t];
            }
        }
        total -= w * inst.cost(i, dev.action_map[b_i]);
    }
    total
}

/// Largest gain of agent `i` over truthful, obedient play, enumerating all
/// `k^k · l^(l·k)` deviations.
pub fn brute_best_gain(inst: &GameInstance, mech: &CorrelatedMechanism, i: usize) -> f64 {
    let d = inst.dims();
    let truthful = brute_deviation_value(inst, mech, i, &DeviationPolicy::identity(d.k, d.l));
    let mut best = f64::NEG_INFINITY;
    let report_tables = all_maps(d.k * d.l, d.l);
    for action_map in all_maps(d.k, d.k) {
        for table in &report_tables {
            let report_map: Vec<Vec<usize>> = table.chunks(d.l).map(|c| c.to_vec()).collect();
            let dev = DeviationPolicy { action_map: action_map.clone(), report_map };
            best = best.max(brute_deviation_value(inst, mech, i, &dev));
        }
    }
    best - truthful
}

/// Decision value of a profile: `Σ_s max_a Σ_θ P(s, θ | b) u(a, θ)`.
pub fn decision_value(inst: &GameInstance, b: usize) -> f64 {
    let d = inst.dims();
    (0..d.num_signal_profiles())
        .map(|s| (0..d.d).map(|a| (0..d.m).map(|t| inst.prob(b, s, t) * inst.utility()[a][t]).sum::<f64>()).fold(f64::NEG_INFINITY, f64::max))
        .sum()
}

/// Principal net utility of an uncorrelated mechanism when the agents play the
/// given `(action, report map)` pairs, from the definition.
pub fn brute_unc_utility(inst: &GameInstance, mech: &UncorrelatedMechanism, actions: &[usize], maps: &[Vec<usize>]) -> f64 {
    let d = inst.dims();
    let b = d.encode(actions, d.k);
    let mut total = 0.0;
    for s in 0..d.num_signal_profiles() {
        let rep: Vec<usize> = d.decode(s, d.l).iter().enumerate().map(|(i, &si)| maps[i][si]).collect();
        let sr = d.encode(&rep, d.l);
        for t in 0..d.m {
            let p = inst.prob(b, s, t);
            let dec: f64 = (0..d.d).map(|a| mech.pi[sr * d.d + a] * inst.utility()[a][t]).sum();
            let pay: f64 = (0..d.n).map(|i| mech.gamma[i][rep[i] * d.m + t]).sum();
            total += p * (dec - pay);
        }
    }
    total
}

/// Optimal objective of a bounded LP by enumerating basic solutions
/// (`None` when no feasible vertex exists). Every variable must have finite bounds.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<f64> {
    let n = lp.num_vars;
    let rows = lp.constraints.len();
    assert!(lp.upper.iter().all(|u| u.is_finite()), "the oracle needs finite bounds");
    let mut best: Option<f64> = None;
    for free_mask in 0u32..(1 << n) {
        let free: Vec<usize> = (0..n).filter(|j| free_mask & (1 << j) != 0).collect();
        let fixed: Vec<usize> = (0..n).filter(|j| free_mask & (1 << j) == 0).collect();
        if free.len() > rows {
            continue;
        }
        for row_mask in 0u32..(1 << rows) {
            if row_mask.count_ones() as usize != free.len() {
                continue;
            }
            let active: Vec<usize> = (0..rows).filter(|r| row_mask & (1 << r) != 0).collect();
            for side in 0u32..(1 << fixed.len()) {
                let mut x = vec![0.0; n];
                for (p, &j) in fixed.iter().enumerate() {
                    x[j] = if side & (1 << p) != 0 { lp.upper[j] } else { lp.lower[j] };
                }
                if !free.is_empty() {
                    let mut a: Vec<Vec<f64>> = active
                        .iter()
                        .map(|&r| {
                            let c = &lp.constraints[r];
                            let rhs = c.rhs - fixed.iter().map(|&j| c.coeffs[j] * x[j]).sum::<f64>();
                            let mut row: Vec<f64> = free.iter().map(|&j| c.coeffs[j]).collect();
                            row.push(rhs);
                            row
                        })
                        .collect();
                    match gauss_solve(&mut a) {
                        Some(sol) => {
                            for (p, &j) in free.iter().enumerate() {
                                x[j] = sol[p];
                            }
                        }
                        None => continue,
                    }
                }
                if feasible(lp, &x, 1e-9) {
                    let v = lp.objective_value(&x);
                    if best.map_or(true, |b| v > b) {
                        best = Some(v);
                    }
                }
            }
        }
    }
    best
}

fn feasible(lp: &LinearProgram, x: &[f64], tol: f64) -> bool {
    let bounds = (0..lp.num_vars).all(|j| x[j] >= lp.lower[j] - tol && x[j] <= lp.upper[j] + tol);
    bounds
        && lp.constraints.iter().all(|c| {
            let lhs: f64 = c.coeffs.iter().zip(x).map(|(a, b)| a * b).sum();
            let scale = 1.0 + c.rhs.abs();
            match c.sense {
                Sense::Le => lhs <= c.rhs + tol * scale,
                Sense::Ge => lhs >= c.rhs - tol * scale,
                Sense::Eq => (lhs - c.rhs).abs() <= tol * scale,
            }
        })
}

/// Solves a square system given as an augmented matrix (partial pivoting);
/// `None` when singular.
fn gauss_solve(a: &mut [Vec<f64>]) -> Option<Vec<f64>> {
    let n = a.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = a[r][col] / a[col][col];
                if f != 0.0 {
                    for c in col..=n {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    Some((0..n).map(|r| a[r][n] / a[r][r]).collect())
}

/// Random bounded LP with at most `max_vars` variables and `max_rows` constraints.
///
/// Most programs are feasible by construction (the right-hand sides are built
/// around a random interior point); roughly one in ten uses arbitrary
/// right-hand sides and may be infeasible.
pub fn random_lp(rng: &mut ChaCha8Rng, max_vars: usize, max_rows: usize) -> LinearProgram {
    let n = rng.random_range(1..=max_vars);
    let rows = rng.random_range(1..=max_rows);
    let mut lp = LinearProgram::new(n);
    let mut x0 = vec![0.0; n];
    for j in 0..n {
        let lo = -rng.random::<f64>();
        let hi = lo + 0.5 + 2.5 * rng.random::<f64>();
        lp.set_bounds(j, lo, hi);
        x0[j] = lo + (hi - lo) * rng.random::<f64>();
        lp.objective[j] = 2.0 * rng.random::<f64>() - 1.0;
    }
    let arbitrary = rng.random::<f64>() < 0.1;
    for _ in 0..rows {
        let coeffs: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { 2.0 * rng.random::<f64>() - 1.0 }).collect();
        let at: f64 = coeffs.iter().zip(&x0).map(|(a, b)| a * b).sum();
        let u = rng.random::<f64>();
        let (sense, rhs) = if u < 0.1 {
            (Sense::Eq, at)
        } else if u < 0.55 {
            (Sense::Le, at + rng.random::<f64>())
        } else {
            (Sense::Ge, at - rng.random::<f64>())
        };
        let rhs = if arbitrary { 4.0 * rng.random::<f64>() - 2.0 } else { rhs };
        lp.add_constraint(coeffs, sense, rhs);
    }
    lp
}

/// `true` when agent `i` best-responds to `gamma_i` with a truthful report map
/// among its optimal responses.
pub fn truthful_is_optimal(inst: &GameInstance, i: usize, gamma_i: &[f64]) -> bool {
    let values = brute_response_values(inst, i, gamma_i);
    let best = values.iter().map(|v| v.2).fold(f64::NEG_INFINITY, f64::max);
    let d = inst.dims();
    let identity: Vec<usize> = (0..d.l).collect();
    values.iter().any(|(_, map, v)| *map == identity && *v >= best - agent::TIE_TOLERANCE)
}
