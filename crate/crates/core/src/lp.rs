//! Bounded-variable linear programs and a deterministic dense simplex solver.
//!
//! The solver is a two-phase dense tableau simplex. Rows are scaled to unit
//! max-norm, pricing is exact steepest edge with a switch to Bland's
//! anti-cycling rule during long degenerate stretches, the ratio test is Harris' two-pass test,
//! and the tableau is periodically rebuilt from the original data so that
//! round-off does not accumulate. Variable bounds are handled by shifting
//! (`x = lo + x'`) and explicit upper-bound rows.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relation of a constraint row to its right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `row · x <= rhs`
    Le,
    /// `row · x == rhs`
    Eq,
    /// `row · x >= rhs`
    Ge,
}

impl Sense {
    fn flipped(self) -> Sense {
        match self {
            Sense::Le => Sense::Ge,
            Sense::Ge => Sense::Le,
            Sense::Eq => Sense::Eq,
        }
    }
}

/// One linear constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// Dense coefficient row (length = number of variables).
    pub coeffs: Vec<f64>,
    /// Relation.
    pub sense: Sense,
    /// Right-hand side.
    pub rhs: f64,
}

/// A maximisation problem over bounded variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Number of variables.
    pub num_vars: usize,
    /// Finite lower bounds.
    pub lower: Vec<f64>,
    /// Upper bounds (may be `+inf`).
    pub upper: Vec<f64>,
    /// Constraint rows.
    pub constraints: Vec<Constraint>,
    /// Objective coefficients (maximised).
    pub objective: Vec<f64>,
    /// Optional variable names used by [`LinearProgram::to_lp_format`].
    pub var_names: Vec<String>,
}

impl LinearProgram {
    /// A program with `num_vars` variables in `[0, +inf)`, zero objective and no constraints.
    pub fn new(num_vars: usize) -> Self {
        LinearProgram {
            num_vars,
            lower: vec![0.0; num_vars],
            upper: vec![f64::INFINITY; num_vars],
            constraints: Vec::new(),
            objective: vec![0.0; num_vars],
            var_names: Vec::new(),
        }
    }

    /// Sets the bounds of variable `j`.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lower[j] = lo;
        self.upper[j] = hi;
    }

    /// Appends a dense constraint.
    pub fn add_constraint(&mut self, coeffs: Vec<f64>, sense: Sense, rhs: f64) {
        self.constraints.push(Constraint { coeffs, sense, rhs });
    }

    /// Appends a constraint given as `(variable, coefficient)` pairs; repeated
    /// variables are summed.
    pub fn add_sparse_constraint(&mut self, terms: &[(usize, f64)], sense: Sense, rhs: f64) {
        let mut coeffs = vec![0.0; self.num_vars];
        for &(j, c) in terms {
            coeffs[j] += c;
        }
        self.add_constraint(coeffs, sense, rhs);
    }

    /// Checks the well-formedness invariants.
    pub fn check(&self) -> Result<()> {
        let n = self.num_vars;
        if self.lower.len() != n || self.upper.len() != n || self.objective.len() != n {
            return Err(Error::DimensionMismatch("bounds/objective length differs from num_vars".into()));
        }
        if !self.var_names.is_empty() && self.var_names.len() != n {
            return Err(Error::DimensionMismatch("variable names length differs from num_vars".into()));
        }
        for j in 0..n {
            if !self.lower[j].is_finite() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(Error::InvalidArgument(format!("invalid bounds [{}, {}] on variable {j}", self.lower[j], self.upper[j])));
            }
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("non-finite objective coefficient".into()));
        }
        for (r, c) in self.constraints.iter().enumerate() {
            if c.coeffs.len() != n {
                return Err(Error::DimensionMismatch(format!("constraint {r} has {} coefficients, expected {n}", c.coeffs.len())));
            }
            if !c.rhs.is_finite() || c.coeffs.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!("constraint {r} has non-finite data")));
            }
        }
        Ok(())
    }

    /// Objective value at `x`.
    pub fn objective_value(&self, x: &[f64]) -> f64 {
        dot(&self.objective, x)
    }

    /// Largest constraint violation at `x` (bounds excluded).
    pub fn max_constraint_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let lhs = dot(&c.coeffs, x);
                match c.sense {
                    Sense::Le => (lhs - c.rhs).max(0.0),
                    Sense::Ge => (c.rhs - lhs).max(0.0),
                    Sense::Eq => (lhs - c.rhs).abs(),
                }
            })
            .fold(0.0, f64::max)
    }

    /// Largest bound violation at `x`.
    pub fn max_bound_violation(&self, x: &[f64]) -> f64 {
        (0..self.num_vars).map(|j| (self.lower[j] - x[j]).max(x[j] - self.upper[j]).max(0.0)).fold(0.0, f64::max)
    }

    fn name(&self, j: usize) -> String {
        self.var_names.get(j).cloned().unwrap_or_else(|| format!("x{j}"))
    }

    /// Plain-text dump in CPLEX LP format, for cross-checking with third-party solvers.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let terms = |coeffs: &[f64]| -> String {
            let parts: Vec<String> = coeffs
                .iter()
                .enumerate()
                .filter(|(_, c)| **c != 0.0)
                .map(|(j, c)| format!("{} {} {}", if *c < 0.0 { "-" } else { "+" }, c.abs(), self.name(j)))
                .collect();
            if parts.is_empty() {
                format!("0 {}", self.name(0))
            } else {
                parts.join(" ")
            }
        };
        let _ = writeln!(out, "\\ {} variables, {} constraints", self.num_vars, self.constraints.len());
        let _ = writeln!(out, "Maximize\n obj: {}", terms(&self.objective));
        let _ = writeln!(out, "Subject To");
        for (r, c) in self.constraints.iter().enumerate() {
            let op = match c.sense {
                Sense::Le => "<=",
                Sense::Eq => "=",
                Sense::Ge => ">=",
            };
            let _ = writeln!(out, " c{r}: {} {op} {}", terms(&c.coeffs), c.rhs);
        }
        let _ = writeln!(out, "Bounds");
        for j in 0..self.num_vars {
            if self.upper[j].is_infinite() {
                let _ = writeln!(out, " {} >= {}", self.name(j), self.lower[j]);
            } else {
                let _ = writeln!(out, " {} <= {} <= {}", self.lower[j], self.name(j), self.upper[j]);
            }
        }
        let _ = writeln!(out, "End");
        out
    }
}

/// Termination status of a solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    /// An optimal vertex was found.
    Optimal,
    /// The feasible set is empty.
    Infeasible,
    /// The objective is unbounded above.
    Unbounded,
}

/// Result of a solve. `x` and `objective` are meaningful only when `Optimal`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSolution {
    /// Termination status.
    pub status: LpStatus,
    /// Primal solution.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub objective: f64,
}

impl LpSolution {
    fn empty(status: LpStatus, n: usize) -> Self {
        LpSolution { status, x: vec![0.0; n], objective: f64::NAN }
    }

    /// Returns the solution when optimal and an error otherwise.
    pub fn into_optimal(self, context: &str) -> Result<LpSolution> {
        match self.status {
            LpStatus::Optimal => Ok(self),
            LpStatus::Infeasible => Err(Error::LpInfeasible(context.to_string())),
            LpStatus::Unbounded => Err(Error::LpUnbounded(context.to_string())),
        }
    }
}

/// Tolerances of the simplex solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Primal feasibility tolerance.
    pub feasibility_tol: f64,
    /// Reduced-cost (optimality) tolerance.
    pub optimality_tol: f64,
    /// Smallest admissible pivot magnitude.
    pub pivot_tol: f64,
    /// Iteration cap per phase (0 selects an automatic cap).
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions { feasibility_tol: 1e-9, optimality_tol: 1e-9, pivot_tol: 1e-7, max_iterations: 0 }
    }
}

/// Interface of an LP backend, so that an external solver can be substituted.
pub trait LpBackend: Sync {
    /// Solves `lp`.
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution>;
    /// Human-readable backend name.
    fn name(&self) -> &'static str;
}

/// The built-in reference backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct DenseSimplex {
    /// Solver tolerances.
    pub options: SimplexOptions,
}

impl LpBackend for DenseSimplex {
    fn solve(&self, lp: &LinearProgram) -> Result<LpSolution> {
        solve_with(lp, &self.options)
    }

    fn name(&self) -> &'static str {
        "dense-simplex"
    }
}

/// Solves `lp` with the built-in simplex and default tolerances.
pub fn solve(lp: &LinearProgram) -> Result<LpSolution> {
    solve_with(lp, &SimplexOptions::default())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Standard-form data: `A x = b`, `x >= 0`, `b >= 0`, rows scaled to unit max-norm.
struct StandardForm {
    rows: usize,
    cols: usize,
    /// Row-major `rows x cols`.
    a: Vec<f64>,
    b: Vec<f64>,
    /// Number of structural (shifted) variables.
    n_struct: usize,
    /// First artificial column.
    art_start: usize,
    /// Initial basis.
    basis: Vec<usize>,
}

fn standard_form(lp: &LinearProgram) -> StandardForm {
    let n = lp.num_vars;
    let mut rows: Vec<(Vec<f64>, Sense, f64)> = Vec::with_capacity(lp.constraints.len() + n);
    for c in &lp.constraints {
        let shift = dot(&c.coeffs, &lp.lower);
        rows.push((c.coeffs.clone(), c.sense, c.rhs - shift));
    }
    for j in 0..n {
        if lp.upper[j].is_finite() {
            let mut coeffs = vec![0.0; n];
            coeffs[j] = 1.0;
            rows.push((coeffs, Sense::Le, lp.upper[j] - lp.lower[j]));
        }
    }
    // Normalise to b >= 0; a homogeneous `>=` row becomes a `<=` row so that its
    // slack can start in the basis without an artificial variable. Rows are then
    // scaled so that their largest coefficient has magnitude one.
    for (coeffs, sense, rhs) in rows.iter_mut() {
        if *rhs < 0.0 || (*rhs == 0.0 && *sense == Sense::Ge) {
            coeffs.iter_mut().for_each(|v| *v = -*v);
            *rhs = -*rhs;
            *sense = sense.flipped();
        }
        let scale = coeffs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale > 0.0 {
            coeffs.iter_mut().for_each(|v| {
                *v /= scale;
                if v.abs() < COEFF_DROP {
                    *v = 0.0;
                }
            });
            *rhs /= scale;
        }
    }
    let m = rows.len();
    let n_slack = rows.iter().filter(|r| r.1 != Sense::Eq).count();
    let n_art = rows.iter().filter(|r| r.1 != Sense::Le).count();
    let cols = n + n_slack + n_art;
    let art_start = n + n_slack;
    let mut a = vec![0.0; m * cols];
    let mut b = vec![0.0; m];
    let mut basis = vec![0; m];
    let (mut next_slack, mut next_art) = (n, art_start);
    for (r, (coeffs, sense, rhs)) in rows.into_iter().enumerate() {
        a[r * cols..r * cols + n].copy_from_slice(&coeffs);
        b[r] = rhs;
        match sense {
            Sense::Le => {
                a[r * cols + next_slack] = 1.0;
                basis[r] = next_slack;
                next_slack += 1;
            }
            Sense::Ge => {
                a[r * cols + next_slack] = -1.0;
                next_slack += 1;
                a[r * cols + next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
            Sense::Eq => {
                a[r * cols + next_art] = 1.0;
                basis[r] = next_art;
                next_art += 1;
            }
        }
    }
    StandardForm { rows: m, cols, a, b, n_struct: n, art_start, basis }
}

/// Scaled coefficients below this magnitude are treated as zero.
const COEFF_DROP: f64 = 1e-13;
/// Pivots smaller than this fraction of the largest entry of the entering column are rejected.
const RELATIVE_PIVOT_TOL: f64 = 1e-9;
/// Pivots between two refactorisations of the tableau.
const REINVERT_EVERY: usize = 16;
/// Refactorisation period of the careful retry.
const CAREFUL_REINVERT_EVERY: usize = 4;
/// Smallest admissible pivot when refactorising from the (scaled) original data.
const REINVERT_PIVOT_TOL: f64 = 1e-12;
/// Consecutive degenerate pivots after which pricing switches to Bland's rule.
const DEGENERATE_RUN: usize = 32;

/// Dense tableau `B^-1 [A | b]`: `rows x (cols + 1)`, last column holds the basic values.
struct Tableau<'a> {
    sf: &'a StandardForm,
    width: usize,
    t: Vec<f64>,
    basis: Vec<usize>,
    /// Objective of the current phase.
    costs: Vec<f64>,
    /// Reduced costs `c_j - c_B B^-1 A_j` (length `cols`).
    reduced: Vec<f64>,
    /// Pivots since the last refactorisation.
    since_reinvert: usize,
    /// Pivots between refactorisations.
    reinvert_every: usize,
    /// Bland pricing with the textbook ratio test throughout.
    careful: bool,
}

enum Phase {
    Optimal,
    Unbounded,
}

impl<'a> Tableau<'a> {
    fn new(sf: &'a StandardForm, careful: bool) -> Self {
        let width = sf.cols + 1;
        let mut t = vec![0.0; sf.rows * width];
        for r in 0..sf.rows {
            t[r * width..r * width + sf.cols].copy_from_slice(&sf.a[r * sf.cols..(r + 1) * sf.cols]);
            t[r * width + sf.cols] = sf.b[r];
        }
        Tableau {
            sf,
            width,
            t,
            basis: sf.basis.clone(),
            costs: vec![0.0; sf.cols],
            reduced: vec![0.0; sf.cols],
            since_reinvert: 0,
            reinvert_every: if careful { CAREFUL_REINVERT_EVERY } else { REINVERT_EVERY },
            careful,
        }
    }

    #[inline]
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.width + c]
    }

    fn rhs(&self, r: usize) -> f64 {
        self.t[r * self.width + self.width - 1]
    }

    fn set_costs(&mut self, costs: &[f64]) {
        self.costs = costs.to_vec();
        self.refresh_reduced();
    }

    fn refresh_reduced(&mut self) {
        let cols = self.width - 1;
        self.reduced = self.costs.clone();
        for r in 0..self.sf.rows {
            let cb = self.costs[self.basis[r]];
            if cb != 0.0 {
                let row = &self.t[r * self.width..r * self.width + cols];
                for (d, v) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * v;
                }
            }
        }
        for &j in &self.basis {
            self.reduced[j] = 0.0;
        }
    }

    /// Rebuilds `B^-1 [A | b]` from the original data for the current basis
    /// (Gauss-Jordan with partial pivoting). Keeps the current tableau when the
    /// basis matrix is numerically singular.
    fn reinvert(&mut self, opts: &SimplexOptions) {
        self.since_reinvert = 0;
        let (rows, w) = (self.sf.rows, self.width);
        let cols = w - 1;
        let mut t = vec![0.0; rows * w];
        for r in 0..rows {
            t[r * w..r * w + cols].copy_from_slice(&self.sf.a[r * cols..(r + 1) * cols]);
            t[r * w + cols] = self.sf.b[r];
        }
        for ci in 0..rows {
            let col = self.basis[ci];
            let (p, best) = (ci..rows).map(|r| (r, t[r * w + col].abs())).fold((ci, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if best <= REINVERT_PIVOT_TOL {
                return;
            }
            if p != ci {
                for j in 0..w {
                    t.swap(p * w + j, ci * w + j);
                }
            }
            let piv = t[ci * w + col];
            t[ci * w..(ci + 1) * w].iter_mut().for_each(|v| *v /= piv);
            t[ci * w + col] = 1.0;
            let pivot_row: Vec<f64> = t[ci * w..(ci + 1) * w].to_vec();
            for r in 0..rows {
                if r != ci {
                    let f = t[r * w + col];
                    if f != 0.0 {
                        for (v, q) in t[r * w..(r + 1) * w].iter_mut().zip(&pivot_row) {
                            *v -= f * q;
                        }
                        t[r * w + col] = 0.0;
                    }
                }
            }
        }
        for r in 0..rows {
            let v = &mut t[r * w + cols];
            if *v < 0.0 && *v > -opts.feasibility_tol {
                *v = 0.0;
            }
        }
        self.t = t;
        self.refresh_reduced();
    }

    fn pivot(&mut self, pr: usize, pc: usize, feas_tol: f64) {
        self.since_reinvert += 1;
        let w = self.width;
        let piv = self.t[pr * w + pc];
        {
            let row = &mut self.t[pr * w..(pr + 1) * w];
            row.iter_mut().for_each(|v| *v /= piv);
            row[pc] = 1.0;
            if row[w - 1] < 0.0 {
                row[w - 1] = 0.0;
            }
        }
        let pivot_row: Vec<f64> = self.t[pr * w..(pr + 1) * w].to_vec();
        for r in 0..self.sf.rows {
            if r == pr {
                continue;
            }
            let f = self.t[r * w + pc];
            if f != 0.0 {
                let row = &mut self.t[r * w..(r + 1) * w];
                for (v, p) in row.iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                row[pc] = 0.0;
                let last = w - 1;
                if row[last] < 0.0 && row[last] > -feas_tol {
                    row[last] = 0.0;
                }
            }
        }
        let f = self.reduced[pc];
        if f != 0.0 {
            for (d, p) in self.reduced.iter_mut().zip(&pivot_row[..w - 1]) {
                *d -= f * p;
            }
            self.reduced[pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Leaving row for entering column `e`: Harris' two-pass test (largest pivot
    /// among near-minimal ratios) or, under Bland's rule, the exact minimum
    /// ratio with the smallest basic index on ties.
    fn leaving_row(&self, e: usize, bland: bool, opts: &SimplexOptions) -> Option<(usize, f64)> {
        let rows = self.sf.rows;
        let col_max = (0..rows).map(|r| self.at(r, e).abs()).fold(0.0, f64::max);
        let tol = opts.pivot_tol.max(RELATIVE_PIVOT_TOL * col_max);
        let candidates = (0..rows).filter(|&r| self.at(r, e) > tol);
        if bland {
            let mut leave: Option<(usize, f64)> = None;
            for r in candidates {
                let ratio = self.rhs(r).max(0.0) / self.at(r, e);
                leave = match leave {
                    None => Some((r, ratio)),
                    Some((br, best)) => {
                        let tie = (ratio - best).abs() <= 1e-12 * (1.0 + best.abs());
                        if (!tie && ratio < best) || (tie && self.basis[r] < self.basis[br]) {
                            Some((r, ratio))
                        } else {
                            Some((br, best))
                        }
                    }
                };
            }
            return leave;
        }
        let bound = candidates.clone().map(|r| (self.rhs(r).max(0.0) + opts.feasibility_tol) / self.at(r, e)).fold(f64::INFINITY, f64::min);
        if !bound.is_finite() {
            return None;
        }
        let mut leave: Option<(usize, f64)> = None;
        for r in candidates {
            let a = self.at(r, e);
            let ratio = self.rhs(r).max(0.0) / a;
            if ratio <= bound {
                let better = match leave {
                    None => true,
                    Some((br, _)) => {
                        let ab = self.at(br, e);
                        a > ab || (a == ab && self.basis[r] < self.basis[br])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        leave
    }

    /// Entering column maximising `d_j^2 / (1 + ||B^-1 A_j||^2)` (exact steepest edge).
    fn steepest_edge(&self, allowed_cols: usize, opts: &SimplexOptions) -> Option<usize> {
        let rows = self.sf.rows;
        let mut best: Option<(usize, f64)> = None;
        for j in 0..allowed_cols {
            let d = self.reduced[j];
            if d > opts.optimality_tol {
                let norm: f64 = 1.0 + (0..rows).map(|r| self.at(r, j) * self.at(r, j)).sum::<f64>();
                let score = d * d / norm;
                if best.map_or(true, |(_, s)| score > s) {
                    best = Some((j, score));
                }
            }
        }
        best.map(|(j, _)| j)
    }

    /// Simplex iterations over the columns `< allowed_cols`: Dantzig pricing,
    /// falling back to Bland's rule during long degenerate stretches.
    fn run(&mut self, allowed_cols: usize, opts: &SimplexOptions, max_iter: usize) -> Result<Phase> {
        let mut degenerate = 0usize;
        for _ in 0..max_iter {
            if self.since_reinvert >= self.reinvert_every {
                self.reinvert(opts);
            }
            let bland = self.careful || degenerate >= DEGENERATE_RUN;
            let entering = if bland { (0..allowed_cols).find(|&j| self.reduced[j] > opts.optimality_tol) } else { self.steepest_edge(allowed_cols, opts) };
            let Some(e) = entering else {
                if self.since_reinvert == 0 {
                    return Ok(Phase::Optimal);
                }
                // Confirm optimality on a fresh factorisation.
                self.reinvert(opts);
                if self.since_reinvert == 0 && (0..allowed_cols).all(|j| self.reduced[j] <= opts.optimality_tol) {
                    return Ok(Phase::Optimal);
                }
                continue;
            };
            match self.leaving_row(e, bland, opts) {
                None => return Ok(Phase::Unbounded),
                Some((r, ratio)) => {
                    if ratio <= 1e-12 {
                        degenerate += 1;
                    } else {
                        degenerate = 0;
                    }
                    self.pivot(r, e, opts.feasibility_tol);
                }
            }
        }
        Err(Error::NumericalFailure("simplex iteration limit reached".into()))
    }
}

/// Solves `lp` with explicit tolerances.
///
/// A run that does not end at a verified optimum (numerical failure, or an
/// infeasibility/unboundedness verdict) is repeated once in careful mode:
/// Bland's rule with the textbook ratio test and frequent refactorisation.
/// A verified optimum from either run is returned; otherwise the careful
/// verdict is.
pub fn solve_with(lp: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution> {
    lp.check()?;
    let sf = standard_form(lp);
    match solve_standard(lp, &sf, opts, false) {
        Ok(sol) if sol.status == LpStatus::Optimal => Ok(sol),
        _ => solve_standard(lp, &sf, opts, true),
    }
}

fn solve_standard(lp: &LinearProgram, sf: &StandardForm, opts: &SimplexOptions, careful: bool) -> Result<LpSolution> {
    let n = lp.num_vars;
    let (rows, cols) = (sf.rows, sf.cols);
    let max_iter = if opts.max_iterations > 0 { opts.max_iterations } else { 1_000 + 20 * (rows + cols) };
    let mut tab = Tableau::new(sf, careful);
    let b_scale = 1.0 + sf.b.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));

    // Phase 1: maximise minus the sum of the artificial variables.
    if sf.art_start < cols {
        let mut c1 = vec![0.0; cols];
        c1[sf.art_start..].iter_mut().for_each(|v| *v = -1.0);
        tab.set_costs(&c1);
        if let Phase::Unbounded = tab.run(cols, opts, max_iter)? {
            return Err(Error::NumericalFailure("phase-one problem reported unbounded".into()));
        }
        tab.reinvert(opts);
        let infeasibility: f64 = (0..rows).filter(|&r| tab.basis[r] >= sf.art_start).map(|r| tab.rhs(r).abs()).sum();
        if infeasibility > opts.feasibility_tol * b_scale {
            return Ok(LpSolution::empty(LpStatus::Infeasible, n));
        }
        // Drive the remaining (zero-level) artificial variables out of the basis
        // on their largest structural or slack entry. Rows without such an entry
        // are redundant; their artificial stays basic at zero.
        for r in 0..rows {
            if tab.basis[r] >= sf.art_start {
                let best = (0..sf.art_start).map(|j| (j, tab.at(r, j).abs())).fold((0, 0.0), |acc, x| if x.1 > acc.1 { x } else { acc });
                if best.1 > opts.pivot_tol.max(1e-9) {
                    tab.pivot(r, best.0, opts.feasibility_tol);
                }
            }
        }
    }

    let mut c2 = vec![0.0; cols];
    c2[..n].copy_from_slice(&lp.objective);
    tab.set_costs(&c2);
    if let Phase::Unbounded = tab.run(sf.art_start, opts, max_iter)? {
        return Ok(LpSolution::empty(LpStatus::Unbounded, n));
    }
    let mut xs = vec![0.0; sf.n_struct];
    for (r, &col) in tab.basis.iter().enumerate() {
        if col < sf.n_struct {
            xs[col] = tab.rhs(r).max(0.0);
        }
    }
    let x: Vec<f64> = (0..n).map(|j| (lp.lower[j] + xs[j]).clamp(lp.lower[j], lp.upper[j])).collect();
    let violation = lp.max_constraint_violation(&x);
    if violation > opts.feasibility_tol * b_scale.max(1.0) {
        return Err(Error::NumericalFailure(format!("final solution violates a constraint by {violation:e}")));
    }
    let objective = lp.objective_value(&x);
    Ok(LpSolution { status: LpStatus::Optimal, x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bounded_variable() {
        let mut lp = LinearProgram::new(1);
        lp.set_bounds(0, 0.0, 1.0);
        lp.objective = vec![1.0];
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.x, vec![1.0]);
        assert_eq!(sol.objective, 1.0);
    }

    #[test]
    fn degenerate_face() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 1.0];
        lp.add_constraint(vec![1.0, 1.0], Sense::Le, 1.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let mut lp = LinearProgram::new(1);
        lp.objective = vec![1.0];
        lp.add_constraint(vec![1.0], Sense::Ge, 2.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Unbounded);
        lp.add_constraint(vec![1.0], Sense::Le, 1.0);
        assert_eq!(solve(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn equality_and_shifted_bounds() {
        // max x - y  s.t. x + y = 3, 1 <= x <= 2, y >= 0.5
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, -1.0];
        lp.set_bounds(0, 1.0, 2.0);
        lp.set_bounds(1, 0.5, f64::INFINITY);
        lp.add_constraint(vec![1.0, 1.0], Sense::Eq, 3.0);
        let sol = solve(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.x[0] - 2.0).abs() < 1e-12 && (sol.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, 2.0];
        lp.add_constraint(vec![1.0, 1.0], Sense::Eq, 1.0);
        lp.add_constraint(vec![2.0, 2.0], Sense::Eq, 2.0);
        let sol = solve(&lp).unwrap();
        assert!((sol.objective - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lp_format_mentions_every_section() {
        let mut lp = LinearProgram::new(2);
        lp.objective = vec![1.0, -2.5];
        lp.set_bounds(0, 0.0, 1.0);
        lp.add_constraint(vec![1.0, 1.0], Sense::Le, 1.0);
        let text = lp.to_lp_format();
        for needle in ["Maximize", "Subject To", "Bounds", "End", "- 2.5 x1", "0 <= x0 <= 1", "x1 >= 0"] {
            assert!(text.contains(needle), "missing {needle:?} in\n{text}");
        }
    }
}
