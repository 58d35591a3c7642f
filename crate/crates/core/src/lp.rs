//! The fluid LP over assortment distributions and its optimistic variant,
//! solved by column generation.
//!
//! The restricted master is `max cᵀy  s.t.  Ay <= b, 1ᵀy = 1, y >= 0`, with
//! one column per assortment seen so far. It is solved by a dense revised
//! simplex so that every answer is a vertex with at most `K + 1` positive
//! weights. New columns come from the pricing problem
//! `max_S Σ_{i∈S} r̃(i) φ(i, S | v)`, which for structured families is a
//! fractional program solved by bisection on its value.

use std::collections::HashSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::mnl::{
    enumerate_family, family_contains, weighted_choice_sum, Assortment, AssortmentFamily, FamilyKind, MnlError,
    UtilityVector, DEFAULT_ENUMERATION_CAP,
};
use crate::scalar::Scalar;

pub const CG_MAX_ITERATIONS: usize = 500;
const BISECTION_STEPS: usize = 60;
const SIMPLEX_MAX_PIVOTS: usize = 100_000;
const DEGENERATE_RUN_BEFORE_BLAND: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("pivot {pivot:e} below threshold at simplex iteration {iteration}")]
    DegeneratePivot { pivot: f64, iteration: usize },
    #[error("restricted master lacks the all-zero (empty assortment) column")]
    MissingEmptyColumn,
    #[error("negative right-hand side {0}; the empty assortment is infeasible")]
    Infeasible(f64),
    #[error("simplex did not terminate within {0} pivots")]
    PivotLimit(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("omega = {0} must lie in [0, 1)")]
    OmegaOutOfRange(f64),
    #[error(transparent)]
    Mnl(#[from] MnlError),
}

/// One restricted-master column: objective coefficient and `K` consumption
/// coefficients. The convexity row is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Column<T> {
    pub objective: T,
    pub consumption: Vec<T>,
}

impl<T: Scalar> Column<T> {
    pub fn zero(k: usize) -> Self {
        Self { objective: T::zero(), consumption: vec![T::zero(); k] }
    }

    fn is_zero(&self) -> bool {
        self.objective == T::zero() && self.consumption.iter().all(|&x| x == T::zero())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexSolution<T> {
    /// One weight per input column.
    pub weights: Vec<T>,
    pub objective: T,
    /// Duals of the resource rows, `λ(k) >= 0`.
    pub resource_duals: Vec<T>,
    /// Dual of the convexity row.
    pub convexity_dual: T,
    /// Basic variables; indices `>= columns.len()` are slacks.
    pub basis: Vec<usize>,
    pub pivots: usize,
}

/// Solves the restricted master from the slack-plus-empty-column basis.
pub fn simplex_solve<T: Scalar>(columns: &[Column<T>], rhs: &[T]) -> Result<SimplexSolution<T>, LpError> {
    let k = rhs.len();
    let m = k + 1;
    if let Some(c) = columns.iter().find(|c| c.consumption.len() != k) {
        return Err(LpError::Dimension(format!("column has {} rows, expected {k}", c.consumption.len())));
    }
    if let Some(&b) = rhs.iter().find(|&&b| b < T::zero()) {
        return Err(LpError::Infeasible(b.as_f64()));
    }
    let empty = columns.iter().position(Column::is_zero).ok_or(LpError::MissingEmptyColumn)?;
    let ncols = columns.len();

    // Variable j < ncols is structural, ncols + r is the slack of row r.
    let entry = |j: usize, row: usize| -> T {
        if j < ncols {
            if row < k {
                columns[j].consumption[row]
            } else {
                T::one()
            }
        } else if j - ncols == row {
            T::one()
        } else {
            T::zero()
        }
    };
    let cost = |j: usize| if j < ncols { columns[j].objective } else { T::zero() };
    let b: Vec<T> = rhs.iter().copied().chain(std::iter::once(T::one())).collect();

    let mut basis: Vec<usize> = (0..k).map(|r| ncols + r).chain(std::iter::once(empty)).collect();
    let mut degenerate_run = 0;
    let tol = T::feas_tol();
    let pivot_eps = T::pivot_eps();

    for iteration in 0..SIMPLEX_MAX_PIVOTS {
        let inv = invert(&basis, m, &entry, iteration)?;
        let x: Vec<T> = (0..m).map(|r| (0..m).map(|c| inv[r][c] * b[c]).sum()).collect();
        let pi: Vec<T> = (0..m).map(|c| (0..m).map(|r| cost(basis[r]) * inv[r][c]).sum()).collect();
        let reduced = |j: usize| cost(j) - (0..m).map(|r| pi[r] * entry(j, r)).sum::<T>();

        let in_basis: HashSet<usize> = basis.iter().copied().collect();
        let bland = degenerate_run >= DEGENERATE_RUN_BEFORE_BLAND;
        let mut entering: Option<(usize, T)> = None;
        for j in 0..ncols + k {
            if in_basis.contains(&j) {
                continue;
            }
            let d = reduced(j);
            if d > tol {
                match entering {
                    None => entering = Some((j, d)),
                    Some((_, best)) if !bland && d > best => entering = Some((j, d)),
                    _ => {}
                }
                if bland {
                    break;
                }
            }
        }
        let Some((q, _)) = entering else {
            let mut weights = vec![T::zero(); ncols];
            for (r, &j) in basis.iter().enumerate() {
                if j < ncols {
                    weights[j] = x[r].max(T::zero());
                }
            }
            let objective = weights.iter().zip(columns).map(|(&w, c)| w * c.objective).sum();
            return Ok(SimplexSolution {
                weights,
                objective,
                resource_duals: pi[..k].to_vec(),
                convexity_dual: pi[k],
                basis,
                pivots: iteration,
            });
        };

        let u: Vec<T> = (0..m).map(|r| (0..m).map(|c| inv[r][c] * entry(q, c)).sum()).collect();
        let mut leave: Option<(usize, T)> = None;
        for r in 0..m {
            if u[r] > pivot_eps {
                let ratio = x[r].max(T::zero()) / u[r];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best || (ratio == best && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        // The convexity row bounds every structural column, so an unbounded
        // ray means the basis has gone numerically bad.
        let (r, ratio) = leave.ok_or(LpError::DegeneratePivot { pivot: 0.0, iteration })?;
        degenerate_run = if ratio <= tol { degenerate_run + 1 } else { 0 };
        basis[r] = q;
    }
    Err(LpError::PivotLimit(SIMPLEX_MAX_PIVOTS))
}

/// Gauss-Jordan inverse of the basis matrix with partial pivoting.
fn invert<T: Scalar>(
    basis: &[usize],
    m: usize,
    entry: &impl Fn(usize, usize) -> T,
    iteration: usize,
) -> Result<Vec<Vec<T>>, LpError> {
    let mut a: Vec<Vec<T>> = (0..m).map(|r| basis.iter().map(|&j| entry(j, r)).collect()).collect();
    let mut inv: Vec<Vec<T>> = (0..m).map(|r| (0..m).map(|c| if r == c { T::one() } else { T::zero() }).collect()).collect();
    for col in 0..m {
        let p = (col..m)
            .max_by(|&x, &y| a[x][col].abs().partial_cmp(&a[y][col].abs()).unwrap())
            .unwrap();
        let pivot = a[p][col];
        if pivot.abs() < T::pivot_eps() {
            return Err(LpError::DegeneratePivot { pivot: pivot.as_f64(), iteration });
        }
        a.swap(p, col);
        inv.swap(p, col);
        for c in 0..m {
            a[col][c] = a[col][c] / pivot;
            inv[col][c] = inv[col][c] / pivot;
        }
        for r in 0..m {
            if r != col {
                let f = a[r][col];
                if f != T::zero() {
                    for c in 0..m {
                        a[r][c] = a[r][c] - f * a[col][c];
                        inv[r][c] = inv[r][c] - f * inv[col][c];
                    }
                }
            }
        }
    }
    Ok(inv)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricedColumn<T> {
    pub assortment: Assortment,
    pub value: T,
}

/// Greedy maximizer of `Σ_{i∈S} (r̃(i) − z) v(i)` over the family: the
/// largest positive terms, subject to the cardinality or per-block limits.
/// Ties go to the lower index.
fn greedy_threshold_set<T: Scalar>(v: &UtilityVector<T>, reduced: &[T], family: &AssortmentFamily, z: T) -> (Vec<usize>, T) {
    let n = family.n();
    let mut terms: Vec<(usize, T)> = (1..=n)
        .map(|i| (i, (reduced[i - 1] - z) * v.get(i)))
        .filter(|&(_, t)| t > T::zero())
        .collect();
    terms.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut chosen = Vec::new();
    match family.kind() {
        FamilyKind::Cardinality { max_size } => {
            chosen.extend(terms.iter().take(*max_size).map(|&(i, _)| i));
        }
        FamilyKind::PartitionMatroid { blocks, per_block } => {
            let mut used = vec![0usize; *blocks];
            for &(i, _) in &terms {
                let blk = family.block_of(i, *blocks);
                if used[blk] < *per_block {
                    used[blk] += 1;
                    chosen.push(i);
                }
            }
        }
        FamilyKind::Explicit { .. } => unreachable!("explicit families are priced by enumeration"),
    }
    let total = chosen.iter().map(|&i| (reduced[i - 1] - z) * v.get(i)).sum();
    chosen.sort_unstable();
    (chosen, total)
}

/// Solves `max_{S ∈ family} Σ_{i∈S} r̃(i) v(i) / (1 + Σ_{ℓ∈S} v(ℓ))`.
///
/// For cardinality and partition-matroid families the optimal value `z*`
/// is the largest `z` with `max_S Σ_{i∈S} (r̃(i) − z) v(i) >= z`; the inner
/// maximum is greedy, and `z*` is bracketed by bisection. Explicit families
/// are enumerated.
pub fn price_column<T: Scalar>(
    v: &UtilityVector<T>,
    reduced: &[T],
    family: &AssortmentFamily,
) -> Result<PricedColumn<T>, LpError> {
    if reduced.len() != family.n() || v.len() != family.n() {
        return Err(LpError::Dimension("reduced revenues, utilities and family must agree on N".into()));
    }
    if let FamilyKind::Explicit { .. } = family.kind() {
        return brute_force_pricing(v, reduced, family, DEFAULT_ENUMERATION_CAP);
    }
    let hi0 = reduced.iter().copied().fold(T::zero(), T::max);
    if hi0 <= T::zero() {
        return Ok(PricedColumn { assortment: Assortment::empty(), value: T::zero() });
    }
    // The empty set certifies z = 0; no member can reach max r̃.
    let (mut lo, mut hi) = (T::zero(), hi0);
    let half = T::lit(0.5);
    for _ in 0..BISECTION_STEPS {
        let mid = (lo + hi) * half;
        let (_, g) = greedy_threshold_set(v, reduced, family, mid);
        if g >= mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (items, _) = greedy_threshold_set(v, reduced, family, lo);
    let assortment = Assortment::new(items)?;
    let value = weighted_choice_sum(v, &assortment, reduced);
    if value > T::zero() {
        Ok(PricedColumn { assortment, value })
    } else {
        Ok(PricedColumn { assortment: Assortment::empty(), value: T::zero() })
    }
}

/// Exhaustive pricing over an enumerable family.
pub fn brute_force_pricing<T: Scalar>(
    v: &UtilityVector<T>,
    reduced: &[T],
    family: &AssortmentFamily,
    cap: u64,
) -> Result<PricedColumn<T>, LpError> {
    let mut best = PricedColumn { assortment: Assortment::empty(), value: T::zero() };
    for s in enumerate_family(family, cap)? {
        let value = weighted_choice_sum(v, &s, reduced);
        if value > best.value {
            best = PricedColumn { assortment: s, value };
        }
    }
    Ok(best)
}

/// Borrowed LP data: revenues `r`, consumption `a` (`K × N`), capacity
/// rates `c`, and the allowed family.
#[derive(Debug, Clone, Copy)]
pub struct LpData<'a, T> {
    pub revenues: &'a [T],
    pub consumption: &'a [Vec<T>],
    pub capacity: &'a [T],
    pub family: &'a AssortmentFamily,
}

impl<T: Scalar> LpData<'_, T> {
    fn check(&self, v: &UtilityVector<T>) -> Result<(), LpError> {
        let n = self.family.n();
        if self.revenues.len() != n || v.len() != n {
            return Err(LpError::Dimension(format!("expected N = {n} revenues and utilities")));
        }
        if self.consumption.len() != self.capacity.len() || self.consumption.iter().any(|row| row.len() != n) {
            return Err(LpError::Dimension("consumption must be K x N with K capacities".into()));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.capacity.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Reduced-cost threshold certifying optimality.
    pub tol: T,
    pub max_iterations: usize,
    /// Largest family that may be enumerated for exact pricing.
    pub enumeration_cap: u64,
}

impl<T: Scalar> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { tol: T::cg_tol(), max_iterations: CG_MAX_ITERATIONS, enumeration_cap: DEFAULT_ENUMERATION_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    IterationCapped,
    /// Converged, but pricing was heuristic so optimality is not certified.
    Heuristic,
}

/// Sparse distribution over assortments.
#[derive(Debug, Clone, PartialEq)]
pub struct AssortmentDistribution<T> {
    support: Vec<(Assortment, T)>,
}

impl<T: Scalar> AssortmentDistribution<T> {
    /// Keeps positive weights, renormalizes, and sorts the support
    /// lexicographically.
    pub fn new(pairs: Vec<(Assortment, T)>) -> Self {
        let mut support: Vec<(Assortment, T)> = pairs.into_iter().filter(|(_, w)| *w > T::zero()).collect();
        support.sort_by(|a, b| a.0.cmp(&b.0));
        let total: T = support.iter().map(|(_, w)| *w).sum();
        if total > T::zero() {
            for (_, w) in support.iter_mut() {
                *w = *w / total;
            }
        }
        Self { support }
    }

    pub fn point_mass(s: Assortment) -> Self {
        Self { support: vec![(s, T::one())] }
    }

    pub fn support(&self) -> &[(Assortment, T)] {
        &self.support
    }

    pub fn weight(&self, s: &Assortment) -> T {
        self.support.iter().find(|(a, _)| a == s).map_or(T::zero(), |(_, w)| *w)
    }

    /// Assortments carrying weight above `threshold`.
    pub fn support_set(&self, threshold: T) -> Vec<Assortment> {
        self.support.iter().filter(|(_, w)| *w > threshold).map(|(s, _)| s.clone()).collect()
    }

    /// Inverse-CDF draw from a uniform `u ∈ [0, 1)`.
    pub fn sample_with(&self, u: T) -> Assortment {
        let mut cum = T::zero();
        for (s, w) in &self.support {
            cum = cum + *w;
            if u < cum {
                return s.clone();
            }
        }
        self.support.last().map(|(s, _)| s.clone()).unwrap_or_default()
    }
}

/// Restricted master at termination, kept for export.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterProblem<T> {
    pub assortments: Vec<Assortment>,
    pub columns: Vec<Column<T>>,
    pub rhs: Vec<T>,
}

impl<T: Scalar> MasterProblem<T> {
    /// Writes the master in CPLEX LP text format. Variable `y<j>` is the
    /// weight of the `j`-th column; comments map each variable to its
    /// assortment.
    pub fn to_lp_format(&self) -> String {
        let mut out = String::new();
        let name = |j: usize| format!("y{j}");
        let _ = writeln!(out, "\\ restricted master: {} columns, {} resources", self.columns.len(), self.rhs.len());
        for (j, s) in self.assortments.iter().enumerate() {
            let _ = writeln!(out, "\\ {} = {s}", name(j));
        }
        let terms = |coef: &dyn Fn(usize) -> T| -> String {
            let mut line = String::new();
            for j in 0..self.columns.len() {
                let c = coef(j).as_f64();
                if c == 0.0 {
                    continue;
                }
                let sign = if c < 0.0 { "-" } else { "+" };
                if line.is_empty() {
                    let lead = if c < 0.0 { "- " } else { "" };
                    let _ = write!(line, "{lead}{} {}", c.abs(), name(j));
                } else {
                    let _ = write!(line, " {sign} {} {}", c.abs(), name(j));
                }
            }
            if line.is_empty() {
                format!("0 {}", name(0))
            } else {
                line
            }
        };
        let _ = writeln!(out, "Maximize");
        let _ = writeln!(out, " obj: {}", terms(&|j| self.columns[j].objective));
        let _ = writeln!(out, "Subject To");
        for (k, b) in self.rhs.iter().enumerate() {
            let _ = writeln!(out, " res{}: {} <= {}", k + 1, terms(&|j| self.columns[j].consumption[k]), b.as_f64());
        }
        let _ = writeln!(out, " conv: {} = 1", terms(&|_| T::one()));
        let _ = writeln!(out, "Bounds");
        for j in 0..self.columns.len() {
            let _ = writeln!(out, " {} >= 0", name(j));
        }
        let _ = writeln!(out, "End");
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpResult<T> {
    pub distribution: AssortmentDistribution<T>,
    pub objective: T,
    pub resource_duals: Vec<T>,
    pub convexity_dual: T,
    /// Number of restricted-master solves.
    pub cg_iterations: usize,
    pub status: LpStatus,
    /// Largest reduced cost found by the last pricing call.
    pub final_reduced_cost: T,
    /// A zero-weight column priced at (numerically) zero reduced cost,
    /// i.e. the optimum may not be unique.
    pub dual_degenerate: bool,
    pub master: MasterProblem<T>,
}

enum Pricing {
    Exact,
    Heuristic,
}

/// Shared column-generation loop. `make_column` builds master coefficients
/// for an assortment; `price` returns the best column for given duals
/// together with its reduced cost.
fn column_generation<T: Scalar>(
    k: usize,
    rhs: Vec<T>,
    opts: &SolverOptions<T>,
    make_column: impl Fn(&Assortment) -> Column<T>,
    price: impl Fn(&[T], T) -> Result<(Assortment, T, Pricing), LpError>,
) -> Result<LpResult<T>, LpError> {
    let mut assortments = vec![Assortment::empty()];
    let mut columns = vec![Column::zero(k)];
    let mut seen: HashSet<Assortment> = assortments.iter().cloned().collect();
    let mut iterations = 0;
    let mut heuristic = false;
    let mut status = LpStatus::IterationCapped;
    let mut last_priced: (Assortment, T);
    let mut solution;
    loop {
        solution = simplex_solve(&columns, &rhs)?;
        iterations += 1;
        let (s, rc, how) = price(&solution.resource_duals, solution.convexity_dual)?;
        heuristic |= matches!(how, Pricing::Heuristic);
        last_priced = (s.clone(), rc);
        if rc <= opts.tol || seen.contains(&s) {
            if seen.contains(&s) && rc > opts.tol {
                log::debug!("pricing returned existing column {s} with reduced cost {rc}");
            }
            status = if heuristic { LpStatus::Heuristic } else { LpStatus::Optimal };
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        columns.push(make_column(&s));
        seen.insert(s.clone());
        assortments.push(s);
    }

    let pairs: Vec<(Assortment, T)> = assortments.iter().cloned().zip(solution.weights.iter().copied()).collect();
    let distribution = AssortmentDistribution::new(pairs);
    let objective = distribution
        .support()
        .iter()
        .map(|(s, w)| {
            let j = assortments.iter().position(|a| a == s).unwrap();
            *w * columns[j].objective
        })
        .sum();

    let near_zero = T::lit(1e-9).max(T::feas_tol());
    let basic: HashSet<usize> = solution.basis.iter().copied().collect();
    let reduced = |j: usize| {
        columns[j].objective
            - columns[j].consumption.iter().zip(&solution.resource_duals).map(|(&a, &l)| a * l).sum::<T>()
            - solution.convexity_dual
    };
    let mut dual_degenerate = (0..columns.len()).any(|j| !basic.contains(&j) && reduced(j).abs() <= near_zero);
    let (s, rc) = &last_priced;
    if distribution.weight(s) == T::zero() && rc.abs() <= near_zero && !s.is_empty() && !seen.contains(s) {
        dual_degenerate = true;
    }

    Ok(LpResult {
        distribution,
        objective,
        resource_duals: solution.resource_duals,
        convexity_dual: solution.convexity_dual,
        cg_iterations: iterations,
        status,
        final_reduced_cost: last_priced.1,
        dual_degenerate,
        master: MasterProblem { assortments, columns, rhs },
    })
}

fn reduced_revenues<T: Scalar>(data: &LpData<'_, T>, duals: &[T]) -> Vec<T> {
    (0..data.family.n())
        .map(|i| data.revenues[i] - data.consumption.iter().zip(duals).map(|(row, &l)| l * row[i]).sum::<T>())
        .collect()
}

/// `LP(v)`: maximize `Σ_S R(S|v) y(S)` subject to `Σ_S A(S,k|v) y(S) <= c(k)`
/// and `Σ_S y(S) = 1`, by column generation from the empty assortment.
pub fn solve_lp<T: Scalar>(data: &LpData<'_, T>, v: &UtilityVector<T>, opts: &SolverOptions<T>) -> Result<LpResult<T>, LpError> {
    data.check(v)?;
    let make_column = |s: &Assortment| Column {
        objective: weighted_choice_sum(v, s, data.revenues),
        consumption: data.consumption.iter().map(|row| weighted_choice_sum(v, s, row)).collect(),
    };
    let price = |duals: &[T], mu: T| {
        let r_tilde = reduced_revenues(data, duals);
        let priced = price_column(v, &r_tilde, data.family)?;
        Ok((priced.assortment, priced.value - mu, Pricing::Exact))
    };
    column_generation(data.k(), data.capacity.to_vec(), opts, make_column, price)
}

/// Inputs of the optimistic LP: the current estimate, per-product radii
/// `ε(n(i))`, and the capacity shrink factor `ω`.
#[derive(Debug, Clone, PartialEq)]
pub struct UcbLpSpec<T> {
    pub v: UtilityVector<T>,
    pub radii: Vec<T>,
    pub omega: T,
}

impl<T: Scalar> UcbLpSpec<T> {
    pub fn new(
        v: UtilityVector<T>,
        exposures: &[u64],
        constants: &crate::estimation::ConfidenceConstants<T>,
    ) -> Result<Self, crate::estimation::EstimationError> {
        let radii = exposures.iter().map(|&n| constants.radius(n)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { v, radii, omega: constants.omega })
    }

    fn widening(&self, s: &Assortment) -> T {
        s.items().iter().map(|&i| self.radii[i - 1]).sum()
    }
}

/// Optimistic LP: objective `R(S|v) + Σ_{i∈S} ε(n(i))`, consumption
/// `A(S,k|v) − Σ_{i∈S} ε(n(i))`, capacities `(1 − ω) c(k)`.
///
/// The additive radii break the fractional structure of pricing, so columns
/// are priced exactly by enumeration when the family fits under the cap and
/// by a local search otherwise (status [`LpStatus::Heuristic`]).
pub fn solve_ucb_lp<T: Scalar>(data: &LpData<'_, T>, spec: &UcbLpSpec<T>, opts: &SolverOptions<T>) -> Result<LpResult<T>, LpError> {
    let v = &spec.v;
    data.check(v)?;
    if !(spec.omega >= T::zero() && spec.omega < T::one()) {
        return Err(LpError::OmegaOutOfRange(spec.omega.as_f64()));
    }
    if spec.radii.len() != v.len() || spec.radii.iter().any(|&e| !(e >= T::zero())) {
        return Err(LpError::Dimension("need one nonnegative radius per product".into()));
    }
    let rhs: Vec<T> = data.capacity.iter().map(|&c| (T::one() - spec.omega) * c).collect();
    let make_column = |s: &Assortment| {
        let e = spec.widening(s);
        Column {
            objective: weighted_choice_sum(v, s, data.revenues) + e,
            consumption: data.consumption.iter().map(|row| weighted_choice_sum(v, s, row) - e).collect(),
        }
    };
    let members: Option<Vec<Assortment>> = if data.family.size() <= opts.enumeration_cap as u128 {
        Some(enumerate_family(data.family, opts.enumeration_cap)?.collect())
    } else {
        None
    };
    let price = |duals: &[T], mu: T| {
        let r_tilde = reduced_revenues(data, duals);
        let scale = T::one() + duals.iter().copied().sum::<T>();
        let score = |s: &Assortment| weighted_choice_sum(v, s, &r_tilde) + scale * spec.widening(s);
        match &members {
            Some(all) => {
                let mut best = (Assortment::empty(), T::zero());
                for s in all {
                    let val = score(s);
                    if val > best.1 {
                        best = (s.clone(), val);
                    }
                }
                Ok((best.0, best.1 - mu, Pricing::Exact))
            }
            None => {
                let (s, val) = local_search_pricing(v, &r_tilde, data.family, &score)?;
                Ok((s, val - mu, Pricing::Heuristic))
            }
        }
    };
    column_generation(data.k(), rhs, opts, make_column, price)
}

/// Add/drop/swap local search seeded with the fractional pricing optimum
/// and with the empty set.
fn local_search_pricing<T: Scalar>(
    v: &UtilityVector<T>,
    r_tilde: &[T],
    family: &AssortmentFamily,
    score: &impl Fn(&Assortment) -> T,
) -> Result<(Assortment, T), LpError> {
    let n = family.n();
    let seeds = [price_column(v, r_tilde, family)?.assortment, Assortment::empty()];
    let mut best = (Assortment::empty(), T::zero());
    for seed in seeds {
        let mut cur = seed;
        let mut cur_val = score(&cur);
        for _ in 0..(4 * n + 16) {
            let mut improved = false;
            let mut candidates: Vec<Assortment> = Vec::new();
            for i in 1..=n {
                let mut items = cur.items().to_vec();
                if cur.contains(i) {
                    items.retain(|&x| x != i);
                    candidates.push(Assortment::new(items)?);
                } else {
                    items.push(i);
                    candidates.push(Assortment::new(items.clone())?);
                    for &drop in cur.items() {
                        let swapped: Vec<usize> = items.iter().copied().filter(|&x| x != drop).collect();
                        candidates.push(Assortment::new(swapped)?);
                    }
                }
            }
            for cand in candidates {
                if family_contains(family, &cand) {
                    let val = score(&cand);
                    if val > cur_val + T::epsilon() {
                        cur = cand;
                        cur_val = val;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if cur_val > best.1 {
            best = (cur, cur_val);
        }
    }
    Ok(best)
}
