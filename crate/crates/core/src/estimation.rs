//! Maximum-likelihood estimation of MNL utilities from sales data, and the
//! confidence radii used by the learning policies.
//!
//! The full likelihood is handled in log space, `θ(i) = log v(i)`, where it
//! is convex. Its Hessian is `Σ_s diag(φ_s) − φ_s φ_sᵀ` restricted to `S_s`.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::mnl::{family_contains, Assortment, AssortmentFamily, MnlError, UtilityVector};
use crate::scalar::Scalar;

pub const MLE_MAX_ITERATIONS: usize = 10_000;
pub const MLE_DEFAULT_TOL: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("product {product} was never offered; the likelihood does not identify it")]
    InsufficientData { product: usize },
    #[error("MLE did not converge after {iterations} iterations (stationarity {stationarity:e})")]
    Convergence { best: Vec<f64>, iterations: usize, stationarity: f64 },
    #[error(transparent)]
    Mnl(#[from] MnlError),
}

/// Purchases of product `i` over `offers` single-item offers of `{i}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SingleItemCounts {
    pub product: usize,
    pub offers: u64,
    pub purchases: u64,
}

impl SingleItemCounts {
    pub fn new(product: usize, offers: u64, purchases: u64) -> Result<Self, EstimationError> {
        if offers == 0 || purchases > offers {
            return Err(EstimationError::Domain(format!(
                "need 0 <= n <= m and m >= 1, got n = {purchases}, m = {offers}"
            )));
        }
        Ok(Self { product, offers, purchases })
    }
}

/// `n log(1 + 1/v) + (m − n) log(1 + v)`.
pub fn neg_log_likelihood_single<T: Scalar>(v: T, counts: &SingleItemCounts) -> Result<T, EstimationError> {
    if !(v > T::zero()) {
        return Err(EstimationError::Domain(format!("utility must be positive, got {v}")));
    }
    let n = T::from_count(counts.purchases);
    let rest = T::from_count(counts.offers - counts.purchases);
    let mut total = T::zero();
    if counts.purchases > 0 {
        total = total + n * v.recip().ln_1p();
    }
    if counts.offers > counts.purchases {
        total = total + rest * v.ln_1p();
    }
    Ok(total)
}

/// Closed-form minimizer over `[1/R, R]`: `clip(n / (m − n), 1/R, R)`.
pub fn mle_single_item<T: Scalar>(counts: &SingleItemCounts, bound: T) -> T {
    let lo = bound.recip();
    if counts.purchases == 0 {
        return lo;
    }
    if counts.purchases == counts.offers {
        return bound;
    }
    let n = T::from_count(counts.purchases);
    let rest = T::from_count(counts.offers - counts.purchases);
    (n / rest).max(lo).min(bound)
}

/// Ordered `(S_t, I_t)` records with per-product exposure counts and an
/// aggregated view keyed by assortment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SalesHistory {
    n: usize,
    records: Vec<(Assortment, usize)>,
    exposures: Vec<u64>,
    groups: BTreeMap<Assortment, Vec<u64>>,
}

impl SalesHistory {
    pub fn new(n: usize) -> Self {
        Self { n, records: Vec::new(), exposures: vec![0; n], groups: BTreeMap::new() }
    }

    pub fn n_products(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, s: Assortment, purchased: usize) -> Result<(), EstimationError> {
        s.check_dimension(self.n)?;
        if purchased != 0 && !s.contains(purchased) {
            return Err(EstimationError::Domain(format!("purchase {purchased} not in offered set {s}")));
        }
        for &i in s.items() {
            self.exposures[i - 1] += 1;
        }
        // Outcome slot 0 is no purchase, slot j is the j-th item of S.
        let slot = if purchased == 0 { 0 } else { s.items().iter().position(|&i| i == purchased).unwrap() + 1 };
        let counts = self.groups.entry(s.clone()).or_insert_with(|| vec![0; s.len() + 1]);
        counts[slot] += 1;
        self.records.push((s, purchased));
        Ok(())
    }

    pub fn records(&self) -> &[(Assortment, usize)] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `n(i)`: number of records whose assortment contained product `i`.
    pub fn exposures(&self) -> &[u64] {
        &self.exposures
    }

    fn groups(&self) -> impl Iterator<Item = (&Assortment, &[u64])> {
        self.groups.iter().map(|(s, c)| (s, c.as_slice()))
    }
}

struct Eval<T> {
    value: T,
    grad: Vec<T>,
}

/// Value and gradient of the negative log-likelihood at `θ`.
fn evaluate<T: Scalar>(theta: &[T], history: &SalesHistory, want_grad: bool) -> Eval<T> {
    let mut value = T::zero();
    let mut grad = if want_grad { vec![T::zero(); theta.len()] } else { Vec::new() };
    for (s, counts) in history.groups() {
        let w: Vec<T> = s.items().iter().map(|&i| theta[i - 1].exp()).collect();
        let denom = T::one() + w.iter().copied().sum::<T>();
        let log_denom = denom.ln();
        let total = T::from_count(counts.iter().sum());
        value = value + T::from_count(counts[0]) * log_denom;
        for (j, &i) in s.items().iter().enumerate() {
            let c = counts[j + 1];
            if c > 0 {
                value = value + T::from_count(c) * (log_denom - theta[i - 1]);
            }
            if want_grad {
                grad[i - 1] = grad[i - 1] + total * w[j] / denom - T::from_count(c);
            }
        }
    }
    Eval { value, grad }
}

fn hessian<T: Scalar>(theta: &[T], history: &SalesHistory) -> Vec<Vec<T>> {
    let n = theta.len();
    let mut h = vec![vec![T::zero(); n]; n];
    for (s, counts) in history.groups() {
        let total = T::from_count(counts.iter().sum());
        let w: Vec<T> = s.items().iter().map(|&i| theta[i - 1].exp()).collect();
        let denom = T::one() + w.iter().copied().sum::<T>();
        let phi: Vec<T> = w.iter().map(|&x| x / denom).collect();
        for (a, &i) in s.items().iter().enumerate() {
            for (b, &j) in s.items().iter().enumerate() {
                let diag = if a == b { phi[a] } else { T::zero() };
                h[i - 1][j - 1] = h[i - 1][j - 1] + total * (diag - phi[a] * phi[b]);
            }
        }
    }
    h
}

/// `Σ_s −log φ(I_s, S_s | v)`; zero for an empty history.
pub fn neg_log_likelihood_full<T: Scalar>(v: &UtilityVector<T>, history: &SalesHistory) -> Result<T, EstimationError> {
    if v.len() != history.n_products() {
        return Err(MnlError::Dimension { index: v.len(), n: history.n_products() }.into());
    }
    Ok(evaluate(&v.log_values(), history, false).value)
}

/// Gradient of the negative log-likelihood with respect to `θ = log v`:
/// `Σ_s 1(i ∈ S_s) (φ(i, S_s | e^θ) − 1(I_s = i))`.
pub fn likelihood_gradient<T: Scalar>(theta: &[T], history: &SalesHistory) -> Vec<T> {
    assert_eq!(theta.len(), history.n_products(), "theta dimension");
    evaluate(theta, history, true).grad
}

/// Negative log-likelihood as a function of `θ` without the box constraint.
pub fn neg_log_likelihood_theta<T: Scalar>(theta: &[T], history: &SalesHistory) -> T {
    evaluate(theta, history, false).value
}

fn cholesky_solve<T: Scalar>(a: &[Vec<T>], b: &[T]) -> Option<Vec<T>> {
    let n = b.len();
    let mut l = vec![vec![T::zero(); n]; n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i][j];
            for k in 0..j {
                sum = sum - l[i][k] * l[j][k];
            }
            if i == j {
                if !(sum > T::zero()) {
                    return None;
                }
                l[i][i] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    let mut y = vec![T::zero(); n];
    for i in 0..n {
        let s = (0..i).fold(b[i], |acc, k| acc - l[i][k] * y[k]);
        y[i] = s / l[i][i];
    }
    let mut x = vec![T::zero(); n];
    for i in (0..n).rev() {
        let s = ((i + 1)..n).fold(y[i], |acc, k| acc - l[k][i] * x[k]);
        x[i] = s / l[i][i];
    }
    Some(x)
}

fn project<T: Scalar>(theta: &mut [T], lim: T) {
    for t in theta.iter_mut() {
        *t = t.max(-lim).min(lim);
    }
}

fn stationarity<T: Scalar>(theta: &[T], grad: &[T], lim: T) -> T {
    theta
        .iter()
        .zip(grad)
        .map(|(&t, &g)| (t - (t - g).max(-lim).min(lim)).abs())
        .fold(T::zero(), T::max)
}

/// Box-constrained MLE over `[1/R, R]^N`, solved as a projected Newton
/// method in `θ = log v` with Armijo backtracking along the projection arc.
///
/// Stationarity is measured as `‖θ − P(θ − ∇L)‖∞`; the tolerance is floored
/// at a few dozen ulps per history record since the gradient is a sum
/// of that many terms.
pub fn mle_full<T: Scalar>(history: &SalesHistory, bound: T, tol: T) -> Result<UtilityVector<T>, EstimationError> {
    mle_full_from(history, bound, tol, None)
}

/// [`mle_full`] started from `start` (in `θ` space) instead of `θ = 0`.
pub fn mle_full_from<T: Scalar>(
    history: &SalesHistory,
    bound: T,
    tol: T,
    start: Option<&[T]>,
) -> Result<UtilityVector<T>, EstimationError> {
    if !(tol > T::zero()) {
        return Err(EstimationError::Domain("tolerance must be positive".into()));
    }
    if !(bound >= T::one()) {
        return Err(EstimationError::Domain(format!("bound R = {bound} must be >= 1")));
    }
    if let Some(i) = history.exposures().iter().position(|&c| c == 0) {
        return Err(EstimationError::InsufficientData { product: i + 1 });
    }
    let n = history.n_products();
    let lim = bound.ln();
    let tol = tol.max(T::epsilon() * T::lit(32.0) * T::from_count(history.len() as u64));
    let sigma = T::lit(1e-4);

    let mut theta = match start {
        Some(s) if s.len() == n => s.to_vec(),
        _ => vec![T::zero(); n],
    };
    project(&mut theta, lim);
    let mut current = evaluate(&theta, history, true);
    let mut iterations = 0;
    while iterations < MLE_MAX_ITERATIONS {
        let stat = stationarity(&theta, &current.grad, lim);
        if stat <= tol {
            return Ok(UtilityVector::from_log(&theta, bound)?);
        }
        iterations += 1;

        // Coordinates held at a bound by the gradient are fixed this step.
        let edge = stat.min(T::lit(1e-3));
        let free: Vec<usize> = (0..n)
            .filter(|&i| {
                let g = current.grad[i];
                !((theta[i] <= -lim + edge && g > T::zero()) || (theta[i] >= lim - edge && g < T::zero()))
            })
            .collect();
        let mut dir = vec![T::zero(); n];
        if !free.is_empty() {
            let h = hessian(&theta, history);
            let sub: Vec<Vec<T>> = free.iter().map(|&i| free.iter().map(|&j| h[i][j]).collect()).collect();
            let rhs: Vec<T> = free.iter().map(|&i| -current.grad[i]).collect();
            match cholesky_solve(&sub, &rhs) {
                Some(step) => {
                    for (&i, d) in free.iter().zip(step) {
                        dir[i] = d;
                    }
                }
                None => {
                    for &i in &free {
                        dir[i] = -current.grad[i] / h[i][i].max(T::one());
                    }
                }
            }
        }
        for i in 0..n {
            if !free.contains(&i) {
                dir[i] = -current.grad[i];
            }
        }

        // Below this predicted decrease, likelihood values are dominated by
        // rounding and the step is judged by stationarity instead.
        let noise = T::epsilon() * T::lit(64.0) * (current.value.abs() + T::one());
        let mut alpha = T::one();
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<T> = theta.iter().zip(&dir).map(|(&t, &d)| t + alpha * d).collect();
            project(&mut trial, lim);
            if trial == theta {
                break;
            }
            let decrease: T = current.grad.iter().zip(trial.iter().zip(&theta)).map(|(&g, (&a, &b))| g * (a - b)).sum();
            let next = evaluate(&trial, history, true);
            let armijo = next.value <= current.value + sigma * decrease;
            if armijo || (-decrease <= noise && stationarity(&trial, &next.grad, lim) < stat) {
                accepted = Some((trial, next));
                break;
            }
            alpha = alpha * T::lit(0.5);
        }
        match accepted {
            Some((trial, next)) => {
                theta = trial;
                current = next;
            }
            None => {
                // No representable decrease left along the arc.
                return Err(EstimationError::Convergence {
                    best: theta.iter().map(|t| t.exp().as_f64()).collect(),
                    iterations,
                    stationarity: stat.as_f64(),
                });
            }
        }
    }
    let stat = stationarity(&theta, &current.grad, lim);
    Err(EstimationError::Convergence {
        best: theta.iter().map(|t| t.exp().as_f64()).collect(),
        iterations,
        stationarity: stat.as_f64(),
    })
}

/// `ε(τ) = 4R √((N/τ) log(4N/δ))`, the learning-phase confidence radius.
pub fn confidence_radius_learning<T: Scalar>(tau: u64, n: usize, bound: T, delta: T) -> Result<T, EstimationError> {
    if (tau as usize) < n || n == 0 {
        return Err(EstimationError::Domain(format!("tau = {tau} must be at least N = {n}")));
    }
    check_delta(delta)?;
    let nf = T::from_count(n as u64);
    let ratio = nf / T::from_count(tau);
    Ok(T::lit(4.0) * bound * (ratio * (T::lit(4.0) * nf / delta).ln()).sqrt())
}

fn check_delta<T: Scalar>(delta: T) -> Result<(), EstimationError> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(EstimationError::Domain(format!("delta = {delta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Constants of the optimistic policy: `Ψ`, `ω` and the radius `ε(n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceConstants<T> {
    pub delta: T,
    pub psi: T,
    pub omega: T,
    pub n_products: usize,
}

impl<T: Scalar> ConfidenceConstants<T> {
    /// `ε(n) = (√N + 1) Ψ / √n`, defined for `n >= 1`.
    pub fn radius(&self, n: u64) -> Result<T, EstimationError> {
        if n == 0 {
            return Err(EstimationError::Domain("radius needs at least one exposure".into()));
        }
        let root_n = T::from_count(self.n_products as u64).sqrt();
        Ok((root_n + T::one()) * self.psi / T::from_count(n).sqrt())
    }

    /// The policy may only run when `ω < 1`.
    pub fn omega_ok(&self) -> bool {
        self.omega < T::one()
    }

    /// Scales `Ψ` (and with it `ω`, which is linear in `Ψ`).
    pub fn with_psi_scale(mut self, factor: T) -> Self {
        self.psi = self.psi * factor;
        self.omega = self.omega * factor;
        self
    }
}

/// `Ψ = R (1 + BR)² √(6 log(2NT(K+1)/δ))` and
/// `ω = (11 Ψ N / min_k c(k)) √((B/T) log(4(K+1)/δ))`.
#[allow(clippy::too_many_arguments)]
pub fn ucb_constants<T: Scalar>(
    horizon: u64,
    n: usize,
    k: usize,
    b: usize,
    bound: T,
    c_min: T,
    delta: T,
) -> Result<ConfidenceConstants<T>, EstimationError> {
    check_delta(delta)?;
    if horizon == 0 || n == 0 {
        return Err(EstimationError::Domain("T and N must be positive".into()));
    }
    if !(c_min > T::zero() && c_min <= T::one()) {
        return Err(EstimationError::Domain(format!("min c(k) = {c_min} must lie in (0, 1]")));
    }
    let tf = T::from_count(horizon);
    let nf = T::from_count(n as u64);
    let k1 = T::from_count(k as u64 + 1);
    let bf = T::from_count(b as u64);
    let one_br = T::one() + bf * bound;
    let psi = bound * one_br * one_br * (T::lit(6.0) * (T::lit(2.0) * nf * tf * k1 / delta).ln()).sqrt();
    let omega = T::lit(11.0) * psi * nf / c_min * (bf / tf * (T::lit(4.0) * k1 / delta).ln()).sqrt();
    Ok(ConfidenceConstants { delta, psi, omega, n_products: n })
}

/// Left and right sides of the ellipsoidal confidence statement
/// `Σ_i (√n(i) |θ̂(i) − θ*(i)| − Ψ)² ≤ N Ψ²`. Diagnostic only.
pub fn ellipsoid_check<T: Scalar>(theta_hat: &[T], theta_star: &[T], exposures: &[u64], psi: T) -> (T, T) {
    let lhs = theta_hat
        .iter()
        .zip(theta_star)
        .zip(exposures)
        .map(|((&a, &b), &n)| {
            let d = T::from_count(n).sqrt() * (a - b).abs() - psi;
            d * d
        })
        .sum();
    (lhs, T::from_count(theta_hat.len() as u64) * psi * psi)
}

/// Fixed assortment containing product `i` used to warm-start the full MLE:
/// `{i}` when allowed, else the lexicographically smallest member holding `i`.
pub fn warm_start_assortment(family: &AssortmentFamily, i: usize, cap: u64) -> Option<Assortment> {
    let single = Assortment::singleton(i);
    if family_contains(family, &single) {
        return Some(single);
    }
    crate::mnl::enumerate_family(family, cap).ok()?.find(|s| s.contains(i))
}
