//! Reference implementations used only as test oracles. They share no code
//! with the library beyond its public data types.

#![allow(dead_code)]

use mnl_assortment::{Assortment, AssortmentFamily, FamilyKind};

/// `v(i) / (1 + Σ_{ℓ∈S} v(ℓ))` with 1-based `i`, 0 for no purchase.
pub fn phi(v: &[f64], s: &[usize], i: usize) -> f64 {
    let denom = 1.0 + s.iter().map(|&l| v[l - 1]).sum::<f64>();
    if i == 0 {
        1.0 / denom
    } else if s.contains(&i) {
        v[i - 1] / denom
    } else {
        0.0
    }
}

pub fn revenue(v: &[f64], s: &[usize], r: &[f64]) -> f64 {
    s.iter().map(|&i| r[i - 1] * phi(v, s, i)).sum()
}

/// Membership from the family definitions, written independently of the
/// library's check.
pub fn allowed(kind: &FamilyKind, n: usize, s: &[usize]) -> bool {
    match kind {
        FamilyKind::Cardinality { max_size } => s.len() <= *max_size,
        FamilyKind::PartitionMatroid { blocks, per_block } => {
            let size = n / blocks;
            (0..*blocks).all(|j| s.iter().filter(|&&i| (i - 1) / size == j).count() <= *per_block)
        }
        FamilyKind::Explicit { members } => s.is_empty() || members.iter().any(|m| m.items() == s),
    }
}

/// Every member of the family by bitmask enumeration.
pub fn all_members(family: &AssortmentFamily) -> Vec<Vec<usize>> {
    let n = family.n();
    assert!(n <= 20, "bitmask oracle limited to small N");
    (0u32..(1 << n))
        .map(|mask| (1..=n).filter(|&i| mask & (1 << (i - 1)) != 0).collect::<Vec<_>>())
        .filter(|s| allowed(family.kind(), n, s))
        .collect()
}

/// `max_S Σ_{i∈S} w(i) φ(i, S | v)` by exhaustive search.
pub fn brute_force_pricing(v: &[f64], w: &[f64], family: &AssortmentFamily) -> f64 {
    all_members(family).iter().map(|s| revenue(v, s, w)).fold(0.0, f64::max)
}

/// Dense-tableau simplex with Bland's rule for
/// `max c·y  s.t.  A y <= b,  Σ y = 1,  y >= 0`, where column 0 must be the
/// all-zero column so that slacks plus `y_0` form a feasible start.
pub fn tableau_lp(objective: &[f64], consumption: &[Vec<f64>], b: &[f64]) -> f64 {
    let k = b.len();
    let m = objective.len();
    assert!(objective[0] == 0.0 && consumption[0].iter().all(|&x| x == 0.0));
    // Columns: m structurals, then k slacks. Rows: k resources, then convexity.
    let width = m + k + 1;
    let mut tab = vec![vec![0.0; width]; k + 1];
    for r in 0..k {
        for j in 0..m {
            tab[r][j] = consumption[j][r];
        }
        tab[r][m + r] = 1.0;
        tab[r][width - 1] = b[r];
    }
    for j in 0..m {
        tab[k][j] = 1.0;
    }
    tab[k][width - 1] = 1.0;
    let mut basis: Vec<usize> = (0..k).map(|r| m + r).chain(std::iter::once(0)).collect();
    let cost = |j: usize| if j < m { objective[j] } else { 0.0 };
    for _ in 0..100_000 {
        // Reduced cost c_j − c_B B⁻¹ a_j, read off the current tableau.
        let entering = (0..m + k).find(|&j| {
            let rc = cost(j) - (0..=k).map(|r| cost(basis[r]) * tab[r][j]).sum::<f64>();
            rc > 1e-12 && !basis.contains(&j)
        });
        let Some(e) = entering else {
            return (0..=k).map(|r| cost(basis[r]) * tab[r][width - 1]).sum();
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..=k {
            if tab[r][e] > 1e-12 {
                let ratio = tab[r][width - 1] / tab[r][e];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[r] < basis[lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let (p, _) = leave.expect("bounded LP");
        let piv = tab[p][e];
        for x in tab[p].iter_mut() {
            *x /= piv;
        }
        for r in 0..=k {
            if r != p {
                let f = tab[r][e];
                if f != 0.0 {
                    for c in 0..width {
                        tab[r][c] -= f * tab[p][c];
                    }
                }
            }
        }
        basis[p] = e;
    }
    panic!("tableau simplex did not terminate");
}

/// `Opt(LP(v))` over the whole family with the tableau oracle.
pub fn enumeration_lp(v: &[f64], r: &[f64], a: &[Vec<f64>], c: &[f64], family: &AssortmentFamily) -> f64 {
    let members = all_members(family);
    assert!(members[0].is_empty());
    let objective: Vec<f64> = members.iter().map(|s| revenue(v, s, r)).collect();
    let consumption: Vec<Vec<f64>> = members.iter().map(|s| a.iter().map(|row| revenue(v, s, row)).collect()).collect();
    tableau_lp(&objective, &consumption, c)
}

/// Single-item negative log-likelihood `n log(1 + 1/v) + (m − n) log(1 + v)`.
pub fn single_nll(v: f64, n: u64, m: u64) -> f64 {
    n as f64 * (1.0 + 1.0 / v).ln() + (m - n) as f64 * (1.0 + v).ln()
}

/// Minimizer of [`single_nll`] on `[1/R, R]`, by bisection on the sign of
/// its derivative.
pub fn single_minimizer(n: u64, m: u64, bound: f64) -> f64 {
    let d = |v: f64| -(n as f64) / (v * (v + 1.0)) + (m - n) as f64 / (1.0 + v);
    let (mut lo, mut hi) = (1.0 / bound, bound);
    if d(lo) >= 0.0 {
        return lo;
    }
    if d(hi) <= 0.0 {
        return hi;
    }
    while hi - lo > 1e-15 * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if d(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `Σ −log φ(I_s, S_s | e^θ)` term by term.
pub fn nll_records(theta: &[f64], records: &[(Assortment, usize)]) -> f64 {
    let v: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
    records.iter().map(|(s, i)| -phi(&v, s.items(), *i).ln()).sum()
}

/// `ε(τ) = 4R √((N/τ) log(4N/δ))`.
pub fn eps_tau(tau: u64, n: usize, bound: f64, delta: f64) -> f64 {
    4.0 * bound * ((n as f64 / tau as f64) * (4.0 * n as f64 / delta).ln()).sqrt()
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (m, var.sqrt())
}
