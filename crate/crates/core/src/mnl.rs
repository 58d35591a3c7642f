//! Multinomial-logit choice model: purchase probabilities, expected revenue
//! and consumption of an assortment, purchase sampling, and the families of
//! allowed assortments.
//!
//! Products are numbered `1..=N` at every interface; index `0` is the
//! no-purchase outcome, which earns nothing and consumes nothing.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default cap on the number of family members [`enumerate_family`] will
/// produce.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MnlError {
    #[error("product index {index} out of range 0..={n}")]
    Dimension { index: usize, n: usize },
    #[error("invalid utility vector: {0}")]
    InvalidUtility(String),
    #[error("invalid assortment family: {0}")]
    InvalidFamily(String),
    #[error("family has {size} members, above the enumeration cap {cap}")]
    EnumerationTooLarge { size: u128, cap: u64 },
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error("instance i/o: {0}")]
    Io(String),
}

/// A point `v` in `[1/R, R]^N`.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityVector<T> {
    values: Vec<T>,
    bound: T,
}

impl<T: Scalar> UtilityVector<T> {
    pub fn new(values: Vec<T>, bound: T) -> Result<Self, MnlError> {
        if values.is_empty() {
            return Err(MnlError::InvalidUtility("need at least one product".into()));
        }
        if !(bound >= T::one()) || !bound.is_finite() {
            return Err(MnlError::InvalidUtility(format!("bound R = {bound} must be >= 1")));
        }
        // Relative slack so that values snapped to the box edge by exp/log
        // round trips are still accepted.
        let slack = T::lit(1e-12).max(T::epsilon() * T::lit(8.0));
        let lo = bound.recip() * (T::one() - slack);
        let hi = bound * (T::one() + slack);
        for (i, &x) in values.iter().enumerate() {
            if !(x >= lo && x <= hi) {
                return Err(MnlError::InvalidUtility(format!(
                    "v({}) = {x} outside [1/{bound}, {bound}]",
                    i + 1
                )));
            }
        }
        Ok(Self { values, bound })
    }

    /// Builds `v = exp(theta)` after clipping each coordinate to the box.
    pub fn from_log(theta: &[T], bound: T) -> Result<Self, MnlError> {
        let lim = bound.ln();
        let values = theta.iter().map(|&t| t.max(-lim).min(lim).exp()).collect();
        Self::new(values, bound)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Utility of product `i` (1-based).
    pub fn get(&self, i: usize) -> T {
        self.values[i - 1]
    }

    pub fn log_values(&self) -> Vec<T> {
        self.values.iter().map(|x| x.ln()).collect()
    }
}

/// A sorted, duplicate-free set of product indices in `1..=N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Assortment {
    items: Vec<usize>,
}

impl Assortment {
    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    pub fn singleton(i: usize) -> Self {
        assert!(i >= 1, "product indices start at 1");
        Self { items: vec![i] }
    }

    /// Sorts and deduplicates; rejects the reserved index 0.
    pub fn new(mut items: Vec<usize>) -> Result<Self, MnlError> {
        if items.contains(&0) {
            return Err(MnlError::Dimension { index: 0, n: 0 });
        }
        items.sort_unstable();
        items.dedup();
        Ok(Self { items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.items.binary_search(&i).is_ok()
    }

    pub fn check_dimension(&self, n: usize) -> Result<(), MnlError> {
        match self.items.last() {
            Some(&last) if last > n => Err(MnlError::Dimension { index: last, n }),
            _ => Ok(()),
        }
    }
}

impl TryFrom<Vec<usize>> for Assortment {
    type Error = MnlError;
    fn try_from(v: Vec<usize>) -> Result<Self, Self::Error> {
        Assortment::new(v)
    }
}

impl From<Assortment> for Vec<usize> {
    fn from(a: Assortment) -> Self {
        a.items
    }
}

impl fmt::Display for Assortment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (j, i) in self.items.iter().enumerate() {
            if j > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilyKind {
    /// `{S : |S| <= max_size}`
    Cardinality { max_size: usize },
    /// At most `per_block` items from each of `blocks` equal consecutive
    /// blocks of products.
    PartitionMatroid { blocks: usize, per_block: usize },
    /// An explicit list of members; the empty set is always included.
    Explicit { members: Vec<Assortment> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssortmentFamily {
    kind: FamilyKind,
    n: usize,
}

impl AssortmentFamily {
    pub fn new(kind: FamilyKind, n: usize) -> Result<Self, MnlError> {
        if n == 0 {
            return Err(MnlError::InvalidFamily("N must be at least 1".into()));
        }
        match &kind {
            FamilyKind::Cardinality { .. } => {}
            FamilyKind::PartitionMatroid { blocks, .. } => {
                if *blocks == 0 || n % blocks != 0 {
                    return Err(MnlError::InvalidFamily(format!(
                        "N = {n} is not divisible into {blocks} equal blocks"
                    )));
                }
            }
            FamilyKind::Explicit { members } => {
                for m in members {
                    m.check_dimension(n)?;
                }
            }
        }
        Ok(Self { kind, n })
    }

    pub fn cardinality(n: usize, max_size: usize) -> Self {
        Self::new(FamilyKind::Cardinality { max_size }, n).expect("valid cardinality family")
    }

    pub fn partition_matroid(n: usize, blocks: usize, per_block: usize) -> Result<Self, MnlError> {
        Self::new(FamilyKind::PartitionMatroid { blocks, per_block }, n)
    }

    pub fn explicit(n: usize, members: Vec<Assortment>) -> Result<Self, MnlError> {
        Self::new(FamilyKind::Explicit { members }, n)
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Block index (0-based) of product `i` in a partition-matroid family.
    pub(crate) fn block_of(&self, i: usize, blocks: usize) -> usize {
        (i - 1) / (self.n / blocks)
    }

    /// Largest member size `B`.
    pub fn max_size(&self) -> usize {
        match &self.kind {
            FamilyKind::Cardinality { max_size } => (*max_size).min(self.n),
            FamilyKind::PartitionMatroid { blocks, per_block } => {
                blocks * (*per_block).min(self.n / blocks)
            }
            FamilyKind::Explicit { members } => members.iter().map(|m| m.len()).max().unwrap_or(0),
        }
    }

    /// Number of members including the empty set (saturating).
    pub fn size(&self) -> u128 {
        match &self.kind {
            FamilyKind::Cardinality { max_size } => {
                (0..=(*max_size).min(self.n)).map(|j| binomial(self.n, j)).fold(0u128, |a, b| a.saturating_add(b))
            }
            FamilyKind::PartitionMatroid { blocks, per_block } => {
                let m = self.n / blocks;
                let per: u128 = (0..=(*per_block).min(m)).map(|j| binomial(m, j)).sum();
                (0..*blocks).fold(1u128, |acc, _| acc.saturating_mul(per))
            }
            FamilyKind::Explicit { .. } => explicit_members(&self.kind).len() as u128,
        }
    }

    /// Whether `S ∪ {i}` stays in the family, given `S` is a member. Only
    /// meaningful for the structured kinds.
    fn can_extend(&self, s: &[usize], i: usize) -> bool {
        match &self.kind {
            FamilyKind::Cardinality { max_size } => s.len() < *max_size,
            FamilyKind::PartitionMatroid { blocks, per_block } => {
                let b = self.block_of(i, *blocks);
                s.iter().filter(|&&j| self.block_of(j, *blocks) == b).count() < *per_block
            }
            FamilyKind::Explicit { .. } => unreachable!("explicit families are listed, not extended"),
        }
    }
}

fn explicit_members(kind: &FamilyKind) -> Vec<Assortment> {
    match kind {
        FamilyKind::Explicit { members } => {
            let mut all = members.clone();
            all.push(Assortment::empty());
            all.sort();
            all.dedup();
            all
        }
        _ => Vec::new(),
    }
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for j in 0..k {
        acc = acc.saturating_mul((n - j) as u128) / (j as u128 + 1);
    }
    acc
}

/// `φ(i, S | v)`: probability that a customer offered `S` buys `i`
/// (`i = 0` is no purchase). Zero for products outside `S`.
pub fn choice_prob<T: Scalar>(v: &UtilityVector<T>, s: &Assortment, i: usize) -> Result<T, MnlError> {
    let n = v.len();
    s.check_dimension(n)?;
    if i > n {
        return Err(MnlError::Dimension { index: i, n });
    }
    let denom = T::one() + s.items().iter().map(|&l| v.get(l)).sum::<T>();
    Ok(if i == 0 {
        denom.recip()
    } else if s.contains(i) {
        v.get(i) / denom
    } else {
        T::zero()
    })
}

/// Sum over `S` of `weight(i) * φ(i, S | v)`, with `weights` indexed by
/// product (0-based storage of product `i` at `weights[i - 1]`).
pub fn weighted_choice_sum<T: Scalar>(v: &UtilityVector<T>, s: &Assortment, weights: &[T]) -> T {
    let mut num = T::zero();
    let mut den = T::one();
    for &i in s.items() {
        let vi = v.get(i);
        num = num + weights[i - 1] * vi;
        den = den + vi;
    }
    num / den
}

/// `R(S | v) = Σ_{i∈S} r(i) φ(i, S | v)`.
pub fn expected_revenue<T: Scalar>(v: &UtilityVector<T>, s: &Assortment, r: &[T]) -> Result<T, MnlError> {
    s.check_dimension(v.len())?;
    if r.len() != v.len() {
        return Err(MnlError::Dimension { index: r.len(), n: v.len() });
    }
    Ok(weighted_choice_sum(v, s, r))
}

/// `A(S, k | v) = Σ_{i∈S} a(i, k) φ(i, S | v)`, with `a` stored `K × N`
/// and `k` 0-based.
pub fn expected_consumption<T: Scalar>(
    v: &UtilityVector<T>,
    s: &Assortment,
    a: &[Vec<T>],
    k: usize,
) -> Result<T, MnlError> {
    s.check_dimension(v.len())?;
    let row = a.get(k).ok_or(MnlError::Dimension { index: k, n: a.len() })?;
    if row.len() != v.len() {
        return Err(MnlError::Dimension { index: row.len(), n: v.len() });
    }
    Ok(weighted_choice_sum(v, s, row))
}

/// Draws the purchased product by inverse CDF over `S` in ascending order,
/// followed by the no-purchase outcome `0`. Consumes exactly one uniform.
pub fn sample_purchase<T: Scalar, R: Rng + ?Sized>(v: &UtilityVector<T>, s: &Assortment, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    if s.is_empty() {
        return 0;
    }
    let u = T::lit(u);
    let denom = T::one() + s.items().iter().map(|&l| v.get(l)).sum::<T>();
    let mut cum = T::zero();
    for &i in s.items() {
        cum = cum + v.get(i) / denom;
        if u < cum {
            return i;
        }
    }
    0
}

pub fn family_contains(family: &AssortmentFamily, s: &Assortment) -> bool {
    if s.check_dimension(family.n).is_err() {
        return false;
    }
    if s.is_empty() {
        return true;
    }
    match &family.kind {
        FamilyKind::Cardinality { max_size } => s.len() <= *max_size,
        FamilyKind::PartitionMatroid { blocks, per_block } => {
            let mut counts = vec![0usize; *blocks];
            for &i in s.items() {
                counts[family.block_of(i, *blocks)] += 1;
            }
            counts.iter().all(|&c| c <= *per_block)
        }
        FamilyKind::Explicit { members } => members.contains(s),
    }
}

/// Lexicographic stream over every member of a family, `∅` first.
pub struct FamilyIter<'a> {
    family: &'a AssortmentFamily,
    cur: Vec<usize>,
    started: bool,
    done: bool,
    listed: Option<std::vec::IntoIter<Assortment>>,
}

impl<'a> FamilyIter<'a> {
    fn new(family: &'a AssortmentFamily) -> Self {
        let listed = match family.kind {
            FamilyKind::Explicit { .. } => Some(explicit_members(&family.kind).into_iter()),
            _ => None,
        };
        Self { family, cur: Vec::new(), started: false, done: false, listed }
    }

    fn first_extension(&self, from: usize) -> Option<usize> {
        (from..=self.family.n).find(|&x| self.family.can_extend(&self.cur, x))
    }
}

impl Iterator for FamilyIter<'_> {
    type Item = Assortment;

    fn next(&mut self) -> Option<Assortment> {
        if let Some(listed) = self.listed.as_mut() {
            return listed.next();
        }
        if self.done {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(Assortment::empty());
        }
        // Extend the current prefix if possible, else backtrack.
        let start = self.cur.last().map_or(1, |&l| l + 1);
        if let Some(x) = self.first_extension(start) {
            self.cur.push(x);
            return Some(Assortment { items: self.cur.clone() });
        }
        while let Some(last) = self.cur.pop() {
            if let Some(x) = self.first_extension(last + 1) {
                self.cur.push(x);
                return Some(Assortment { items: self.cur.clone() });
            }
        }
        self.done = true;
        None
    }
}

/// Every member of `family`, in lexicographic order, or an error when the
/// family has more than `cap` members.
pub fn enumerate_family(family: &AssortmentFamily, cap: u64) -> Result<FamilyIter<'_>, MnlError> {
    let size = family.size();
    if size > cap as u128 {
        return Err(MnlError::EnumerationTooLarge { size, cap });
    }
    Ok(FamilyIter::new(family))
}

/// Ground-truth problem: revenues, binary consumption, capacity rates,
/// horizon, allowed assortments and the true utilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub n: usize,
    pub k: usize,
    pub horizon: u64,
    pub revenues: Vec<f64>,
    /// `K × N`, entries in `{0, 1}`.
    pub consumption: Vec<Vec<u8>>,
    /// Per-period capacity rates `c(k)`; `T c(k)` is a positive integer.
    pub capacity_rates: Vec<f64>,
    pub family: AssortmentFamily,
    pub v_star: UtilityVector<f64>,
}

/// Everything a policy may see: the instance without `v*`.
#[derive(Debug, Clone, Copy)]
pub struct PublicInstance<'a> {
    pub n: usize,
    pub k: usize,
    pub horizon: u64,
    pub bound: f64,
    pub revenues: &'a [f64],
    pub consumption: &'a [Vec<u8>],
    pub capacity_rates: &'a [f64],
    pub family: &'a AssortmentFamily,
}

impl PublicInstance<'_> {
    pub fn consumption_matrix(&self) -> Vec<Vec<f64>> {
        consumption_as_float(self.consumption)
    }

    /// Initial integer capacities `C(k) = T c(k)`.
    pub fn initial_capacities(&self) -> Vec<u64> {
        initial_capacities(self.horizon, self.capacity_rates)
    }
}

fn consumption_as_float(a: &[Vec<u8>]) -> Vec<Vec<f64>> {
    a.iter().map(|row| row.iter().map(|&x| f64::from(x)).collect()).collect()
}

fn initial_capacities(horizon: u64, rates: &[f64]) -> Vec<u64> {
    rates.iter().map(|&c| (c * horizon as f64).round() as u64).collect()
}

#[derive(Serialize, Deserialize)]
#[allow(non_snake_case)]
struct InstanceDoc {
    N: usize,
    K: usize,
    T: u64,
    R: f64,
    r: Vec<f64>,
    a: Vec<Vec<u8>>,
    c: Vec<f64>,
    family: FamilyKind,
    v_star: Vec<f64>,
}

impl Instance {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        revenues: Vec<f64>,
        consumption: Vec<Vec<u8>>,
        capacity_rates: Vec<f64>,
        horizon: u64,
        family: AssortmentFamily,
        v_star: UtilityVector<f64>,
    ) -> Result<Self, MnlError> {
        let n = revenues.len();
        let k = capacity_rates.len();
        let inst = Self { n, k, horizon, revenues, consumption, capacity_rates, family, v_star };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<(), MnlError> {
        let bad = |m: String| Err(MnlError::InvalidInstance(m));
        if self.n == 0 {
            return bad("N must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("T must be positive".into());
        }
        if self.v_star.len() != self.n || self.family.n() != self.n {
            return bad("dimension mismatch between r, v_star and family".into());
        }
        if let Some(x) = self.revenues.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return bad(format!("revenue {x} outside [0, 1]"));
        }
        if self.consumption.len() != self.k || self.capacity_rates.len() != self.k {
            return bad("consumption matrix must be K x N with K capacity rates".into());
        }
        for row in &self.consumption {
            if row.len() != self.n || row.iter().any(|&x| x > 1) {
                return bad("consumption rows must have N binary entries".into());
            }
        }
        for &c in &self.capacity_rates {
            let cap = c * self.horizon as f64;
            if !(c > 0.0) || (cap - cap.round()).abs() > 1e-6 || cap.round() < 1.0 {
                return bad(format!("T c(k) = {cap} is not a positive integer"));
            }
        }
        Ok(())
    }

    pub fn bound(&self) -> f64 {
        self.v_star.bound()
    }

    pub fn public(&self) -> PublicInstance<'_> {
        PublicInstance {
            n: self.n,
            k: self.k,
            horizon: self.horizon,
            bound: self.bound(),
            revenues: &self.revenues,
            consumption: &self.consumption,
            capacity_rates: &self.capacity_rates,
            family: &self.family,
        }
    }

    pub fn consumption_matrix(&self) -> Vec<Vec<f64>> {
        consumption_as_float(&self.consumption)
    }

    pub fn initial_capacities(&self) -> Vec<u64> {
        initial_capacities(self.horizon, &self.capacity_rates)
    }

    pub fn to_json(&self) -> String {
        let doc = InstanceDoc {
            N: self.n,
            K: self.k,
            T: self.horizon,
            R: self.bound(),
            r: self.revenues.clone(),
            a: self.consumption.clone(),
            c: self.capacity_rates.clone(),
            family: self.family.kind().clone(),
            v_star: self.v_star.values().to_vec(),
        };
        serde_json::to_string_pretty(&doc).expect("instance serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, MnlError> {
        let doc: InstanceDoc = serde_json::from_str(s).map_err(|e| MnlError::InvalidInstance(e.to_string()))?;
        if doc.r.len() != doc.N || doc.c.len() != doc.K {
            return Err(MnlError::InvalidInstance("N/K disagree with vector lengths".into()));
        }
        let family = AssortmentFamily::new(doc.family, doc.N)?;
        let v_star = UtilityVector::new(doc.v_star, doc.R)?;
        Self::new(doc.r, doc.a, doc.c, doc.T, family, v_star)
    }

    pub fn load(path: &Path) -> Result<Self, MnlError> {
        let text = std::fs::read_to_string(path).map_err(|e| MnlError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), MnlError> {
        std::fs::write(path, self.to_json()).map_err(|e| MnlError::Io(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn uv(x: &[f64], r: f64) -> UtilityVector<f64> {
        UtilityVector::new(x.to_vec(), r).unwrap()
    }

    fn set(x: &[usize]) -> Assortment {
        Assortment::new(x.to_vec()).unwrap()
    }

    #[test]
    fn choice_prob_examples() {
        let v = uv(&[1.0, 1.0], 1.0);
        assert!((choice_prob(&v, &set(&[1, 2]), 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(choice_prob(&v, &Assortment::empty(), 0).unwrap(), 1.0);
        assert_eq!(choice_prob(&v, &set(&[2]), 1).unwrap(), 0.0);

        let v = uv(&[2.0, 3.0, 0.5], 3.0);
        let p = choice_prob(&v, &set(&[1, 3]), 3).unwrap();
        // 0.5 / (1 + 2 + 0.5)
        assert!((p - 1.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn choice_prob_rejects_bad_index() {
        let v = uv(&[1.0, 1.0], 1.0);
        assert!(matches!(choice_prob(&v, &set(&[1]), 3), Err(MnlError::Dimension { index: 3, .. })));
        assert!(choice_prob(&v, &set(&[4]), 0).is_err());
        assert!(Assortment::new(vec![0, 1]).is_err());
    }

    #[test]
    fn utility_bounds_enforced() {
        assert!(UtilityVector::new(vec![0.2], 3.0).is_err());
        assert!(UtilityVector::new(vec![1.0], 0.5).is_err());
        assert!(UtilityVector::new(Vec::<f64>::new(), 2.0).is_err());
        assert!(UtilityVector::new(vec![1.0 / 3.0, 3.0], 3.0).is_ok());
    }

    #[test]
    fn revenue_and_consumption() {
        let v = uv(&[1.0, 1.0], 1.0);
        let r = [1.0, 1.0];
        assert_eq!(expected_revenue(&v, &Assortment::empty(), &r).unwrap(), 0.0);
        assert!((expected_revenue(&v, &set(&[1, 2]), &r).unwrap() - 2.0 / 3.0).abs() < 1e-15);

        let v = uv(&[2.0, 0.7, 1.3], 2.0);
        let a = vec![vec![1.0, 1.0, 1.0], vec![0.0, 1.0, 0.0]];
        let s = set(&[1, 3]);
        let full = expected_consumption(&v, &s, &a, 0).unwrap();
        assert!((full - (1.0 - choice_prob(&v, &s, 0).unwrap())).abs() < 1e-15);
        assert_eq!(expected_consumption(&v, &s, &a, 1).unwrap(), 0.0);
        assert!(expected_consumption(&v, &s, &a, 2).is_err());
    }

    #[test]
    fn generic_in_f32() {
        let v = UtilityVector::<f32>::new(vec![2.0, 3.0, 0.5], 3.0).unwrap();
        let p = choice_prob(&v, &set(&[1, 3]), 3).unwrap();
        assert!((p - 1.0 / 7.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_empty_and_determinism() {
        let v = uv(&[1.0, 2.0, 0.5], 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sample_purchase(&v, &Assortment::empty(), &mut rng), 0);
        }
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_purchase(&v, &set(&[1, 2, 3]), &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
    }

    #[test]
    fn sampling_frequencies_within_three_sigma() {
        let v = uv(&[1.0, 1.0], 1.0);
        let s = set(&[1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 300_000usize;
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[sample_purchase(&v, &s, &mut rng)] += 1;
        }
        let p: f64 = 1.0 / 3.0;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 * p).abs() <= 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn family_membership() {
        let card = AssortmentFamily::cardinality(4, 2);
        assert!(!family_contains(&card, &set(&[1, 2, 3])));
        assert!(family_contains(&card, &set(&[2, 4])));
        let pm = AssortmentFamily::partition_matroid(4, 2, 1).unwrap();
        assert!(family_contains(&pm, &set(&[1, 3])));
        assert!(!family_contains(&pm, &set(&[1, 2])));
        let ex = AssortmentFamily::explicit(3, vec![set(&[1, 2])]).unwrap();
        assert!(family_contains(&ex, &set(&[1, 2])));
        assert!(!family_contains(&ex, &set(&[1])));
        for f in [&card, &pm, &ex] {
            assert!(family_contains(f, &Assortment::empty()));
        }
        assert!(!family_contains(&card, &set(&[5])));
        assert!(AssortmentFamily::partition_matroid(5, 2, 1).is_err());
    }

    #[test]
    fn enumeration_counts() {
        let f = AssortmentFamily::cardinality(3, 1);
        let all: Vec<_> = enumerate_family(&f, 100).unwrap().collect();
        assert_eq!(all, vec![Assortment::empty(), set(&[1]), set(&[2]), set(&[3])]);

        let f = AssortmentFamily::cardinality(10, 6);
        // C(10,6) = 210 sets of the maximum size; the whole family is larger.
        let members: Vec<_> = enumerate_family(&f, DEFAULT_ENUMERATION_CAP).unwrap().collect();
        assert_eq!(members.iter().filter(|s| s.len() == 6).count(), 210);
        assert_eq!(members.len() as u128, f.size());

        let f = AssortmentFamily::cardinality(15, 9);
        let count = enumerate_family(&f, DEFAULT_ENUMERATION_CAP).unwrap().filter(|s| s.len() == 9).count();
        assert_eq!(count, 5005);

        let f = AssortmentFamily::cardinality(25, 15);
        assert!(matches!(
            enumerate_family(&f, DEFAULT_ENUMERATION_CAP),
            Err(MnlError::EnumerationTooLarge { .. })
        ));
    }

    #[test]
    fn enumeration_is_lexicographic_and_consistent() {
        let fams = [
            AssortmentFamily::cardinality(6, 3),
            AssortmentFamily::partition_matroid(6, 3, 1).unwrap(),
            AssortmentFamily::partition_matroid(6, 2, 2).unwrap(),
            AssortmentFamily::explicit(4, vec![set(&[3]), set(&[1, 4]), set(&[1, 4])]).unwrap(),
        ];
        for f in &fams {
            let all: Vec<_> = enumerate_family(f, 10_000).unwrap().collect();
            assert_eq!(all.len() as u128, f.size());
            assert!(all.windows(2).all(|w| w[0] < w[1]));
            assert!(all.iter().all(|s| family_contains(f, s)));
            // Brute force over the power set.
            let n = f.n();
            let brute = (0u32..(1 << n))
                .map(|mask| Assortment::new((1..=n).filter(|i| mask & (1 << (i - 1)) != 0).collect()).unwrap())
                .filter(|s| family_contains(f, s))
                .count();
            assert_eq!(brute, all.len());
        }
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = Instance::new(
            vec![0.1, 0.123456789012345678, 1.0],
            vec![vec![1, 0, 1]],
            vec![0.35],
            20,
            AssortmentFamily::partition_matroid(3, 3, 1).unwrap(),
            UtilityVector::new(vec![0.5, 1.7320508075688772, 2.0], 2.0).unwrap(),
        )
        .unwrap();
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(back, inst);
        assert!(inst.to_json().contains("\"kind\": \"partition_matroid\""));
    }

    #[test]
    fn instance_validation() {
        let fam = AssortmentFamily::cardinality(2, 1);
        let v = UtilityVector::new(vec![1.0, 1.0], 1.0).unwrap();
        // T c(k) = 2.5 is not an integer.
        assert!(Instance::new(vec![0.5, 0.5], vec![vec![1, 1]], vec![0.25], 10, fam.clone(), v.clone()).is_err());
        assert!(Instance::new(vec![1.5, 0.5], vec![vec![1, 1]], vec![0.5], 10, fam.clone(), v.clone()).is_err());
        assert!(Instance::new(vec![0.5, 0.5], vec![vec![2, 1]], vec![0.5], 10, fam, v).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<bool>)> {
        (1usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..3.0, n),
                prop::collection::vec(0.0f64..1.0, n),
                prop::collection::vec(any::<bool>(), n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn probabilities_normalize((theta, b, mask) in arb_case()) {
            let v = UtilityVector::from_log(&theta, 20.0).unwrap();
            let s = Assortment::new((1..=theta.len()).filter(|i| mask[i - 1]).collect()).unwrap();
            let mut total = choice_prob(&v, &s, 0).unwrap();
            for &i in s.items() {
                let p = choice_prob(&v, &s, i).unwrap();
                prop_assert!((0.0..=1.0).contains(&p));
                total += p;
            }
            prop_assert!((total - 1.0).abs() < 1e-12);
            let rev = expected_revenue(&v, &s, &b).unwrap();
            let oracle: f64 = s.items().iter().map(|&i| b[i - 1] * choice_prob(&v, &s, i).unwrap()).sum();
            prop_assert!((rev - oracle).abs() < 1e-14);
            prop_assert!((0.0..=1.0).contains(&rev));
        }
    }
}
