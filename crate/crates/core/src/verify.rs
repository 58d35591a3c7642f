//! Invariant and oracle-equivalence suites runnable on demand.
//!
//! Each suite draws its cases from a seeded stream and reports the number
//! of cases, the number of violations and the smallest slack observed
//! (negative slack means a violation).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::estimation::{
    confidence_radius_learning, likelihood_gradient, mle_single_item, neg_log_likelihood_theta, SalesHistory,
    SingleItemCounts,
};
use crate::lp::{brute_force_pricing, price_column, simplex_solve, solve_lp, Column, LpData, SolverOptions};
use crate::mnl::{
    choice_prob, enumerate_family, expected_consumption, expected_revenue, sample_purchase, weighted_choice_sum,
    Assortment, AssortmentFamily, Instance,
};
use crate::policies::{check_assumption_1, OnlineTau, Policy, PolicyConfig, PolicyKind, TauRule};
use crate::simulator::{generate_instance, run_episode, ClassTuple, GeneratorConfig};
use crate::UtilityVector;

pub const SUITES: [&str; 7] = ["normalization", "lipschitz", "mle", "lp-oracle", "pricing-oracle", "feasibility", "coverage"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Largest product count drawn by the random suites.
    pub cap_n: usize,
    /// Largest family enumerated by the oracle suites.
    pub cap_family_size: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { seed: 0, cap_n: 8, cap_family_size: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub violations: usize,
    pub worst_slack: f64,
    pub notes: Vec<String>,
}

impl SuiteReport {
    fn new(suite: &str) -> Self {
        Self { suite: suite.into(), cases: 0, violations: 0, worst_slack: f64::INFINITY, notes: Vec::new() }
    }

    /// Records one case with the given slack against a tolerance.
    fn record(&mut self, slack: f64) {
        self.cases += 1;
        if slack < 0.0 || slack.is_nan() {
            self.violations += 1;
        }
        self.worst_slack = self.worst_slack.min(slack);
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Option<SuiteReport> {
    Some(match name {
        "normalization" => normalization(opts),
        "lipschitz" => lipschitz(opts),
        "mle" => mle(opts),
        "lp-oracle" => lp_oracle(opts),
        "pricing-oracle" => pricing_oracle(opts),
        "feasibility" => feasibility(opts),
        "coverage" => coverage(opts),
        _ => return None,
    })
}

fn random_utilities(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> UtilityVector {
    let lr = bound.ln();
    let values = (0..n).map(|_| rng.gen_range(-lr..=lr).exp().clamp(1.0 / bound, bound)).collect();
    UtilityVector::new(values, bound).expect("values inside the box")
}

fn random_subset(rng: &mut ChaCha8Rng, n: usize) -> Assortment {
    Assortment::new((1..=n).filter(|_| rng.gen_bool(0.5)).collect()).expect("valid indices")
}

fn normalization(opts: &VerifyOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SuiteReport::new("normalization");
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=opts.cap_n.max(1));
        let bound = rng.gen_range(1.0..10.0);
        let v = random_utilities(&mut rng, n, bound);
        let s = random_subset(&mut rng, n);
        let mut total = choice_prob(&v, &s, 0).unwrap();
        for &i in s.items() {
            total += choice_prob(&v, &s, i).unwrap();
        }
        rep.record(1e-12 - (total - 1.0).abs());
    }
    rep
}

fn lipschitz(opts: &VerifyOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SuiteReport::new("lipschitz");
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=opts.cap_n.max(1));
        let bound = rng.gen_range(1.0..10.0);
        let v = random_utilities(&mut rng, n, bound);
        let w = random_utilities(&mut rng, n, bound);
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let s = random_subset(&mut rng, n);
        let lhs = weighted_choice_sum(&v, &s, &b) - weighted_choice_sum(&w, &s, &b);
        let rhs: f64 = s.items().iter().map(|&i| (v.get(i) / w.get(i)).ln().abs()).sum();
        rep.record(rhs - lhs + 1e-12);
    }
    rep
}

/// Minimizes the single-item likelihood by bisection on the sign of its
/// derivative `(m − n)/(1+v) − n/(v(1+v))`, which is increasing in `v`.
fn single_item_minimizer(n: u64, m: u64, bound: f64) -> f64 {
    let deriv = |v: f64| ((m - n) as f64 * v - n as f64) / (v * (1.0 + v));
    let (mut lo, mut hi) = (1.0 / bound, bound);
    if deriv(lo) >= 0.0 {
        return lo;
    }
    if deriv(hi) <= 0.0 {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

fn mle(opts: &VerifyOptions) -> SuiteReport {
    let mut rep = SuiteReport::new("mle");
    for &bound in &[1.5, 3.0, 7.0] {
        for m in 1..=50u64 {
            for n in 0..=m {
                let counts = SingleItemCounts { product: 1, offers: m, purchases: n };
                let got: f64 = mle_single_item(&counts, bound);
                rep.record(1e-8 - (got - single_item_minimizer(n, m, bound)).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let h = 1e-6;
    for _ in 0..100 {
        let n = rng.gen_range(1..=opts.cap_n.clamp(1, 6));
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let v = UtilityVector::from_log(&theta, 10.0).expect("theta inside the box");
        let mut history = SalesHistory::new(n);
        for _ in 0..rng.gen_range(1..30) {
            let s = random_subset(&mut rng, n);
            let i = sample_purchase(&v, &s, &mut rng);
            history.push(s, i).expect("consistent record");
        }
        let grad = likelihood_gradient(&theta, &history);
        let mut worst: f64 = 0.0;
        for j in 0..n {
            let mut up = theta.clone();
            let mut down = theta.clone();
            up[j] += h;
            down[j] -= h;
            let fd = (neg_log_likelihood_theta(&up, &history) - neg_log_likelihood_theta(&down, &history)) / (2.0 * h);
            worst = worst.max((fd - grad[j]).abs());
        }
        rep.record(1e-5 - worst);
    }
    rep.notes.push("closed form vs derivative bisection for m <= 50; gradient vs central differences".into());
    rep
}

fn small_instance(rng: &mut ChaCha8Rng, cap_n: usize) -> Instance {
    let n = rng.gen_range(2..=cap_n.max(2));
    let k = rng.gen_range(0..=3);
    let b = rng.gen_range(1..=3.min(n));
    let class = ClassTuple::cardinality("oracle", b, n, k, rng.gen_range(1.0..5.0));
    generate_instance(&class, 1000, rng.gen(), &GeneratorConfig::default()).expect("valid class")
}

/// `Opt(LP(v))` by running the simplex over every member of the family.
pub fn enumeration_lp_value(instance: &Instance, cap: u64) -> Option<f64> {
    let a = instance.consumption_matrix();
    let columns: Vec<Column<f64>> = enumerate_family(&instance.family, cap)
        .ok()?
        .map(|s| Column {
            objective: expected_revenue(&instance.v_star, &s, &instance.revenues).unwrap(),
            consumption: (0..instance.k).map(|k| expected_consumption(&instance.v_star, &s, &a, k).unwrap()).collect(),
        })
        .collect();
    simplex_solve(&columns, &instance.capacity_rates).ok().map(|s| s.objective)
}

fn lp_oracle(opts: &VerifyOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SuiteReport::new("lp-oracle");
    for _ in 0..50 {
        let inst = small_instance(&mut rng, opts.cap_n);
        let a = inst.consumption_matrix();
        let data = LpData { revenues: &inst.revenues, consumption: &a, capacity: &inst.capacity_rates, family: &inst.family };
        let Some(oracle) = enumeration_lp_value(&inst, opts.cap_family_size) else {
            rep.notes.push(format!("skipped N={} (family above cap)", inst.n));
            continue;
        };
        match solve_lp(&data, &inst.v_star, &SolverOptions::default()) {
            Ok(res) => {
                let support_ok = res.distribution.support().len() <= inst.k + 1;
                let slack = 1e-7 - (res.objective - oracle).abs();
                rep.record(if support_ok { slack } else { slack.min(-1.0) });
            }
            Err(e) => {
                rep.notes.push(format!("solver error: {e}"));
                rep.record(f64::NEG_INFINITY);
            }
        }
    }
    rep
}

fn pricing_oracle(opts: &VerifyOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SuiteReport::new("pricing-oracle");
    let cap_n = opts.cap_n.clamp(2, 10);
    for case in 0..200 {
        let family = if case % 2 == 0 {
            let n = rng.gen_range(1..=cap_n);
            AssortmentFamily::cardinality(n, rng.gen_range(1..=n))
        } else {
            let blocks = rng.gen_range(1..=cap_n / 2);
            let size = rng.gen_range(1..=cap_n / blocks);
            AssortmentFamily::partition_matroid(blocks * size, blocks, rng.gen_range(1..=size)).expect("divisible")
        };
        let n = family.n();
        let bound = rng.gen_range(1.0..5.0);
        let v = random_utilities(&mut rng, n, bound);
        let reduced: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = price_column(&v, &reduced, &family).expect("valid pricing input");
        let Ok(brute) = brute_force_pricing(&v, &reduced, &family, opts.cap_family_size) else {
            rep.notes.push(format!("skipped N={n} (family above cap)"));
            continue;
        };
        rep.record(1e-9 - (fast.value - brute.value).abs());
    }
    rep
}

fn feasibility(opts: &VerifyOptions) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rep = SuiteReport::new("feasibility");
    let policies = [
        PolicyConfig::online_tau(TauRule::TwoThirds, 0.1),
        PolicyConfig { kind: PolicyKind::StaticOracle, ..PolicyConfig::online_tau(TauRule::TwoThirds, 0.1) },
    ];
    for _ in 0..20 {
        let n = rng.gen_range(2..=opts.cap_n.clamp(2, 6));
        let class = ClassTuple::cardinality("feasibility", rng.gen_range(1..=n), n, rng.gen_range(1..=3), 3.0);
        let gen = GeneratorConfig { capacity_range: (0.05, 0.3), ..GeneratorConfig::default() };
        let inst = generate_instance(&class, 400, rng.gen(), &gen).expect("valid class");
        for cfg in &policies {
            let mut policy = cfg.build(&inst).expect("policy builds");
            match run_episode(&inst, policy.as_mut(), rng.gen()) {
                Ok(log) => {
                    let min_cap = log.final_capacities.iter().copied().min().unwrap_or(0) as f64;
                    rep.record(if log.audit(&inst).is_ok() { min_cap } else { -1.0 });
                }
                Err(e) => {
                    rep.notes.push(e.to_string());
                    rep.record(-1.0);
                }
            }
        }
    }
    rep.notes.push("slack is the smallest final capacity of each audited run".into());
    rep
}

fn coverage(opts: &VerifyOptions) -> SuiteReport {
    let (runs, delta) = (200usize, 0.1);
    let threshold = runs as f64 * (1.0 - delta) - 3.0 * (runs as f64 * delta * (1.0 - delta)).sqrt();
    let mut rep = SuiteReport::new("coverage");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (inst, tau) = coverage_instance();
    let public = inst.public();
    let report = check_assumption_1(&public, tau, delta).expect("valid tau");
    rep.notes.push(format!("tau = {tau}, assumption holds: {}", report.holds() && report.accuracy_holds_with_one()));
    let eps = confidence_radius_learning(tau, inst.n, inst.bound(), delta).expect("tau >= N");
    let mut covered = 0usize;
    for _ in 0..runs {
        let mut policy = OnlineTau::new(&public, tau).expect("valid tau");
        let caps = inst.initial_capacities();
        for t in 1..=tau {
            let s = policy.next_assortment(t, &caps, &mut rng);
            let i = sample_purchase(&inst.v_star, &s, &mut rng);
            policy.observe(t, i);
        }
        let v_hat = policy.estimate();
        let worst = (1..=inst.n).map(|i| (v_hat.get(i) / inst.v_star.get(i)).ln().abs()).fold(0.0, f64::max);
        covered += usize::from(worst <= eps);
    }
    rep.cases = runs;
    rep.worst_slack = covered as f64 - threshold;
    rep.violations = usize::from(rep.worst_slack < 0.0);
    rep.notes.push(format!("{covered}/{runs} covered, threshold {threshold:.2}"));
    rep
}

/// Two products, one resource, and a horizon long enough that the
/// learning-length conditions hold for both readings of the constant.
pub fn coverage_instance() -> (Instance, u64) {
    let family = AssortmentFamily::cardinality(2, 1);
    let v = UtilityVector::new(vec![0.8, 1.25], 1.5).expect("inside box");
    let inst = Instance::new(vec![0.6, 0.4], vec![vec![1, 1]], vec![0.5], 40_000, family, v).expect("valid instance");
    (inst, 8_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_suite_is_rejected() {
        assert!(run_suite("nope", &VerifyOptions::default()).is_none());
    }

    #[test]
    fn coverage_instance_satisfies_assumption() {
        let (inst, tau) = coverage_instance();
        let rep = check_assumption_1(&inst.public(), tau, 0.1).unwrap();
        assert!(rep.holds() && rep.accuracy_holds_with_one());
    }

    #[test]
    fn derivative_bisection_hits_interior_minimizer() {
        assert!((single_item_minimizer(3, 10, 5.0) - 3.0 / 7.0).abs() < 1e-12);
        assert_eq!(single_item_minimizer(0, 10, 5.0), 0.2);
        assert_eq!(single_item_minimizer(10, 10, 5.0), 5.0);
    }

    #[test]
    fn fast_suites_pass() {
        let opts = VerifyOptions { seed: 3, ..VerifyOptions::default() };
        for name in ["normalization", "lipschitz", "pricing-oracle"] {
            let rep = run_suite(name, &opts).unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }
}
