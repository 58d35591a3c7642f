//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

mod common;

use mnl_assortment::estimation::{likelihood_gradient, mle_single_item, SalesHistory, SingleItemCounts};
use mnl_assortment::lp::{price_column, solve_lp, LpData, SolverOptions};
use mnl_assortment::mnl::{choice_prob, sample_purchase};
use mnl_assortment::policies::{
    check_assumption_1, OnlineTau, Policy, PolicyConfig, StaticOracle, TauRule, UcbConfig, UcbPolicy,
    UniformRandom,
};
use mnl_assortment::simulator::{
    run_episode, ClassTuple, ExperimentConfig, ExperimentReport, GeneratorConfig, OutputConfig, RunLog, SCHEMA_VERSION,
};
use mnl_assortment::{Assortment, AssortmentFamily, Instance, UtilityVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Ledger {
    lines: Vec<(usize, bool, String)>,
    /// Runs audited for criterion 9, and how many broke the capacity ledger.
    audited_runs: usize,
    capacity_violations: usize,
}

impl Ledger {
    fn record(&mut self, id: usize, pass: bool, detail: String) {
        self.lines.push((id, pass, detail));
    }

    fn print(&mut self) {
        self.lines.sort_by_key(|l| l.0);
        for (id, pass, detail) in &self.lines {
            println!("criterion {id:>2}: {} {detail}", if *pass { "PASS" } else { "FAIL" });
        }
    }

    fn audit(&mut self, instance: &Instance, log: &Result<RunLog, mnl_assortment::simulator::SimError>) {
        self.audited_runs += 1;
        match log {
            Ok(log) => {
                if log.audit(instance).is_err() {
                    self.capacity_violations += 1;
                }
            }
            Err(e) if e.is_contract_violation() => self.capacity_violations += 1,
            Err(e) => panic!("episode failed: {e}"),
        }
    }

    fn absorb(&mut self, report: &ExperimentReport) {
        self.audited_runs += report.runs.len() + report.capacity_violations;
        self.capacity_violations += report.capacity_violations;
    }
}

fn experiment(classes: Vec<ClassTuple>, horizons: Vec<u64>, seed: u64) -> ExperimentReport {
    let cfg = ExperimentConfig {
        schema_version: SCHEMA_VERSION,
        master_seed: seed,
        horizons,
        models_per_cell: 3,
        runs_per_model: 100,
        threads: 0,
        policy: PolicyConfig::online_tau(TauRule::TwoThirds, 0.1),
        classes,
        generator: GeneratorConfig::default(),
        output: OutputConfig::default(),
    };
    let report = mnl_assortment::simulator::run_experiment(&cfg).expect("experiment runs");
    assert!(report.failures.is_empty(), "{:?}", report.failures);
    report
}

/// Fixed four-product, two-resource instance used by the policy checks.
fn policy_instance(horizon: u64) -> Instance {
    Instance::new(
        vec![0.9, 0.7, 0.5, 0.3],
        vec![vec![1, 1, 0, 0], vec![0, 1, 1, 1]],
        vec![0.3, 0.4],
        horizon,
        AssortmentFamily::cardinality(4, 2),
        UtilityVector::new(vec![0.6, 1.4, 1.9, 0.8], 2.0).unwrap(),
    )
    .unwrap()
}

fn oracle_benchmark(inst: &Instance) -> f64 {
    let a = inst.consumption_matrix();
    inst.horizon as f64 * common::enumeration_lp(inst.v_star.values(), &inst.revenues, &a, &inst.capacity_rates, &inst.family)
}

fn revenues<F>(inst: &Instance, runs: u64, seed: u64, make: F) -> (Vec<f64>, Vec<Result<RunLog, mnl_assortment::simulator::SimError>>)
where
    F: Fn() -> Box<dyn Policy> + Sync,
{
    let logs: Vec<_> = (0..runs)
        .into_par_iter()
        .map(|r| {
            let mut p = make();
            run_episode(inst, p.as_mut(), seed.wrapping_mul(1_000_003).wrapping_add(r))
        })
        .collect();
    let revs = logs.iter().map(|l| l.as_ref().map_or(f64::NAN, |l| l.total_revenue)).collect();
    (revs, logs)
}

fn random_v(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    let lr = bound.ln();
    (0..n).map(|_| rng.gen_range(-lr..=lr).exp().clamp(1.0 / bound, bound)).collect()
}

fn main() {
    let mut ledger = Ledger { lines: Vec::new(), audited_runs: 0, capacity_violations: 0 };

    // 1–4: horizon sweep on the first class, short horizon on the large one.
    let gamma1 = ClassTuple::cardinality("gamma1", 6, 10, 5, 3.0);
    let horizons = vec![250, 500, 1000, 2000, 5000];
    let sweep = experiment(vec![gamma1], horizons, 2024);
    ledger.absorb(&sweep);
    let slope = sweep.slope("gamma1").unwrap_or(f64::NAN);
    ledger.record(1, (0.50..=0.85).contains(&slope), format!("log-log regret slope {slope:.4} (target [0.50, 0.85])"));

    let r250 = sweep.cell("gamma1", 250).unwrap().mean_ratio;
    let r5000 = sweep.cell("gamma1", 5000).unwrap().mean_ratio;
    ledger.record(
        2,
        r5000 - r250 >= 0.05 && r5000 >= 0.80,
        format!("ratio {r250:.4} at T=250, {r5000:.4} at T=5000 (need gain >= 0.05 and final >= 0.80)"),
    );

    let gamma3 = ClassTuple::cardinality("gamma3", 15, 25, 8, 7.0);
    let short = experiment(vec![gamma3], vec![250], 2025);
    ledger.absorb(&short);
    let g3 = short.cell("gamma3", 250).unwrap();
    ledger.record(3, g3.mean_ratio >= 0.5, format!("mean ratio {:.4} over {} runs at T=250 (need >= 0.5)", g3.mean_ratio, g3.runs));

    let cells: Vec<_> = sweep.cells.iter().chain(&short.cells).collect();
    let cg_max = cells.iter().map(|c| c.cg_iter_max).max().unwrap();
    let solves: usize = cells.iter().map(|c| c.lp_solves).sum();
    let non_optimal: usize = cells.iter().map(|c| c.lp_non_optimal).sum();
    ledger.record(
        4,
        cg_max <= 100 && non_optimal == 0 && solves > 0,
        format!("{solves} LP solves, max CG iterations {cg_max}, {non_optimal} not optimal"),
    );

    // 5: column generation against the tableau oracle over all columns.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_gap, mut support_bad) = (0.0f64, 0usize);
    for _ in 0..50 {
        let n = rng.gen_range(2..=8);
        let k = rng.gen_range(0..=3);
        let family = AssortmentFamily::cardinality(n, rng.gen_range(1..=3.min(n)));
        let bound = rng.gen_range(1.0..5.0);
        let v = random_v(&mut rng, n, bound);
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let a: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| f64::from(u8::from(rng.gen_bool(0.5)))).collect()).collect();
        let c: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..0.75)).collect();
        let oracle = common::enumeration_lp(&v, &r, &a, &c, &family);
        let data = LpData { revenues: &r, consumption: &a, capacity: &c, family: &family };
        let res = solve_lp(&data, &UtilityVector::new(v, bound).unwrap(), &SolverOptions::default()).unwrap();
        worst_gap = worst_gap.max((res.objective - oracle).abs());
        support_bad += usize::from(res.distribution.support().len() > k + 1);
    }
    ledger.record(
        5,
        worst_gap <= 1e-7 && support_bad == 0,
        format!("50 instances, max objective gap {worst_gap:.2e}, {support_bad} supports above K+1"),
    );

    // 6: pricing against exhaustive search, both family kinds.
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let family = if case % 2 == 0 {
            let n = rng.gen_range(1..=10);
            AssortmentFamily::cardinality(n, rng.gen_range(1..=n))
        } else {
            let blocks = rng.gen_range(1..=5);
            let size = rng.gen_range(1..=10 / blocks);
            AssortmentFamily::partition_matroid(blocks * size, blocks, rng.gen_range(1..=size)).unwrap()
        };
        let n = family.n();
        let bound = rng.gen_range(1.0..5.0);
        let v = random_v(&mut rng, n, bound);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let fast = price_column(&UtilityVector::new(v.clone(), bound).unwrap(), &w, &family).unwrap();
        worst = worst.max((fast.value - common::brute_force_pricing(&v, &w, &family)).abs());
    }
    ledger.record(6, worst <= 1e-9, format!("200 cases, max pricing gap {worst:.2e}"));

    // 7: closed-form single-item MLE and the likelihood gradient.
    let mut mle_worst = 0.0f64;
    for &bound in &[1.0, 1.5, 3.0, 7.0] {
        for m in 1..=50u64 {
            for n in 0..=m {
                let got: f64 = mle_single_item(&SingleItemCounts::new(1, m, n).unwrap(), bound);
                mle_worst = mle_worst.max((got - common::single_minimizer(n, m, bound)).abs());
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut fd_worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=6);
        let theta: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let v = UtilityVector::from_log(&theta, 10.0).unwrap();
        let mut history = SalesHistory::new(n);
        for _ in 0..rng.gen_range(1..40) {
            let s = Assortment::new((1..=n).filter(|_| rng.gen_bool(0.5)).collect()).unwrap();
            let i = sample_purchase(&v, &s, &mut rng);
            history.push(s, i).unwrap();
        }
        let grad = likelihood_gradient(&theta, &history);
        for j in 0..n {
            let (mut up, mut down) = (theta.clone(), theta.clone());
            up[j] += 1e-6;
            down[j] -= 1e-6;
            let fd = (common::nll_records(&up, history.records()) - common::nll_records(&down, history.records())) / 2e-6;
            fd_worst = fd_worst.max((fd - grad[j]).abs());
        }
    }
    ledger.record(
        7,
        mle_worst <= 1e-8 && fd_worst <= 1e-5,
        format!("closed form max deviation {mle_worst:.2e} (m <= 50), gradient vs differences {fd_worst:.2e}"),
    );

    // 8: Lipschitz bound of the choice probabilities in log utilities.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    for _ in 0..10_000 {
        let n = rng.gen_range(1..=10);
        let bound = rng.gen_range(1.0..10.0);
        let v = UtilityVector::new(random_v(&mut rng, n, bound), bound).unwrap();
        let w = UtilityVector::new(random_v(&mut rng, n, bound), bound).unwrap();
        let b: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let s = Assortment::new((1..=n).filter(|_| rng.gen_bool(0.5)).collect()).unwrap();
        let lhs: f64 = s
            .items()
            .iter()
            .map(|&i| b[i - 1] * (choice_prob(&v, &s, i).unwrap() - choice_prob(&w, &s, i).unwrap()))
            .sum();
        let rhs: f64 = s.items().iter().map(|&i| (v.get(i) / w.get(i)).ln().abs()).sum();
        min_slack = min_slack.min(rhs - lhs);
        violations += usize::from(lhs > rhs + 1e-12);
    }
    ledger.record(8, violations == 0, format!("10000 draws, {violations} violations, min slack {min_slack:.2e}"));

    // 10: no policy beats the fluid benchmark on average.
    let inst = policy_instance(1000);
    let bench = oracle_benchmark(&inst);
    let ucb_cfg = UcbConfig { psi_scale: 1e-5, ..UcbConfig::default() };
    let omega = UcbPolicy::new(&inst.public(), ucb_cfg).map(|p| p.constants().unwrap().omega);
    let mut dominance = Vec::new();
    let mut all_dominated = omega.is_ok();
    let builders: Vec<(&str, Box<dyn Fn() -> Box<dyn Policy> + Sync>)> = vec![
        ("online_tau", Box::new(|| PolicyConfig::online_tau(TauRule::TwoThirds, 0.1).build(&inst).unwrap())),
        ("ucb", Box::new(|| Box::new(UcbPolicy::new(&inst.public(), ucb_cfg).unwrap()) as Box<dyn Policy>)),
        ("static_oracle", Box::new(|| Box::new(StaticOracle::new(&inst).unwrap()) as Box<dyn Policy>)),
    ];
    for (idx, (name, make)) in builders.iter().enumerate() {
        let (revs, logs) = revenues(&inst, 200, 100 + idx as u64, make);
        for log in &logs {
            ledger.audit(&inst, log);
        }
        let (mean, std) = common::mean_std(&revs);
        let ok = mean <= bench + 3.0 * std / 200f64.sqrt();
        all_dominated &= ok;
        dominance.push(format!("{name} {mean:.2}"));
    }
    ledger.record(
        10,
        all_dominated,
        format!("benchmark {bench:.2}; mean revenues {} (omega {:.3})", dominance.join(", "), omega.unwrap_or(f64::NAN)),
    );

    // 11: coverage of the learning-phase confidence event.
    let (runs, delta) = (200usize, 0.1);
    let cov_inst = Instance::new(
        vec![0.6, 0.4],
        vec![vec![1, 1]],
        vec![0.5],
        40_000,
        AssortmentFamily::cardinality(2, 1),
        UtilityVector::new(vec![0.8, 1.25], 1.5).unwrap(),
    )
    .unwrap();
    let tau = 8_000u64;
    let eps = common::eps_tau(tau, 2, 1.5, delta);
    let assumption = check_assumption_1(&cov_inst.public(), tau, delta).unwrap();
    let independent_ok = tau as f64 * (4.0f64 * 2.0 * 1.0 / delta).ln().sqrt() <= 40_000.0 * 0.5 && eps <= 0.25;
    let covered = (0..runs)
        .into_par_iter()
        .filter(|&run| {
            let mut rng = ChaCha8Rng::seed_from_u64(11_000 + run as u64);
            let mut policy = OnlineTau::new(&cov_inst.public(), tau).unwrap();
            let caps = cov_inst.initial_capacities();
            for t in 1..=tau {
                let s = policy.next_assortment(t, &caps, &mut rng);
                let i = sample_purchase(&cov_inst.v_star, &s, &mut rng);
                policy.observe(t, i);
            }
            let v_hat = policy.estimate();
            (1..=2).all(|i| (v_hat.get(i) / cov_inst.v_star.get(i)).ln().abs() <= eps)
        })
        .count();
    let threshold = runs as f64 * (1.0 - delta) - 3.0 * (runs as f64 * delta * (1.0 - delta)).sqrt();
    ledger.record(
        11,
        covered as f64 >= threshold && independent_ok && assumption.holds(),
        format!("{covered}/{runs} phases covered (threshold {threshold:.2}), tau {tau}, eps {eps:.4}"),
    );

    // 12: optimistic policy with shrunk constants against uniform offers.
    let inst = policy_instance(2000);
    let bench = oracle_benchmark(&inst);
    let cfg = UcbConfig { psi_scale: 1e-5, ..UcbConfig::default() };
    let omega = UcbPolicy::new(&inst.public(), cfg).map(|p| p.constants().unwrap().omega);
    let (ucb_revs, ucb_logs) = revenues(&inst, 20, 1200, || Box::new(UcbPolicy::new(&inst.public(), cfg).unwrap()));
    let (uni_revs, uni_logs) =
        revenues(&inst, 20, 1201, || Box::new(UniformRandom::new(&inst.family, 1_000_000).unwrap()));
    for log in ucb_logs.iter().chain(&uni_logs) {
        ledger.audit(&inst, log);
    }
    let ucb_regret = bench - common::mean_std(&ucb_revs).0;
    let uni_regret = bench - common::mean_std(&uni_revs).0;
    ledger.record(
        12,
        omega.as_ref().is_ok_and(|&w| w < 1.0) && ucb_regret < uni_regret,
        format!(
            "T=2000, omega {:.3}: mean regret {ucb_regret:.2} (optimistic) vs {uni_regret:.2} (uniform)",
            omega.unwrap_or(f64::NAN)
        ),
    );

    // 9: every run above, audited against the capacity ledger.
    ledger.record(
        9,
        ledger.capacity_violations == 0,
        format!("{} runs audited, {} capacity violations", ledger.audited_runs, ledger.capacity_violations),
    );

    ledger.print();
    let failed: Vec<usize> = ledger.lines.iter().filter(|l| !l.1).map(|l| l.0).collect();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
    println!("acceptance: {} criteria passed", ledger.lines.len());
}
