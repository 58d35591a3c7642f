//! Sales-horizon environment, random instance generation and the replicated
//! experiment harness.

use std::collections::BTreeMap;
use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lp::{solve_lp, LpData, LpError, LpStatus, SolverOptions};
use crate::mnl::{family_contains, sample_purchase, Assortment, AssortmentFamily, FamilyKind, Instance, MnlError};
use crate::policies::{Policy, PolicyConfig, PolicyError};
use crate::{AssortmentDistribution, UtilityVector};

/// Weights at or below this are ignored when comparing supports.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("period {period}: policy offered {offered}, which is not in the family")]
    NotInFamily { period: u64, offered: Assortment },
    #[error("period {period}: purchase of product {product} would overdraw resource {resource}")]
    CapacityViolation { period: u64, product: usize, resource: usize },
    #[error("configuration error: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Mnl(#[from] MnlError),
    #[error("io error: {0}")]
    Io(String),
}

impl SimError {
    pub fn is_contract_violation(&self) -> bool {
        matches!(self, SimError::NotInFamily { .. } | SimError::CapacityViolation { .. })
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Counter-based substream seed: a pure function of the master seed and the
/// path, so adding cells or runs never shifts existing streams.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |h, &x| splitmix64(h ^ splitmix64(x.wrapping_add(0xA076_1D64_78BD_642F))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodRecord {
    pub t: u64,
    pub offered: Assortment,
    pub purchased: usize,
    pub revenue: f64,
    pub capacities: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub seed: u64,
    pub records: Vec<PeriodRecord>,
    /// Period at whose end some capacity first reached zero, or `T`.
    pub t_stop: u64,
    pub total_revenue: f64,
    pub final_capacities: Vec<u64>,
}

impl RunLog {
    /// Audits the capacity ledger against the instance from scratch.
    pub fn audit(&self, instance: &Instance) -> Result<(), String> {
        let mut caps: Vec<i64> = instance.initial_capacities().iter().map(|&c| c as i64).collect();
        for rec in &self.records {
            if rec.purchased != 0 && !rec.offered.contains(rec.purchased) {
                return Err(format!("period {}: purchase {} not in {}", rec.t, rec.purchased, rec.offered));
            }
            if rec.purchased != 0 {
                for (k, cap) in caps.iter_mut().enumerate() {
                    *cap -= i64::from(instance.consumption[k][rec.purchased - 1]);
                }
            }
            if let Some(k) = caps.iter().position(|&c| c < 0) {
                return Err(format!("period {}: resource {} negative", rec.t, k + 1));
            }
            if caps.iter().zip(&rec.capacities).any(|(&a, &b)| a != b as i64) {
                return Err(format!("period {}: capacity ledger mismatch", rec.t));
            }
        }
        Ok(())
    }
}

/// Runs one selling horizon. Customer choices and policy randomness come
/// from separate substreams of `seed`.
pub fn run_episode(instance: &Instance, policy: &mut dyn Policy, seed: u64) -> Result<RunLog, SimError> {
    let mut customers = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
    let mut internal = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
    let mut caps = instance.initial_capacities();
    let mut records = Vec::with_capacity(instance.horizon as usize);
    let mut total_revenue = 0.0;
    let mut t_stop = None;
    for t in 1..=instance.horizon {
        let offered = policy.next_assortment(t, &caps, &mut internal);
        if !family_contains(&instance.family, &offered) {
            return Err(SimError::NotInFamily { period: t, offered });
        }
        let purchased = sample_purchase(&instance.v_star, &offered, &mut customers);
        let mut revenue = 0.0;
        if purchased != 0 {
            for (k, cap) in caps.iter_mut().enumerate() {
                if instance.consumption[k][purchased - 1] == 1 {
                    *cap = cap.checked_sub(1).ok_or(SimError::CapacityViolation {
                        period: t,
                        product: purchased,
                        resource: k + 1,
                    })?;
                }
            }
            revenue = instance.revenues[purchased - 1];
            total_revenue += revenue;
        }
        policy.observe(t, purchased);
        if t_stop.is_none() && caps.iter().any(|&c| c == 0) {
            t_stop = Some(t);
        }
        records.push(PeriodRecord { t, offered, purchased, revenue, capacities: caps.clone() });
    }
    Ok(RunLog {
        seed,
        records,
        t_stop: t_stop.unwrap_or(instance.horizon),
        total_revenue,
        final_capacities: caps,
    })
}

/// Class tuple `(family, N, K, R)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassTuple {
    pub name: String,
    pub family: FamilyKind,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "R")]
    pub bound: f64,
}

impl ClassTuple {
    pub fn cardinality(name: &str, max_size: usize, n: usize, k: usize, bound: f64) -> Self {
        Self { name: name.into(), family: FamilyKind::Cardinality { max_size }, n, k, bound }
    }

    pub fn partition_matroid(name: &str, blocks: usize, per_block: usize, n: usize, k: usize, bound: f64) -> Self {
        Self { name: name.into(), family: FamilyKind::PartitionMatroid { blocks, per_block }, n, k, bound }
    }

    pub fn build_family(&self) -> Result<AssortmentFamily, MnlError> {
        AssortmentFamily::new(self.family.clone(), self.n)
    }

    fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.n == 0 {
            out.push(format!("{prefix}.N: must be at least 1"));
        }
        if !(self.bound >= 1.0 && self.bound.is_finite()) {
            out.push(format!("{prefix}.R: must be a finite number >= 1"));
        }
        if self.n > 0 {
            if let Err(e) = self.build_family() {
                out.push(format!("{prefix}.family: {e}"));
            }
        }
        out
    }
}

/// Distributions for random instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub revenue_range: (f64, f64),
    pub capacity_range: (f64, f64),
    pub consumption_prob: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self { revenue_range: (0.0, 1.0), capacity_range: (0.25, 0.75), consumption_prob: 0.5 }
    }
}

impl GeneratorConfig {
    fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        let (lo, hi) = self.revenue_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            out.push("generator.revenue_range: need 0 <= lo <= hi <= 1".into());
        }
        let (lo, hi) = self.capacity_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            out.push("generator.capacity_range: need 0 < lo <= hi <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.consumption_prob) {
            out.push("generator.consumption_prob: must lie in [0, 1]".into());
        }
        out
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws a random instance. Capacity rates are snapped so that `T c(k)` is
/// a positive integer.
pub fn generate_instance(
    class: &ClassTuple,
    horizon: u64,
    seed: u64,
    gen: &GeneratorConfig,
) -> Result<Instance, SimError> {
    let problems: Vec<String> = class.problems("class").into_iter().chain(gen.problems()).collect();
    if !problems.is_empty() {
        return Err(SimError::Config(problems));
    }
    if horizon == 0 {
        return Err(SimError::Config(vec!["T: must be at least 1".into()]));
    }
    let family = class.build_family()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, k) = (class.n, class.k);
    let revenues = (0..n).map(|_| uniform(&mut rng, gen.revenue_range)).collect();
    let consumption = (0..k).map(|_| (0..n).map(|_| u8::from(rng.gen_bool(gen.consumption_prob))).collect()).collect();
    let tf = horizon as f64;
    let capacity_rates = (0..k)
        .map(|_| {
            let c = uniform(&mut rng, gen.capacity_range);
            ((c * tf).round().clamp(1.0, tf)) / tf
        })
        .collect();
    let log_r = class.bound.ln();
    let v = (0..n)
        .map(|_| uniform(&mut rng, (-log_r, log_r)).exp().clamp(1.0 / class.bound, class.bound))
        .collect();
    let v_star = UtilityVector::new(v, class.bound)?;
    Ok(Instance::new(revenues, consumption, capacity_rates, horizon, family, v_star)?)
}

/// Clairvoyant LP solution for an instance.
#[derive(Debug, Clone)]
pub struct Benchmark {
    /// `T · Opt(LP(v*))`
    pub value: f64,
    pub per_period: f64,
    pub distribution: AssortmentDistribution,
    pub dual_degenerate: bool,
}

pub fn compute_benchmark(instance: &Instance) -> Result<Benchmark, LpError> {
    let consumption = instance.consumption_matrix();
    let data = LpData {
        revenues: &instance.revenues,
        consumption: &consumption,
        capacity: &instance.capacity_rates,
        family: &instance.family,
    };
    let res = solve_lp(&data, &instance.v_star, &SolverOptions::default())?;
    Ok(Benchmark {
        value: instance.horizon as f64 * res.objective,
        per_period: res.objective,
        distribution: res.distribution,
        dual_degenerate: res.dual_degenerate,
    })
}

/// Set equality of supports after dropping weights at or below 1e-9.
pub fn support_match(y_hat: &AssortmentDistribution, y_star: &AssortmentDistribution) -> bool {
    y_hat.support_set(SUPPORT_THRESHOLD) == y_star.support_set(SUPPORT_THRESHOLD)
}

/// Least-squares slope of `ln y` against `ln x` over positive pairs.
pub fn log_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "results".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

/// Declarative experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub master_seed: u64,
    pub horizons: Vec<u64>,
    pub models_per_cell: usize,
    pub runs_per_model: usize,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub threads: usize,
    pub policy: PolicyConfig,
    pub classes: Vec<ClassTuple>,
    #[serde(default)]
    pub generator: GeneratorConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(vec![e.to_string().trim().to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Collects every offending field rather than stopping at the first.
    pub fn validate(&self) -> Result<(), SimError> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.horizons.is_empty() {
            out.push("horizons: must not be empty".into());
        }
        for (i, &t) in self.horizons.iter().enumerate() {
            if t == 0 {
                out.push(format!("horizons[{i}]: must be at least 1"));
            }
        }
        if self.models_per_cell == 0 {
            out.push("models_per_cell: must be at least 1".into());
        }
        if self.runs_per_model == 0 {
            out.push("runs_per_model: must be at least 1".into());
        }
        if self.classes.is_empty() {
            out.push("classes: must not be empty".into());
        }
        for (i, c) in self.classes.iter().enumerate() {
            out.extend(c.problems(&format!("classes[{i}]")));
        }
        if !(self.policy.delta > 0.0 && self.policy.delta < 1.0) {
            out.push("policy.delta: must lie in (0, 1)".into());
        }
        if !(self.policy.psi_scale > 0.0) {
            out.push("policy.psi_scale: must be positive".into());
        }
        if self.policy.stride == 0 {
            out.push("policy.stride: must be at least 1".into());
        }
        out.extend(self.generator.problems());
        if out.is_empty() {
            Ok(())
        } else {
            Err(SimError::Config(out))
        }
    }
}

/// One row of the per-run CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub class: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub model: usize,
    pub seed: u64,
    pub revenue: f64,
    pub benchmark: f64,
    pub regret: f64,
    pub ratio: f64,
    pub t_stop: u64,
    pub support_match: bool,
    pub cg_iter_max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub class: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub model: usize,
    pub run: Option<usize>,
    pub message: String,
}

/// Aggregates for one `(class, T)` cell: averages over runs, then models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub class: String,
    #[serde(rename = "T")]
    pub horizon: u64,
    pub models: usize,
    pub runs: usize,
    pub mean_revenue: f64,
    pub mean_benchmark: f64,
    pub mean_regret: f64,
    pub mean_ratio: f64,
    /// Mean over models of the across-run standard deviation.
    pub ratio_std_within: f64,
    /// Standard deviation across models of the per-model mean.
    pub ratio_std_between: f64,
    pub regret_std_within: f64,
    pub regret_std_between: f64,
    pub support_match_fraction: f64,
    pub cg_iter_max: usize,
    pub cg_iter_mean: f64,
    pub lp_solves: usize,
    pub lp_non_optimal: usize,
    /// Models whose clairvoyant LP has alternative optima, so support
    /// mismatches there may be benign.
    pub dual_degenerate_models: usize,
    pub mean_t_stop: f64,
    pub failures: usize,
    pub capacity_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSlope {
    pub class: String,
    pub regret_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub master_seed: u64,
    pub policy: PolicyConfig,
    pub cells: Vec<CellSummary>,
    pub slopes: Vec<ClassSlope>,
    pub failures: Vec<Failure>,
    pub capacity_violations: usize,
    #[serde(skip)]
    pub runs: Vec<RunRow>,
}

impl ExperimentReport {
    pub fn cell(&self, class: &str, horizon: u64) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.class == class && c.horizon == horizon)
    }

    pub fn slope(&self, class: &str) -> Option<f64> {
        self.slopes.iter().find(|s| s.class == class).and_then(|s| s.regret_slope)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `runs.csv`, `report.json`, `ratio_vs_T.csv` and
    /// `regret_loglog.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), SimError> {
        let io = |e: &dyn std::fmt::Display| SimError::Io(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(dir).map_err(|e| io(&e))?;
        write_csv(&dir.join("runs.csv"), &self.runs)?;
        std::fs::write(dir.join("report.json"), self.to_json() + "\n").map_err(|e| io(&e))?;
        let ratio: Vec<RatioRow> = self
            .cells
            .iter()
            .map(|c| RatioRow {
                class: c.class.clone(),
                horizon: c.horizon,
                mean_ratio: c.mean_ratio,
                std_within: c.ratio_std_within,
                std_between: c.ratio_std_between,
            })
            .collect();
        write_csv(&dir.join("ratio_vs_T.csv"), &ratio)?;
        let regret: Vec<RegretRow> = self
            .cells
            .iter()
            .map(|c| RegretRow {
                class: c.class.clone(),
                horizon: c.horizon,
                log_t: (c.horizon as f64).ln(),
                mean_regret: c.mean_regret,
                log_mean_regret: if c.mean_regret > 0.0 { Some(c.mean_regret.ln()) } else { None },
                std_within: c.regret_std_within,
                std_between: c.regret_std_between,
            })
            .collect();
        write_csv(&dir.join("regret_loglog.csv"), &regret)
    }
}

#[derive(Serialize)]
struct RatioRow {
    class: String,
    #[serde(rename = "T")]
    horizon: u64,
    mean_ratio: f64,
    std_within: f64,
    std_between: f64,
}

#[derive(Serialize)]
struct RegretRow {
    class: String,
    #[serde(rename = "T")]
    horizon: u64,
    log_t: f64,
    mean_regret: f64,
    log_mean_regret: Option<f64>,
    std_within: f64,
    std_between: f64,
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<(), SimError> {
    let err = |e: csv::Error| SimError::Io(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    for row in rows {
        w.serialize(row).map_err(err)?;
    }
    w.flush().map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
}

/// Reads back a per-run CSV written by [`ExperimentReport::write`].
pub fn read_runs_csv(path: &Path) -> Result<Vec<RunRow>, SimError> {
    let err = |e: csv::Error| SimError::Io(format!("{}: {e}", path.display()));
    let mut r = csv::Reader::from_path(path).map_err(err)?;
    r.deserialize().collect::<Result<Vec<RunRow>, _>>().map_err(err)
}

/// Outcome of one replicated run, with the LP statistics the report needs.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: RunRow,
    pub lp_iterations: Vec<usize>,
    pub lp_non_optimal: usize,
}

/// Runs one policy on one instance and scores it against the benchmark.
pub fn score_run(
    class: &str,
    model: usize,
    instance: &Instance,
    benchmark: &Benchmark,
    policy_cfg: &PolicyConfig,
    seed: u64,
) -> Result<RunOutcome, SimError> {
    let mut policy = policy_cfg.build(instance)?;
    let log = run_episode(instance, policy.as_mut(), seed)?;
    let diag = policy.diagnostics();
    let lp_iterations: Vec<usize> = diag.lp_solves.iter().map(|s| s.cg_iterations).collect();
    let lp_non_optimal = diag.lp_solves.iter().filter(|s| s.status != LpStatus::Optimal).count();
    let matched = diag.planned.as_ref().is_some_and(|y| support_match(y, &benchmark.distribution));
    let revenue = log.total_revenue;
    let row = RunRow {
        class: class.to_string(),
        horizon: instance.horizon,
        model,
        seed,
        revenue,
        benchmark: benchmark.value,
        regret: benchmark.value - revenue,
        ratio: revenue / benchmark.value,
        t_stop: log.t_stop,
        support_match: matched,
        cg_iter_max: lp_iterations.iter().copied().max().unwrap_or(0),
    };
    Ok(RunOutcome { row, lp_iterations, lp_non_optimal })
}

struct ModelCell {
    class_idx: usize,
    horizon: u64,
    model: usize,
    built: Result<(Instance, Benchmark), String>,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Sample standard deviation; 0 for fewer than two values.
fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Executes the full cross product of classes, horizons, models and runs.
/// Output is independent of the thread count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, SimError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| SimError::Config(vec![format!("threads: {e}")]))?;
    pool.install(|| execute(cfg))
}

fn execute(cfg: &ExperimentConfig) -> Result<ExperimentReport, SimError> {
    let mut keys = Vec::new();
    for ci in 0..cfg.classes.len() {
        for &t in &cfg.horizons {
            for m in 0..cfg.models_per_cell {
                keys.push((ci, t, m));
            }
        }
    }
    // The model seed ignores T so that a model keeps its draws across the
    // horizon sweep; only the capacity snapping depends on T.
    let models: Vec<ModelCell> = keys
        .par_iter()
        .map(|&(ci, t, m)| {
            let class = &cfg.classes[ci];
            let seed = derive_seed(cfg.master_seed, &[1, ci as u64, m as u64]);
            let built = generate_instance(class, t, seed, &cfg.generator)
                .and_then(|inst| Ok((compute_benchmark(&inst)?, inst)))
                .map(|(b, inst)| (inst, b))
                .map_err(|e| e.to_string());
            ModelCell { class_idx: ci, horizon: t, model: m, built }
        })
        .collect();

    let jobs: Vec<(usize, usize)> =
        (0..models.len()).flat_map(|mi| (0..cfg.runs_per_model).map(move |r| (mi, r))).collect();
    let outcomes: Vec<Result<RunOutcome, SimError>> = jobs
        .par_iter()
        .filter_map(|&(mi, r)| {
            let cell = &models[mi];
            let (inst, bench) = cell.built.as_ref().ok()?;
            let class = &cfg.classes[cell.class_idx];
            let seed = derive_seed(cfg.master_seed, &[2, cell.class_idx as u64, cell.horizon, cell.model as u64, r as u64]);
            debug!("{} T={} model={} run={}", class.name, cell.horizon, cell.model, r);
            Some(score_run(&class.name, cell.model, inst, bench, &cfg.policy, seed))
        })
        .collect();

    let mut failures = Vec::new();
    let mut capacity_violations = 0;
    let mut per_cell: BTreeMap<(usize, u64), CellAccumulator> = BTreeMap::new();
    for cell in &models {
        let acc = per_cell.entry((cell.class_idx, cell.horizon)).or_default();
        match &cell.built {
            Ok((_, b)) => acc.dual_degenerate += usize::from(b.dual_degenerate),
            Err(message) => {
                acc.failures += 1;
                failures.push(Failure {
                    class: cfg.classes[cell.class_idx].name.clone(),
                    horizon: cell.horizon,
                    model: cell.model,
                    run: None,
                    message: message.clone(),
                });
            }
        }
    }
    let mut runs = Vec::new();
    let mut outcome_iter = outcomes.into_iter();
    for &(mi, r) in &jobs {
        let cell = &models[mi];
        if cell.built.is_err() {
            continue;
        }
        let acc = per_cell.get_mut(&(cell.class_idx, cell.horizon)).expect("cell registered");
        match outcome_iter.next().expect("one outcome per job") {
            Ok(out) => {
                acc.push(&out);
                runs.push(out.row);
            }
            Err(e) => {
                if e.is_contract_violation() {
                    capacity_violations += 1;
                    acc.capacity_violations += 1;
                }
                acc.failures += 1;
                failures.push(Failure {
                    class: cfg.classes[cell.class_idx].name.clone(),
                    horizon: cell.horizon,
                    model: cell.model,
                    run: Some(r),
                    message: e.to_string(),
                });
            }
        }
    }

    let cells: Vec<CellSummary> = per_cell
        .into_iter()
        .map(|((ci, t), acc)| acc.summarize(&cfg.classes[ci].name, t))
        .collect();
    let slopes = cfg
        .classes
        .iter()
        .map(|c| {
            let pts: Vec<(f64, f64)> =
                cells.iter().filter(|s| s.class == c.name).map(|s| (s.horizon as f64, s.mean_regret)).collect();
            ClassSlope { class: c.name.clone(), regret_slope: log_log_slope(&pts) }
        })
        .collect();
    info!("experiment finished: {} runs, {} failures", runs.len(), failures.len());
    Ok(ExperimentReport {
        schema_version: SCHEMA_VERSION,
        master_seed: cfg.master_seed,
        policy: cfg.policy,
        cells,
        slopes,
        failures,
        capacity_violations,
        runs,
    })
}

/// Re-aggregates per-run rows (for example read back from several CSVs)
/// into cell summaries and per-class slopes. LP statistics are limited to
/// the per-run maxima the rows carry.
pub fn summarize_rows(rows: &[RunRow]) -> (Vec<CellSummary>, Vec<ClassSlope>) {
    let mut per_cell: BTreeMap<(String, u64), CellAccumulator> = BTreeMap::new();
    for row in rows {
        let acc = per_cell.entry((row.class.clone(), row.horizon)).or_default();
        acc.by_model.entry(row.model).or_default().push(row.clone());
        acc.lp_iterations.push(row.cg_iter_max);
    }
    let cells: Vec<CellSummary> = per_cell.into_iter().map(|((class, t), acc)| acc.summarize(&class, t)).collect();
    let mut names: Vec<&str> = cells.iter().map(|c| c.class.as_str()).collect();
    names.dedup();
    let slopes = names
        .into_iter()
        .map(|name| {
            let pts: Vec<(f64, f64)> =
                cells.iter().filter(|c| c.class == name).map(|c| (c.horizon as f64, c.mean_regret)).collect();
            ClassSlope { class: name.to_string(), regret_slope: log_log_slope(&pts) }
        })
        .collect();
    (cells, slopes)
}

#[derive(Default)]
struct CellAccumulator {
    by_model: BTreeMap<usize, Vec<RunRow>>,
    lp_iterations: Vec<usize>,
    lp_non_optimal: usize,
    dual_degenerate: usize,
    failures: usize,
    capacity_violations: usize,
}

impl CellAccumulator {
    fn push(&mut self, out: &RunOutcome) {
        self.by_model.entry(out.row.model).or_default().push(out.row.clone());
        self.lp_iterations.extend(&out.lp_iterations);
        self.lp_non_optimal += out.lp_non_optimal;
    }

    fn summarize(self, class: &str, horizon: u64) -> CellSummary {
        let field = |rows: &[RunRow], f: fn(&RunRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        let model_means = |f: fn(&RunRow) -> f64| self.by_model.values().map(|rows| mean(&field(rows, f))).collect::<Vec<_>>();
        let model_stds = |f: fn(&RunRow) -> f64| self.by_model.values().map(|rows| std_dev(&field(rows, f))).collect::<Vec<_>>();
        let all: Vec<&RunRow> = self.by_model.values().flatten().collect();
        let ratio_means = model_means(|r| r.ratio);
        let regret_means = model_means(|r| r.regret);
        CellSummary {
            class: class.to_string(),
            horizon,
            models: self.by_model.len(),
            runs: all.len(),
            mean_revenue: mean(&model_means(|r| r.revenue)),
            mean_benchmark: mean(&model_means(|r| r.benchmark)),
            mean_regret: mean(&regret_means),
            mean_ratio: mean(&ratio_means),
            ratio_std_within: mean(&model_stds(|r| r.ratio)),
            ratio_std_between: std_dev(&ratio_means),
            regret_std_within: mean(&model_stds(|r| r.regret)),
            regret_std_between: std_dev(&regret_means),
            support_match_fraction: mean(&all.iter().map(|r| f64::from(u8::from(r.support_match))).collect::<Vec<_>>()),
            cg_iter_max: self.lp_iterations.iter().copied().max().unwrap_or(0),
            cg_iter_mean: mean(&self.lp_iterations.iter().map(|&i| i as f64).collect::<Vec<_>>()),
            lp_solves: self.lp_iterations.len(),
            lp_non_optimal: self.lp_non_optimal,
            dual_degenerate_models: self.dual_degenerate,
            mean_t_stop: mean(&all.iter().map(|r| r.t_stop as f64).collect::<Vec<_>>()),
            failures: self.failures,
            capacity_violations: self.capacity_violations,
        }
    }
}
