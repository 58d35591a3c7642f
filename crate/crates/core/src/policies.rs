//! Non-anticipatory selling policies behind one period-by-period interface.
//!
//! Every policy shares the abort rule: once any remaining capacity is zero
//! it offers the empty assortment for the rest of the horizon. Because a
//! purchase consumes at most one unit of each resource, capacities never go
//! negative.

use log::warn;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimation::{
    confidence_radius_learning, mle_full_from, mle_single_item, ucb_constants, warm_start_assortment, EstimationError,
    SalesHistory, SingleItemCounts, MLE_DEFAULT_TOL,
};
use crate::lp::{solve_lp, solve_ucb_lp, LpData, LpError, LpStatus, SolverOptions};
use crate::mnl::{enumerate_family, family_contains, Assortment, AssortmentFamily, Instance, PublicInstance, DEFAULT_ENUMERATION_CAP};
use crate::{AssortmentDistribution, ConfidenceConstants, UcbLpSpec, UtilityVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("omega = {omega} >= 1; the horizon is too short for the optimistic policy")]
    OmegaTooLarge { omega: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Estimation(#[from] EstimationError),
}

/// Summary of one LP solved by a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpSolveSummary {
    pub period: u64,
    pub cg_iterations: usize,
    pub status: LpStatus,
}

#[derive(Debug, Clone, Default)]
pub struct PolicyDiagnostics {
    pub lp_solves: Vec<LpSolveSummary>,
    /// The distribution the policy is currently sampling from.
    pub planned: Option<AssortmentDistribution>,
    pub estimate: Option<UtilityVector>,
    /// Period at which the abort rule fired.
    pub aborted_at: Option<u64>,
    pub events: Vec<String>,
}

/// Period-by-period policy. Calls strictly alternate `next_assortment`
/// then `observe`, with periods numbered from 1.
pub trait Policy: Send {
    fn next_assortment(&mut self, period: u64, remaining: &[u64], rng: &mut dyn RngCore) -> Assortment;

    fn observe(&mut self, period: u64, purchased: usize);

    fn diagnostics(&self) -> &PolicyDiagnostics;
}

fn depleted(remaining: &[u64]) -> bool {
    remaining.iter().any(|&c| c == 0)
}

fn sample(dist: &AssortmentDistribution, rng: &mut dyn RngCore) -> Assortment {
    let u: f64 = rng.gen();
    dist.sample_with(u)
}

/// Owned copy of the LP data a policy needs.
#[derive(Debug, Clone)]
struct Market {
    n: usize,
    bound: f64,
    revenues: Vec<f64>,
    consumption: Vec<Vec<f64>>,
    capacity: Vec<f64>,
    family: AssortmentFamily,
}

impl Market {
    fn from_public(p: &PublicInstance<'_>) -> Self {
        Self {
            n: p.n,
            bound: p.bound,
            revenues: p.revenues.to_vec(),
            consumption: p.consumption_matrix(),
            capacity: p.capacity_rates.to_vec(),
            family: p.family.clone(),
        }
    }

    fn lp_data(&self) -> LpData<'_, f64> {
        LpData { revenues: &self.revenues, consumption: &self.consumption, capacity: &self.capacity, family: &self.family }
    }
}

/// Learning-phase length rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TauRule {
    /// `⌊T^{2/3}⌋`
    TwoThirds,
    Fixed(u64),
}

impl TauRule {
    pub fn resolve(self, horizon: u64) -> u64 {
        match self {
            TauRule::Fixed(t) => t,
            TauRule::TwoThirds => {
                let x = (horizon as f64).powf(2.0 / 3.0);
                let r = x.round();
                if (x - r).abs() < 1e-9 {
                    r as u64
                } else {
                    x.floor() as u64
                }
            }
        }
    }
}

impl Serialize for TauRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            TauRule::TwoThirds => s.serialize_str("T^{2/3}"),
            TauRule::Fixed(t) => s.serialize_u64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for TauRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Doc {
            Text(String),
            Fixed(u64),
        }
        match Doc::deserialize(d)? {
            Doc::Fixed(t) => Ok(TauRule::Fixed(t)),
            Doc::Text(s) if s.replace(' ', "") == "T^{2/3}" => Ok(TauRule::TwoThirds),
            Doc::Text(s) => s
                .parse()
                .map(TauRule::Fixed)
                .map_err(|_| serde::de::Error::custom(format!("tau_rule must be \"T^{{2/3}}\" or an integer, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Learning,
    Earning,
    Aborted,
}

/// Explore-then-commit policy: `τ/N` single-item offers of each product in
/// index order, closed-form MLE, then sampling from an extreme-point
/// solution of `LP(v̂)`.
pub struct OnlineTau {
    market: Market,
    tau: u64,
    per_product: u64,
    purchases: Vec<u64>,
    phase: Phase,
    distribution: Option<AssortmentDistribution>,
    diagnostics: PolicyDiagnostics,
    opts: SolverOptions<f64>,
}

impl OnlineTau {
    /// `tau` is rounded down to a multiple of `N`.
    pub fn new(public: &PublicInstance<'_>, tau: u64) -> Result<Self, PolicyError> {
        let n = public.n as u64;
        if tau < 1 || tau > public.horizon {
            return Err(PolicyError::Config(format!("tau = {tau} must lie in 1..={}", public.horizon)));
        }
        let adjusted = tau / n * n;
        if adjusted < n {
            return Err(PolicyError::Config(format!("tau = {tau} is shorter than one offer per product (N = {n})")));
        }
        if let Some(i) = (1..=public.n).find(|&i| !family_contains(public.family, &Assortment::singleton(i))) {
            return Err(PolicyError::Config(format!("family does not allow the single-item offer {{{i}}}")));
        }
        let mut diagnostics = PolicyDiagnostics::default();
        if adjusted != tau {
            diagnostics.events.push(format!("tau rounded down from {tau} to {adjusted}"));
        }
        Ok(Self {
            market: Market::from_public(public),
            tau: adjusted,
            per_product: adjusted / n,
            purchases: vec![0; public.n],
            phase: Phase::Learning,
            distribution: None,
            diagnostics,
            opts: SolverOptions::default(),
        })
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    fn product_at(&self, period: u64) -> usize {
        ((period - 1) / self.per_product) as usize + 1
    }

    /// Closed-form MLE from the learning-phase counts.
    pub fn estimate(&self) -> UtilityVector {
        let values = self
            .purchases
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let counts = SingleItemCounts { product: i + 1, offers: self.per_product, purchases: n };
                mle_single_item(&counts, self.market.bound)
            })
            .collect();
        UtilityVector::new(values, self.market.bound).expect("clipped estimates lie in the box")
    }

    fn commit(&mut self, period: u64) {
        let v_hat = self.estimate();
        match solve_lp(&self.market.lp_data(), &v_hat, &self.opts) {
            Ok(res) => {
                self.diagnostics.lp_solves.push(LpSolveSummary { period, cg_iterations: res.cg_iterations, status: res.status });
                self.distribution = Some(res.distribution.clone());
                self.diagnostics.planned = Some(res.distribution);
            }
            Err(e) => {
                warn!("LP(v_hat) failed: {e}; offering the empty assortment");
                self.diagnostics.events.push(format!("lp failure: {e}"));
                self.distribution = Some(AssortmentDistribution::point_mass(Assortment::empty()));
            }
        }
        self.diagnostics.estimate = Some(v_hat);
        self.phase = Phase::Earning;
    }
}

impl Policy for OnlineTau {
    fn next_assortment(&mut self, period: u64, remaining: &[u64], rng: &mut dyn RngCore) -> Assortment {
        if self.phase != Phase::Aborted && depleted(remaining) {
            self.phase = Phase::Aborted;
            self.diagnostics.aborted_at = Some(period);
        }
        match self.phase {
            Phase::Aborted => Assortment::empty(),
            Phase::Learning => Assortment::singleton(self.product_at(period)),
            Phase::Earning => sample(self.distribution.as_ref().expect("set at commit"), rng),
        }
    }

    fn observe(&mut self, period: u64, purchased: usize) {
        if self.phase == Phase::Learning {
            let product = self.product_at(period);
            if purchased == product {
                self.purchases[product - 1] += 1;
            }
            if period == self.tau {
                self.commit(period);
            }
        }
    }

    fn diagnostics(&self) -> &PolicyDiagnostics {
        &self.diagnostics
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbConfig {
    pub delta: f64,
    /// Multiplier on `Ψ` (and hence on `ω` and every radius). 1 keeps the
    /// theoretical constants.
    pub psi_scale: f64,
    /// Recompute the MLE and LP every `stride` periods.
    pub stride: u64,
    /// Zero radii and `ω = 0`: plain certainty-equivalent re-solving.
    pub disable_widening: bool,
    pub mle_tol: f64,
    pub enumeration_cap: u64,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            psi_scale: 1.0,
            stride: 1,
            disable_widening: false,
            mle_tol: MLE_DEFAULT_TOL,
            enumeration_cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

/// Optimistic policy: warm start with one assortment per product, then each
/// period re-estimate `v` by full MLE, solve the widened LP and sample.
pub struct UcbPolicy {
    market: Market,
    config: UcbConfig,
    constants: Option<ConfidenceConstants>,
    warm_start: Vec<Assortment>,
    history: SalesHistory,
    phase: Phase,
    distribution: Option<AssortmentDistribution>,
    theta: Option<Vec<f64>>,
    offered: Assortment,
    diagnostics: PolicyDiagnostics,
}

impl UcbPolicy {
    pub fn new(public: &PublicInstance<'_>, config: UcbConfig) -> Result<Self, PolicyError> {
        if config.stride == 0 {
            return Err(PolicyError::Config("stride must be at least 1".into()));
        }
        let constants = if config.disable_widening {
            None
        } else {
            let c_min = public.capacity_rates.iter().copied().fold(1.0, f64::min);
            let c = ucb_constants(
                public.horizon,
                public.n,
                public.k,
                public.family.max_size(),
                public.bound,
                c_min,
                config.delta,
            )?
            .with_psi_scale(config.psi_scale);
            if !c.omega_ok() {
                return Err(PolicyError::OmegaTooLarge { omega: c.omega });
            }
            Some(c)
        };
        let warm_start = (1..=public.n)
            .map(|i| {
                warm_start_assortment(public.family, i, config.enumeration_cap)
                    .ok_or_else(|| PolicyError::Config(format!("no allowed assortment contains product {i}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if public.horizon < public.n as u64 {
            return Err(PolicyError::Config("horizon shorter than the warm start".into()));
        }
        Ok(Self {
            market: Market::from_public(public),
            config,
            constants,
            warm_start,
            history: SalesHistory::new(public.n),
            phase: Phase::Learning,
            distribution: None,
            theta: None,
            offered: Assortment::empty(),
            diagnostics: PolicyDiagnostics::default(),
        })
    }

    pub fn constants(&self) -> Option<&ConfidenceConstants> {
        self.constants.as_ref()
    }

    pub fn warm_start_assortments(&self) -> &[Assortment] {
        &self.warm_start
    }

    fn spec(&self, v: UtilityVector) -> Result<UcbLpSpec, EstimationError> {
        match &self.constants {
            Some(c) => UcbLpSpec::new(v, self.history.exposures(), c),
            None => Ok(UcbLpSpec { v, radii: vec![0.0; self.market.n], omega: 0.0 }),
        }
    }

    fn replan(&mut self, period: u64) {
        let start = self.theta.as_deref();
        let v = match mle_full_from(&self.history, self.market.bound, self.config.mle_tol, start) {
            Ok(v) => v,
            Err(e) => {
                warn!("period {period}: MLE failed ({e}); keeping the previous plan");
                self.diagnostics.events.push(format!("period {period}: mle failure: {e}"));
                return;
            }
        };
        self.theta = Some(v.log_values());
        let opts = SolverOptions { enumeration_cap: self.config.enumeration_cap, ..SolverOptions::default() };
        let solved = self.spec(v.clone()).map_err(PolicyError::from).and_then(|spec| {
            solve_ucb_lp(&self.market.lp_data(), &spec, &opts).map_err(PolicyError::from)
        });
        match solved {
            Ok(res) => {
                self.diagnostics.lp_solves.push(LpSolveSummary { period, cg_iterations: res.cg_iterations, status: res.status });
                self.distribution = Some(res.distribution.clone());
                self.diagnostics.planned = Some(res.distribution);
            }
            Err(e) => {
                warn!("period {period}: UCB-LP failed ({e}); keeping the previous plan");
                self.diagnostics.events.push(format!("period {period}: lp failure: {e}"));
            }
        }
        self.diagnostics.estimate = Some(v);
    }
}

impl Policy for UcbPolicy {
    fn next_assortment(&mut self, period: u64, remaining: &[u64], rng: &mut dyn RngCore) -> Assortment {
        if self.phase != Phase::Aborted && depleted(remaining) {
            self.phase = Phase::Aborted;
            self.diagnostics.aborted_at = Some(period);
        }
        let n = self.market.n as u64;
        self.offered = match self.phase {
            Phase::Aborted => Assortment::empty(),
            _ if period <= n => self.warm_start[(period - 1) as usize].clone(),
            _ => {
                self.phase = Phase::Earning;
                if (period - n - 1) % self.config.stride == 0 || self.distribution.is_none() {
                    self.replan(period);
                }
                match &self.distribution {
                    Some(d) => sample(d, rng),
                    None => Assortment::empty(),
                }
            }
        };
        self.offered.clone()
    }

    fn observe(&mut self, _period: u64, purchased: usize) {
        if self.phase != Phase::Aborted {
            let s = std::mem::take(&mut self.offered);
            if let Err(e) = self.history.push(s, purchased) {
                self.diagnostics.events.push(format!("rejected observation: {e}"));
            }
        }
    }

    fn diagnostics(&self) -> &PolicyDiagnostics {
        &self.diagnostics
    }
}

/// Stationary randomized policy from the clairvoyant `LP(v*)` solution.
pub struct StaticOracle {
    distribution: AssortmentDistribution,
    aborted: bool,
    diagnostics: PolicyDiagnostics,
}

impl StaticOracle {
    pub fn new(instance: &Instance) -> Result<Self, PolicyError> {
        let market = Market::from_public(&instance.public());
        let res = solve_lp(&market.lp_data(), &instance.v_star, &SolverOptions::default())?;
        let diagnostics = PolicyDiagnostics {
            lp_solves: vec![LpSolveSummary { period: 0, cg_iterations: res.cg_iterations, status: res.status }],
            planned: Some(res.distribution.clone()),
            estimate: Some(instance.v_star.clone()),
            ..PolicyDiagnostics::default()
        };
        Ok(Self { distribution: res.distribution, aborted: false, diagnostics })
    }
}

impl Policy for StaticOracle {
    fn next_assortment(&mut self, period: u64, remaining: &[u64], rng: &mut dyn RngCore) -> Assortment {
        if !self.aborted && depleted(remaining) {
            self.aborted = true;
            self.diagnostics.aborted_at = Some(period);
        }
        if self.aborted {
            Assortment::empty()
        } else {
            sample(&self.distribution, rng)
        }
    }

    fn observe(&mut self, _period: u64, _purchased: usize) {}

    fn diagnostics(&self) -> &PolicyDiagnostics {
        &self.diagnostics
    }
}

/// Baseline offering a uniformly random member of the family each period.
pub struct UniformRandom {
    members: Vec<Assortment>,
    aborted: bool,
    diagnostics: PolicyDiagnostics,
}

impl UniformRandom {
    pub fn new(family: &AssortmentFamily, cap: u64) -> Result<Self, PolicyError> {
        let members = enumerate_family(family, cap).map_err(|e| PolicyError::Config(e.to_string()))?.collect();
        Ok(Self { members, aborted: false, diagnostics: PolicyDiagnostics::default() })
    }
}

impl Policy for UniformRandom {
    fn next_assortment(&mut self, period: u64, remaining: &[u64], rng: &mut dyn RngCore) -> Assortment {
        if !self.aborted && depleted(remaining) {
            self.aborted = true;
            self.diagnostics.aborted_at = Some(period);
        }
        if self.aborted {
            return Assortment::empty();
        }
        self.members[rng.gen_range(0..self.members.len())].clone()
    }

    fn observe(&mut self, _period: u64, _purchased: usize) {}

    fn diagnostics(&self) -> &PolicyDiagnostics {
        &self.diagnostics
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    OnlineTau,
    Ucb,
    StaticOracle,
}

/// Policy block of the experiment configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    #[serde(rename = "type")]
    pub kind: PolicyKind,
    #[serde(default = "default_tau_rule")]
    pub tau_rule: TauRule,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_psi_scale")]
    pub psi_scale: f64,
    #[serde(default = "default_stride")]
    pub stride: u64,
}

fn default_tau_rule() -> TauRule {
    TauRule::TwoThirds
}
fn default_delta() -> f64 {
    0.1
}
fn default_psi_scale() -> f64 {
    1.0
}
fn default_stride() -> u64 {
    1
}

impl PolicyConfig {
    pub fn online_tau(tau_rule: TauRule, delta: f64) -> Self {
        Self { kind: PolicyKind::OnlineTau, tau_rule, delta, psi_scale: 1.0, stride: 1 }
    }

    pub fn build(&self, instance: &Instance) -> Result<Box<dyn Policy>, PolicyError> {
        let public = instance.public();
        Ok(match self.kind {
            PolicyKind::OnlineTau => Box::new(OnlineTau::new(&public, self.tau_rule.resolve(instance.horizon))?),
            PolicyKind::Ucb => Box::new(UcbPolicy::new(
                &public,
                UcbConfig { delta: self.delta, psi_scale: self.psi_scale, stride: self.stride, ..UcbConfig::default() },
            )?),
            PolicyKind::StaticOracle => Box::new(StaticOracle::new(instance)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs }
    }

    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResourceAssumptionCheck {
    pub resource: usize,
    /// `τ √(log(4NK/δ)) <= T c(k)`
    pub no_depletion: InequalityCheck,
    /// `B ε(τ) <= c(k) / 2`
    pub accuracy_with_b: InequalityCheck,
    /// `ε(τ) <= c(k) / 2`
    pub accuracy_with_one: InequalityCheck,
}

/// Advisory report on the learning-length conditions; `Online(τ)` runs for
/// any `τ` regardless.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assumption1Report {
    pub tau: u64,
    pub epsilon: f64,
    pub resources: Vec<ResourceAssumptionCheck>,
}

impl Assumption1Report {
    pub fn no_depletion_holds(&self) -> bool {
        self.resources.iter().all(|r| r.no_depletion.holds)
    }

    pub fn accuracy_holds_with_b(&self) -> bool {
        self.resources.iter().all(|r| r.accuracy_with_b.holds)
    }

    pub fn accuracy_holds_with_one(&self) -> bool {
        self.resources.iter().all(|r| r.accuracy_with_one.holds)
    }

    /// Both conditions, reading the accuracy constant as `B`.
    pub fn holds(&self) -> bool {
        self.no_depletion_holds() && self.accuracy_holds_with_b()
    }
}

pub fn check_assumption_1(public: &PublicInstance<'_>, tau: u64, delta: f64) -> Result<Assumption1Report, PolicyError> {
    let epsilon = confidence_radius_learning(tau, public.n, public.bound, delta)?;
    let n = public.n as f64;
    let k = public.k as f64;
    let b = public.family.max_size() as f64;
    let caps = public.initial_capacities();
    let resources = public
        .capacity_rates
        .iter()
        .enumerate()
        .map(|(idx, &c)| ResourceAssumptionCheck {
            resource: idx + 1,
            no_depletion: InequalityCheck::new(tau as f64 * (4.0 * n * k / delta).ln().sqrt(), caps[idx] as f64),
            accuracy_with_b: InequalityCheck::new(b * epsilon, 0.5 * c),
            accuracy_with_one: InequalityCheck::new(epsilon, 0.5 * c),
        })
        .collect();
    Ok(Assumption1Report { tau, epsilon, resources })
}
