//! Monte Carlo harness, truthfulness search and the worked appendix scenarios.
//!
//! Trials run in parallel and are collected in seed order, so every result
//! is a pure function of its inputs. None of the designs here (trial counts,
//! calibration, deviation grids) comes with the mechanism itself; they are
//! measurement plumbing around it.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::baselines::{run_mcafee, run_naive_multiunit_mcafee, McAfeeOutcome, MultiUnitMode, SingleTypeMarket};
use crate::diagnostics::{diagnose, market_parameters, MarketParameters};
use crate::equilibrium::{solve_walrasian, Equilibrium};
use crate::mechanism::{Half, Halving, Lottery, Mida, TradeOutcome};
use crate::model::{
    calibrated_market, default_gs_grid, generate_market, is_dmr, is_gross_substitute, AgentId, Bundle, BuyerFamily,
    BuyerValuation, CalibratedSpec, GeneratorSpec, ItemType, Market, Role, SellerValuation,
};
use crate::{Error, Result, Scalar};

/// Where a scenario's market comes from. Generated sources draw one market
/// from the experiment's base seed; trials then vary only the mechanism's
/// randomness.
#[derive(Debug, Clone, PartialEq)]
pub enum MarketSource<T> {
    Fixed(Market<T>),
    Generated(GeneratorSpec),
    Calibrated(CalibratedSpec),
}

impl<T: Scalar> MarketSource<T> {
    pub fn market(&self, seed: u64) -> Result<Market<T>> {
        match self {
            MarketSource::Fixed(m) => Ok(m.clone()),
            MarketSource::Generated(spec) => generate_market(spec, seed),
            MarketSource::Calibrated(spec) => calibrated_market(spec, seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T> {
    pub id: String,
    pub source: MarketSource<T>,
    pub mechanism: Mida,
    /// Compute trader-set diagnostics on every trial.
    pub diagnostics: bool,
}

impl<T: Scalar> Scenario<T> {
    pub fn fixed(id: impl Into<String>, market: Market<T>) -> Self {
        Scenario { id: id.into(), source: MarketSource::Fixed(market), mechanism: Mida::default(), diagnostics: true }
    }
}

/// One mechanism run of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord<T> {
    pub trial: usize,
    pub seed: u64,
    pub gain_mida: T,
    pub gain_opt: T,
    /// `gain_mida / gain_opt`; absent when the optimum is zero.
    pub ratio: Option<T>,
    pub degenerate_r: bool,
    pub degenerate_l: bool,
    pub k: Vec<usize>,
    pub deals_lost: Vec<i64>,
    pub diagnostics: Option<TrialDiagnostics>,
}

/// Pass/fail summary of the trader-set checks of one trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialDiagnostics {
    pub corollary_holds: bool,
    pub sellers_prefix: bool,
    /// Types (over both non-degenerate halves) checked against the clearing bound.
    pub clearing_checked: usize,
    pub clearing_violations: usize,
    pub loss_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialFailure {
    pub trial: usize,
    pub seed: u64,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult<T> {
    pub scenario_id: String,
    pub trials: usize,
    pub seed: u64,
    pub parameters: MarketParameters<T>,
    pub records: Vec<TrialRecord<T>>,
    pub failures: Vec<TrialFailure>,
    /// Exact mean over trials with a defined ratio.
    pub mean_ratio: Option<T>,
    pub min_ratio: Option<T>,
    pub corollary_failures: usize,
    pub clearing_violation_frequency: Option<f64>,
    pub loss_violation_frequency: Option<f64>,
    pub wall_time: Duration,
}

/// Runs MIDA with seeds `seed..seed + trials` and measures each run against
/// the optimum. Every run is re-verified for budget balance, individual
/// rationality and material balance; a breach aborts the experiment.
pub fn estimate_competitive_ratio<T: Scalar>(
    scenario: &Scenario<T>,
    trials: usize,
    seed: u64,
) -> Result<ExperimentResult<T>> {
    if trials == 0 {
        return Err(Error::InvalidSpec("at least one trial is required".into()));
    }
    let start = Instant::now();
    let market = scenario.source.market(seed)?;
    let optimum = solve_walrasian(&market)?;
    let params = market_parameters(&market, &optimum);
    let results: Vec<Result<TrialRecord<T>>> = (0..trials)
        .into_par_iter()
        .map(|trial| run_trial(scenario, &market, &optimum, &params, trial, seed.wrapping_add(trial as u64)))
        .collect();
    let mut records = Vec::with_capacity(trials);
    let mut failures = Vec::new();
    for (trial, result) in results.into_iter().enumerate() {
        match result {
            Ok(record) => records.push(record),
            Err(e @ Error::InvariantViolation(_)) => return Err(e),
            Err(error) => failures.push(TrialFailure { trial, seed: seed.wrapping_add(trial as u64), error }),
        }
    }
    let ratios: Vec<&T> = records.iter().filter_map(|r| r.ratio.as_ref()).collect();
    let mean_ratio = (!ratios.is_empty()).then(|| {
        let sum = ratios.iter().fold(T::zero(), |acc, r| acc + *r);
        sum / T::from_int(ratios.len() as i64)
    });
    let min_ratio = ratios.iter().min().map(|r| (*r).clone());
    let diags: Vec<&TrialDiagnostics> = records.iter().filter_map(|r| r.diagnostics.as_ref()).collect();
    let frequency = |hits: usize, total: usize| (total > 0).then(|| hits as f64 / total as f64);
    let clearing_checked = diags.iter().map(|d| d.clearing_checked).sum();
    let clearing_violations = diags.iter().map(|d| d.clearing_violations).sum();
    let loss_violations = diags.iter().map(|d| d.loss_violations).sum();
    Ok(ExperimentResult {
        scenario_id: scenario.id.clone(),
        trials,
        seed,
        corollary_failures: diags.iter().filter(|d| !d.corollary_holds).count(),
        clearing_violation_frequency: frequency(clearing_violations, clearing_checked),
        loss_violation_frequency: frequency(loss_violations, diags.len() * market.g()),
        parameters: params,
        records,
        failures,
        mean_ratio,
        min_ratio,
        wall_time: start.elapsed(),
    })
}

fn run_trial<T: Scalar>(
    scenario: &Scenario<T>,
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    params: &MarketParameters<T>,
    trial: usize,
    seed: u64,
) -> Result<TrialRecord<T>> {
    let outcome = scenario.mechanism.run(market, seed)?;
    outcome.verify(market)?;
    if outcome.gain_total > optimum.gain {
        return Err(Error::InvariantViolation(format!(
            "seed {seed}: mechanism gain {} exceeds the optimum {}",
            outcome.gain_total, optimum.gain
        )));
    }
    let ratio = (!optimum.gain.is_zero()).then(|| outcome.gain_total.clone() / optimum.gain.clone());
    let deals_lost =
        (0..market.g()).map(|x| params.k[x] as i64 - (outcome.volume_r[x] + outcome.volume_l[x]) as i64).collect();
    let diagnostics = scenario.diagnostics.then(|| summarize(market, optimum, params, &outcome));
    Ok(TrialRecord {
        trial,
        seed,
        gain_mida: outcome.gain_total.clone(),
        gain_opt: optimum.gain.clone(),
        ratio,
        degenerate_r: outcome.degenerate_r,
        degenerate_l: outcome.degenerate_l,
        k: params.k.clone(),
        deals_lost,
        diagnostics,
    })
}

fn summarize<T: Scalar>(
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    params: &MarketParameters<T>,
    outcome: &TradeOutcome<T>,
) -> TrialDiagnostics {
    let d = diagnose(market, optimum, params, outcome);
    let mut clearing_checked = 0;
    let mut clearing_violations = 0;
    for (checks, degenerate) in [(&d.clearing_r, outcome.degenerate_r), (&d.clearing_l, outcome.degenerate_l)] {
        if !degenerate {
            clearing_checked += checks.len();
            clearing_violations += checks.iter().filter(|c| !c.within).count();
        }
    }
    TrialDiagnostics {
        corollary_holds: d.corollary_holds(),
        sellers_prefix: d.sellers_prefix,
        clearing_checked,
        clearing_violations,
        loss_violations: d.loss.iter().filter(|l| !l.within).count(),
    }
}

/// Mean ratio at one market size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow<T> {
    pub k: usize,
    pub mean_ratio: T,
    pub min_ratio: T,
    pub result: ExperimentResult<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport<T> {
    pub rows: Vec<ScalingRow<T>>,
    /// Least-squares `a` in `1 - mean ≈ a * sqrt(ln k / k)`; descriptive only.
    pub fit_a: f64,
    /// `(1 - mean) - a * sqrt(ln k / k)` per row.
    pub residuals: Vec<f64>,
}

impl<T: Scalar> ScalingReport<T> {
    pub fn is_strictly_increasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[0].mean_ratio < w[1].mean_ratio)
    }
}

/// One calibrated market per `k` (the same `k` for every type), `trials`
/// runs each.
pub fn scaling_experiment<T: Scalar>(
    family: BuyerFamily,
    g: usize,
    max_units: usize,
    k_values: &[usize],
    trials: usize,
    seed: u64,
) -> Result<ScalingReport<T>> {
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in k_values {
        let spec = CalibratedSpec { targets: vec![k; g], max_units, family };
        let scenario = Scenario {
            id: format!("scaling-k{k}"),
            source: MarketSource::Calibrated(spec),
            mechanism: Mida::default(),
            diagnostics: false,
        };
        let result = estimate_competitive_ratio(&scenario, trials, seed)?;
        let mean_ratio = result.mean_ratio.clone().unwrap_or_else(T::zero);
        let min_ratio = result.min_ratio.clone().unwrap_or_else(T::zero);
        rows.push(ScalingRow { k, mean_ratio, min_ratio, result });
    }
    let shape = |k: usize| if k <= 1 { 0.0 } else { ((k as f64).ln() / k as f64).sqrt() };
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (shape(r.k), 1.0 - r.mean_ratio.to_f64_lossy())).collect();
    let sxx: f64 = points.iter().map(|(s, _)| s * s).sum();
    let sxy: f64 = points.iter().map(|(s, y)| s * y).sum();
    let fit_a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let residuals = points.iter().map(|(s, y)| y - fit_a * s).collect();
    Ok(ScalingReport { rows, fit_a, residuals })
}

/// What one agent received in one realization of a mechanism's randomness.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Settlement<T> {
    Buyer { bundle: Bundle, payment: T },
    Seller { units: usize, payment: T },
}

impl<T: Scalar> Settlement<T> {
    /// Gain measured with the agent's valuation in `truth`.
    pub fn gain(&self, truth: &Market<T>, id: AgentId) -> Result<T> {
        match self {
            Settlement::Buyer { bundle, payment } => {
                let b = truth.buyers().iter().find(|b| b.id == id).ok_or(Error::UnknownAgent(id))?;
                Ok(b.valuation.value(*bundle) + payment)
            }
            Settlement::Seller { units, payment } => {
                let s = truth.sellers().iter().find(|s| s.id == id).ok_or(Error::UnknownAgent(id))?;
                Ok(payment.clone() - s.valuation.cost_of_selling(*units))
            }
        }
    }
}

/// A direct-revelation mechanism seen from one agent: its settlement in
/// every realization of the mechanism's randomness, in a fixed order that
/// does not depend on the reports.
pub trait DirectMechanism<T: Scalar>: Sync {
    fn settlements(&self, reported: &Market<T>, agent: AgentId) -> Result<Vec<Settlement<T>>>;

    /// Number of realizations for a market; used for budget checks.
    fn realizations(&self, market: &Market<T>) -> Result<usize>;
}

fn settlement_of<T: Scalar>(outcome: &TradeOutcome<T>, market: &Market<T>, agent: AgentId) -> Result<Settlement<T>> {
    let payment = outcome.payments.get(&agent).cloned().ok_or(Error::UnknownAgent(agent))?;
    match market.role_of(agent).ok_or(Error::UnknownAgent(agent))? {
        Role::Buyer => Ok(Settlement::Buyer { bundle: outcome.bundles[&agent], payment }),
        Role::Seller => Ok(Settlement::Seller { units: outcome.units[&agent], payment }),
    }
}

/// MIDA over every halving and every pair of lotteries.
#[derive(Debug, Clone, Copy, Default)]
pub struct MidaExhaustive {
    pub mida: Mida,
}

/// Halvings are enumerated as bit masks over the sorted agent ids.
pub const EXHAUSTIVE_MAX_AGENTS: usize = 12;

impl<T: Scalar> DirectMechanism<T> for MidaExhaustive {
    fn settlements(&self, reported: &Market<T>, agent: AgentId) -> Result<Vec<Settlement<T>>> {
        let n = reported.num_agents();
        if n > EXHAUSTIVE_MAX_AGENTS {
            return Err(Error::TooLarge(format!("{n} agents; exhaustive halving allows {EXHAUSTIVE_MAX_AGENTS}")));
        }
        let mut out = Vec::new();
        for mask in 0..1u64 << n {
            let prepared = self.mida.prepare(reported, &Halving::from_mask(reported, mask))?;
            let lotteries_l = Lottery::enumerate(&prepared.l);
            for lr in Lottery::enumerate(&prepared.r) {
                for ll in &lotteries_l {
                    let outcome = self.mida.execute(reported, &prepared, &lr, ll)?;
                    outcome.verify(reported)?;
                    out.push(settlement_of(&outcome, reported, agent)?);
                }
            }
        }
        Ok(out)
    }

    fn realizations(&self, market: &Market<T>) -> Result<usize> {
        let n = market.num_agents();
        if n > EXHAUSTIVE_MAX_AGENTS {
            return Err(Error::TooLarge(format!("{n} agents; exhaustive halving allows {EXHAUSTIVE_MAX_AGENTS}")));
        }
        let mut total = 0usize;
        for mask in 0..1u64 << n {
            let (r, l) = Halving::from_mask(market, mask).split(market);
            total += lottery_count(&r) * lottery_count(&l);
        }
        Ok(total)
    }
}

fn lottery_count<T: Scalar>(half: &Market<T>) -> usize {
    let factorial = |n: usize| (1..=n).product::<usize>();
    let base = Lottery::market_order(half);
    base.seller_lines.iter().map(|l| factorial(l.len())).product::<usize>() * factorial(base.buyer_line.len())
}

/// MIDA over a fixed list of seeds.
#[derive(Debug, Clone, Default)]
pub struct MidaSeeded {
    pub mida: Mida,
    pub seeds: Vec<u64>,
}

impl<T: Scalar> DirectMechanism<T> for MidaSeeded {
    fn settlements(&self, reported: &Market<T>, agent: AgentId) -> Result<Vec<Settlement<T>>> {
        self.seeds
            .iter()
            .map(|&seed| {
                let outcome = self.mida.run(reported, seed)?;
                outcome.verify(reported)?;
                settlement_of(&outcome, reported, agent)
            })
            .collect()
    }

    fn realizations(&self, _market: &Market<T>) -> Result<usize> {
        Ok(self.seeds.len())
    }
}

/// Trade reduction on single-type markets. Single-unit sellers give the
/// classic mechanism; multi-unit sellers are split into virtual sellers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct McAfeeMechanism {
    pub mode: MultiUnitMode,
}

fn mcafee_settlement<T: Scalar>(out: &McAfeeOutcome<T>, market: &Market<T>, agent: AgentId) -> Result<Settlement<T>> {
    match market.role_of(agent).ok_or(Error::UnknownAgent(agent))? {
        Role::Buyer => Ok(if out.buyers.contains(&agent) {
            let price = out.buy_price.clone().expect("a trading buyer has a price");
            Settlement::Buyer { bundle: Bundle::single(ItemType(0)), payment: -price }
        } else {
            Settlement::Buyer { bundle: Bundle::EMPTY, payment: T::zero() }
        }),
        Role::Seller => {
            let units = out.seller_units.get(&agent).copied().unwrap_or(0);
            let payment = match &out.sell_price {
                Some(p) => p.clone() * T::from_int(units as i64),
                None => T::zero(),
            };
            Ok(Settlement::Seller { units, payment })
        }
    }
}

impl<T: Scalar> DirectMechanism<T> for McAfeeMechanism {
    fn settlements(&self, reported: &Market<T>, agent: AgentId) -> Result<Vec<Settlement<T>>> {
        let out = if reported.sellers().iter().all(|s| s.valuation.units() == 1) && reported.g() == 1 {
            run_mcafee(&SingleTypeMarket::from_market(reported)?)
        } else {
            run_naive_multiunit_mcafee(reported, self.mode)?
        };
        Ok(vec![mcafee_settlement(&out, reported, agent)?])
    }

    fn realizations(&self, _market: &Market<T>) -> Result<usize> {
        Ok(1)
    }
}

/// A misreport: a buyer's whole valuation or a seller's marginals.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Report<T> {
    Buyer(BuyerValuation<T>),
    Seller(Vec<T>),
}

impl<T: Scalar> fmt::Display for Report<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[T]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        match self {
            Report::Buyer(BuyerValuation::UnitDemand(v)) => write!(f, "unit-demand ({})", join(v)),
            Report::Buyer(BuyerValuation::Additive(v)) => write!(f, "additive ({})", join(v)),
            Report::Buyer(BuyerValuation::Table(t)) => write!(f, "table ({})", join(t)),
            Report::Seller(m) => write!(f, "marginals ({})", join(m)),
        }
    }
}

/// Perturbations tried against the truth: every coordinate moved by
/// `±multiplier * step` for each multiplier, plus the all-zero report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviationGrid<T> {
    pub step: T,
    pub multipliers: Vec<i64>,
    pub include_zero: bool,
    /// Largest number of (report, realization) pairs evaluated.
    pub budget: usize,
}

impl<T: Scalar> Default for DeviationGrid<T> {
    fn default() -> Self {
        DeviationGrid { step: T::one(), multipliers: vec![1, 2, 5, 10], include_zero: true, budget: 2_000_000 }
    }
}

impl<T: Scalar> DeviationGrid<T> {
    /// The grid containing only the truthful report.
    pub fn truth_only() -> Self {
        DeviationGrid { multipliers: Vec::new(), include_zero: false, ..Self::default() }
    }

    fn shifts(&self) -> Vec<T> {
        self.multipliers
            .iter()
            .flat_map(|&k| {
                let d = self.step.clone() * T::from_int(k);
                [d.clone(), -d]
            })
            .collect()
    }

    fn perturb(&self, truth: &[T], skip_first: bool) -> Vec<Vec<T>> {
        let mut out = Vec::new();
        for i in usize::from(skip_first)..truth.len() {
            for d in self.shifts() {
                let moved = truth[i].clone() + d;
                if !moved.is_negative() {
                    let mut v = truth.to_vec();
                    v[i] = moved;
                    out.push(v);
                }
            }
        }
        if self.include_zero {
            out.push(vec![T::zero(); truth.len()]);
        }
        out.retain(|v| v.as_slice() != truth);
        out.sort();
        out.dedup();
        out
    }

    /// Valid misreports of `agent`: nonnegative, DMR for sellers and
    /// gross-substitute for table buyers.
    pub fn reports(&self, market: &Market<T>, agent: AgentId) -> Result<Vec<Report<T>>> {
        if let Some(b) = market.buyers().iter().find(|b| b.id == agent) {
            let mut out = Vec::new();
            match &b.valuation {
                BuyerValuation::UnitDemand(v) => {
                    out.extend(self.perturb(v, false).into_iter().map(|v| Report::Buyer(BuyerValuation::UnitDemand(v))))
                }
                BuyerValuation::Additive(v) => {
                    out.extend(self.perturb(v, false).into_iter().map(|v| Report::Buyer(BuyerValuation::Additive(v))))
                }
                BuyerValuation::Table(t) => {
                    for t in self.perturb(t, true) {
                        let v = BuyerValuation::Table(t);
                        if is_gross_substitute(&v, &default_gs_grid(&v))? {
                            out.push(Report::Buyer(v));
                        }
                    }
                }
            }
            return Ok(out);
        }
        let s = market.sellers().iter().find(|s| s.id == agent).ok_or(Error::UnknownAgent(agent))?;
        Ok(self
            .perturb(&s.valuation.marginals, false)
            .into_iter()
            .filter(|m| is_dmr(m))
            .map(Report::Seller)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Deviation<T> {
    pub agent: AgentId,
    pub report: Report<T>,
    /// Largest improvement over truth-telling in a single realization.
    pub delta: T,
    pub realization: usize,
    pub truthful_gain: T,
    pub deviating_gain: T,
}

fn apply_report<T: Scalar>(market: &Market<T>, agent: AgentId, report: &Report<T>) -> Result<Market<T>> {
    match report {
        Report::Buyer(v) => market.with_buyer_valuation(agent, v.clone()),
        Report::Seller(m) => market.with_seller_marginals(agent, m.clone()),
    }
}

/// Searches the grid for a report that beats truth-telling in some
/// realization, with gains measured by the agent's true valuation. Returns
/// the deviation with the largest improvement, or `None`.
pub fn find_profitable_deviation<T: Scalar, M: DirectMechanism<T>>(
    mechanism: &M,
    market: &Market<T>,
    agent: AgentId,
    grid: &DeviationGrid<T>,
) -> Result<Option<Deviation<T>>> {
    let reports = grid.reports(market, agent)?;
    let realizations = mechanism.realizations(market)?;
    let cost = (reports.len() + 1).saturating_mul(realizations);
    if cost > grid.budget {
        return Err(Error::GridTooLarge(format!(
            "{} reports x {realizations} realizations exceeds the budget of {}",
            reports.len() + 1,
            grid.budget
        )));
    }
    let truthful: Vec<T> = mechanism
        .settlements(market, agent)?
        .iter()
        .map(|s| s.gain(market, agent))
        .collect::<Result<_>>()?;
    let mut best: Option<Deviation<T>> = None;
    for report in reports {
        let lied = apply_report(market, agent, &report)?;
        let settlements = mechanism.settlements(&lied, agent)?;
        if settlements.len() != truthful.len() {
            return Err(Error::InvariantViolation("realization count depends on the report".into()));
        }
        for (i, (s, honest)) in settlements.iter().zip(&truthful).enumerate() {
            let gain = s.gain(market, agent)?;
            let delta = gain.clone() - honest;
            if delta.is_positive() && best.as_ref().is_none_or(|b| delta > b.delta) {
                best = Some(Deviation {
                    agent,
                    report: report.clone(),
                    delta,
                    realization: i,
                    truthful_gain: honest.clone(),
                    deviating_gain: gain,
                });
            }
        }
    }
    Ok(best)
}

/// Appendix scenarios with a worked outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReproductionId {
    McAfeeSbb,
    NaiveMultiunit,
    DemandSupplyInteraction,
}

impl ReproductionId {
    pub const ALL: [ReproductionId; 3] =
        [ReproductionId::McAfeeSbb, ReproductionId::NaiveMultiunit, ReproductionId::DemandSupplyInteraction];

    pub fn name(self) -> &'static str {
        match self {
            ReproductionId::McAfeeSbb => "mcafee-sbb",
            ReproductionId::NaiveMultiunit => "naive-multiunit",
            ReproductionId::DemandSupplyInteraction => "demand-supply-interaction",
        }
    }
}

impl FromStr for ReproductionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ReproductionId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown example id {s:?}")))
    }
}

/// One claimed fact about a scenario and whether the run confirms it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Claim {
    pub description: String,
    pub observed: String,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reproduction {
    pub id: ReproductionId,
    pub parameters: Vec<(String, String)>,
    pub claims: Vec<Claim>,
}

impl Reproduction {
    pub fn all_hold(&self) -> bool {
        self.claims.iter().all(|c| c.holds)
    }
}

impl fmt::Display for Reproduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "example: {}", self.id.name())?;
        for (k, v) in &self.parameters {
            writeln!(f, "  {k} = {v}")?;
        }
        for c in &self.claims {
            writeln!(f, "  [{}] {}: {}", if c.holds { "ok" } else { "FAIL" }, c.description, c.observed)?;
        }
        Ok(())
    }
}

fn claim(description: &str, observed: impl fmt::Display, holds: bool) -> Claim {
    Claim { description: description.to_string(), observed: observed.to_string(), holds }
}

/// `k - 1` sellers valuing their unit at 0 and one at `eps`; `k - 1`
/// buyers valuing a unit at 1 and one at `1 - eps`.
pub fn mcafee_sbb_market<T: Scalar>(k: usize, eps: T) -> Result<Market<T>> {
    if k == 0 {
        return Err(Error::InvalidSpec("k must be positive".into()));
    }
    let mut buyers = vec![BuyerValuation::UnitDemand(vec![T::one()]); k - 1];
    buyers.push(BuyerValuation::UnitDemand(vec![T::one() - eps.clone()]));
    let mut sellers = vec![SellerValuation::new(ItemType(0), vec![T::zero()]); k - 1];
    sellers.push(SellerValuation::new(ItemType(0), vec![eps]));
    Market::from_valuations(1, buyers, sellers)
}

/// Buyers bidding 10, 9 and 5; seller A holds units worth 4 and 1, seller
/// B one unit worth 2. Seller A has id 3.
pub fn naive_multiunit_market<T: Scalar>() -> Market<T> {
    let r = |n: i64| T::from_int(n);
    Market::from_valuations(
        1,
        [10, 9, 5].iter().map(|&v| BuyerValuation::UnitDemand(vec![r(v)])).collect(),
        vec![SellerValuation::new(ItemType(0), vec![r(4), r(1)]), SellerValuation::new(ItemType(0), vec![r(2)])],
    )
    .expect("static market is valid")
}

pub const NAIVE_MULTIUNIT_SELLER: AgentId = AgentId(3);

/// Two item-types x = 0 and y = 1 with five trader groups:
/// `2k²` buyers of y only (value 9), `2k - 2` buyers valuing either at 9,
/// two buyers of x only (value `k^100`), `2k²` y-sellers at 1 and `2k`
/// x-sellers at 6. The forced halving sends `k²`, `k - 1`, 0, `k² + K` and
/// `k` members of the groups to R.
pub fn demand_supply_market<T: Scalar>(k: usize, big_k: usize) -> Result<(Market<T>, Halving)> {
    if k < 1 || big_k > k * k {
        return Err(Error::InvalidSpec(format!("need k >= 1 and K <= k^2, got k = {k}, K = {big_k}")));
    }
    let r = |n: i64| T::from_int(n);
    let huge = T::from_rational(&num_traits::pow(crate::Rational::from_integer((k as i64).into()), 100))
        .ok_or_else(|| Error::InvalidSpec("k^100 does not fit the scalar".into()))?;
    let groups: [(usize, usize, Option<BuyerValuation<T>>, Option<SellerValuation<T>>); 5] = [
        (2 * k * k, k * k, Some(BuyerValuation::UnitDemand(vec![r(0), r(9)])), None),
        (2 * k - 2, k - 1, Some(BuyerValuation::UnitDemand(vec![r(9), r(9)])), None),
        (2, 0, Some(BuyerValuation::UnitDemand(vec![huge, r(0)])), None),
        (2 * k * k, k * k + big_k, None, Some(SellerValuation::new(ItemType(1), vec![r(1)]))),
        (2 * k, k, None, Some(SellerValuation::new(ItemType(0), vec![r(6)]))),
    ];
    let mut buyers = Vec::new();
    let mut sellers = Vec::new();
    let mut to_r = Vec::new();
    for (size, in_r, buyer, seller) in groups {
        for i in 0..size {
            match (&buyer, &seller) {
                (Some(b), _) => buyers.push(b.clone()),
                (_, Some(s)) => sellers.push(s.clone()),
                _ => unreachable!(),
            }
            to_r.push((buyer.is_some(), i < in_r));
        }
    }
    let market = Market::from_valuations(2, buyers, sellers)?;
    // ids: buyers in group order, then sellers in group order
    let (buyer_flags, seller_flags): (Vec<_>, Vec<_>) = to_r.into_iter().partition(|(is_buyer, _)| *is_buyer);
    let assignment: BTreeMap<AgentId, Half> = buyer_flags
        .into_iter()
        .chain(seller_flags)
        .enumerate()
        .map(|(i, (_, r))| (AgentId(i as u32), if r { Half::R } else { Half::L }))
        .collect();
    Ok((market, Halving::new(assignment)))
}

pub fn reproduce(id: ReproductionId) -> Result<Reproduction> {
    match id {
        ReproductionId::McAfeeSbb => reproduce_mcafee_sbb(100, crate::Rational::new(1.into(), 1000.into())),
        ReproductionId::NaiveMultiunit => reproduce_naive_multiunit(),
        ReproductionId::DemandSupplyInteraction => reproduce_demand_supply(10, 4, 0),
    }
}

pub fn reproduce_mcafee_sbb(k: usize, eps: crate::Rational) -> Result<Reproduction> {
    use crate::Rational;
    let market: Market<Rational> = mcafee_sbb_market(k, eps.clone())?;
    let out = run_mcafee(&SingleTypeMarket::from_market(&market)?);
    let optimum = solve_walrasian(&market)?.gain;
    let kk = Rational::from_int(k as i64);
    let two = Rational::from_int(2);
    let expected_gain = two.clone() * (kk.clone() - Rational::one()) * eps.clone();
    let expected_surplus = (kk.clone() - Rational::one()) * (Rational::one() - two.clone() * eps.clone());
    let expected_opt = kk - two * eps.clone();
    Ok(Reproduction {
        id: ReproductionId::McAfeeSbb,
        parameters: vec![("k".into(), k.to_string()), ("eps".into(), eps.to_string())],
        claims: vec![
            claim("deals", out.deals, out.deals + 1 == k),
            claim("trader gain = 2(k-1)eps", &out.trader_gain, out.trader_gain == expected_gain),
            claim("auctioneer surplus = (k-1)(1-2eps)", &out.surplus, out.surplus == expected_surplus),
            claim("optimal gain = k - 2eps", &optimum, optimum == expected_opt),
        ],
    })
}

pub fn reproduce_naive_multiunit() -> Result<Reproduction> {
    use crate::Rational;
    let market: Market<Rational> = naive_multiunit_market();
    let grid = DeviationGrid::default();
    let keep = McAfeeMechanism { mode: MultiUnitMode::KeepOthers };
    let naive = find_profitable_deviation(&keep, &market, NAIVE_MULTIUNIT_SELLER, &grid)?;
    let mida = find_profitable_deviation(&MidaExhaustive::default(), &market, NAIVE_MULTIUNIT_SELLER, &grid)?;
    let truthful = run_naive_multiunit_mcafee(&market, MultiUnitMode::KeepOthers)?;
    let describe = |d: &Option<Deviation<Rational>>| match d {
        Some(d) => format!("report {} gains {} more ({} vs {})", d.report, d.delta, d.deviating_gain, d.truthful_gain),
        None => "none".to_string(),
    };
    let price = truthful.sell_price.clone().map_or("none".to_string(), |p| p.to_string());
    Ok(Reproduction {
        id: ReproductionId::NaiveMultiunit,
        parameters: vec![("bids".into(), "10, 9, 5".into()), ("sellers".into(), "A: (4, 1), B: (2)".into())],
        claims: vec![
            claim("truthful sell price", price, truthful.sell_price == Some(Rational::from_int(4))),
            claim("profitable deviation for seller A under keep-others", describe(&naive), naive.is_some()),
            claim("profitable deviation for seller A under MIDA", describe(&mida), mida.is_none()),
        ],
    })
}

/// Replays the forced halving and, when `random_seeds > 0`, reports the
/// mean ratio over that many unforced halvings.
pub fn reproduce_demand_supply(k: usize, big_k: usize, random_seeds: usize) -> Result<Reproduction> {
    use crate::Rational;
    let (market, halving) = demand_supply_market::<Rational>(k, big_k)?;
    let optimum = solve_walrasian(&market)?;
    let params = market_parameters(&market, &optimum);
    let outcome = Mida::default().run_with_halving(&market, &halving, 0)?;
    outcome.verify(&market)?;
    let (r, l) = halving.split(&market);
    let posted_in_l = &outcome.prices_r;
    let supply_x_in_l: usize = l
        .sellers()
        .iter()
        .filter(|s| s.item() == ItemType(0))
        .map(|s| s.valuation.marginals.iter().filter(|m| *m < posted_in_l.get(ItemType(0))).count())
        .sum();
    let xx_buyers: Vec<AgentId> =
        market.buyers().iter().filter(|b| b.valuation.value(Bundle(0b10)).is_zero()).map(|b| b.id).collect();
    let xx_traded = xx_buyers.iter().filter(|id| !outcome.bundles[id].is_empty()).count();
    let ratio = outcome.gain_total.clone() / optimum.gain.clone();
    let diag = diagnose(&market, &optimum, &params, &outcome);
    let lost: Vec<String> = diag.loss.iter().map(|l| format!("{} of {}", l.deals_lost, l.k)).collect();
    let clearing: Vec<String> = diag
        .clearing_r
        .iter()
        .chain(&diag.clearing_l)
        .map(|c| format!("{} (bound {:.3})", c.difference, c.bound))
        .collect();
    let c = params.c.clone().map_or("undefined".into(), |c| c.to_string());
    let mut claims = vec![
        claim("optimal prices (x, y)", fmt_prices(&optimum.prices.0), true),
        claim("optimal deals k_x, k_y", format!("{}, {}", params.k[0], params.k[1]), params.k == vec![2 * k, 2 * k * k]),
        claim("c = k_max / k_min = k", &c, params.c == Some(Rational::from_int(k as i64))),
        claim("prices of R, posted in L", fmt_prices(&outcome.prices_r.0), true),
        claim("prices of L, posted in R", fmt_prices(&outcome.prices_l.0), true),
        claim("x supply in L at R's prices", supply_x_in_l, supply_x_in_l == 0),
        claim("x-only buyers that trade", xx_traded, xx_traded == 0),
        claim("deals lost per type", lost.join(", "), true),
        claim("clearing differences R then L", clearing.join(", "), true),
        claim(
            "realized ratio below 1%",
            format!("{:.3e} (exact {ratio})", ratio.to_f64_lossy()),
            ratio < Rational::new(1.into(), 100.into()),
        ),
    ];
    let _ = r;
    if random_seeds > 0 {
        let scenario = Scenario { diagnostics: false, ..Scenario::fixed("demand-supply-interaction", market) };
        let result = estimate_competitive_ratio(&scenario, random_seeds, 0)?;
        let mean = result.mean_ratio.unwrap_or_else(Rational::zero);
        claim_push(&mut claims, &format!("mean ratio over {random_seeds} random halvings"), &mean);
    }
    Ok(Reproduction {
        id: ReproductionId::DemandSupplyInteraction,
        parameters: vec![("k".into(), k.to_string()), ("K".into(), big_k.to_string())],
        claims,
    })
}

fn claim_push(claims: &mut Vec<Claim>, description: &str, value: &crate::Rational) {
    claims.push(claim(description, crate::scalar::format_significant(value, 6), true));
}

fn fmt_prices<T: Scalar>(p: &[T]) -> String {
    format!("({})", p.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use num_traits::Signed;

    fn r(n: i64) -> Rational {
        Rational::from_int(n)
    }

    #[test]
    fn degenerate_pair_has_zero_mean() {
        let market = Market::from_valuations(
            1,
            vec![BuyerValuation::UnitDemand(vec![r(10)])],
            vec![SellerValuation::new(ItemType(0), vec![r(1)])],
        )
        .unwrap();
        let result = estimate_competitive_ratio(&Scenario::fixed("pair", market), 20, 0).unwrap();
        assert_eq!(result.mean_ratio, Some(r(0)));
        assert!(result.records.iter().all(|t| t.degenerate_r && t.degenerate_l));
    }

    #[test]
    fn experiments_are_deterministic() {
        let spec = GeneratorSpec {
            g: 2,
            buyers: 12,
            sellers: 8,
            family: BuyerFamily::UnitDemand,
            value_range: (0, 20),
            max_units: 2,
        };
        let scenario =
            Scenario { id: "gen".into(), source: MarketSource::Generated(spec), mechanism: Mida::default(), diagnostics: true };
        let a = estimate_competitive_ratio::<Rational>(&scenario, 30, 5).unwrap();
        let b = estimate_competitive_ratio::<Rational>(&scenario, 30, 5).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.mean_ratio, b.mean_ratio);
        assert_eq!(a.corollary_failures, 0);
    }

    #[test]
    fn truth_only_grid_finds_nothing() {
        let market: Market<Rational> = naive_multiunit_market();
        let keep = McAfeeMechanism { mode: MultiUnitMode::KeepOthers };
        let found = find_profitable_deviation(&keep, &market, NAIVE_MULTIUNIT_SELLER, &DeviationGrid::truth_only());
        assert_eq!(found.unwrap(), None);
    }

    #[test]
    fn grid_respects_dmr_and_signs() {
        let market: Market<Rational> = naive_multiunit_market();
        let reports = DeviationGrid::default().reports(&market, NAIVE_MULTIUNIT_SELLER).unwrap();
        for rep in &reports {
            let Report::Seller(m) = rep else { panic!("seller reports only") };
            assert!(is_dmr(m) && m.iter().all(|x| !x.is_negative()));
        }
        assert!(reports.contains(&Report::Seller(vec![r(5), r(1)])));
        assert!(reports.contains(&Report::Seller(vec![r(0), r(0)])));
    }

    #[test]
    fn budget_is_enforced() {
        let market: Market<Rational> = naive_multiunit_market();
        let grid = DeviationGrid { budget: 3, ..DeviationGrid::default() };
        let err = find_profitable_deviation(&MidaExhaustive::default(), &market, AgentId(0), &grid);
        assert!(matches!(err, Err(Error::GridTooLarge(_))));
    }

    #[test]
    fn mcafee_sbb_arithmetic() {
        let rep = reproduce(ReproductionId::McAfeeSbb).unwrap();
        assert!(rep.all_hold(), "{rep}");
    }

    #[test]
    fn naive_multiunit_is_manipulable() {
        let rep = reproduce(ReproductionId::NaiveMultiunit).unwrap();
        assert!(rep.all_hold(), "{rep}");
    }

    #[test]
    fn ids_parse() {
        for id in ReproductionId::ALL {
            assert_eq!(id.name().parse::<ReproductionId>().unwrap(), id);
        }
        assert!("nope".parse::<ReproductionId>().is_err());
    }
}
