//! Analysis quantities of a run: who changes demand or supply when the
//! optimal prices are replaced by a half-market's prices, how far the
//! excess demand and supply differ, and how many optimal deals were lost.
//!
//! Every agent starts from its allocation in the fixed optimal equilibrium.
//! At the new prices a buyer keeps the demanded bundle closest to the one it
//! held, and a seller keeps the optimal quantity closest to the one it sold,
//! so agents change behavior only when the price change forces them to.
//!
//! The sampling error `e_x = m * sqrt(k_x * ln k_x)` and the closed-form
//! ratio bounds are the only floating-point quantities here.

use std::collections::{BTreeMap, BTreeSet};

use crate::equilibrium::Equilibrium;
use crate::mechanism::{Half, TradeOutcome};
use crate::model::{closest_demanded, indifferent_supply, strict_supply, AgentId, BuyerValuation, Market, PriceVector};
use crate::Scalar;

/// Member of a trader set: a virtual buyer of one type is identified by its
/// owner, a virtual seller by its owner and unit index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Trader {
    Buyer(AgentId),
    Unit(AgentId, usize),
}

impl Trader {
    pub fn owner(self) -> AgentId {
        match self {
            Trader::Buyer(id) | Trader::Unit(id, _) => id,
        }
    }
}

/// Movers of one type between the optimal prices and a half's prices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeSets<T> {
    /// Price change `p_half - p_opt`.
    pub delta: T,
    /// Buyers who stop demanding the type.
    pub b_minus: Vec<AgentId>,
    /// Buyers who start demanding the type.
    pub b_plus: Vec<AgentId>,
    /// Units whose sellers stop offering them; `(owner, unit index)`.
    pub s_minus: Vec<(AgentId, usize)>,
    /// Units whose sellers start offering them.
    pub s_plus: Vec<(AgentId, usize)>,
}

impl<T: Scalar> TypeSets<T> {
    /// Excess demand caused by the price change: `B+x ∪ Sx-`.
    pub fn d_plus(&self) -> Vec<Trader> {
        let mut out: Vec<Trader> = self.b_plus.iter().map(|&id| Trader::Buyer(id)).collect();
        out.extend(self.s_minus.iter().map(|&(id, u)| Trader::Unit(id, u)));
        out
    }

    /// Excess supply caused by the price change: `Bx- ∪ S+x`.
    pub fn d_minus(&self) -> Vec<Trader> {
        let mut out: Vec<Trader> = self.b_minus.iter().map(|&id| Trader::Buyer(id)).collect();
        out.extend(self.s_plus.iter().map(|&(id, u)| Trader::Unit(id, u)));
        out
    }

    pub fn is_empty(&self) -> bool {
        self.b_minus.is_empty() && self.b_plus.is_empty() && self.s_minus.is_empty() && self.s_plus.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraderSets<T> {
    pub per_type: Vec<TypeSets<T>>,
}

impl<T: Scalar> TraderSets<T> {
    /// Only the members owned by agents accepted by `keep`.
    pub fn restrict(&self, keep: impl Fn(AgentId) -> bool) -> TraderSets<T> {
        let per_type = self
            .per_type
            .iter()
            .map(|s| TypeSets {
                delta: s.delta.clone(),
                b_minus: s.b_minus.iter().copied().filter(|&id| keep(id)).collect(),
                b_plus: s.b_plus.iter().copied().filter(|&id| keep(id)).collect(),
                s_minus: s.s_minus.iter().copied().filter(|&(id, _)| keep(id)).collect(),
                s_plus: s.s_plus.iter().copied().filter(|&(id, _)| keep(id)).collect(),
            })
            .collect();
        TraderSets { per_type }
    }
}

/// Trader sets of the whole market for the move from `optimum.prices` to `p_half`.
pub fn compute_trader_sets<T: Scalar>(
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    p_half: &PriceVector<T>,
) -> TraderSets<T> {
    let g = market.g();
    let deltas = optimum.prices.deltas(p_half);
    let mut per_type: Vec<TypeSets<T>> = deltas
        .into_iter()
        .map(|delta| TypeSets { delta, b_minus: Vec::new(), b_plus: Vec::new(), s_minus: Vec::new(), s_plus: Vec::new() })
        .collect();
    for (b, &(_, held)) in market.buyers().iter().zip(&optimum.buyer_bundles) {
        let now = if p_half == &optimum.prices { held } else { closest_demanded(&b.valuation, p_half, held) };
        for x in 0..g {
            let item = crate::model::ItemType(x);
            match (held.contains(item), now.contains(item)) {
                (true, false) => per_type[x].b_minus.push(b.id),
                (false, true) => per_type[x].b_plus.push(b.id),
                _ => {}
            }
        }
    }
    for (s, &(_, sold)) in market.sellers().iter().zip(&optimum.seller_units) {
        let p = p_half.get(s.item());
        let lo = strict_supply(&s.valuation, p);
        let hi = lo + indifferent_supply(&s.valuation, p);
        let offered = sold.clamp(lo, hi);
        let units = s.valuation.units();
        let sets = &mut per_type[s.item().0];
        // a seller offering q units offers its q lowest-valued ones
        if offered < sold {
            sets.s_minus.extend((units - sold..units - offered).map(|u| (s.id, u)));
        } else {
            sets.s_plus.extend((units - offered..units - sold).map(|u| (s.id, u)));
        }
    }
    TraderSets { per_type }
}

/// Exact clearing difference of one type against its sampling-error bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingCheck {
    /// `|d_{x-} - d_{+x}|`
    pub difference: usize,
    /// `2 e_x`
    pub bound: f64,
    pub within: bool,
}

pub fn check_clearing_difference<T: Scalar>(sets: &TraderSets<T>, params: &MarketParameters<T>) -> Vec<ClearingCheck> {
    sets.per_type
        .iter()
        .zip(&params.e)
        .map(|(s, e)| {
            let difference = s.d_minus().len().abs_diff(s.d_plus().len());
            ClearingCheck { difference, bound: 2.0 * e, within: (difference as f64) < 2.0 * e }
        })
        .collect()
}

/// Containment of excess supply of a cheaper type in the excess demand of
/// types that became even cheaper, and the mirror statement for types that
/// became more expensive. One flag per type.
pub fn check_ddf_corollary<T: Scalar>(sets: &TraderSets<T>) -> Vec<bool> {
    let types = &sets.per_type;
    let zero = T::zero();
    types
        .iter()
        .map(|s| {
            let cheaper_ok = s.delta > zero || {
                let pool: BTreeSet<Trader> =
                    types.iter().filter(|y| y.delta < s.delta).flat_map(|y| y.d_plus()).collect();
                s.d_minus().iter().all(|t| pool.contains(t))
            };
            let dearer_ok = s.delta < zero || {
                let pool: BTreeSet<Trader> =
                    types.iter().filter(|z| z.delta > s.delta).flat_map(|z| z.d_minus()).collect();
                s.d_plus().iter().all(|t| pool.contains(t))
            };
            cheaper_ok && dearer_ok
        })
        .collect()
}

/// True when, per type, every seller unit that stopped being offered is
/// worth at least as much as every efficient unit still offered.
pub fn sellers_drop_highest_first<T: Scalar>(
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    sets: &TraderSets<T>,
) -> bool {
    let efficient = crate::equilibrium::efficient_trader_sets(market, optimum);
    let marginals: BTreeMap<AgentId, &[T]> =
        market.sellers().iter().map(|s| (s.id, s.valuation.marginals.as_slice())).collect();
    sets.per_type.iter().zip(&efficient.per_type).all(|(s, eff)| {
        let dropped: BTreeSet<(AgentId, usize)> = s.s_minus.iter().copied().collect();
        let dropped_min = dropped.iter().map(|&(o, u)| &marginals[&o][u]).min();
        let kept_max = eff
            .sellers
            .iter()
            .filter(|v| !dropped.contains(&(v.owner, v.unit_index)))
            .map(|v| &v.marginal_value)
            .max();
        match (dropped_min, kept_max) {
            (Some(d), Some(k)) => d >= k,
            _ => true,
        }
    })
}

/// Size parameters of the optimal situation.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParameters<T> {
    pub g: usize,
    /// Largest number of units held by one seller.
    pub m: usize,
    pub k: Vec<usize>,
    pub k_min: usize,
    pub k_max: usize,
    /// `k_max / k_min`; absent when some type has no optimal trade.
    pub c: Option<T>,
    /// Largest over smallest positive buyer-seller value gap of one type.
    pub h: Option<T>,
    /// Approximate sampling error per type.
    pub e: Vec<f64>,
}

impl<T: Scalar> MarketParameters<T> {
    pub fn e_max(&self) -> f64 {
        self.e.iter().cloned().fold(0.0, f64::max)
    }
}

/// `m * sqrt(k ln k)`, zero for `k = 0`.
pub fn sampling_error(m: usize, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let k = k as f64;
    m as f64 * (k * k.ln()).sqrt()
}

pub fn market_parameters<T: Scalar>(market: &Market<T>, optimum: &Equilibrium<T>) -> MarketParameters<T> {
    let g = market.g();
    let m = market.max_units();
    let k = optimum.per_type_volume.clone();
    let k_min = k.iter().copied().min().unwrap_or(0);
    let k_max = k.iter().copied().max().unwrap_or(0);
    let c = (k_min > 0).then(|| T::from_int(k_max as i64) / T::from_int(k_min as i64));
    let e = k.iter().map(|&kx| sampling_error(m, kx)).collect();
    MarketParameters { g, m, k, k_min, k_max, c, h: gap_ratio(market), e }
}

// max / min over positive (buyer singleton value - seller marginal) gaps
fn gap_ratio<T: Scalar>(market: &Market<T>) -> Option<T> {
    let mut largest: Option<T> = None;
    let mut smallest: Option<T> = None;
    for x in 0..market.g() {
        let mut costs: Vec<T> = market
            .sellers()
            .iter()
            .filter(|s| s.item().0 == x)
            .flat_map(|s| s.valuation.marginals.iter().cloned())
            .collect();
        if costs.is_empty() {
            continue;
        }
        costs.sort();
        for b in market.buyers() {
            let v = singleton(&b.valuation, x);
            let below = costs.partition_point(|c| c < &v);
            if below == 0 {
                continue;
            }
            let widest = v.clone() - &costs[0];
            let narrowest = v - &costs[below - 1];
            if largest.as_ref().is_none_or(|l| &widest > l) {
                largest = Some(widest);
            }
            if smallest.as_ref().is_none_or(|s| &narrowest < s) {
                smallest = Some(narrowest);
            }
        }
    }
    Some(largest? / smallest?)
}

fn singleton<T: Scalar>(v: &BuyerValuation<T>, x: usize) -> T {
    v.value(crate::model::Bundle::single(crate::model::ItemType(x)))
}

/// Which closed form of the ratio bound applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundPreset {
    General,
    UnitDemand,
    SingleType,
}

impl BoundPreset {
    pub fn for_market<T: Scalar>(market: &Market<T>) -> BoundPreset {
        if market.g() == 1 {
            BoundPreset::SingleType
        } else if market.buyers().iter().all(|b| matches!(b.valuation, BuyerValuation::UnitDemand(_))) {
            BoundPreset::UnitDemand
        } else {
            BoundPreset::General
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioBound {
    pub via_c: Option<f64>,
    pub via_h: Option<f64>,
    /// `1 - 20 * 2^(3g) * m * sqrt(ln^5 k / k) >= 0`, the numeric premise
    /// under which the general bound is meaningful.
    pub assumption_holds: bool,
}

/// Closed-form lower bounds on the expected competitive ratio, capped at 1.
/// Absent when the parameter they use is undefined or `k_max = 0`.
pub fn theorem1_bound<T: Scalar>(params: &MarketParameters<T>, preset: BoundPreset) -> RatioBound {
    if params.k_max == 0 {
        return RatioBound { via_c: None, via_h: None, assumption_holds: false };
    }
    let k = params.k_max as f64;
    let (g, m) = (params.g as f64, params.m as f64);
    let root5 = (k.ln().powi(5) / k).sqrt();
    let root1 = (k.ln() / k).sqrt();
    let cube = 2f64.powi(3 * params.g as i32);
    let assumption_holds = 1.0 - 20.0 * cube * m * root5 >= 0.0;
    let c = params.c.as_ref().map(|c| c.to_f64_lossy());
    let h = params.h.as_ref().map(|h| h.to_f64_lossy());
    let cap = |v: f64| v.min(1.0);
    let (via_c, via_h) = match preset {
        BoundPreset::General => {
            let factor = cube * 20.0 * m * g * root5;
            (c.map(|c| cap(1.0 - factor * c)), h.map(|h| cap(1.0 - factor * h)))
        }
        BoundPreset::UnitDemand => {
            let factor = 640.0 * g * g * m * root5;
            (c.map(|c| cap(1.0 - factor * c)), h.map(|h| cap(1.0 - factor * h)))
        }
        BoundPreset::SingleType => (Some(cap(1.0 - 160.0 * m * root1)), None),
    };
    RatioBound { via_c, via_h, assumption_holds }
}

/// Lost optimal deals of one type against `2 e_x + d_{+x} + d_{x-}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAccount {
    pub k: usize,
    pub realized: usize,
    /// `k_x` minus units traded in both halves; negative when the halves
    /// together trade more than the optimum.
    pub deals_lost: i64,
    /// Movers counted in each half at the prices posted there.
    pub movers: usize,
    pub bound_rhs: f64,
    pub within: bool,
}

pub fn loss_accounting<T: Scalar>(
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    params: &MarketParameters<T>,
    outcome: &TradeOutcome<T>,
) -> Vec<LossAccount> {
    let in_half = |half: Half| move |id: AgentId| outcome.halving.half_of(id) == Some(half);
    let in_r = compute_trader_sets(market, optimum, &outcome.prices_l).restrict(in_half(Half::R));
    let in_l = compute_trader_sets(market, optimum, &outcome.prices_r).restrict(in_half(Half::L));
    (0..market.g())
        .map(|x| {
            let movers = [&in_r, &in_l]
                .iter()
                .map(|s| s.per_type[x].d_plus().len() + s.per_type[x].d_minus().len())
                .sum::<usize>();
            let k = params.k[x];
            let realized = outcome.volume_r[x] + outcome.volume_l[x];
            let deals_lost = k as i64 - realized as i64;
            let bound_rhs = 2.0 * params.e[x] + movers as f64;
            LossAccount { k, realized, deals_lost, movers, bound_rhs, within: (deals_lost as f64) < bound_rhs }
        })
        .collect()
}

/// Everything measured on one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics<T> {
    /// Sets of half R at its own prices, restricted to R's agents.
    pub sets_r: TraderSets<T>,
    pub sets_l: TraderSets<T>,
    pub clearing_r: Vec<ClearingCheck>,
    pub clearing_l: Vec<ClearingCheck>,
    /// Corollary on the whole population at each half's prices; restricting
    /// to a half preserves it.
    pub corollary_r: Vec<bool>,
    pub corollary_l: Vec<bool>,
    pub sellers_prefix: bool,
    pub loss: Vec<LossAccount>,
}

impl<T: Scalar> RunDiagnostics<T> {
    pub fn corollary_holds(&self) -> bool {
        self.corollary_r.iter().chain(&self.corollary_l).all(|&ok| ok)
    }
}

pub fn diagnose<T: Scalar>(
    market: &Market<T>,
    optimum: &Equilibrium<T>,
    params: &MarketParameters<T>,
    outcome: &TradeOutcome<T>,
) -> RunDiagnostics<T> {
    let global_r = compute_trader_sets(market, optimum, &outcome.prices_r);
    let global_l = compute_trader_sets(market, optimum, &outcome.prices_l);
    let sets_r = global_r.restrict(|id| outcome.halving.half_of(id) == Some(Half::R));
    let sets_l = global_l.restrict(|id| outcome.halving.half_of(id) == Some(Half::L));
    RunDiagnostics {
        clearing_r: check_clearing_difference(&sets_r, params),
        clearing_l: check_clearing_difference(&sets_l, params),
        corollary_r: check_ddf_corollary(&global_r),
        corollary_l: check_ddf_corollary(&global_l),
        sellers_prefix: sellers_drop_highest_first(market, optimum, &global_r)
            && sellers_drop_highest_first(market, optimum, &global_l),
        loss: loss_accounting(market, optimum, params, outcome),
        sets_r,
        sets_l,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_walrasian;
    use crate::model::{ItemType, SellerValuation};
    use crate::Rational;

    fn r(n: i64) -> Rational {
        Rational::from_int(n)
    }

    fn single_type(buyers: &[i64], sellers: &[i64]) -> Market<Rational> {
        Market::from_valuations(
            1,
            buyers.iter().map(|&v| BuyerValuation::UnitDemand(vec![r(v)])).collect(),
            sellers.iter().map(|&v| SellerValuation::new(ItemType(0), vec![r(v)])).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_prices_move_nobody() {
        let market = single_type(&[9, 8, 2], &[1, 3, 7]);
        let eq = solve_walrasian(&market).unwrap();
        let sets = compute_trader_sets(&market, &eq, &eq.prices.clone());
        assert!(sets.per_type.iter().all(|s| s.is_empty()));
        assert_eq!(check_ddf_corollary(&sets), vec![true]);
    }

    #[test]
    fn higher_half_price_loses_buyers_and_gains_sellers() {
        // optimum at p = 3 trades buyers 9, 8, 5 with sellers 1, 2, 3
        let market = single_type(&[9, 8, 5, 2], &[1, 2, 3, 6, 7]);
        let eq = solve_walrasian(&market).unwrap();
        assert_eq!(eq.prices, PriceVector(vec![r(3)]));
        let sets = compute_trader_sets(&market, &eq, &PriceVector(vec![r(7)]));
        let s = &sets.per_type[0];
        assert_eq!(s.b_minus, vec![AgentId(2)]);
        assert!(s.b_plus.is_empty() && s.s_minus.is_empty());
        assert_eq!(s.s_plus, vec![(AgentId(7), 0)]);
        assert_eq!(check_ddf_corollary(&sets), vec![true]);
    }

    #[test]
    fn buyers_flow_to_the_cheaper_type() {
        let market = Market::from_valuations(
            2,
            vec![BuyerValuation::UnitDemand(vec![r(10), r(9)]); 2],
            vec![SellerValuation::new(ItemType(0), vec![r(2), r(2)]), SellerValuation::new(ItemType(1), vec![r(3), r(3)])],
        )
        .unwrap();
        let eq = solve_walrasian(&market).unwrap();
        let p = PriceVector(vec![eq.prices.0[0].clone() - r(1), eq.prices.0[1].clone() - r(3)]);
        let sets = compute_trader_sets(&market, &eq, &p);
        assert!(sets.per_type[1].delta < sets.per_type[0].delta);
        assert!(sets.per_type[0].b_minus.iter().all(|id| sets.per_type[1].b_plus.contains(id)));
        assert!(check_ddf_corollary(&sets).iter().all(|&ok| ok));
    }

    #[test]
    fn bounds() {
        let params = MarketParameters::<Rational> {
            g: 1,
            m: 1,
            k: vec![1_000_000],
            k_min: 1_000_000,
            k_max: 1_000_000,
            c: Some(r(1)),
            h: None,
            e: vec![sampling_error(1, 1_000_000)],
        };
        let bound = theorem1_bound(&params, BoundPreset::SingleType);
        let expected = 1.0 - 160.0 * ((1e6f64).ln() / 1e6).sqrt();
        assert!((bound.via_c.unwrap() - expected).abs() < 1e-12);
        let tiny = MarketParameters { k: vec![4], k_min: 4, k_max: 4, ..params };
        let bound = theorem1_bound(&tiny, BoundPreset::General);
        assert!(bound.via_c.unwrap() < 0.0);
        assert!(!bound.assumption_holds);
    }

    #[test]
    fn sampling_error_value() {
        assert!((sampling_error(1, 100) - 21.4597).abs() < 1e-3);
        assert_eq!(sampling_error(3, 0), 0.0);
    }

    #[test]
    fn gap_ratio_uses_extreme_positive_gaps() {
        let market = single_type(&[9, 4], &[1, 3, 20]);
        let eq = solve_walrasian(&market).unwrap();
        let params = market_parameters(&market, &eq);
        assert_eq!(params.h, Some(r(8)));
        assert_eq!(params.c, Some(r(1)));
    }
}
