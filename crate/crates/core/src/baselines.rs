//! Benchmarks: McAfee's trade reduction, its naive multi-unit extension and
//! the optimal gain-from-trade.
//!
//! The trade reduction implemented here is the simplified two-price form:
//! sort asks up and bids down, let `k` be the last index where the ask does
//! not exceed the bid, and let the first `k - 1` pairs trade with sellers
//! receiving `s_k` and buyers paying `b_k`. The original mechanism's
//! single-price branch is not included. Equal values are ordered by agent id.
//!
//! Running McAfee repeatedly, one unit at a time, is not offered: its
//! manipulation (holding back units for later rounds) lies outside a
//! strategy space made of reported valuations.

use std::collections::BTreeMap;

use crate::equilibrium::solve_walrasian;
use crate::model::{AgentId, Bundle, Market};
use crate::{Error, Result, Scalar};

/// One item-type, one unit per agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleTypeMarket<T> {
    pub asks: Vec<(AgentId, T)>,
    pub bids: Vec<(AgentId, T)>,
}

impl<T: Scalar> SingleTypeMarket<T> {
    /// Reads a market with `g = 1` and single-unit sellers.
    pub fn from_market(market: &Market<T>) -> Result<Self> {
        if market.g() != 1 || market.sellers().iter().any(|s| s.valuation.units() != 1) {
            return Err(Error::InvalidMarket("McAfee needs one type and single-unit sellers".into()));
        }
        Ok(SingleTypeMarket {
            asks: market.sellers().iter().map(|s| (s.id, s.valuation.marginals[0].clone())).collect(),
            bids: market.buyers().iter().map(|b| (b.id, b.valuation.value(Bundle(1)))).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct McAfeeOutcome<T> {
    /// Index of the last efficient pair, 1-based; 0 when no pair is efficient.
    pub k: usize,
    pub deals: usize,
    pub buy_price: Option<T>,
    pub sell_price: Option<T>,
    pub buyers: Vec<AgentId>,
    /// Units sold per seller (sellers that sell nothing are absent).
    pub seller_units: BTreeMap<AgentId, usize>,
    pub trader_gain: T,
    /// Money kept by the auctioneer.
    pub surplus: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MultiUnitMode {
    /// The price-setting seller's other units keep trading.
    KeepOthers,
    /// Every unit of the price-setting seller is excluded from trade.
    RemoveOwner,
}

#[derive(Debug, Clone)]
struct Ask<T> {
    owner: AgentId,
    unit: usize,
    value: T,
}

pub fn run_mcafee<T: Scalar>(market: &SingleTypeMarket<T>) -> McAfeeOutcome<T> {
    let asks = market.asks.iter().map(|(id, v)| Ask { owner: *id, unit: 0, value: v.clone() }).collect();
    trade_reduction(asks, market.bids.clone(), MultiUnitMode::KeepOthers)
}

/// McAfee over virtual sellers: every unit of a seller becomes its own ask.
pub fn run_naive_multiunit_mcafee<T: Scalar>(market: &Market<T>, mode: MultiUnitMode) -> Result<McAfeeOutcome<T>> {
    if market.g() != 1 {
        return Err(Error::InvalidMarket("naive multi-unit McAfee needs a single item-type".into()));
    }
    let asks = market
        .sellers()
        .iter()
        .flat_map(|s| {
            s.valuation.marginals.iter().enumerate().map(move |(unit, v)| Ask { owner: s.id, unit, value: v.clone() })
        })
        .collect();
    let bids = market.buyers().iter().map(|b| (b.id, b.valuation.value(Bundle(1)))).collect();
    Ok(trade_reduction(asks, bids, mode))
}

fn trade_reduction<T: Scalar>(mut asks: Vec<Ask<T>>, mut bids: Vec<(AgentId, T)>, mode: MultiUnitMode) -> McAfeeOutcome<T> {
    asks.sort_by(|a, b| a.value.cmp(&b.value).then(a.owner.cmp(&b.owner)).then(b.unit.cmp(&a.unit)));
    bids.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let k = asks.iter().zip(&bids).take_while(|(a, b)| a.value <= b.1).count();
    if k == 0 {
        return McAfeeOutcome {
            k,
            deals: 0,
            buy_price: None,
            sell_price: None,
            buyers: Vec::new(),
            seller_units: BTreeMap::new(),
            trader_gain: T::zero(),
            surplus: T::zero(),
        };
    }
    let sell_price = asks[k - 1].value.clone();
    let buy_price = bids[k - 1].1.clone();
    let setter = asks[k - 1].owner;
    let selling: Vec<&Ask<T>> = match mode {
        MultiUnitMode::KeepOthers => asks[..k - 1].iter().collect(),
        MultiUnitMode::RemoveOwner => asks[..k - 1].iter().filter(|a| a.owner != setter).collect(),
    };
    let deals = selling.len().min(k - 1);
    let mut seller_units = BTreeMap::new();
    let mut trader_gain = T::zero();
    for ask in &selling[..deals] {
        *seller_units.entry(ask.owner).or_insert(0) += 1;
        trader_gain = trader_gain + &sell_price - &ask.value;
    }
    let buyers: Vec<AgentId> = bids[..deals].iter().map(|(id, _)| *id).collect();
    for (_, bid) in &bids[..deals] {
        trader_gain = trader_gain + bid - &buy_price;
    }
    let surplus = (buy_price.clone() - &sell_price) * T::from_int(deals as i64);
    McAfeeOutcome {
        k,
        deals,
        buy_price: Some(buy_price),
        sell_price: Some(sell_price),
        buyers,
        seller_units,
        trader_gain,
        surplus,
    }
}

/// The optimal gain-from-trade, the denominator of every competitive ratio.
pub fn optimal_benchmark<T: Scalar>(market: &Market<T>) -> Result<T> {
    Ok(solve_walrasian(market)?.gain)
}
