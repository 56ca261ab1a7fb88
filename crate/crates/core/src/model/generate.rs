//! Seeded market generators.
//!
//! [`generate_market`] draws independent agents from simple integer ranges.
//! Table buyers are verified with the exact exchange test
//! [`is_m_natural_concave`](super::is_m_natural_concave), which is cheap
//! enough to run on every generated valuation.
//! [`calibrated_market`] builds markets whose optimal trade volume per type
//! is known in advance: efficient buyers are placed above a price band and
//! efficient sellers below it, padded with inefficient traders on the wrong
//! side of the band.

use rand::Rng;

use super::{is_m_natural_concave, BuyerValuation, ItemType, Market, SellerValuation, MAX_ITEM_TYPES};
use crate::rng::substream;
use crate::{Error, Result, Scalar};

/// Valuation family for generated buyers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuyerFamily {
    UnitDemand,
    Additive,
    /// Assignment (OXS) valuations: each buyer has a few slots, each slot
    /// takes at most one item, and a bundle is worth its best matching.
    /// These are gross substitutes; every table is verified anyway.
    TableGs,
}

/// Parameters of an i.i.d. random market.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorSpec {
    pub g: usize,
    pub buyers: usize,
    pub sellers: usize,
    pub family: BuyerFamily,
    /// Inclusive integer range for buyer values and seller marginals.
    pub value_range: (i64, i64),
    /// Each seller holds between 1 and `max_units` units.
    pub max_units: usize,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        if self.g == 0 || self.g > MAX_ITEM_TYPES {
            return Err(Error::InvalidSpec(format!("g = {} outside 1..={MAX_ITEM_TYPES}", self.g)));
        }
        let (lo, hi) = self.value_range;
        if lo < 0 || lo > hi {
            return Err(Error::InvalidSpec(format!("bad value range [{lo}, {hi}]")));
        }
        if self.sellers > 0 && self.max_units == 0 {
            return Err(Error::InvalidSpec("sellers need at least one unit".into()));
        }
        Ok(())
    }
}

/// Draws a market from `spec`; identical `(spec, seed)` give identical markets.
pub fn generate_market<T: Scalar>(spec: &GeneratorSpec, seed: u64) -> Result<Market<T>> {
    spec.validate()?;
    let (lo, hi) = spec.value_range;
    let g = spec.g;
    let mut rng = substream(seed, "market/buyers");
    let mut buyers = Vec::with_capacity(spec.buyers);
    for _ in 0..spec.buyers {
        let valuation = match spec.family {
            BuyerFamily::UnitDemand => BuyerValuation::UnitDemand(draw_values(&mut rng, g, lo, hi)),
            BuyerFamily::Additive => BuyerValuation::Additive(draw_values(&mut rng, g, lo, hi)),
            BuyerFamily::TableGs => {
                let slots = rng.gen_range(1..=g);
                let weights: Vec<Vec<T>> = (0..slots).map(|_| draw_values(&mut rng, g, lo, hi)).collect();
                let v = BuyerValuation::Table(assignment_table(g, &weights));
                if !is_m_natural_concave(&v) {
                    return Err(Error::InvariantViolation("generated assignment valuation is not GS".into()));
                }
                v
            }
        };
        buyers.push(valuation);
    }
    let mut rng = substream(seed, "market/sellers");
    let mut sellers = Vec::with_capacity(spec.sellers);
    for _ in 0..spec.sellers {
        let item = ItemType(rng.gen_range(0..g));
        let units = rng.gen_range(1..=spec.max_units);
        sellers.push(SellerValuation::new(item, descending(draw_values(&mut rng, units, lo, hi))));
    }
    Market::from_valuations(g, buyers, sellers)
}

fn draw_values<T: Scalar, R: Rng>(rng: &mut R, n: usize, lo: i64, hi: i64) -> Vec<T> {
    (0..n).map(|_| T::from_int(rng.gen_range(lo..=hi))).collect()
}

fn descending<T: Scalar>(mut values: Vec<T>) -> Vec<T> {
    values.sort_by(|a, b| b.cmp(a));
    values
}

// Best matching of items to slots for every bundle, by DP over slots.
fn assignment_table<T: Scalar>(g: usize, weights: &[Vec<T>]) -> Vec<T> {
    let size = 1usize << g;
    let mut best = vec![T::zero(); size];
    for slot in weights {
        let previous = best.clone();
        for mask in 1..size {
            for (x, w) in slot.iter().enumerate() {
                if mask & (1 << x) != 0 {
                    let candidate = previous[mask & !(1 << x)].clone() + w;
                    if candidate > best[mask] {
                        best[mask] = candidate;
                    }
                }
            }
        }
    }
    best
}

/// A market with a designed optimal volume per type.
///
/// For each type `x` with target `k_x`: `k_x` efficient buyers value `x` in
/// `[51, 100]` and every other type in `[0, 49]`; `k_x` efficient units are
/// held by sellers with marginals in `[0, 49]`; `k_x / 2` inefficient buyers
/// value everything in `[0, 49]`; `k_x / 2` inefficient units have marginals
/// in `[51, 100]`. Seller sizes are drawn in `1..=max_units`.
///
/// Every efficient unit is worth more to some efficient buyer of its type
/// than to anyone else and every inefficient unit costs more than any
/// inefficient buyer pays, so the optimal volume of `x` is exactly `k_x`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CalibratedSpec {
    pub targets: Vec<usize>,
    pub max_units: usize,
    pub family: BuyerFamily,
}

pub fn calibrated_market<T: Scalar>(spec: &CalibratedSpec, seed: u64) -> Result<Market<T>> {
    let g = spec.targets.len();
    if g == 0 || g > MAX_ITEM_TYPES {
        return Err(Error::InvalidSpec(format!("{g} targets; need 1..={MAX_ITEM_TYPES}")));
    }
    if spec.max_units == 0 {
        return Err(Error::InvalidSpec("max_units must be positive".into()));
    }
    if spec.family == BuyerFamily::TableGs {
        return Err(Error::InvalidSpec("calibrated markets use unit-demand or additive buyers".into()));
    }
    let wrap = |values: Vec<T>| match spec.family {
        BuyerFamily::Additive => BuyerValuation::Additive(values),
        _ => BuyerValuation::UnitDemand(values),
    };
    let mut rng = substream(seed, "calibrated/buyers");
    let mut buyers = Vec::new();
    for (home, &k) in spec.targets.iter().enumerate() {
        for _ in 0..k {
            let mut values: Vec<T> = draw_values(&mut rng, g, 0, 49);
            values[home] = T::from_int(rng.gen_range(51..=100));
            buyers.push(wrap(values));
        }
        for _ in 0..k / 2 {
            buyers.push(wrap(draw_values(&mut rng, g, 0, 49)));
        }
    }
    let mut rng = substream(seed, "calibrated/sellers");
    let mut sellers = Vec::new();
    for (x, &k) in spec.targets.iter().enumerate() {
        for (units, (lo, hi)) in [(k, (0, 49)), (k / 2, (51, 100))] {
            let mut left = units;
            while left > 0 {
                let size = rng.gen_range(1..=spec.max_units.min(left));
                sellers.push(SellerValuation::new(ItemType(x), descending(draw_values(&mut rng, size, lo, hi))));
                left -= size;
            }
        }
    }
    Market::from_valuations(g, buyers, sellers)
}
