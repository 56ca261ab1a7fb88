use super::{Bundle, BuyerValuation, PriceVector, SellerValuation};
use crate::Scalar;

/// How to pick one bundle out of a demand set with several optimal bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub enum TieBreak {
    /// Fewest items first, then lowest bitmask.
    #[default]
    Canonical,
    /// Most items first, then lowest bitmask.
    MaxCardinality,
}

/// Result of a buyer's demand query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Demand<T> {
    pub best_gain: T,
    /// Every gain-maximizing bundle, in canonical order. Never empty.
    pub bundles: Vec<Bundle>,
}

impl<T> Demand<T> {
    pub fn canonical(&self) -> Bundle {
        self.bundles[0]
    }

    pub fn pick(&self, policy: TieBreak) -> Bundle {
        match policy {
            TieBreak::Canonical => self.canonical(),
            TieBreak::MaxCardinality => *self
                .bundles
                .iter()
                .max_by(|a, b| a.len().cmp(&b.len()).then(b.0.cmp(&a.0)))
                .expect("demand set is never empty"),
        }
    }

    pub fn contains(&self, bundle: Bundle) -> bool {
        self.bundles.contains(&bundle)
    }
}

/// All bundles within `available` maximizing `v(B) - p(B)`.
pub fn buyer_demand<T: Scalar>(v: &BuyerValuation<T>, prices: &PriceVector<T>, available: Bundle) -> Demand<T> {
    let mut best_gain = T::zero();
    let mut bundles = vec![Bundle::EMPTY];
    for bundle in available.subsets().skip(1) {
        let gain = v.value(bundle) - prices.of_bundle(bundle);
        match gain.cmp(&best_gain) {
            std::cmp::Ordering::Greater => {
                best_gain = gain;
                bundles.clear();
                bundles.push(bundle);
            }
            std::cmp::Ordering::Equal => bundles.push(bundle),
            std::cmp::Ordering::Less => {}
        }
    }
    bundles.sort_by_key(|b| b.canonical_key());
    Demand { best_gain, bundles }
}

/// `max_B v(B) - p(B)` over all bundles, with shortcuts for the structured families.
pub fn indirect_utility<T: Scalar>(v: &BuyerValuation<T>, prices: &PriceVector<T>) -> T {
    match v {
        BuyerValuation::UnitDemand(values) => values
            .iter()
            .zip(&prices.0)
            .map(|(value, p)| value.clone() - p)
            .fold(T::zero(), |best, gain| if gain > best { gain } else { best }),
        BuyerValuation::Additive(values) => values.iter().zip(&prices.0).fold(T::zero(), |acc, (value, p)| {
            if value > p {
                acc + value - p
            } else {
                acc
            }
        }),
        BuyerValuation::Table(_) => buyer_demand(v, prices, Bundle::full(prices.len())).best_gain,
    }
}

/// Among the bundles demanded at `prices`, the one closest to `previous`
/// (fewest items added or dropped), ties broken canonically. Models an agent
/// that keeps as much of its old bundle as remains optimal.
pub fn closest_demanded<T: Scalar>(v: &BuyerValuation<T>, prices: &PriceVector<T>, previous: Bundle) -> Bundle {
    let demand = buyer_demand(v, prices, Bundle::full(prices.len()));
    *demand
        .bundles
        .iter()
        .min_by_key(|b| ((b.0 ^ previous.0).count_ones(), b.canonical_key()))
        .expect("demand set is never empty")
}

/// Result of a seller's supply query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Supply<T> {
    pub best_gain: T,
    /// Every gain-maximizing quantity, ascending.
    pub quantities: Vec<usize>,
}

impl<T> Supply<T> {
    pub fn min_quantity(&self) -> usize {
        self.quantities[0]
    }

    pub fn max_quantity(&self) -> usize {
        *self.quantities.last().expect("supply set is never empty")
    }
}

/// All quantities `q` maximizing `q * p - (v(m') - v(m' - q))`.
pub fn seller_supply<T: Scalar>(v: &SellerValuation<T>, price: &T) -> Supply<T> {
    let mut best_gain = T::zero();
    let mut quantities = vec![0];
    let mut revenue = T::zero();
    for q in 1..=v.units() {
        revenue = revenue + price;
        let gain = revenue.clone() - v.cost_of_selling(q);
        match gain.cmp(&best_gain) {
            std::cmp::Ordering::Greater => {
                best_gain = gain;
                quantities.clear();
                quantities.push(q);
            }
            std::cmp::Ordering::Equal => quantities.push(q),
            std::cmp::Ordering::Less => {}
        }
    }
    Supply { best_gain, quantities }
}

/// Number of units a DMR seller is strictly willing to sell at `price`.
pub(crate) fn strict_supply<T: Scalar>(v: &SellerValuation<T>, price: &T) -> usize {
    v.marginals.iter().filter(|m| *m < price).count()
}

/// Units whose marginal value equals `price` (indifferent units).
pub(crate) fn indifferent_supply<T: Scalar>(v: &SellerValuation<T>, price: &T) -> usize {
    v.marginals.iter().filter(|m| *m == price).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ItemType;
    use crate::Rational;

    fn r(n: i64) -> Rational {
        Rational::from_int(n)
    }

    fn prices(p: &[i64]) -> PriceVector<Rational> {
        PriceVector(p.iter().map(|&x| r(x)).collect())
    }

    // buyer valuing {x}=6, {y}=8, {x,y}=9
    fn six_eight_nine() -> BuyerValuation<Rational> {
        BuyerValuation::Table(vec![r(0), r(6), r(8), r(9)])
    }

    #[test]
    fn demand_at_four_four_is_the_y_singleton() {
        // gains: {x} 2, {y} 4, {x,y} 1
        let d = buyer_demand(&six_eight_nine(), &prices(&[4, 4]), Bundle(0b11));
        assert_eq!(d.best_gain, r(4));
        assert_eq!(d.bundles, vec![Bundle(0b10)]);
        assert_eq!(indirect_utility(&six_eight_nine(), &prices(&[4, 4])), r(4));
    }

    #[test]
    fn demand_at_one_one_ties_y_with_both_items() {
        // gains: {x} 5, {y} 7, {x,y} 7
        let d = buyer_demand(&six_eight_nine(), &prices(&[1, 1]), Bundle(0b11));
        assert_eq!(d.best_gain, r(7));
        assert_eq!(d.bundles, vec![Bundle(0b10), Bundle(0b11)]);
    }

    #[test]
    fn expensive_items_leave_only_the_empty_bundle() {
        let d = buyer_demand(&six_eight_nine(), &prices(&[50, 50]), Bundle(0b11));
        assert_eq!(d.best_gain, r(0));
        assert_eq!(d.bundles, vec![Bundle::EMPTY]);
    }

    #[test]
    fn availability_restricts_demand() {
        let d = buyer_demand(&six_eight_nine(), &prices(&[1, 1]), Bundle(0b01));
        assert_eq!(d.best_gain, r(5));
        assert_eq!(d.bundles, vec![Bundle(0b01)]);
    }

    #[test]
    fn tie_policies() {
        let v = BuyerValuation::UnitDemand(vec![r(5), r(5)]);
        let d = buyer_demand(&v, &prices(&[5, 5]), Bundle(0b11));
        assert_eq!(d.canonical(), Bundle::EMPTY);
        assert_eq!(d.pick(TieBreak::MaxCardinality), Bundle(0b01));
    }

    #[test]
    fn fast_indirect_utility_matches_enumeration() {
        for v in [
            BuyerValuation::UnitDemand(vec![r(3), r(7), r(1)]),
            BuyerValuation::Additive(vec![r(3), r(7), r(1)]),
        ] {
            for p in [[0, 0, 0], [2, 8, 0], [4, 4, 4], [1, 6, 2]] {
                let p = prices(&p);
                let brute = buyer_demand(&v, &p, Bundle::full(3)).best_gain;
                assert_eq!(indirect_utility(&v, &p), brute);
            }
        }
    }

    #[test]
    fn seller_with_seven_two_sells_one_unit_at_six() {
        let v = SellerValuation::new(ItemType(0), vec![r(7), r(2)]);
        let s = seller_supply(&v, &r(6));
        assert_eq!(s.best_gain, r(4));
        assert_eq!(s.quantities, vec![1]);
        let s = seller_supply(&v, &r(0));
        assert_eq!((s.best_gain, s.quantities), (r(0), vec![0]));
    }

    #[test]
    fn indifferent_seller_supplies_every_quantity() {
        let v = SellerValuation::new(ItemType(0), vec![r(5), r(5), r(5)]);
        let s = seller_supply(&v, &r(5));
        assert_eq!(s.best_gain, r(0));
        assert_eq!(s.quantities, vec![0, 1, 2, 3]);
        assert_eq!(strict_supply(&v, &r(5)), 0);
        assert_eq!(indifferent_supply(&v, &r(5)), 3);
    }

    #[test]
    fn closest_bundle_prefers_keeping_items() {
        let v = BuyerValuation::UnitDemand(vec![r(5), r(5)]);
        let p = prices(&[1, 1]);
        assert_eq!(closest_demanded(&v, &p, Bundle(0b10)), Bundle(0b10));
        assert_eq!(closest_demanded(&v, &p, Bundle::EMPTY), Bundle(0b01));
    }
}
