//! Domain types: item-types, bundles, valuations, agents and markets.

mod checks;
mod demand;
mod generate;

pub use checks::{
    check_ddf, default_gs_grid, find_gs_violation, is_dmr, is_gross_substitute, is_m_natural_concave, DdfReport, GsViolation,
};
pub use demand::{
    buyer_demand, closest_demanded, indirect_utility, seller_supply, Demand, Supply, TieBreak,
};
pub(crate) use demand::{indifferent_supply, strict_supply};
pub use generate::{calibrated_market, generate_market, BuyerFamily, CalibratedSpec, GeneratorSpec};

use std::collections::BTreeSet;
use std::fmt;

use crate::{Error, Result, Scalar};

/// Largest supported number of item-types; the bundle space `2^g` is enumerated.
pub const MAX_ITEM_TYPES: usize = 16;

/// Index of an item-type, in `0..g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemType(pub usize);

/// A set of item-types, at most one unit of each, stored as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Bundle(pub u32);

impl Bundle {
    pub const EMPTY: Bundle = Bundle(0);

    pub fn full(g: usize) -> Bundle {
        Bundle(((1u64 << g) - 1) as u32)
    }

    pub fn single(item: ItemType) -> Bundle {
        Bundle(1 << item.0)
    }

    pub fn from_items<I: IntoIterator<Item = usize>>(items: I) -> Bundle {
        Bundle(items.into_iter().fold(0, |mask, i| mask | (1 << i)))
    }

    pub fn contains(self, item: ItemType) -> bool {
        self.0 & (1 << item.0) != 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Bundle) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn with(self, item: ItemType) -> Bundle {
        Bundle(self.0 | (1 << item.0))
    }

    pub fn without(self, item: ItemType) -> Bundle {
        Bundle(self.0 & !(1 << item.0))
    }

    pub fn items(self) -> impl Iterator<Item = ItemType> {
        (0..32).filter(move |i| self.0 & (1 << i) != 0).map(ItemType)
    }

    /// All subsets of `self`, including the empty bundle and `self`.
    pub fn subsets(self) -> impl Iterator<Item = Bundle> {
        let mask = self.0;
        let mut next = Some(0u32);
        std::iter::from_fn(move || {
            let current = next?;
            next = if current == mask { None } else { Some(((current | !mask).wrapping_add(1)) & mask) };
            Some(Bundle(current))
        })
    }

    /// Canonical tie-break key: cardinality ascending, then bitmask ascending.
    pub fn canonical_key(self) -> (u32, u32) {
        (self.0.count_ones(), self.0)
    }
}

impl fmt::Display for Bundle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (n, item) in self.items().enumerate() {
            if n > 0 {
                write!(f, ",")?;
            }
            write!(f, "{}", item.0)?;
        }
        write!(f, "}}")
    }
}

/// Opaque agent identifier, unique within a market.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AgentId(pub u32);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Buyer,
    Seller,
}

/// A buyer's value for every bundle of item-types.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum BuyerValuation<T> {
    /// Value of a bundle is the largest per-type value in it.
    UnitDemand(Vec<T>),
    /// Value of a bundle is the sum of its per-type values.
    Additive(Vec<T>),
    /// Explicit table indexed by bundle bitmask; entry 0 is the empty bundle.
    Table(Vec<T>),
}

impl<T: Scalar> BuyerValuation<T> {
    /// A buyer of up to `m` units of one good, written as a table over `m`
    /// interchangeable item-types: a bundle of `j` copies is worth the sum
    /// of the first `j` marginals.
    pub fn identical_copies(marginals: &[T]) -> Self {
        let m = marginals.len();
        let prefix: Vec<T> = std::iter::once(T::zero())
            .chain(marginals.iter().scan(T::zero(), |acc, x| {
                *acc = acc.clone() + x;
                Some(acc.clone())
            }))
            .collect();
        BuyerValuation::Table((0..1u32 << m).map(|mask| prefix[mask.count_ones() as usize].clone()).collect())
    }

    pub fn num_types(&self) -> usize {
        match self {
            BuyerValuation::UnitDemand(v) | BuyerValuation::Additive(v) => v.len(),
            BuyerValuation::Table(t) => t.len().trailing_zeros() as usize,
        }
    }

    pub fn value(&self, bundle: Bundle) -> T {
        match self {
            BuyerValuation::UnitDemand(v) => bundle
                .items()
                .map(|x| v[x.0].clone())
                .max()
                .unwrap_or_else(T::zero),
            BuyerValuation::Additive(v) => bundle.items().fold(T::zero(), |acc, x| acc + &v[x.0]),
            BuyerValuation::Table(t) => t[bundle.0 as usize].clone(),
        }
    }

    /// Value of each single-item bundle.
    pub fn singleton_values(&self) -> Vec<T> {
        (0..self.num_types()).map(|x| self.value(Bundle::single(ItemType(x)))).collect()
    }

    /// Materializes the full bundle table.
    pub fn to_table(&self) -> Vec<T> {
        let g = self.num_types();
        (0..1u32 << g).map(|mask| self.value(Bundle(mask))).collect()
    }

    /// Every marginal value `v(B + x) - v(B)`.
    pub fn marginal_values(&self) -> BTreeSet<T> {
        let g = self.num_types();
        let table = self.to_table();
        let mut out = BTreeSet::new();
        for mask in 0..1u32 << g {
            for x in 0..g {
                if mask & (1 << x) == 0 {
                    out.insert(table[(mask | 1 << x) as usize].clone() - &table[mask as usize]);
                }
            }
        }
        out
    }

    /// Marginal value of `item` when the bundle is assembled in ascending
    /// type order: `v(B ∩ {..=x}) - v(B ∩ {..x})`.
    pub fn ordered_marginal(&self, bundle: Bundle, item: ItemType) -> T {
        let below = Bundle(bundle.0 & ((1u32 << item.0) - 1));
        self.value(below.with(item)) - self.value(below)
    }

    fn validate(&self, g: usize) -> std::result::Result<(), String> {
        match self {
            BuyerValuation::UnitDemand(v) | BuyerValuation::Additive(v) => {
                if v.len() != g {
                    return Err(format!("expected {g} per-type values, got {}", v.len()));
                }
                if v.iter().any(|x| x.is_negative()) {
                    return Err("negative value".into());
                }
            }
            BuyerValuation::Table(t) => {
                if t.len() != 1 << g {
                    return Err(format!("expected {} table entries, got {}", 1 << g, t.len()));
                }
                if !t[0].is_zero() {
                    return Err("value of the empty bundle must be 0".into());
                }
                if t.iter().any(|x| x.is_negative()) {
                    return Err("negative value".into());
                }
            }
        }
        Ok(())
    }
}

/// A seller of units of one item-type. `marginals[j]` is the value of the
/// `(j+1)`-th unit held, so `v(j) = marginals[..j].sum()`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SellerValuation<T> {
    pub item: ItemType,
    pub marginals: Vec<T>,
}

impl<T: Scalar> SellerValuation<T> {
    pub fn new(item: ItemType, marginals: Vec<T>) -> Self {
        SellerValuation { item, marginals }
    }

    pub fn units(&self) -> usize {
        self.marginals.len()
    }

    /// `v(j)`: value of holding `j` units.
    pub fn value(&self, held: usize) -> T {
        self.marginals[..held].iter().fold(T::zero(), |acc, m| acc + m)
    }

    /// Value given up by selling `q` units out of the endowment.
    pub fn cost_of_selling(&self, sold: usize) -> T {
        let total = self.units();
        self.value(total) - self.value(total - sold)
    }

    /// Marginal value of the next unit to sell after `sold` units are gone.
    pub fn next_unit_value(&self, sold: usize) -> Option<&T> {
        let total = self.units();
        if sold >= total {
            None
        } else {
            Some(&self.marginals[total - sold - 1])
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Buyer<T> {
    pub id: AgentId,
    pub valuation: BuyerValuation<T>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Seller<T> {
    pub id: AgentId,
    pub valuation: SellerValuation<T>,
}

impl<T: Scalar> Seller<T> {
    pub fn item(&self) -> ItemType {
        self.valuation.item
    }
}

/// Single-unit proxy for one marginal value of a multi-unit seller.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VirtualSeller<T> {
    pub owner: AgentId,
    pub unit_index: usize,
    pub marginal_value: T,
}

/// Splits a seller into one virtual seller per unit, in unit order.
pub fn virtual_sellers<T: Scalar>(seller: &Seller<T>) -> Vec<VirtualSeller<T>> {
    seller
        .valuation
        .marginals
        .iter()
        .enumerate()
        .map(|(unit_index, m)| VirtualSeller { owner: seller.id, unit_index, marginal_value: m.clone() })
        .collect()
}

/// One rational price per item-type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PriceVector<T>(pub Vec<T>);

impl<T: Scalar> PriceVector<T> {
    pub fn zeros(g: usize) -> Self {
        PriceVector(vec![T::zero(); g])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, item: ItemType) -> &T {
        &self.0[item.0]
    }

    pub fn of_bundle(&self, bundle: Bundle) -> T {
        bundle.items().fold(T::zero(), |acc, x| acc + &self.0[x.0])
    }

    /// Per-type change `other - self`.
    pub fn deltas(&self, other: &PriceVector<T>) -> Vec<T> {
        self.0.iter().zip(&other.0).map(|(a, b)| b.clone() - a).collect()
    }
}

impl<T: Scalar> fmt::Display for PriceVector<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, ")")
    }
}

/// The full trader population and the number of item-types.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Market<T> {
    g: usize,
    buyers: Vec<Buyer<T>>,
    sellers: Vec<Seller<T>>,
}

impl<T: Scalar> Market<T> {
    /// Validates ids, dimensions, signs and seller DMR.
    pub fn new(g: usize, buyers: Vec<Buyer<T>>, sellers: Vec<Seller<T>>) -> Result<Self> {
        if g == 0 || g > MAX_ITEM_TYPES {
            return Err(Error::InvalidMarket(format!("g = {g} outside 1..={MAX_ITEM_TYPES}")));
        }
        let mut ids = BTreeSet::new();
        for b in &buyers {
            if !ids.insert(b.id) {
                return Err(Error::InvalidMarket(format!("duplicate agent id {}", b.id)));
            }
            b.valuation
                .validate(g)
                .map_err(|e| Error::InvalidMarket(format!("buyer {}: {e}", b.id)))?;
        }
        for s in &sellers {
            if !ids.insert(s.id) {
                return Err(Error::InvalidMarket(format!("duplicate agent id {}", s.id)));
            }
            let v = &s.valuation;
            if v.item.0 >= g {
                return Err(Error::InvalidMarket(format!("seller {}: item-type {} >= g", s.id, v.item.0)));
            }
            if v.marginals.iter().any(|m| m.is_negative()) {
                return Err(Error::InvalidMarket(format!("seller {}: negative marginal", s.id)));
            }
            if !v.marginals.is_empty() && !is_dmr(&v.marginals) {
                return Err(Error::InvalidMarket(format!(
                    "seller {}: marginals are not weakly decreasing (DMR violated)",
                    s.id
                )));
            }
        }
        Ok(Market { g, buyers, sellers })
    }

    /// Builds a market with ids assigned in order: buyers first, then sellers.
    pub fn from_valuations(
        g: usize,
        buyers: Vec<BuyerValuation<T>>,
        sellers: Vec<SellerValuation<T>>,
    ) -> Result<Self> {
        let nb = buyers.len() as u32;
        let buyers = buyers
            .into_iter()
            .enumerate()
            .map(|(i, valuation)| Buyer { id: AgentId(i as u32), valuation })
            .collect();
        let sellers = sellers
            .into_iter()
            .enumerate()
            .map(|(i, valuation)| Seller { id: AgentId(nb + i as u32), valuation })
            .collect();
        Market::new(g, buyers, sellers)
    }

    pub fn empty(g: usize) -> Result<Self> {
        Market::new(g, Vec::new(), Vec::new())
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn buyers(&self) -> &[Buyer<T>] {
        &self.buyers
    }

    pub fn sellers(&self) -> &[Seller<T>] {
        &self.sellers
    }

    pub fn num_agents(&self) -> usize {
        self.buyers.len() + self.sellers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.num_agents() == 0
    }

    /// All agent ids in ascending order.
    pub fn agent_ids(&self) -> Vec<AgentId> {
        let mut ids: Vec<_> = self.buyers.iter().map(|b| b.id).chain(self.sellers.iter().map(|s| s.id)).collect();
        ids.sort();
        ids
    }

    pub fn role_of(&self, id: AgentId) -> Option<Role> {
        if self.buyers.iter().any(|b| b.id == id) {
            Some(Role::Buyer)
        } else if self.sellers.iter().any(|s| s.id == id) {
            Some(Role::Seller)
        } else {
            None
        }
    }

    /// Largest number of units held by any seller.
    pub fn max_units(&self) -> usize {
        self.sellers.iter().map(|s| s.valuation.units()).max().unwrap_or(0)
    }

    /// Every value appearing in the market.
    pub fn all_values(&self) -> Vec<T> {
        let mut out = Vec::new();
        for b in &self.buyers {
            match &b.valuation {
                BuyerValuation::UnitDemand(v) | BuyerValuation::Additive(v) => out.extend(v.iter().cloned()),
                BuyerValuation::Table(t) => out.extend(t.iter().cloned()),
            }
        }
        for s in &self.sellers {
            out.extend(s.valuation.marginals.iter().cloned());
        }
        out
    }

    /// Sub-market keeping only agents accepted by `keep`.
    pub fn restrict(&self, mut keep: impl FnMut(AgentId) -> bool) -> Market<T> {
        Market {
            g: self.g,
            buyers: self.buyers.iter().filter(|b| keep(b.id)).cloned().collect(),
            sellers: self.sellers.iter().filter(|s| keep(s.id)).cloned().collect(),
        }
    }

    /// Copy of the market with one agent's valuation replaced.
    pub fn with_buyer_valuation(&self, id: AgentId, valuation: BuyerValuation<T>) -> Result<Market<T>> {
        let mut buyers = self.buyers.clone();
        let buyer = buyers.iter_mut().find(|b| b.id == id).ok_or(Error::UnknownAgent(id))?;
        buyer.valuation = valuation;
        Market::new(self.g, buyers, self.sellers.clone())
    }

    pub fn with_seller_marginals(&self, id: AgentId, marginals: Vec<T>) -> Result<Market<T>> {
        let mut sellers = self.sellers.clone();
        let seller = sellers.iter_mut().find(|s| s.id == id).ok_or(Error::UnknownAgent(id))?;
        seller.valuation.marginals = marginals;
        Market::new(self.g, self.buyers.clone(), sellers)
    }

    /// Converts every value to another scalar type.
    pub fn convert<U: Scalar>(&self) -> Option<Market<U>> {
        let conv = |x: &T| U::from_rational(&x.to_rational());
        let conv_all = |v: &[T]| v.iter().map(conv).collect::<Option<Vec<U>>>();
        let buyers = self
            .buyers
            .iter()
            .map(|b| {
                let valuation = match &b.valuation {
                    BuyerValuation::UnitDemand(v) => BuyerValuation::UnitDemand(conv_all(v)?),
                    BuyerValuation::Additive(v) => BuyerValuation::Additive(conv_all(v)?),
                    BuyerValuation::Table(t) => BuyerValuation::Table(conv_all(t)?),
                };
                Some(Buyer { id: b.id, valuation })
            })
            .collect::<Option<Vec<_>>>()?;
        let sellers = self
            .sellers
            .iter()
            .map(|s| {
                Some(Seller {
                    id: s.id,
                    valuation: SellerValuation::new(s.valuation.item, conv_all(&s.valuation.marginals)?),
                })
            })
            .collect::<Option<Vec<_>>>()?;
        Some(Market { g: self.g, buyers, sellers })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn r(n: i64) -> Rational {
        Rational::from_int(n)
    }

    #[test]
    fn bundle_subsets_enumerate_all() {
        let b = Bundle(0b1011);
        let subs: Vec<u32> = b.subsets().map(|s| s.0).collect();
        assert_eq!(subs.len(), 8);
        assert!(subs.iter().all(|s| s & !0b1011 == 0));
        assert_eq!(Bundle::EMPTY.subsets().count(), 1);
    }

    #[test]
    fn virtual_sellers_follow_marginals() {
        let s = Seller { id: AgentId(3), valuation: SellerValuation::new(ItemType(0), vec![r(7), r(2)]) };
        let vs = virtual_sellers(&s);
        assert_eq!(vs.len(), 2);
        assert_eq!((vs[0].unit_index, vs[0].marginal_value.clone()), (0, r(7)));
        assert_eq!((vs[1].unit_index, vs[1].marginal_value.clone()), (1, r(2)));

        let single = Seller { id: AgentId(0), valuation: SellerValuation::new(ItemType(0), vec![r(5)]) };
        assert_eq!(virtual_sellers(&single).len(), 1);

        let flat = Seller { id: AgentId(0), valuation: SellerValuation::new(ItemType(0), vec![r(9); 3]) };
        assert!(virtual_sellers(&flat).iter().all(|v| v.marginal_value == r(9)));
    }

    #[test]
    fn seller_costs_take_smallest_marginals_first() {
        let v = SellerValuation::new(ItemType(0), vec![r(7), r(2)]);
        assert_eq!(v.value(2), r(9));
        assert_eq!(v.cost_of_selling(1), r(2));
        assert_eq!(v.cost_of_selling(2), r(9));
        assert_eq!(v.next_unit_value(0), Some(&r(2)));
        assert_eq!(v.next_unit_value(1), Some(&r(7)));
        assert_eq!(v.next_unit_value(2), None);
    }

    #[test]
    fn market_rejects_bad_input() {
        let non_dmr = SellerValuation::new(ItemType(0), vec![r(1), r(9)]);
        assert!(matches!(Market::from_valuations(1, vec![], vec![non_dmr]), Err(Error::InvalidMarket(_))));
        let wrong_type = SellerValuation::new(ItemType(2), vec![r(1)]);
        assert!(Market::from_valuations(2, vec![], vec![wrong_type]).is_err());
        let bad_table = BuyerValuation::Table(vec![r(1), r(2)]);
        assert!(Market::from_valuations(1, vec![bad_table], vec![]).is_err());
        assert!(Market::<Rational>::empty(0).is_err());
        assert!(Market::<Rational>::empty(17).is_err());
    }

    #[test]
    fn ordered_marginals_decompose_value() {
        let v = BuyerValuation::Table(vec![r(0), r(6), r(8), r(9)]);
        let both = Bundle(0b11);
        assert_eq!(v.ordered_marginal(both, ItemType(0)), r(6));
        assert_eq!(v.ordered_marginal(both, ItemType(1)), r(3));
    }
}
