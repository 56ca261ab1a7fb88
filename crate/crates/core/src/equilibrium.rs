//! Walrasian prices and the optimal gain-from-trade.
//!
//! Walrasian prices are the minimizers of the Lyapunov function
//!
//! ```text
//! L(p) = sum over buyers of max_B (v(B) - p(B))
//!      + sum over units of max(0, p_x - marginal)
//! ```
//!
//! whose minimum equals the optimal gain-from-trade. With gross-substitute
//! buyers and DMR sellers `L` is L-natural convex, so on a fine enough price
//! grid a point where no set of coordinates can move up or down by one step
//! to lower `L` is a global minimizer, and the minimizers form a lattice
//! with a least element. The solver walks from the zero vector by steepest
//! set moves (the ascending auction raising a minimal over-demanded set,
//! with long steps), then slides down along flat directions to the least
//! minimizer. The allocation is extracted from the demand and supply sets
//! at those prices.

use std::collections::BTreeMap;

use crate::model::{
    buyer_demand, indirect_utility, Bundle, BuyerValuation, ItemType, Market, PriceVector, VirtualSeller,
};
use crate::{Error, Result, Scalar};

/// Prices, a clearing allocation at those prices, and its gain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Equilibrium<T> {
    pub prices: PriceVector<T>,
    /// One entry per buyer, in market order.
    pub buyer_bundles: Vec<(crate::model::AgentId, Bundle)>,
    /// One entry per seller, in market order: units sold.
    pub seller_units: Vec<(crate::model::AgentId, usize)>,
    pub gain: T,
    /// `k_x`: units of each type traded.
    pub per_type_volume: Vec<usize>,
}

impl<T: Scalar> Equilibrium<T> {
    pub fn bundle_of(&self, id: crate::model::AgentId) -> Option<Bundle> {
        self.buyer_bundles.iter().find(|(b, _)| *b == id).map(|(_, bundle)| *bundle)
    }

    pub fn units_of(&self, id: crate::model::AgentId) -> Option<usize> {
        self.seller_units.iter().find(|(s, _)| *s == id).map(|(_, q)| *q)
    }

    /// Gain split per type by the marginal contribution of each item, items
    /// added in ascending type order.
    pub fn gain_per_type(&self, market: &Market<T>) -> Vec<T> {
        gain_decomposition(market, &self.buyer_bundles, &self.seller_units).1
    }
}

/// Total gain of an allocation and its per-type decomposition. Buyers'
/// values are split by [`BuyerValuation::ordered_marginal`]; sellers' costs
/// are charged to their own type. Agents missing from the lists trade nothing.
pub fn gain_decomposition<T: Scalar>(
    market: &Market<T>,
    buyer_bundles: &[(crate::model::AgentId, Bundle)],
    seller_units: &[(crate::model::AgentId, usize)],
) -> (T, Vec<T>) {
    let mut per_type = vec![T::zero(); market.g()];
    let bundles: BTreeMap<_, _> = buyer_bundles.iter().cloned().collect();
    let units: BTreeMap<_, _> = seller_units.iter().cloned().collect();
    for b in market.buyers() {
        if let Some(&bundle) = bundles.get(&b.id) {
            for x in bundle.items() {
                per_type[x.0] = per_type[x.0].clone() + b.valuation.ordered_marginal(bundle, x);
            }
        }
    }
    for s in market.sellers() {
        if let Some(&q) = units.get(&s.id) {
            let x = s.item().0;
            per_type[x] = per_type[x].clone() - s.valuation.cost_of_selling(q);
        }
    }
    let total = per_type.iter().fold(T::zero(), |acc, v| acc + v);
    (total, per_type)
}

/// Least Walrasian equilibrium of a market of GS buyers and DMR sellers.
///
/// Without buyers the zero vector clears; without sellers of some type its
/// price ends at the lowest level where nobody demands it.
pub fn solve_walrasian<T: Scalar>(market: &Market<T>) -> Result<Equilibrium<T>> {
    let lyapunov = Lyapunov::new(market);
    let step = grid_step(market);
    let prices = least_minimizer(&lyapunov, market.g(), &step)?;
    let bound = lyapunov.value(&prices);
    let eq = extract_allocation(market, prices)?;
    if eq.gain != bound {
        return Err(Error::NoEquilibriumFound(format!(
            "allocation gain {} differs from the dual bound {bound}; are all buyers gross substitutes?",
            eq.gain
        )));
    }
    Ok(eq)
}

/// `1 / (2 * lcm of all denominators)`: the least minimizer lies on this grid.
fn grid_step<T: Scalar>(market: &Market<T>) -> T {
    let lcm = market
        .all_values()
        .iter()
        .fold(T::one(), |acc, v| acc.lcm_integer(&v.denominator_value()));
    T::one() / (lcm * T::from_int(2))
}

struct SortedValues<T> {
    values: Vec<T>,
    prefix: Vec<T>,
}

impl<T: Scalar> SortedValues<T> {
    fn new(mut values: Vec<T>) -> Self {
        values.sort();
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(T::zero());
        for v in &values {
            let next = prefix.last().cloned().expect("nonempty") + v;
            prefix.push(next);
        }
        SortedValues { values, prefix }
    }

    /// `sum max(0, p - v)`
    fn below(&self, p: &T) -> T {
        let n = self.values.partition_point(|v| v < p);
        T::from_int(n as i64) * p - &self.prefix[n]
    }

    /// `sum max(0, v - p)`
    fn above(&self, p: &T) -> T {
        let n = self.values.partition_point(|v| v <= p);
        let count = self.values.len() - n;
        self.prefix[self.values.len()].clone() - &self.prefix[n] - T::from_int(count as i64) * p
    }
}

struct Lyapunov<'a, T> {
    sellers: Vec<SortedValues<T>>,
    // buyers whose indirect utility separates into per-type terms
    separable: Vec<SortedValues<T>>,
    others: Vec<&'a BuyerValuation<T>>,
}

impl<'a, T: Scalar> Lyapunov<'a, T> {
    fn new(market: &'a Market<T>) -> Self {
        let g = market.g();
        let mut units = vec![Vec::new(); g];
        for s in market.sellers() {
            units[s.item().0].extend(s.valuation.marginals.iter().cloned());
        }
        let mut flat = vec![Vec::new(); g];
        let mut others = Vec::new();
        for b in market.buyers() {
            match &b.valuation {
                BuyerValuation::Additive(values) => {
                    for (x, v) in values.iter().enumerate() {
                        flat[x].push(v.clone());
                    }
                }
                v if g == 1 => flat[0].push(v.value(Bundle(1))),
                v => others.push(v),
            }
        }
        Lyapunov {
            sellers: units.into_iter().map(SortedValues::new).collect(),
            separable: flat.into_iter().map(SortedValues::new).collect(),
            others,
        }
    }

    fn value(&self, p: &PriceVector<T>) -> T {
        let mut total = T::zero();
        for (x, price) in p.0.iter().enumerate() {
            total = total + self.sellers[x].below(price) + self.separable[x].above(price);
        }
        for v in &self.others {
            total = total + indirect_utility(v, p);
        }
        total
    }
}

fn shifted<T: Scalar>(p: &PriceVector<T>, set: Bundle, amount: &T, up: bool) -> PriceVector<T> {
    let mut q = p.clone();
    for x in set.items() {
        q.0[x.0] = if up { q.0[x.0].clone() + amount } else { q.0[x.0].clone() - amount };
    }
    q
}

// Largest number of whole steps every coordinate of `set` can drop.
fn room_below<T: Scalar>(p: &PriceVector<T>, set: Bundle, step: &T) -> T {
    set.items()
        .map(|x| p.0[x.0].clone() / step)
        .min()
        .unwrap_or_else(T::zero)
}

// Smallest t in (0, limit] with `pred(t)`, given `!pred(0)`, `pred` monotone
// and `pred(limit)` when a limit is given.
fn first_true<T: Scalar>(limit: Option<&T>, mut pred: impl FnMut(&T) -> bool) -> T {
    let two = T::from_int(2);
    let mut powers = vec![T::one()];
    let hi = loop {
        let jump = powers.last().cloned().expect("nonempty");
        if let Some(limit) = limit {
            if &jump >= limit {
                break limit.clone();
            }
        }
        if pred(&jump) {
            break jump;
        }
        powers.push(jump * two.clone());
    };
    let mut t = T::zero();
    for pw in powers.iter().rev() {
        let candidate = t.clone() + pw;
        if candidate < hi && !pred(&candidate) {
            t = candidate;
        }
    }
    t + T::one()
}

const MAX_MOVES: usize = 1_000_000;

fn least_minimizer<T: Scalar>(lyapunov: &Lyapunov<'_, T>, g: usize, step: &T) -> Result<PriceVector<T>> {
    let mut sets: Vec<Bundle> = Bundle::full(g).subsets().skip(1).collect();
    sets.sort_by_key(|b| b.canonical_key());
    let mut p = PriceVector::zeros(g);
    let mut current = lyapunov.value(&p);

    // descent until no set move improves
    let mut moves = 0;
    'descent: loop {
        moves += 1;
        if moves > MAX_MOVES {
            return Err(Error::NoEquilibriumFound("price search did not converge".into()));
        }
        for up in [true, false] {
            let mut best: Option<(Bundle, T)> = None;
            for &set in &sets {
                if !up && set.items().any(|x| &p.0[x.0] < step) {
                    continue;
                }
                let value = lyapunov.value(&shifted(&p, set, step, up));
                if value < current && best.as_ref().is_none_or(|(_, b)| &value < b) {
                    best = Some((set, value));
                }
            }
            if let Some((set, _)) = best {
                let limit = if up { None } else { Some(room_below(&p, set, step)) };
                let at = |t: &T| lyapunov.value(&shifted(&p, set, &(t.clone() * step), up));
                // first t where the slope along the move stops being negative
                let t = first_true(limit.as_ref(), |t| {
                    limit.as_ref() == Some(t) || at(&(t.clone() + T::one())) >= at(t)
                });
                p = shifted(&p, set, &(t * step), up);
                current = lyapunov.value(&p);
                continue 'descent;
            }
        }
        break;
    }

    // slide down along directions where L stays minimal
    loop {
        moves += 1;
        if moves > MAX_MOVES {
            return Err(Error::NoEquilibriumFound("price search did not converge".into()));
        }
        let flat = sets
            .iter()
            .rev()
            .filter(|set| set.items().all(|x| &p.0[x.0] >= step))
            .filter(|set| lyapunov.value(&shifted(&p, **set, step, false)) == current)
            .max_by(|a, b| a.len().cmp(&b.len()).then(b.0.cmp(&a.0)))
            .copied();
        let Some(set) = flat else { break };
        let limit = room_below(&p, set, step);
        let level = |t: &T| lyapunov.value(&shifted(&p, set, &(t.clone() * step), false)) == current;
        let t = if level(&limit) {
            limit
        } else {
            first_true(Some(&limit), |t| !level(t)) - T::one()
        };
        p = shifted(&p, set, &(t * step), false);
    }
    Ok(p)
}

struct Group {
    members: Vec<usize>,
    // preference order: larger bundles first
    bundles: Vec<Bundle>,
}

struct Extraction<'a> {
    g: usize,
    groups: &'a [Group],
    supply_min: &'a [usize],
    supply_max: &'a [usize],
}

impl Extraction<'_> {
    fn bounds(&self, group: usize, from: usize, count: usize, lower: &mut [usize], upper: &mut [usize]) {
        let rest = &self.groups[group].bundles[from..];
        for x in 0..self.g {
            let item = ItemType(x);
            if rest.iter().all(|b| b.contains(item)) {
                lower[x] += count;
            }
            if rest.iter().any(|b| b.contains(item)) {
                upper[x] += count;
            }
        }
    }

    fn feasible(&self, load: &[usize], group: usize, from: usize, count: usize) -> bool {
        let mut lower = load.to_vec();
        let mut upper = load.to_vec();
        if from < self.groups[group].bundles.len() {
            self.bounds(group, from, count, &mut lower, &mut upper);
        }
        for later in group + 1..self.groups.len() {
            self.bounds(later, 0, self.groups[later].members.len(), &mut lower, &mut upper);
        }
        (0..self.g).all(|x| lower[x] <= self.supply_max[x] && upper[x] >= self.supply_min[x])
    }

    fn search(&self, group: usize, from: usize, left: usize, load: &mut Vec<usize>, counts: &mut Vec<Vec<usize>>) -> bool {
        if group == self.groups.len() {
            return (0..self.g).all(|x| self.supply_min[x] <= load[x] && load[x] <= self.supply_max[x]);
        }
        let bundles = &self.groups[group].bundles;
        let bundle = bundles[from];
        let last = from + 1 == bundles.len();
        let options: Vec<usize> = if last { vec![left] } else { (0..=left).rev().collect() };
        for n in options {
            for x in bundle.items() {
                load[x.0] += n;
            }
            if self.feasible(load, group, from + 1, left - n) {
                counts[group][from] = n;
                let done = if last {
                    let next = group + 1;
                    let size = self.groups.get(next).map_or(0, |g| g.members.len());
                    self.search(next, 0, size, load, counts)
                } else {
                    self.search(group, from + 1, left - n, load, counts)
                };
                if done {
                    return true;
                }
            }
            for x in bundle.items() {
                load[x.0] -= n;
            }
        }
        false
    }
}

// Chooses demanded bundles and optimal quantities that clear every type,
// preferring the largest volume among tied choices.
fn extract_allocation<T: Scalar>(market: &Market<T>, prices: PriceVector<T>) -> Result<Equilibrium<T>> {
    let g = market.g();
    let full = Bundle::full(g);
    let mut supply_min = vec![0usize; g];
    let mut supply_max = vec![0usize; g];
    let mut ranges = Vec::with_capacity(market.sellers().len());
    for s in market.sellers() {
        let p = prices.get(s.item());
        let strict = s.valuation.marginals.iter().filter(|m| *m < p).count();
        let ties = s.valuation.marginals.iter().filter(|m| *m == p).count();
        supply_min[s.item().0] += strict;
        supply_max[s.item().0] += strict + ties;
        ranges.push((strict, strict + ties));
    }

    let mut bundles = vec![Bundle::EMPTY; market.buyers().len()];
    let mut load = vec![0usize; g];
    let mut grouped: BTreeMap<Vec<Bundle>, Vec<usize>> = BTreeMap::new();
    for (i, b) in market.buyers().iter().enumerate() {
        let demand = buyer_demand(&b.valuation, &prices, full);
        if demand.bundles.len() == 1 {
            bundles[i] = demand.bundles[0];
            for x in bundles[i].items() {
                load[x.0] += 1;
            }
        } else {
            grouped.entry(demand.bundles).or_default().push(i);
        }
    }
    let groups: Vec<Group> = grouped
        .into_iter()
        .map(|(mut set, members)| {
            set.sort_by(|a, b| b.len().cmp(&a.len()).then(a.0.cmp(&b.0)));
            Group { members, bundles: set }
        })
        .collect();
    let extraction = Extraction { g, groups: &groups, supply_min: &supply_min, supply_max: &supply_max };
    let mut counts: Vec<Vec<usize>> = groups.iter().map(|gr| vec![0; gr.bundles.len()]).collect();
    let first = groups.first().map_or(0, |gr| gr.members.len());
    if !extraction.search(0, 0, first, &mut load, &mut counts) {
        return Err(Error::NoEquilibriumFound(format!("no clearing allocation at prices {prices}")));
    }
    for (group, counts) in groups.iter().zip(&counts) {
        let mut members = group.members.iter();
        for (bundle, &n) in group.bundles.iter().zip(counts) {
            for &i in members.by_ref().take(n) {
                bundles[i] = *bundle;
            }
        }
    }

    let mut extra: Vec<usize> = (0..g).map(|x| load[x] - supply_min[x]).collect();
    let mut units = Vec::with_capacity(ranges.len());
    for (s, (lo, hi)) in market.sellers().iter().zip(ranges) {
        let x = s.item().0;
        let more = extra[x].min(hi - lo);
        extra[x] -= more;
        units.push(lo + more);
    }
    let buyer_bundles: Vec<_> = market.buyers().iter().map(|b| b.id).zip(bundles).collect();
    let seller_units: Vec<_> = market.sellers().iter().map(|s| s.id).zip(units).collect();
    let (gain, _) = gain_decomposition(market, &buyer_bundles, &seller_units);
    Ok(Equilibrium { prices, buyer_bundles, seller_units, gain, per_type_volume: load })
}

/// Efficient virtual buyers and sellers of one type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EfficientSets<T> {
    pub buyers: Vec<crate::model::AgentId>,
    pub sellers: Vec<VirtualSeller<T>>,
}

/// Efficient traders of every type in a fixed equilibrium.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EfficientTraderSets<T> {
    pub per_type: Vec<EfficientSets<T>>,
}

/// Buyers receiving `x` and the virtual sellers whose units are sold. A
/// seller selling `q` units gives up its `q` lowest-valued units.
pub fn efficient_trader_sets<T: Scalar>(market: &Market<T>, eq: &Equilibrium<T>) -> EfficientTraderSets<T> {
    let mut per_type: Vec<EfficientSets<T>> =
        (0..market.g()).map(|_| EfficientSets { buyers: Vec::new(), sellers: Vec::new() }).collect();
    for &(id, bundle) in &eq.buyer_bundles {
        for x in bundle.items() {
            per_type[x.0].buyers.push(id);
        }
    }
    for (s, &(_, q)) in market.sellers().iter().zip(&eq.seller_units) {
        let virtual_units = crate::model::virtual_sellers(s);
        let total = virtual_units.len();
        per_type[s.item().0].sellers.extend(virtual_units.into_iter().skip(total - q));
    }
    EfficientTraderSets { per_type }
}

/// Exhaustive optimum, used to cross-check [`solve_walrasian`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BruteForceSolution<T> {
    pub gain: T,
    pub buyer_bundles: Vec<(crate::model::AgentId, Bundle)>,
    pub seller_units: Vec<(crate::model::AgentId, usize)>,
}

pub const BRUTE_FORCE_MAX_BUYERS: usize = 8;
pub const BRUTE_FORCE_MAX_UNITS: usize = 12;

/// Maximum gain over all materially balanced allocations, by dynamic
/// programming over per-type unit counts. Does not use prices or any
/// structural property of the valuations.
pub fn brute_force_optimal_gain<T: Scalar>(market: &Market<T>) -> Result<BruteForceSolution<T>> {
    let g = market.g();
    let total_units: usize = market.sellers().iter().map(|s| s.valuation.units()).sum();
    if market.buyers().len() > BRUTE_FORCE_MAX_BUYERS || total_units > BRUTE_FORCE_MAX_UNITS {
        return Err(Error::TooLarge(format!(
            "{} buyers and {total_units} units exceed {BRUTE_FORCE_MAX_BUYERS} and {BRUTE_FORCE_MAX_UNITS}",
            market.buyers().len()
        )));
    }

    // cheapest way to supply d units of each type, with per-seller quantities
    let mut supply: Vec<Vec<(T, Vec<(usize, usize)>)>> = vec![vec![(T::zero(), Vec::new())]; g];
    for (idx, s) in market.sellers().iter().enumerate() {
        let x = s.item().0;
        let old = std::mem::take(&mut supply[x]);
        let mut next: Vec<Option<(T, Vec<(usize, usize)>)>> = vec![None; old.len() + s.valuation.units()];
        for (d, (cost, plan)) in old.iter().enumerate() {
            for q in 0..=s.valuation.units() {
                let candidate = cost.clone() + s.valuation.cost_of_selling(q);
                if next[d + q].as_ref().is_none_or(|(c, _)| &candidate < c) {
                    let mut plan = plan.clone();
                    plan.push((idx, q));
                    next[d + q] = Some((candidate, plan));
                }
            }
        }
        supply[x] = next.into_iter().map(|e| e.expect("every count is reachable")).collect();
    }

    let mut states: BTreeMap<Vec<usize>, (T, Vec<Bundle>)> = BTreeMap::new();
    states.insert(vec![0; g], (T::zero(), Vec::new()));
    for b in market.buyers() {
        let mut next: BTreeMap<Vec<usize>, (T, Vec<Bundle>)> = BTreeMap::new();
        for (counts, (value, chosen)) in &states {
            for bundle in Bundle::full(g).subsets() {
                let mut c = counts.clone();
                if bundle.items().any(|x| {
                    c[x.0] += 1;
                    c[x.0] >= supply[x.0].len()
                }) {
                    continue;
                }
                let v = value.clone() + b.valuation.value(bundle);
                if next.get(&c).is_none_or(|(best, _)| &v > best) {
                    let mut chosen = chosen.clone();
                    chosen.push(bundle);
                    next.insert(c, (v, chosen));
                }
            }
        }
        states = next;
    }

    let mut best: Option<(T, &Vec<usize>, &Vec<Bundle>)> = None;
    for (counts, (value, chosen)) in &states {
        let cost = counts.iter().enumerate().fold(T::zero(), |acc, (x, &d)| acc + &supply[x][d].0);
        let gain = value.clone() - cost;
        if best.as_ref().is_none_or(|(b, _, _)| &gain > b) {
            best = Some((gain, counts, chosen));
        }
    }
    let (gain, counts, chosen) = best.expect("the no-trade state always exists");
    let mut units = vec![0usize; market.sellers().len()];
    for (x, &d) in counts.iter().enumerate() {
        for &(idx, q) in &supply[x][d].1 {
            units[idx] = q;
        }
    }
    Ok(BruteForceSolution {
        gain,
        buyer_bundles: market.buyers().iter().map(|b| b.id).zip(chosen.iter().copied()).collect(),
        seller_units: market.sellers().iter().map(|s| s.id).zip(units).collect(),
    })
}
