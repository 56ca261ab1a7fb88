use std::collections::BTreeSet;

use super::{buyer_demand, closest_demanded, Bundle, BuyerValuation, ItemType, PriceVector};
use crate::{Error, Result, Scalar};

/// Weakly decreasing marginals (diminishing marginal returns).
pub fn is_dmr<T: Scalar>(marginals: &[T]) -> bool {
    marginals.windows(2).all(|w| w[1] <= w[0])
}

/// A witnessed failure of the gross-substitutes condition: at `from` the
/// buyer demands `bundle`; raising the price of `raised` gives `to`, and no
/// bundle demanded at `to` keeps `lost`, whose price did not change.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GsViolation<T> {
    pub from: PriceVector<T>,
    pub to: PriceVector<T>,
    pub raised: ItemType,
    pub bundle: Bundle,
    pub lost: ItemType,
}

/// Price grid used when none is supplied: every marginal value of the
/// valuation, zero, midpoints between consecutive points, and one step past
/// the largest marginal.
pub fn default_gs_grid<T: Scalar>(v: &BuyerValuation<T>) -> Vec<T> {
    let mut points: BTreeSet<T> = v.marginal_values().into_iter().filter(|m| !m.is_negative()).collect();
    points.insert(T::zero());
    let sorted: Vec<T> = points.iter().cloned().collect();
    let two = T::from_int(2);
    for w in sorted.windows(2) {
        points.insert((w[0].clone() + &w[1]) / two.clone());
    }
    let top = sorted.last().cloned().unwrap_or_else(T::zero);
    points.insert(top + T::one());
    points.into_iter().collect()
}

/// Grid-based gross-substitutes check in the demand-set form: whenever the
/// prices rise weakly while item `x` keeps its price, every demanded bundle
/// `X` has a counterpart demanded at the new prices that contains all items
/// of `X` whose price did not move.
///
/// Only single-coordinate raises between adjacent grid values are examined;
/// the condition composes along monotone paths, so this covers every pair
/// `p <= q` on the grid. Returns the first violation found.
pub fn find_gs_violation<T: Scalar>(v: &BuyerValuation<T>, grid: &[T]) -> Result<Option<GsViolation<T>>> {
    let grid: Vec<T> = grid.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    for m in v.marginal_values() {
        if !m.is_negative() && grid.binary_search(&m).is_err() {
            return Err(Error::GridTooCoarse(m.to_string()));
        }
    }
    let g = v.num_types();
    let n = grid.len();
    let total = (n as u128).checked_pow(g as u32).unwrap_or(u128::MAX);
    if total > 50_000_000 {
        return Err(Error::TooLarge(format!("{n}^{g} grid points")));
    }
    let table = v.to_table();
    // demand sets are memoized by mixed-radix position since every point is
    // visited once as the origin and up to g times as a raised neighbour
    let mut memo: Vec<Option<Vec<Bundle>>> = vec![None; total as usize];
    let stride: Vec<usize> = (0..g).map(|k| n.pow(k as u32)).collect();
    let point = |index: &[usize]| PriceVector(index.iter().map(|&i| grid[i].clone()).collect::<Vec<T>>());
    let mut index = vec![0usize; g];
    let mut flat = 0usize;
    loop {
        if memo[flat].is_none() {
            memo[flat] = Some(demand_set(&table, &point(&index)));
        }
        for y in 0..g {
            if index[y] + 1 >= n {
                continue;
            }
            let up = flat + stride[y];
            if memo[up].is_none() {
                let mut raised = index.clone();
                raised[y] += 1;
                memo[up] = Some(demand_set(&table, &point(&raised)));
            }
            let here = memo[flat].as_ref().expect("filled above");
            let there = memo[up].as_ref().expect("filled above");
            for &bundle in here {
                let kept = bundle.without(ItemType(y));
                if !there.iter().any(|b| kept.is_subset_of(*b)) {
                    let lost = kept
                        .items()
                        .find(|x| !there.iter().any(|b| b.contains(*x)))
                        .or_else(|| kept.items().next())
                        .expect("kept bundle is nonempty when no superset exists");
                    let mut raised = index.clone();
                    raised[y] += 1;
                    return Ok(Some(GsViolation {
                        from: point(&index),
                        to: point(&raised),
                        raised: ItemType(y),
                        bundle,
                        lost,
                    }));
                }
            }
        }
        // the origin's set is not needed again
        memo[flat] = None;
        // next grid point in mixed radix
        let mut k = 0;
        loop {
            if k == g {
                return Ok(None);
            }
            index[k] += 1;
            flat += stride[k];
            if index[k] < n {
                break;
            }
            flat -= n * stride[k];
            index[k] = 0;
            k += 1;
        }
    }
}

/// True iff no gross-substitutes violation exists on `grid`.
pub fn is_gross_substitute<T: Scalar>(v: &BuyerValuation<T>, grid: &[T]) -> Result<bool> {
    match v {
        BuyerValuation::UnitDemand(_) | BuyerValuation::Additive(_) => Ok(true),
        BuyerValuation::Table(_) => Ok(find_gs_violation(v, grid)?.is_none()),
    }
}

/// Exact gross-substitutes test through the equivalent M-natural concavity
/// of the bundle table: for all bundles `X`, `Y` and every `i` in `X \ Y`,
/// `v(X) + v(Y) <= max(v(X - i) + v(Y + i), max_j v(X - i + j) + v(Y + i - j))`
/// with `j` ranging over `Y \ X`. Needs no price grid; costs `O(4^g g^2)`.
pub fn is_m_natural_concave<T: Scalar>(v: &BuyerValuation<T>) -> bool {
    let table = v.to_table();
    let size = table.len();
    for x in 0..size {
        for y in 0..size {
            let lhs = table[x].clone() + &table[y];
            let only_x = x & !y;
            let only_y = y & !x;
            for i in (0..32).filter(|i| only_x & (1 << i) != 0) {
                let (xi, yi) = (x & !(1 << i), y | (1 << i));
                if table[xi].clone() + &table[yi] >= lhs {
                    continue;
                }
                let swap = (0..32)
                    .filter(|j| only_y & (1 << j) != 0)
                    .any(|j| table[xi | (1 << j)].clone() + &table[yi & !(1 << j)] >= lhs);
                if !swap {
                    return false;
                }
            }
        }
    }
    true
}

fn demand_set<T: Scalar>(table: &[T], prices: &PriceVector<T>) -> Vec<Bundle> {
    let size = table.len();
    let mut cost = vec![T::zero(); size];
    let mut best = T::zero();
    let mut out = vec![Bundle::EMPTY];
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        cost[mask] = cost[mask & (mask - 1)].clone() + &prices.0[low];
        let gain = table[mask].clone() - &cost[mask];
        match gain.cmp(&best) {
            std::cmp::Ordering::Greater => {
                best = gain;
                out.clear();
                out.push(Bundle(mask as u32));
            }
            std::cmp::Ordering::Equal => out.push(Bundle(mask as u32)),
            std::cmp::Ordering::Less => {}
        }
    }
    out
}

/// Outcome of a downward-demand-flow check.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdfReport {
    pub holds: bool,
    /// Bundle demanded at the first price vector (canonical choice).
    pub before: Bundle,
    /// Bundle demanded at the second price vector (closest to `before`).
    pub after: Bundle,
    pub violating_item: Option<ItemType>,
}

/// Checks both downward-demand-flow conditions for the move from `p` to `q`,
/// with `Δ = q - p`:
/// an item with `Δx <= 0` that is dropped must be replaced by some item with
/// `Δy < Δx`, and an item with `Δx >= 0` that is picked up must replace some
/// item with `Δy > Δx`.
///
/// The bundle at `p` is the canonical demanded bundle; the bundle at `q` is
/// the demanded bundle closest to it.
pub fn check_ddf<T: Scalar>(v: &BuyerValuation<T>, p: &PriceVector<T>, q: &PriceVector<T>) -> DdfReport {
    let g = p.len();
    let before = buyer_demand(v, p, Bundle::full(g)).canonical();
    let after = closest_demanded(v, q, before);
    let delta = p.deltas(q);
    let dropped: Vec<ItemType> = before.items().filter(|x| !after.contains(*x)).collect();
    let added: Vec<ItemType> = after.items().filter(|x| !before.contains(*x)).collect();
    let zero = T::zero();
    let mut violating_item = None;
    for &x in &dropped {
        if delta[x.0] <= zero && !added.iter().any(|y| delta[y.0] < delta[x.0]) {
            violating_item = Some(x);
            break;
        }
    }
    if violating_item.is_none() {
        for &x in &added {
            if delta[x.0] >= zero && !dropped.iter().any(|y| delta[y.0] > delta[x.0]) {
                violating_item = Some(x);
                break;
            }
        }
    }
    DdfReport { holds: violating_item.is_none(), before, after, violating_item }
}
