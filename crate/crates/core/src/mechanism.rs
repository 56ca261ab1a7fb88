//! The multi-item double auction with random halving.
//!
//! 1. Every trader is sent to half R or half L by a fair coin.
//! 2. Each half computes its own least Walrasian prices.
//! 3. Each half trades at the prices of the other half: sellers of every
//!    type stand in a random line, buyers stand in a random line, and each
//!    buyer in turn takes a best bundle among the types still offered.
//!
//! A half with no buyers or no sellers cannot produce meaningful prices; in
//! that case its prices are the zero vector and the trade priced by them is
//! discarded, as is the trade of the degenerate half itself.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::equilibrium::{gain_decomposition, solve_walrasian};
use crate::model::{buyer_demand, AgentId, Bundle, Market, PriceVector, Role, TieBreak};
use crate::rng::substream;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Half {
    R,
    L,
}

impl Half {
    pub fn other(self) -> Half {
        match self {
            Half::R => Half::L,
            Half::L => Half::R,
        }
    }

    fn label(self) -> &'static str {
        match self {
            Half::R => "R",
            Half::L => "L",
        }
    }
}

/// Assignment of every agent to a half.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Halving {
    assignment: BTreeMap<AgentId, Half>,
}

impl Halving {
    pub fn new(assignment: BTreeMap<AgentId, Half>) -> Self {
        Halving { assignment }
    }

    /// One fair coin per agent, tossed in ascending id order.
    pub fn random<T: Scalar>(market: &Market<T>, seed: u64) -> Self {
        let mut rng = substream(seed, "halving");
        let assignment =
            market.agent_ids().into_iter().map(|id| (id, if rng.gen::<bool>() { Half::R } else { Half::L })).collect();
        Halving { assignment }
    }

    pub fn all<T: Scalar>(market: &Market<T>, half: Half) -> Self {
        Halving { assignment: market.agent_ids().into_iter().map(|id| (id, half)).collect() }
    }

    /// Bit `i` of `mask` sends the `i`-th smallest id to R.
    pub fn from_mask<T: Scalar>(market: &Market<T>, mask: u64) -> Self {
        let assignment = market
            .agent_ids()
            .into_iter()
            .enumerate()
            .map(|(i, id)| (id, if mask >> i & 1 == 1 { Half::R } else { Half::L }))
            .collect();
        Halving { assignment }
    }

    pub fn half_of(&self, id: AgentId) -> Option<Half> {
        self.assignment.get(&id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<AgentId, Half> {
        &self.assignment
    }

    fn validate<T: Scalar>(&self, market: &Market<T>) -> Result<()> {
        let ids = market.agent_ids();
        if let Some(missing) = ids.iter().find(|id| !self.assignment.contains_key(id)) {
            return Err(Error::InvalidHalving(*missing));
        }
        if let Some(extra) = self.assignment.keys().find(|id| ids.binary_search(id).is_err()) {
            return Err(Error::UnknownAgent(*extra));
        }
        Ok(())
    }

    /// The two sub-markets `(R, L)`.
    pub fn split<T: Scalar>(&self, market: &Market<T>) -> (Market<T>, Market<T>) {
        (
            market.restrict(|id| self.half_of(id) == Some(Half::R)),
            market.restrict(|id| self.half_of(id) == Some(Half::L)),
        )
    }
}

/// Trading order inside one half: a line of sellers per type and a line of buyers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Lottery {
    pub seller_lines: Vec<Vec<AgentId>>,
    pub buyer_line: Vec<AgentId>,
}

impl Lottery {
    pub fn market_order<T: Scalar>(half: &Market<T>) -> Self {
        let mut seller_lines = vec![Vec::new(); half.g()];
        for s in half.sellers() {
            seller_lines[s.item().0].push(s.id);
        }
        Lottery { seller_lines, buyer_line: half.buyers().iter().map(|b| b.id).collect() }
    }

    /// Independent uniform permutations, one labeled stream per line.
    pub fn random<T: Scalar>(half: &Market<T>, seed: u64, side: Half) -> Self {
        let mut lottery = Lottery::market_order(half);
        for (x, line) in lottery.seller_lines.iter_mut().enumerate() {
            line.shuffle(&mut substream(seed, &format!("lottery/{}/sellers/{x}", side.label())));
        }
        lottery.buyer_line.shuffle(&mut substream(seed, &format!("lottery/{}/buyers", side.label())));
        lottery
    }

    /// Every combination of permutations of every line.
    pub fn enumerate<T: Scalar>(half: &Market<T>) -> Vec<Lottery> {
        let base = Lottery::market_order(half);
        let mut out = vec![Lottery { seller_lines: Vec::new(), buyer_line: Vec::new() }];
        for line in &base.seller_lines {
            let perms = permutations(line);
            out = out
                .into_iter()
                .flat_map(|partial| {
                    perms.iter().map(move |perm| {
                        let mut next = partial.clone();
                        next.seller_lines.push(perm.clone());
                        next
                    })
                })
                .collect();
        }
        let perms = permutations(&base.buyer_line);
        out.into_iter()
            .flat_map(|partial| {
                perms.iter().map(move |perm| Lottery { buyer_line: perm.clone(), ..partial.clone() })
            })
            .collect()
    }

    fn validate<T: Scalar>(&self, half: &Market<T>) -> Result<()> {
        let base = Lottery::market_order(half);
        let same = |a: &[AgentId], b: &[AgentId]| {
            let (mut a, mut b) = (a.to_vec(), b.to_vec());
            a.sort();
            b.sort();
            a == b
        };
        let ok = self.seller_lines.len() == base.seller_lines.len()
            && self.seller_lines.iter().zip(&base.seller_lines).all(|(l, b)| same(l, b))
            && same(&self.buyer_line, &base.buyer_line);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidSpec("lottery lines are not permutations of the half's traders".into()))
        }
    }
}

fn permutations(items: &[AgentId]) -> Vec<Vec<AgentId>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Result of the serial trade inside one half.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SerialTrade {
    /// One entry per buyer of the half, in market order.
    pub buyer_bundles: Vec<(AgentId, Bundle)>,
    /// One entry per seller of the half, in market order.
    pub seller_units: Vec<(AgentId, usize)>,
    pub volume: Vec<usize>,
}

/// Posted-price serial trade.
///
/// A seller sells its next unit only when the price strictly exceeds that
/// unit's marginal value; otherwise it leaves and the next seller in its
/// line steps up. A type is available while its line is not exhausted.
pub fn serial_trade<T: Scalar>(
    half: &Market<T>,
    prices: &PriceVector<T>,
    lottery: &Lottery,
    tie_break: TieBreak,
) -> Result<SerialTrade> {
    lottery.validate(half)?;
    let g = half.g();
    let seller_index: BTreeMap<AgentId, usize> = half.sellers().iter().enumerate().map(|(i, s)| (s.id, i)).collect();
    let mut sold = vec![0usize; half.sellers().len()];
    let mut front = vec![0usize; g];

    let advance = |x: usize, front: &mut Vec<usize>, sold: &[usize]| {
        let line = &lottery.seller_lines[x];
        while front[x] < line.len() {
            let i = seller_index[&line[front[x]]];
            let willing = half.sellers()[i]
                .valuation
                .next_unit_value(sold[i])
                .is_some_and(|m| &prices.0[x] > m);
            if willing {
                break;
            }
            front[x] += 1;
        }
    };
    for x in 0..g {
        advance(x, &mut front, &sold);
    }

    let buyer_index: BTreeMap<AgentId, usize> = half.buyers().iter().enumerate().map(|(i, b)| (b.id, i)).collect();
    let mut bundles = vec![Bundle::EMPTY; half.buyers().len()];
    let mut volume = vec![0usize; g];
    for id in &lottery.buyer_line {
        let available = Bundle::from_items((0..g).filter(|&x| front[x] < lottery.seller_lines[x].len()));
        let i = buyer_index[id];
        let bundle = buyer_demand(&half.buyers()[i].valuation, prices, available).pick(tie_break);
        for x in bundle.items() {
            let seller = seller_index[&lottery.seller_lines[x.0][front[x.0]]];
            sold[seller] += 1;
            volume[x.0] += 1;
            advance(x.0, &mut front, &sold);
        }
        bundles[i] = bundle;
    }
    Ok(SerialTrade {
        buyer_bundles: half.buyers().iter().map(|b| b.id).zip(bundles).collect(),
        seller_units: half.sellers().iter().map(|s| s.id).zip(sold).collect(),
        volume,
    })
}

/// Everything a run produced, for auditing and diagnostics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeOutcome<T> {
    pub halving: Halving,
    pub lottery_r: Lottery,
    pub lottery_l: Lottery,
    /// Walrasian prices of half R; posted in half L.
    pub prices_r: PriceVector<T>,
    /// Walrasian prices of half L; posted in half R.
    pub prices_l: PriceVector<T>,
    pub degenerate_r: bool,
    pub degenerate_l: bool,
    pub volume_r: Vec<usize>,
    pub volume_l: Vec<usize>,
    /// Every buyer's bundle (empty when it bought nothing).
    pub bundles: BTreeMap<AgentId, Bundle>,
    /// Every seller's units sold.
    pub units: BTreeMap<AgentId, usize>,
    /// Money received by every agent; negative when paying.
    pub payments: BTreeMap<AgentId, T>,
    pub gain_total: T,
    pub gain_per_type: Vec<T>,
}

impl<T: Scalar> TradeOutcome<T> {
    /// Prices posted to the half containing `id`.
    pub fn posted_prices(&self, id: AgentId) -> Option<&PriceVector<T>> {
        match self.halving.half_of(id)? {
            Half::R => Some(&self.prices_l),
            Half::L => Some(&self.prices_r),
        }
    }

    /// Realized gain of one agent, measured with its valuation in `market`.
    pub fn agent_gain(&self, market: &Market<T>, id: AgentId) -> Option<T> {
        let payment = self.payments.get(&id)?.clone();
        match market.role_of(id)? {
            Role::Buyer => {
                let b = market.buyers().iter().find(|b| b.id == id)?;
                Some(b.valuation.value(self.bundles[&id]) + payment)
            }
            Role::Seller => {
                let s = market.sellers().iter().find(|s| s.id == id)?;
                Some(payment - s.valuation.cost_of_selling(self.units[&id]))
            }
        }
    }

    pub fn payment_sum(&self) -> T {
        self.payments.values().fold(T::zero(), |acc, p| acc + p)
    }

    /// Budget balance, individual rationality and per-half material balance.
    pub fn verify(&self, market: &Market<T>) -> Result<()> {
        let sum = self.payment_sum();
        if !sum.is_zero() {
            return Err(Error::InvariantViolation(format!("payments sum to {sum}")));
        }
        for id in market.agent_ids() {
            let gain = self.agent_gain(market, id).ok_or(Error::UnknownAgent(id))?;
            if gain.is_negative() {
                return Err(Error::InvariantViolation(format!("agent {id} ends with gain {gain}")));
            }
        }
        for half in [Half::R, Half::L] {
            let mut bought = vec![0usize; market.g()];
            let mut sold = vec![0usize; market.g()];
            for b in market.buyers().iter().filter(|b| self.halving.half_of(b.id) == Some(half)) {
                for x in self.bundles[&b.id].items() {
                    bought[x.0] += 1;
                }
            }
            for s in market.sellers().iter().filter(|s| self.halving.half_of(s.id) == Some(half)) {
                sold[s.item().0] += self.units[&s.id];
            }
            if bought != sold {
                return Err(Error::InvariantViolation(format!(
                    "half {half:?} buys {bought:?} but sells {sold:?}"
                )));
            }
        }
        Ok(())
    }
}

/// Total and per-type gain of an outcome, checking material balance.
pub fn gain_from_trade<T: Scalar>(outcome: &TradeOutcome<T>, market: &Market<T>) -> Result<(T, Vec<T>)> {
    let mut bought = vec![0usize; market.g()];
    let mut sold = vec![0usize; market.g()];
    for bundle in outcome.bundles.values() {
        for x in bundle.items() {
            bought[x.0] += 1;
        }
    }
    for s in market.sellers() {
        sold[s.item().0] += outcome.units.get(&s.id).copied().unwrap_or(0);
    }
    if let Some(x) = (0..market.g()).find(|&x| bought[x] != sold[x]) {
        return Err(Error::Unbalanced { item: x, bought: bought[x], sold: sold[x] });
    }
    let bundles: Vec<_> = outcome.bundles.iter().map(|(id, b)| (*id, *b)).collect();
    let units: Vec<_> = outcome.units.iter().map(|(id, q)| (*id, *q)).collect();
    Ok(gain_decomposition(market, &bundles, &units))
}

/// A halving with both halves priced, ready to trade under any lotteries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreparedHalves<T> {
    pub halving: Halving,
    pub r: Market<T>,
    pub l: Market<T>,
    pub prices_r: PriceVector<T>,
    pub prices_l: PriceVector<T>,
    pub degenerate_r: bool,
    pub degenerate_l: bool,
}

/// Mechanism configuration; the default uses canonical tie-breaking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Mida {
    pub tie_break: TieBreak,
}

impl Mida {
    pub fn new(tie_break: TieBreak) -> Self {
        Mida { tie_break }
    }

    pub fn run<T: Scalar>(&self, market: &Market<T>, seed: u64) -> Result<TradeOutcome<T>> {
        self.run_with_halving(market, &Halving::random(market, seed), seed)
    }

    pub fn run_with_halving<T: Scalar>(
        &self,
        market: &Market<T>,
        halving: &Halving,
        lottery_seed: u64,
    ) -> Result<TradeOutcome<T>> {
        let prepared = self.prepare(market, halving)?;
        let lottery_r = Lottery::random(&prepared.r, lottery_seed, Half::R);
        let lottery_l = Lottery::random(&prepared.l, lottery_seed, Half::L);
        self.execute(market, &prepared, &lottery_r, &lottery_l)
    }

    /// Splits the market and computes both halves' prices. The two solves
    /// are independent and run in parallel.
    pub fn prepare<T: Scalar>(&self, market: &Market<T>, halving: &Halving) -> Result<PreparedHalves<T>> {
        halving.validate(market)?;
        let (r, l) = halving.split(market);
        let lacks_side = |h: &Market<T>| h.buyers().is_empty() || h.sellers().is_empty();
        let (empty_r, empty_l) = (lacks_side(&r), lacks_side(&l));
        let price = |h: &Market<T>, empty: bool| -> Result<PriceVector<T>> {
            if empty {
                Ok(PriceVector::zeros(market.g()))
            } else {
                Ok(solve_walrasian(h)?.prices)
            }
        };
        let (prices_r, prices_l) = rayon::join(|| price(&r, empty_r), || price(&l, empty_l));
        let degenerate = empty_r || empty_l;
        Ok(PreparedHalves {
            halving: halving.clone(),
            r,
            l,
            prices_r: prices_r?,
            prices_l: prices_l?,
            degenerate_r: degenerate,
            degenerate_l: degenerate,
        })
    }

    /// Serial trade in both halves under fixed lotteries.
    pub fn execute<T: Scalar>(
        &self,
        market: &Market<T>,
        prepared: &PreparedHalves<T>,
        lottery_r: &Lottery,
        lottery_l: &Lottery,
    ) -> Result<TradeOutcome<T>> {
        let g = market.g();
        let mut bundles = BTreeMap::new();
        let mut units = BTreeMap::new();
        let mut payments = BTreeMap::new();
        let mut volumes = Vec::with_capacity(2);
        for (half, posted, lottery, degenerate) in [
            (&prepared.r, &prepared.prices_l, lottery_r, prepared.degenerate_r),
            (&prepared.l, &prepared.prices_r, lottery_l, prepared.degenerate_l),
        ] {
            lottery.validate(half)?;
            let trade = if degenerate {
                SerialTrade {
                    buyer_bundles: half.buyers().iter().map(|b| (b.id, Bundle::EMPTY)).collect(),
                    seller_units: half.sellers().iter().map(|s| (s.id, 0)).collect(),
                    volume: vec![0; g],
                }
            } else {
                serial_trade(half, posted, lottery, self.tie_break)?
            };
            for (id, bundle) in trade.buyer_bundles {
                payments.insert(id, -posted.of_bundle(bundle));
                bundles.insert(id, bundle);
            }
            for (s, (id, q)) in half.sellers().iter().zip(trade.seller_units) {
                payments.insert(id, posted.get(s.item()).clone() * T::from_int(q as i64));
                units.insert(id, q);
            }
            volumes.push(trade.volume);
        }
        let volume_l = volumes.pop().expect("two halves");
        let volume_r = volumes.pop().expect("two halves");
        let mut outcome = TradeOutcome {
            halving: prepared.halving.clone(),
            lottery_r: lottery_r.clone(),
            lottery_l: lottery_l.clone(),
            prices_r: prepared.prices_r.clone(),
            prices_l: prepared.prices_l.clone(),
            degenerate_r: prepared.degenerate_r,
            degenerate_l: prepared.degenerate_l,
            volume_r,
            volume_l,
            bundles,
            units,
            payments,
            gain_total: T::zero(),
            gain_per_type: vec![T::zero(); g],
        };
        let (total, per_type) = gain_from_trade(&outcome, market)?;
        outcome.gain_total = total;
        outcome.gain_per_type = per_type;
        Ok(outcome)
    }
}

/// [`Mida::run`] with canonical tie-breaking.
pub fn run_mida<T: Scalar>(market: &Market<T>, seed: u64) -> Result<TradeOutcome<T>> {
    Mida::default().run(market, seed)
}

/// [`Mida::run_with_halving`] with canonical tie-breaking.
pub fn run_mida_with_halving<T: Scalar>(
    market: &Market<T>,
    halving: &Halving,
    lottery_seed: u64,
) -> Result<TradeOutcome<T>> {
    Mida::default().run_with_halving(market, halving, lottery_seed)
}
