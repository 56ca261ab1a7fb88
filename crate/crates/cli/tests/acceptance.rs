//! Acceptance run: one PASS/FAIL line per criterion, followed by a nonzero
//! exit if anything failed. Runs without the libtest harness so the lines
//! are printed even when output capture is on.

use std::process::Command;
use std::time::{Duration, Instant};

use mida_core::baselines::{optimal_benchmark, run_mcafee, MultiUnitMode, SingleTypeMarket};
use mida_core::diagnostics::{diagnose, market_parameters};
use mida_core::equilibrium::{brute_force_optimal_gain, solve_walrasian};
use mida_core::experiments::{
    demand_supply_market, find_profitable_deviation, mcafee_sbb_market, naive_multiunit_market, scaling_experiment,
    DeviationGrid, McAfeeMechanism, MidaExhaustive, NAIVE_MULTIUNIT_SELLER,
};
use mida_core::mechanism::{run_mida, run_mida_with_halving, Half, TradeOutcome};
use mida_core::model::{
    buyer_demand, calibrated_market, default_gs_grid, generate_market, is_dmr, is_gross_substitute, AgentId, Bundle,
    BuyerFamily, BuyerValuation, CalibratedSpec, GeneratorSpec, ItemType, Market,
};
use mida_core::{Rational, Scalar};
use num_traits::{Signed, Zero};

// Pinned thresholds.
const C1_MIN_RUNS: usize = 10_000;
const C1_BUDGET: Duration = Duration::from_secs(5 * 60);
const C2_MIN_MARKETS: usize = 1_000;
const C2_BUDGET: Duration = Duration::from_secs(5 * 60);
const C3_MIN_SUITE: usize = 50;
const C3_BUDGET: Duration = Duration::from_secs(10 * 60);
const C4_MIN_MARKETS: usize = 1_000;
const C6_MAX_RATIO: (i64, i64) = (1, 100);
const C6_SEEDS: u64 = 1_000;
const C7_KS: [usize; 4] = [25, 100, 400, 1600];
const C7_TRIALS: usize = 2_000;
const C7_MIN_RATIO_AT_TOP: f64 = 0.9;
const C7_BUDGET: Duration = Duration::from_secs(15 * 60);
const C8_MIN_RUNS: usize = 5_000;
const C8_MAX_CLEARING_FREQUENCY: f64 = 0.05;
const C8_LARGE_K: usize = 100;
const C9_MAX_UNITS: usize = 4;
const C9_MAX_MARGINAL: i64 = 6;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn r(n: i64) -> Rational {
    Rational::from_int(n)
}

fn family_of(i: u64, g: usize) -> BuyerFamily {
    match i % 3 {
        0 => BuyerFamily::UnitDemand,
        1 => BuyerFamily::Additive,
        _ if g >= 2 => BuyerFamily::TableGs,
        _ => BuyerFamily::UnitDemand,
    }
}

/// Budget balance, individual rationality and per-half material balance,
/// recomputed from the outcome's raw fields. Returns the violations found.
fn violations(market: &Market<Rational>, o: &TradeOutcome<Rational>) -> Vec<String> {
    let mut found = Vec::new();
    let total = o.payments.values().fold(Rational::zero(), |acc, p| acc + p);
    if !total.is_zero() {
        found.push(format!("payments sum to {total}"));
    }
    let posted = |id: AgentId| match o.halving.half_of(id) {
        Some(Half::R) => &o.prices_l,
        _ => &o.prices_r,
    };
    for b in market.buyers() {
        let bundle = o.bundles[&b.id];
        let price = bundle.items().fold(Rational::zero(), |acc, x| acc + &posted(b.id).0[x.0]);
        if o.payments[&b.id] != -price.clone() {
            found.push(format!("buyer {} payment {} differs from price {price}", b.id, o.payments[&b.id]));
        }
        if (b.valuation.value(bundle) - price).is_negative() {
            found.push(format!("buyer {} is worse off", b.id));
        }
    }
    for s in market.sellers() {
        let units = o.units[&s.id];
        let price = posted(s.id).0[s.valuation.item.0].clone();
        let revenue = price * r(units as i64);
        if o.payments[&s.id] != revenue {
            found.push(format!("seller {} paid {} not {revenue}", s.id, o.payments[&s.id]));
        }
        let cost = s.valuation.marginals[s.valuation.units() - units..].iter().fold(Rational::zero(), |a, m| a + m);
        if (revenue - cost).is_negative() {
            found.push(format!("seller {} is worse off", s.id));
        }
    }
    for half in [Half::R, Half::L] {
        let mut balance = vec![0i64; market.g()];
        for b in market.buyers().iter().filter(|b| o.halving.half_of(b.id) == Some(half)) {
            for x in o.bundles[&b.id].items() {
                balance[x.0] += 1;
            }
        }
        for s in market.sellers().iter().filter(|s| o.halving.half_of(s.id) == Some(half)) {
            balance[s.valuation.item.0] -= o.units[&s.id] as i64;
        }
        if balance.iter().any(|&d| d != 0) {
            found.push(format!("half {half:?} unbalanced by {balance:?}"));
        }
    }
    found
}

fn criterion_1() -> Verdict {
    let mut runs = 0usize;
    let mut bad = Vec::new();
    let mut market_index = 0u64;
    for g in 1..=3usize {
        for m in 1..=3usize {
            let mut cell = 0;
            while cell < C1_MIN_RUNS / 9 + 1 {
                let spec = GeneratorSpec {
                    g,
                    buyers: 2 + (market_index % 7) as usize,
                    sellers: 2 + (market_index / 7 % 7) as usize,
                    family: family_of(market_index, g),
                    value_range: (0, 30),
                    max_units: m,
                };
                let market: Market<Rational> = generate_market(&spec, market_index).unwrap();
                market_index += 1;
                for seed in 0..8 {
                    let outcome = run_mida(&market, market_index * 100 + seed).unwrap();
                    let v = violations(&market, &outcome);
                    if !v.is_empty() && bad.len() < 3 {
                        bad.push(format!("g={g} m={m} market {market_index} seed {seed}: {}", v.join("; ")));
                    }
                    runs += 1;
                    cell += 1;
                }
            }
        }
    }
    verdict(
        runs >= C1_MIN_RUNS && bad.is_empty(),
        format!("{runs} runs over 9 (g, m) cells, {} with violations {}", bad.len(), bad.join(" | ")),
    )
}

fn criterion_2() -> Verdict {
    let mut checked = 0usize;
    let mut problems = Vec::new();
    let mut i = 0u64;
    while checked < C2_MIN_MARKETS {
        let g = 1 + (i % 3) as usize;
        let spec = GeneratorSpec {
            g,
            buyers: (i % 6) as usize,
            sellers: (i / 6 % 6) as usize,
            family: family_of(i / 3, g),
            value_range: (0, 15),
            max_units: 1 + (i % 2) as usize,
        };
        let market: Market<Rational> = generate_market(&spec, i).unwrap();
        i += 1;
        let Ok(brute) = brute_force_optimal_gain(&market) else { continue };
        checked += 1;
        let eq = solve_walrasian(&market).unwrap();
        let mut issue = Vec::new();
        if eq.gain != brute.gain {
            issue.push(format!("gain {} vs brute force {}", eq.gain, brute.gain));
        }
        let mut net = vec![0i64; g];
        for (id, bundle) in &eq.buyer_bundles {
            let b = market.buyers().iter().find(|b| b.id == *id).unwrap();
            if !buyer_demand(&b.valuation, &eq.prices, Bundle::full(g)).contains(*bundle) {
                issue.push(format!("buyer {id} holds undemanded {bundle}"));
            }
            for x in bundle.items() {
                net[x.0] += 1;
            }
        }
        for (id, q) in &eq.seller_units {
            let s = market.sellers().iter().find(|s| s.id == *id).unwrap();
            let p = &eq.prices.0[s.valuation.item.0];
            let strict = s.valuation.marginals.iter().filter(|m| *m < p).count();
            let weak = s.valuation.marginals.iter().filter(|m| *m <= p).count();
            if *q < strict || *q > weak {
                issue.push(format!("seller {id} supplies {q} outside [{strict}, {weak}]"));
            }
            net[s.valuation.item.0] -= *q as i64;
        }
        if net.iter().any(|&d| d != 0) {
            issue.push(format!("excess demand {net:?}"));
        }
        if !issue.is_empty() && problems.len() < 3 {
            problems.push(format!("market {}: {}", i - 1, issue.join("; ")));
        }
    }
    verdict(problems.is_empty(), format!("{checked} markets ({i} drawn), {} mismatches {}", problems.len(), problems.join(" | ")))
}

fn small_suite() -> Vec<Market<Rational>> {
    let mut suite = Vec::new();
    let mut i = 0u64;
    while suite.len() < 60 {
        let g = 1 + (i % 2) as usize;
        let agents = 2 + (i % 3) as usize;
        let buyers = 1 + (i / 3 % (agents as u64 - 1)) as usize;
        let spec = GeneratorSpec {
            g,
            buyers,
            sellers: agents - buyers,
            family: family_of(i / 2, g),
            value_range: (0, 10),
            max_units: 1 + (i / 5 % 2) as usize,
        };
        suite.push(generate_market(&spec, 1_000 + i).unwrap());
        i += 1;
    }
    suite
}

fn single_unit_suite() -> Vec<Market<Rational>> {
    (0..60u64)
        .map(|i| {
            let agents = 2 + (i % 3) as usize;
            let buyers = 1 + (i / 3 % (agents as u64 - 1)) as usize;
            let spec = GeneratorSpec {
                g: 1,
                buyers,
                sellers: agents - buyers,
                family: BuyerFamily::UnitDemand,
                value_range: (0, 10),
                max_units: 1,
            };
            generate_market(&spec, 5_000 + i).unwrap()
        })
        .collect()
}

fn criterion_3() -> Verdict {
    let grid = DeviationGrid::<Rational>::default();
    let mut found = Vec::new();
    let suite = small_suite();
    let mut agents = 0;
    for (n, market) in suite.iter().enumerate() {
        for id in market.agent_ids() {
            agents += 1;
            if let Some(d) = find_profitable_deviation(&MidaExhaustive::default(), market, id, &grid).unwrap() {
                found.push(format!("MIDA market {n} agent {id} reports {} (+{})", d.report, d.delta));
            }
        }
    }
    let mcafee = McAfeeMechanism { mode: MultiUnitMode::KeepOthers };
    let single = single_unit_suite();
    for (n, market) in single.iter().enumerate() {
        for id in market.agent_ids() {
            agents += 1;
            if let Some(d) = find_profitable_deviation(&mcafee, market, id, &grid).unwrap() {
                found.push(format!("McAfee market {n} agent {id} reports {} (+{})", d.report, d.delta));
            }
        }
    }
    let sizes_ok = suite.len() >= C3_MIN_SUITE
        && single.len() >= C3_MIN_SUITE
        && suite.iter().chain(&single).all(|m| m.num_agents() <= 4 && m.g() <= 2 && m.max_units() <= 2);
    verdict(
        sizes_ok && found.is_empty(),
        format!(
            "{} MIDA + {} McAfee markets, {agents} agents searched, {} profitable deviations {}",
            suite.len(),
            single.len(),
            found.len(),
            found.iter().take(3).cloned().collect::<Vec<_>>().join(" | ")
        ),
    )
}

fn criterion_4() -> Verdict {
    let eps = Rational::from_fraction(1, 1000);
    let market = mcafee_sbb_market(100, eps.clone()).unwrap();
    let out = run_mcafee(&SingleTypeMarket::from_market(&market).unwrap());
    let opt = optimal_benchmark(&market).unwrap();
    let exact = out.trader_gain == Rational::from_fraction(198, 1000)
        && out.surplus == r(99) * (r(1) - r(2) * eps.clone())
        && opt == r(100) - r(2) * eps;
    let mut checked = 0;
    let mut failures = 0;
    let mut drawn = 0u64;
    while checked < C4_MIN_MARKETS {
        let i = drawn;
        drawn += 1;
        let spec = GeneratorSpec {
            g: 1,
            buyers: 1 + (i % 25) as usize,
            sellers: 1 + (i / 25 % 25) as usize,
            family: BuyerFamily::UnitDemand,
            value_range: (0, 100),
            max_units: 1,
        };
        let market: Market<Rational> = generate_market(&spec, 9_000 + i).unwrap();
        let out = run_mcafee(&SingleTypeMarket::from_market(&market).unwrap());
        let opt = optimal_benchmark(&market).unwrap();
        if out.k >= 1 {
            checked += 1;
            let bound = (r(1) - r(1) / r(out.k as i64)) * opt;
            if out.trader_gain + out.surplus < bound {
                failures += 1;
            }
        }
    }
    verdict(
        exact && failures == 0 && checked > 0,
        format!(
            "k=100: trader gain {}, surplus {}, optimum {}; (1-1/k) bound held on {}/{checked} markets with k>=1 ({drawn} drawn)",
            out.trader_gain,
            out.surplus,
            opt,
            checked - failures
        ),
    )
}

fn criterion_5() -> Verdict {
    let market: Market<Rational> = naive_multiunit_market();
    let grid = DeviationGrid::default();
    let naive = McAfeeMechanism { mode: MultiUnitMode::KeepOthers };
    let under_naive = find_profitable_deviation(&naive, &market, NAIVE_MULTIUNIT_SELLER, &grid).unwrap();
    let mut under_mida = Vec::new();
    for id in market.agent_ids() {
        if let Some(d) = find_profitable_deviation(&MidaExhaustive::default(), &market, id, &grid).unwrap() {
            under_mida.push(format!("{id}: {}", d.report));
        }
    }
    let shown = under_naive.as_ref().map_or("none".to_string(), |d| format!("{} (+{})", d.report, d.delta));
    verdict(
        under_naive.is_some() && under_mida.is_empty(),
        format!("naive keep-others: seller {NAIVE_MULTIUNIT_SELLER} gains by {shown}; MIDA: {} deviations", under_mida.len()),
    )
}

fn criterion_6() -> Verdict {
    let (k, big_k) = (10usize, 4usize);
    let (market, halving) = demand_supply_market::<Rational>(k, big_k).unwrap();
    let outcome = run_mida_with_halving(&market, &halving, 0).unwrap();
    let opt = solve_walrasian(&market).unwrap().gain;
    let ratio = outcome.gain_total.clone() / opt.clone();
    let x_supply_l: usize = market
        .sellers()
        .iter()
        .filter(|s| s.valuation.item == ItemType(0) && halving.half_of(s.id) == Some(Half::L))
        .map(|s| outcome.units[&s.id])
        .sum();
    // the two buyers that want only x and value it enormously
    let big: Vec<AgentId> = market
        .buyers()
        .iter()
        .filter(|b| matches!(&b.valuation, BuyerValuation::UnitDemand(v) if v[1].is_zero() && v[0] > r(9)))
        .map(|b| b.id)
        .collect();
    let big_traded = big.iter().filter(|id| !outcome.bundles[id].is_empty()).count();
    let mut total = Rational::zero();
    for seed in 0..C6_SEEDS {
        let o = run_mida(&market, seed).unwrap();
        total += o.gain_total / opt.clone();
    }
    let mean = total / r(C6_SEEDS as i64);
    let threshold = Rational::from_fraction(C6_MAX_RATIO.0, C6_MAX_RATIO.1);
    verdict(
        x_supply_l == 0 && big.len() == 2 && big_traded == 0 && ratio < threshold,
        format!(
            "forced halving: x supply in L {x_supply_l}, x-only buyers trading {big_traded}/{}, ratio {:.3e}; mean ratio over {C6_SEEDS} random halvings {:.6}",
            big.len(),
            ratio.to_f64_lossy(),
            mean.to_f64_lossy()
        ),
    )
}

fn criterion_7() -> Verdict {
    let report = scaling_experiment::<Rational>(BuyerFamily::UnitDemand, 1, 1, &C7_KS, C7_TRIALS, 7).unwrap();
    let means: Vec<f64> = report.rows.iter().map(|row| row.mean_ratio.to_f64_lossy()).collect();
    let top = *means.last().unwrap();
    verdict(
        report.is_strictly_increasing() && top > C7_MIN_RATIO_AT_TOP,
        format!(
            "mean ratio at k = {}: {}",
            C7_KS.map(|k| k.to_string()).join("/"),
            means.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn criterion_8() -> Verdict {
    let mut runs = 0usize;
    let mut corollary_failures = 0usize;
    let mut large_runs = 0usize;
    let mut large_violations = 0usize;
    let mut assess = |market: &Market<Rational>, seeds: std::ops::Range<u64>, large: bool| {
        let eq = solve_walrasian(market).unwrap();
        let params = market_parameters(market, &eq);
        for seed in seeds {
            let outcome = run_mida(market, seed).unwrap();
            let d = diagnose(market, &eq, &params, &outcome);
            runs += 1;
            if !d.corollary_holds() {
                corollary_failures += 1;
            }
            if large {
                large_runs += 1;
                if d.clearing_r.iter().chain(&d.clearing_l).any(|c| !c.within) {
                    large_violations += 1;
                }
            }
        }
    };
    for i in 0..250u64 {
        let g = 1 + (i % 3) as usize;
        let spec = GeneratorSpec {
            g,
            buyers: 4 + (i % 9) as usize,
            sellers: 4 + (i / 9 % 9) as usize,
            family: family_of(i / 3, g),
            value_range: (0, 40),
            max_units: 1 + (i % 3) as usize,
        };
        let market: Market<Rational> = generate_market(&spec, 20_000 + i).unwrap();
        assess(&market, 0..10, false);
    }
    for i in 0..50u64 {
        let g = 1 + (i % 2) as usize;
        let family = if g == 2 && i % 4 == 1 { BuyerFamily::Additive } else { BuyerFamily::UnitDemand };
        let spec = CalibratedSpec { targets: vec![C8_LARGE_K + (i % 3) as usize * 25; g], max_units: 1 + (i % 3) as usize, family };
        let market: Market<Rational> = calibrated_market(&spec, 30_000 + i).unwrap();
        assess(&market, 0..50, true);
    }
    let frequency = large_violations as f64 / large_runs.max(1) as f64;
    verdict(
        runs >= C8_MIN_RUNS && corollary_failures == 0 && frequency < C8_MAX_CLEARING_FREQUENCY,
        format!(
            "{runs} runs, corollary failed in {corollary_failures}; clearing bound exceeded in {large_violations}/{large_runs} runs at k >= {C8_LARGE_K} ({:.2}%)",
            100.0 * frequency
        ),
    )
}

fn criterion_9() -> Verdict {
    let mut checked = 0usize;
    let mut disagreements = Vec::new();
    for m in 1..=C9_MAX_UNITS {
        let mut digits = vec![0i64; m];
        loop {
            let marginals: Vec<Rational> = digits.iter().map(|&d| r(d)).collect();
            let v = BuyerValuation::identical_copies(&marginals);
            let gs = is_gross_substitute(&v, &default_gs_grid(&v)).unwrap();
            if gs != is_dmr(&marginals) {
                disagreements.push(format!("{digits:?}"));
            }
            checked += 1;
            let mut i = 0;
            while i < m && digits[i] == C9_MAX_MARGINAL {
                digits[i] = 0;
                i += 1;
            }
            if i == m {
                break;
            }
            digits[i] += 1;
        }
    }
    verdict(
        disagreements.is_empty(),
        format!("{checked} marginal vectors, {} disagreements {}", disagreements.len(), disagreements.join(" ")),
    )
}

fn criterion_10() -> Verdict {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let bin = env!("CARGO_BIN_EXE_mida");
    let invocations: [Vec<String>; 4] = [
        vec!["run".into(), root.join("two-types.toml").display().to_string(), "--seed".into(), "1".into(), "--emit-diagnostics".into()],
        vec!["run".into(), root.join("random-gs.toml").display().to_string(), "--seed".into(), "42".into()],
        vec!["experiment".into(), root.join("two-types.toml").display().to_string(), "--trials".into(), "50".into()],
        vec!["experiment".into(), root.join("random-gs.toml").display().to_string()],
    ];
    let mut differing = Vec::new();
    for args in &invocations {
        let first = Command::new(bin).args(args).output().unwrap();
        let second = Command::new(bin).args(args).output().unwrap();
        if !first.status.success() || first.stdout.is_empty() || first.stdout != second.stdout {
            differing.push(args[0..2].join(" "));
        }
    }
    verdict(
        differing.is_empty(),
        format!("{} invocations run twice, {} differ {}", invocations.len(), differing.len(), differing.join(", ")),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Verdict, Option<Duration>); 10] = [
        ("budget balance, IR and material balance", criterion_1, Some(C1_BUDGET)),
        ("Walrasian solver equals brute force", criterion_2, Some(C2_BUDGET)),
        ("exhaustive truthfulness at desk scale", criterion_3, Some(C3_BUDGET)),
        ("McAfee reproduction and (1-1/k) bound", criterion_4, None),
        ("naive multi-unit McAfee is manipulable, MIDA is not", criterion_5, None),
        ("demand-supply interaction loses almost all welfare", criterion_6, None),
        ("competitive ratio grows with k", criterion_7, Some(C7_BUDGET)),
        ("demand-flow corollary and clearing bound", criterion_8, None),
        ("DMR iff GS for one good", criterion_9, None),
        ("byte-identical CLI output", criterion_10, None),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (n, (name, run, budget)) in criteria.iter().enumerate() {
        let number = n + 1;
        if only.is_some_and(|o| o != number) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let elapsed = start.elapsed();
        let in_time = budget.is_none_or(|b| elapsed <= b);
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = budget.map_or(String::new(), |b| format!(", budget {}s", b.as_secs()));
        println!(
            "criterion {number:>2} {}: {name}: {} [{:.1}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
