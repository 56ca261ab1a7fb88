use std::fmt::Write as _;
use std::path::Path;

use mida_core::diagnostics::{diagnose, market_parameters, theorem1_bound, BoundPreset, MarketParameters, TypeSets};
use mida_core::equilibrium::{solve_walrasian, Equilibrium};
use mida_core::experiments::{
    estimate_competitive_ratio, reproduce, reproduce_demand_supply, reproduce_mcafee_sbb, ExperimentResult,
    MarketSource, ReproductionId, Scenario,
};
use mida_core::mechanism::{Half, Mida, TradeOutcome};
use mida_core::model::{
    check_ddf, default_gs_grid, find_gs_violation, is_dmr, is_m_natural_concave, BuyerValuation, Market,
    PriceVector, Role, SellerValuation,
};
use mida_core::scalar::format_significant;
use mida_core::{Error, Rational, Scalar};
use num_traits::{Signed, Zero};

use crate::scenario::{GeneratorConfig, ScenarioConfig};
use crate::CliError;

fn read_scenario(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    ScenarioConfig::parse(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn load_market(config: &ScenarioConfig, seed: u64, allow_non_gs: bool) -> Result<Market<Rational>, CliError> {
    let market = config.market(seed).map_err(|e| CliError::validation(e.to_string()))?;
    if !allow_non_gs {
        for b in market.buyers() {
            if !is_m_natural_concave(&b.valuation) {
                return Err(CliError::validation(format!(
                    "buyer {} is not gross-substitute (run `check` for a witness, or pass --allow-non-gs)",
                    b.id
                )));
            }
        }
    }
    Ok(market)
}

fn mida_of(config: &ScenarioConfig) -> Mida {
    Mida::new(config.mechanism.tie_break.into())
}

fn kind(v: &BuyerValuation<Rational>) -> &'static str {
    match v {
        BuyerValuation::UnitDemand(_) => "unit-demand",
        BuyerValuation::Additive(_) => "additive",
        BuyerValuation::Table(_) => "table",
    }
}

fn list<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

/// Price vectors whose coordinates take the levels 0, a middle value and
/// one past the top value; used to probe demand flow.
fn probe_prices(v: &BuyerValuation<Rational>, g: usize) -> Vec<PriceVector<Rational>> {
    let grid = default_gs_grid(v);
    let levels = [grid[0].clone(), grid[grid.len() / 2].clone(), grid[grid.len() - 1].clone()];
    let mut out = vec![PriceVector(Vec::new())];
    for _ in 0..g {
        out = out
            .into_iter()
            .flat_map(|p| {
                levels.iter().map(move |l| {
                    let mut q = p.0.clone();
                    q.push(l.clone());
                    PriceVector(q)
                })
            })
            .collect();
    }
    out
}

const DDF_PROBE_MAX_TYPES: usize = 4;

pub fn check(path: &Path) -> Result<String, CliError> {
    let config = read_scenario(path)?;
    let seed = config.experiment.seed.unwrap_or(0);
    let (buyers, sellers) = if config.generator.is_some() {
        let m = config.market(seed).map_err(|e| CliError::validation(e.to_string()))?;
        (
            m.buyers().iter().map(|b| b.valuation.clone()).collect(),
            m.sellers().iter().map(|s| s.valuation.clone()).collect::<Vec<SellerValuation<Rational>>>(),
        )
    } else {
        let err = |e: crate::scenario::ScenarioError| CliError::validation(e.to_string());
        (config.buyer_valuations().map_err(err)?, config.seller_valuations().map_err(err)?)
    };
    let g = config.g;
    let mut out = String::new();
    let mut failures = 0;
    if g == 0 || g > mida_core::model::MAX_ITEM_TYPES {
        return Err(CliError::validation(format!("g = {g} is out of range")));
    }
    for (i, v) in buyers.iter().enumerate() {
        let mut line = format!("buyer #{i} ({}):", kind(v));
        let valid_shape = Market::from_valuations(g, vec![v.clone()], Vec::new());
        if let Err(e) = valid_shape {
            failures += 1;
            let _ = writeln!(out, "{line} INVALID {e}");
            continue;
        }
        let gs = match v {
            BuyerValuation::UnitDemand(_) | BuyerValuation::Additive(_) => {
                line.push_str(" GS ok (by construction);");
                true
            }
            BuyerValuation::Table(_) => match find_gs_violation(v, &default_gs_grid(v)) {
                Ok(None) => {
                    line.push_str(" GS ok;");
                    true
                }
                Ok(Some(w)) => {
                    let _ = write!(
                        line,
                        " GS VIOLATED: demands {} at {}, but after raising type {} to reach {} no demanded bundle keeps type {};",
                        w.bundle, w.from, w.raised.0, w.to, w.lost.0
                    );
                    false
                }
                Err(_) => {
                    let ok = is_m_natural_concave(v);
                    line.push_str(if ok { " GS ok (exchange test);" } else { " GS VIOLATED (exchange test);" });
                    ok
                }
            },
        };
        if !gs {
            failures += 1;
        } else if g <= DDF_PROBE_MAX_TYPES {
            let probes = probe_prices(v, g);
            let mut bad = None;
            'outer: for p in &probes {
                for q in &probes {
                    let r = check_ddf(v, p, q);
                    if !r.holds {
                        bad = Some((p.clone(), q.clone(), r.violating_item));
                        break 'outer;
                    }
                }
            }
            match bad {
                None => {
                    let _ = write!(line, " DDF ok on {} price pairs", probes.len() * probes.len());
                }
                Some((p, q, item)) => {
                    failures += 1;
                    let item = item.map_or("?".to_string(), |x| x.0.to_string());
                    let _ = write!(line, " DDF VIOLATED from {p} to {q} at type {item}");
                }
            }
        } else {
            line.push_str(" DDF not probed (too many types)");
        }
        let _ = writeln!(out, "{line}");
    }
    for (j, s) in sellers.iter().enumerate() {
        let id = buyers.len() + j;
        let marginals = list(&s.marginals);
        let mut problems = Vec::new();
        if s.item.0 >= g {
            problems.push(format!("type {} >= g", s.item.0));
        }
        if s.marginals.iter().any(|m| m.is_negative()) {
            problems.push("negative marginal".to_string());
        }
        if !is_dmr(&s.marginals) {
            let at = s.marginals.windows(2).position(|w| w[1] > w[0]).map_or(0, |i| i + 2);
            problems.push(format!("DMR VIOLATED: marginal of unit {at} exceeds the one before it"));
        }
        if problems.is_empty() {
            let _ = writeln!(out, "seller #{id} (type {}): marginals ({marginals}) DMR ok", s.item.0);
        } else {
            failures += 1;
            let _ = writeln!(out, "seller #{id} (type {}): marginals ({marginals}) {}", s.item.0, problems.join("; "));
        }
    }
    let _ = writeln!(out, "{} agents, {failures} invalid", buyers.len() + sellers.len());
    if failures > 0 {
        Err(CliError { code: crate::EXIT_VALIDATION, message: out })
    } else {
        Ok(out)
    }
}

fn write_equilibrium(out: &mut String, market: &Market<Rational>, eq: &Equilibrium<Rational>) {
    let _ = writeln!(out, "prices: {}", eq.prices);
    let _ = writeln!(out, "gain: {}", eq.gain);
    let per_type = eq.gain_per_type(market);
    for x in 0..market.g() {
        let _ = writeln!(
            out,
            "type {x}: price {}, k {}, gain {}",
            eq.prices.0[x], eq.per_type_volume[x], per_type[x]
        );
    }
    for (id, bundle) in &eq.buyer_bundles {
        if !bundle.is_empty() {
            let _ = writeln!(out, "buyer {id}: {bundle}");
        }
    }
    for (id, q) in &eq.seller_units {
        if *q > 0 {
            let _ = writeln!(out, "seller {id}: {q} unit(s)");
        }
    }
}

pub fn solve(path: &Path, csv_out: Option<&Path>, seed: Option<u64>, allow_non_gs: bool) -> Result<String, CliError> {
    let config = read_scenario(path)?;
    let market = load_market(&config, seed.or(config.experiment.seed).unwrap_or(0), allow_non_gs)?;
    let eq = solve_walrasian(&market)?;
    let mut out = String::new();
    write_equilibrium(&mut out, &market, &eq);
    if let Some(p) = csv_out {
        let per_type = eq.gain_per_type(&market);
        let mut w = crate::csv_writer(p)?;
        w.write_record(["type", "price_num", "price_den", "k", "gain_num", "gain_den"]).map_err(CliError::io)?;
        for x in 0..market.g() {
            let price = &eq.prices.0[x];
            w.write_record([
                x.to_string(),
                price.numer().to_string(),
                price.denom().to_string(),
                eq.per_type_volume[x].to_string(),
                per_type[x].numer().to_string(),
                per_type[x].denom().to_string(),
            ])
            .map_err(CliError::io)?;
        }
        w.flush().map_err(|e| CliError::io(e.into()))?;
    }
    Ok(out)
}

fn half_name(h: Option<Half>) -> &'static str {
    match h {
        Some(Half::R) => "R",
        Some(Half::L) => "L",
        None => "?",
    }
}

fn set_sizes(s: &TypeSets<Rational>) -> String {
    format!(
        "|Bx-| {} |B+x| {} |Sx-| {} |S+x| {} d+ {} d- {}",
        s.b_minus.len(),
        s.b_plus.len(),
        s.s_minus.len(),
        s.s_plus.len(),
        s.d_plus().len(),
        s.d_minus().len()
    )
}

fn write_parameters(out: &mut String, market: &Market<Rational>, params: &MarketParameters<Rational>) {
    let opt = |v: &Option<Rational>| v.as_ref().map_or("undefined".to_string(), |v| v.to_string());
    let _ = writeln!(out, "parameters: g {} m {} k ({}) c {} h {}", params.g, params.m, list(&params.k), opt(&params.c), opt(&params.h));
    let e: Vec<String> = params.e.iter().map(|e| format!("{e:.6}")).collect();
    let _ = writeln!(out, "sampling error e_x = m*sqrt(k_x ln k_x) (approximate): ({})", e.join(", "));
    let preset = BoundPreset::for_market(market);
    let bound = theorem1_bound(params, preset);
    let f = |v: Option<f64>| v.map_or("absent".to_string(), |v| format!("{v:.6}"));
    let _ = writeln!(
        out,
        "ratio bound ({preset:?}, approximate): via c {} via h {} assumption {}",
        f(bound.via_c),
        f(bound.via_h),
        if bound.assumption_holds { "holds" } else { "fails" }
    );
}

fn write_outcome(out: &mut String, market: &Market<Rational>, eq: &Equilibrium<Rational>, o: &TradeOutcome<Rational>) {
    let members = |h: Half| -> String {
        let ids: Vec<String> =
            market.agent_ids().into_iter().filter(|id| o.halving.half_of(*id) == Some(h)).map(|id| id.to_string()).collect();
        ids.join(" ")
    };
    let _ = writeln!(out, "half R: {}", members(Half::R));
    let _ = writeln!(out, "half L: {}", members(Half::L));
    let _ = writeln!(out, "prices of R (posted in L): {}", o.prices_r);
    let _ = writeln!(out, "prices of L (posted in R): {}", o.prices_l);
    let _ = writeln!(out, "degenerate: R {} L {}", o.degenerate_r, o.degenerate_l);
    let _ = writeln!(out, "volume R ({}) L ({})", list(&o.volume_r), list(&o.volume_l));
    for id in market.agent_ids() {
        let half = half_name(o.halving.half_of(id));
        let payment = &o.payments[&id];
        match market.role_of(id) {
            Some(Role::Buyer) => {
                let _ = writeln!(out, "buyer {id} [{half}]: {} pays {}", o.bundles[&id], -payment.clone());
            }
            Some(Role::Seller) => {
                let _ = writeln!(out, "seller {id} [{half}]: sells {} receives {}", o.units[&id], payment);
            }
            None => {}
        }
    }
    let _ = writeln!(out, "gain: {} of optimal {}", o.gain_total, eq.gain);
    if !eq.gain.is_zero() {
        let ratio = o.gain_total.clone() / eq.gain.clone();
        let _ = writeln!(out, "ratio: {} ({})", ratio, format_significant(&ratio, 15));
    }
}

pub fn run(path: &Path, seed: u64, emit_diagnostics: bool, allow_non_gs: bool) -> Result<String, CliError> {
    let config = read_scenario(path)?;
    let market = load_market(&config, config.experiment.seed.unwrap_or(seed), allow_non_gs)?;
    let eq = solve_walrasian(&market)?;
    let outcome = mida_of(&config).run(&market, seed)?;
    outcome.verify(&market)?;
    let mut out = String::new();
    let _ = writeln!(out, "seed: {seed}");
    write_outcome(&mut out, &market, &eq, &outcome);
    if emit_diagnostics {
        let params = market_parameters(&market, &eq);
        write_parameters(&mut out, &market, &params);
        let d = diagnose(&market, &eq, &params, &outcome);
        for (name, sets, clearing, corollary) in
            [("R", &d.sets_r, &d.clearing_r, &d.corollary_r), ("L", &d.sets_l, &d.clearing_l, &d.corollary_l)]
        {
            for (x, s) in sets.per_type.iter().enumerate() {
                let c = &clearing[x];
                let _ = writeln!(
                    out,
                    "{name} type {x}: delta {} {} clearing |d- - d+| {} vs 2e {:.6} {} corollary {}",
                    s.delta,
                    set_sizes(s),
                    c.difference,
                    c.bound,
                    if c.within { "within" } else { "EXCEEDED" },
                    if corollary[x] { "holds" } else { "FAILS" }
                );
            }
        }
        for (x, l) in d.loss.iter().enumerate() {
            let _ = writeln!(
                out,
                "loss type {x}: k {} realized {} deals lost {} vs 2e + d+ + d- = {:.6} ({} movers) {}",
                l.k,
                l.realized,
                l.deals_lost,
                l.bound_rhs,
                l.movers,
                if l.within { "within" } else { "EXCEEDED" }
            );
        }
        let _ = writeln!(out, "sellers drop highest-valued units first: {}", d.sellers_prefix);
    }
    Ok(out)
}

fn scenario_id(path: &Path) -> String {
    path.file_stem().map_or("scenario".to_string(), |s| s.to_string_lossy().into_owned())
}

pub const DEFAULT_TRIALS: usize = 100;

/// Runs the experiment and returns `(csv, summary)`.
pub fn experiment(path: &Path, trials: Option<usize>, seed: Option<u64>) -> Result<(String, String), CliError> {
    let config = read_scenario(path)?;
    let trials = trials.or(config.experiment.trials).unwrap_or(DEFAULT_TRIALS);
    let seed = seed.or(config.experiment.seed).unwrap_or(0);
    if trials == 0 {
        return Err(CliError::usage("--trials must be at least 1".into()));
    }
    let id = scenario_id(path);
    let mida = mida_of(&config);
    let mut scenarios = Vec::new();
    match (&config.experiment.k_scaling, &config.generator) {
        (Some(ks), Some(GeneratorConfig::Calibrated { .. })) => {
            let base = config.calibrated_spec().map_err(|e| CliError::validation(e.to_string()))?;
            for &k in ks {
                let spec = mida_core::model::CalibratedSpec { targets: vec![k; config.g], ..base.clone() };
                scenarios.push(Scenario {
                    id: format!("{id}-k{k}"),
                    source: MarketSource::Calibrated(spec),
                    mechanism: mida,
                    diagnostics: true,
                });
            }
        }
        (Some(_), _) => {
            return Err(CliError::validation("k_scaling needs a calibrated [generator]".into()));
        }
        (None, _) => {
            let source = match &config.generator {
                Some(GeneratorConfig::Random { .. }) => {
                    MarketSource::Generated(config.generator_spec().map_err(|e| CliError::validation(e.to_string()))?)
                }
                Some(GeneratorConfig::Calibrated { .. }) => {
                    MarketSource::Calibrated(config.calibrated_spec().map_err(|e| CliError::validation(e.to_string()))?)
                }
                None => MarketSource::Fixed(load_market(&config, seed, false)?),
            };
            scenarios.push(Scenario { id: id.clone(), source, mechanism: mida, diagnostics: true });
        }
    }
    let results = scenarios
        .iter()
        .map(|s| estimate_competitive_ratio(s, trials, seed))
        .collect::<Result<Vec<_>, Error>>()?;
    let g = config.g;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    let mut header: Vec<String> = [
        "scenario_id",
        "trial",
        "seed",
        "gft_mida_num",
        "gft_mida_den",
        "gft_opt_num",
        "gft_opt_den",
        "ratio_decimal_15sig",
        "degenerate_R",
        "degenerate_L",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..g).map(|x| format!("k_{x}")));
    header.extend((0..g).map(|x| format!("deals_lost_{x}")));
    w.write_record(&header).map_err(CliError::io)?;
    let mut summary = String::new();
    for r in &results {
        for t in &r.records {
            let mut row = vec![
                r.scenario_id.clone(),
                t.trial.to_string(),
                t.seed.to_string(),
                t.gain_mida.numer().to_string(),
                t.gain_mida.denom().to_string(),
                t.gain_opt.numer().to_string(),
                t.gain_opt.denom().to_string(),
                t.ratio.as_ref().map_or(String::new(), |q| format_significant(q, 15)),
                t.degenerate_r.to_string(),
                t.degenerate_l.to_string(),
            ];
            row.extend(t.k.iter().map(|k| k.to_string()));
            row.extend(t.deals_lost.iter().map(|d| d.to_string()));
            w.write_record(&row).map_err(CliError::io)?;
        }
        write_summary(&mut summary, r);
    }
    let bytes = w.into_inner().map_err(|e| CliError::io(e.into_error().into()))?;
    Ok((String::from_utf8(bytes).expect("csv output is UTF-8"), summary))
}

fn write_summary(out: &mut String, r: &ExperimentResult<Rational>) {
    let _ = writeln!(out, "scenario {}: {} trials from seed {}", r.scenario_id, r.trials, r.seed);
    match (&r.mean_ratio, &r.min_ratio) {
        (Some(mean), Some(min)) => {
            let _ = writeln!(
                out,
                "  mean ratio {} (exact {}) min {}",
                format_significant(mean, 15),
                mean,
                format_significant(min, 15)
            );
        }
        _ => {
            let _ = writeln!(out, "  optimal gain is zero; ratio undefined");
        }
    }
    let freq = |f: Option<f64>| f.map_or("n/a".to_string(), |f| format!("{f:.6}"));
    let _ = writeln!(
        out,
        "  corollary failures {} clearing-bound violation frequency {} loss-bound violation frequency {}",
        r.corollary_failures,
        freq(r.clearing_violation_frequency),
        freq(r.loss_violation_frequency)
    );
    for f in &r.failures {
        let _ = writeln!(out, "  trial {} (seed {}) failed: {}", f.trial, f.seed, f.error);
    }
}

pub struct ReproduceArgs {
    pub k: Option<usize>,
    pub eps: Option<String>,
    pub big_k: Option<usize>,
    pub random_seeds: usize,
}

pub fn reproduce_cmd(id: &str, args: &ReproduceArgs) -> Result<String, CliError> {
    let id: ReproductionId = id.parse().map_err(|_: Error| {
        let known: Vec<String> = ReproductionId::ALL.iter().map(|r| r.name().to_string()).collect();
        CliError::usage(format!("unknown example id {id:?}; expected one of {}", known.join(", ")))
    })?;
    let report = match id {
        ReproductionId::McAfeeSbb => {
            let eps = match &args.eps {
                Some(text) => mida_core::scalar::parse_scalar::<Rational>(text)
                    .ok_or_else(|| CliError::usage(format!("--eps {text:?} is not a number")))?,
                None => Rational::from_fraction(1, 1000),
            };
            reproduce_mcafee_sbb(args.k.unwrap_or(100), eps)?
        }
        ReproductionId::NaiveMultiunit => reproduce(id)?,
        ReproductionId::DemandSupplyInteraction => {
            reproduce_demand_supply(args.k.unwrap_or(10), args.big_k.unwrap_or(4), args.random_seeds)?
        }
    };
    let text = report.to_string();
    if report.all_hold() {
        Ok(text)
    } else {
        Err(CliError { code: crate::EXIT_INVARIANT, message: text })
    }
}
