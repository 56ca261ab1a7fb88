//! Scenario files in TOML.
//!
//! ```toml
//! schema_version = 1
//! g = 2
//!
//! [[buyers]]
//! kind = "unit-demand"          # or "additive"
//! values = [6, "17/2"]
//!
//! [[buyers]]
//! kind = "table"
//! table = [{ bundle = [0], value = 6 }, { bundle = [1], value = 8 }, { bundle = [0, 1], value = 9 }]
//!
//! [[sellers]]
//! type = 0
//! marginals = [7, 2]
//!
//! [mechanism]
//! tie_break = "canonical"       # or "max-cardinality"
//!
//! [experiment]
//! trials = 100
//! seed = 0
//! k_scaling = [25, 100]
//! ```
//!
//! Numbers are TOML integers or `"p/q"` strings. Instead of explicit agents a
//! `[generator]` table may describe a random or calibrated market.

use std::fmt;

use mida_core::model::{
    Bundle, Buyer, BuyerFamily, BuyerValuation, CalibratedSpec, GeneratorSpec, ItemType, Market, Seller,
    SellerValuation, TieBreak,
};
use mida_core::scalar::parse_scalar;
use mida_core::{Rational, Scalar};
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// An exact number as written in a scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Int(i64),
    Text(String),
}

impl Number {
    pub fn to_rational(&self) -> Result<Rational, String> {
        match self {
            Number::Int(n) => Ok(Rational::from_int(*n)),
            Number::Text(s) => parse_scalar(s).ok_or_else(|| format!("{s:?} is not an integer or p/q fraction")),
        }
    }

    pub fn from_rational(value: &Rational) -> Number {
        if value.denom().is_one() {
            if let Some(n) = value.numer().to_i64() {
                return Number::Int(n);
            }
            return Number::Text(value.numer().to_string());
        }
        Number::Text(format!("{}/{}", value.numer(), value.denom()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BuyerKind {
    UnitDemand,
    Additive,
    Table,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub bundle: Vec<usize>,
    pub value: Number,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuyerConfig {
    pub kind: BuyerKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Number>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SellerConfig {
    #[serde(rename = "type")]
    pub item: usize,
    pub marginals: Vec<Number>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TieBreakConfig {
    #[default]
    Canonical,
    MaxCardinality,
}

impl From<TieBreakConfig> for TieBreak {
    fn from(t: TieBreakConfig) -> TieBreak {
        match t {
            TieBreakConfig::Canonical => TieBreak::Canonical,
            TieBreakConfig::MaxCardinality => TieBreak::MaxCardinality,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanismConfig {
    #[serde(default)]
    pub tie_break: TieBreakConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_scaling: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyConfig {
    UnitDemand,
    Additive,
    TableGs,
}

impl From<FamilyConfig> for BuyerFamily {
    fn from(f: FamilyConfig) -> BuyerFamily {
        match f {
            FamilyConfig::UnitDemand => BuyerFamily::UnitDemand,
            FamilyConfig::Additive => BuyerFamily::Additive,
            FamilyConfig::TableGs => BuyerFamily::TableGs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum GeneratorConfig {
    Random { family: FamilyConfig, buyers: usize, sellers: usize, value_min: i64, value_max: i64, max_units: usize },
    Calibrated { family: FamilyConfig, targets: Vec<usize>, max_units: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub g: usize,
    #[serde(default)]
    pub buyers: Vec<BuyerConfig>,
    #[serde(default)]
    pub sellers: Vec<SellerConfig>,
    #[serde(default)]
    pub mechanism: MechanismConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorConfig>,
}

/// A problem with a scenario file, located by field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.field.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.field, self.message)
        }
    }
}

impl std::error::Error for ScenarioError {}

fn at(field: impl Into<String>) -> impl FnOnce(String) -> ScenarioError {
    let field = field.into();
    move |message| ScenarioError { field, message }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        // toml's messages already carry line and column
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError { field: String::new(), message: e.to_string() })?;
        if config.schema_version != SCHEMA_VERSION {
            return Err(at("schema_version")(format!(
                "unsupported version {}, expected {SCHEMA_VERSION}",
                config.schema_version
            )));
        }
        if config.generator.is_some() && !(config.buyers.is_empty() && config.sellers.is_empty()) {
            return Err(at("generator")("a generated scenario cannot also list agents".into()));
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    /// Buyer valuations in file order, converted to exact numbers.
    pub fn buyer_valuations(&self) -> Result<Vec<BuyerValuation<Rational>>, ScenarioError> {
        self.buyers.iter().enumerate().map(|(i, b)| buyer_valuation(self.g, i, b)).collect()
    }

    pub fn seller_valuations(&self) -> Result<Vec<SellerValuation<Rational>>, ScenarioError> {
        self.sellers
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let marginals = numbers(&s.marginals, &format!("sellers[{i}].marginals"))?;
                Ok(SellerValuation::new(ItemType(s.item), marginals))
            })
            .collect()
    }

    /// The market described by the file; generated markets use `seed`.
    /// Ids are assigned buyers first, then sellers, in file order.
    pub fn market(&self, seed: u64) -> Result<Market<Rational>, ScenarioError> {
        if let Some(gen) = &self.generator {
            let market = match gen {
                GeneratorConfig::Random { .. } => mida_core::model::generate_market(&self.generator_spec()?, seed),
                GeneratorConfig::Calibrated { .. } => mida_core::model::calibrated_market(&self.calibrated_spec()?, seed),
            };
            return market.map_err(|e| at("generator")(e.to_string()));
        }
        let buyers = self
            .buyer_valuations()?
            .into_iter()
            .enumerate()
            .map(|(i, valuation)| Buyer { id: mida_core::model::AgentId(i as u32), valuation })
            .collect();
        let nb = self.buyers.len() as u32;
        let sellers = self
            .seller_valuations()?
            .into_iter()
            .enumerate()
            .map(|(i, valuation)| Seller { id: mida_core::model::AgentId(nb + i as u32), valuation })
            .collect();
        Market::new(self.g, buyers, sellers).map_err(|e| at("")(e.to_string()))
    }

    pub fn generator_spec(&self) -> Result<GeneratorSpec, ScenarioError> {
        match &self.generator {
            Some(GeneratorConfig::Random { family, buyers, sellers, value_min, value_max, max_units }) => {
                Ok(GeneratorSpec {
                    g: self.g,
                    buyers: *buyers,
                    sellers: *sellers,
                    family: (*family).into(),
                    value_range: (*value_min, *value_max),
                    max_units: *max_units,
                })
            }
            _ => Err(at("generator")("not a random generator".into())),
        }
    }

    pub fn calibrated_spec(&self) -> Result<CalibratedSpec, ScenarioError> {
        match &self.generator {
            Some(GeneratorConfig::Calibrated { family, targets, max_units }) => {
                if targets.len() != self.g {
                    return Err(at("generator.targets")(format!("{} targets for g = {}", targets.len(), self.g)));
                }
                Ok(CalibratedSpec { targets: targets.clone(), max_units: *max_units, family: (*family).into() })
            }
            _ => Err(at("generator")("not a calibrated generator".into())),
        }
    }

    /// A file listing the agents of `market` explicitly.
    pub fn from_market(market: &Market<Rational>, mechanism: MechanismConfig, experiment: ExperimentConfig) -> Self {
        let buyers = market
            .buyers()
            .iter()
            .map(|b| match &b.valuation {
                BuyerValuation::UnitDemand(v) => BuyerConfig {
                    kind: BuyerKind::UnitDemand,
                    values: Some(v.iter().map(Number::from_rational).collect()),
                    table: None,
                },
                BuyerValuation::Additive(v) => BuyerConfig {
                    kind: BuyerKind::Additive,
                    values: Some(v.iter().map(Number::from_rational).collect()),
                    table: None,
                },
                BuyerValuation::Table(t) => BuyerConfig {
                    kind: BuyerKind::Table,
                    values: None,
                    table: Some(
                        t.iter()
                            .enumerate()
                            .skip(1)
                            .map(|(mask, v)| TableEntry {
                                bundle: Bundle(mask as u32).items().map(|x| x.0).collect(),
                                value: Number::from_rational(v),
                            })
                            .collect(),
                    ),
                },
            })
            .collect();
        let sellers = market
            .sellers()
            .iter()
            .map(|s| SellerConfig {
                item: s.item().0,
                marginals: s.valuation.marginals.iter().map(Number::from_rational).collect(),
            })
            .collect();
        ScenarioConfig {
            schema_version: SCHEMA_VERSION,
            g: market.g(),
            buyers,
            sellers,
            mechanism,
            experiment,
            generator: None,
        }
    }
}

fn numbers(values: &[Number], field: &str) -> Result<Vec<Rational>, ScenarioError> {
    values
        .iter()
        .enumerate()
        .map(|(j, n)| n.to_rational().map_err(at(format!("{field}[{j}]"))))
        .collect()
}

fn buyer_valuation(g: usize, i: usize, b: &BuyerConfig) -> Result<BuyerValuation<Rational>, ScenarioError> {
    let field = format!("buyers[{i}]");
    match b.kind {
        BuyerKind::UnitDemand | BuyerKind::Additive => {
            if b.table.is_some() {
                return Err(at(format!("{field}.table"))("only table buyers have a table".into()));
            }
            let values = b.values.as_ref().ok_or_else(|| at(format!("{field}.values"))("missing".into()))?;
            let values = numbers(values, &format!("{field}.values"))?;
            if values.len() != g {
                return Err(at(format!("{field}.values"))(format!("expected {g} values, got {}", values.len())));
            }
            Ok(if b.kind == BuyerKind::UnitDemand {
                BuyerValuation::UnitDemand(values)
            } else {
                BuyerValuation::Additive(values)
            })
        }
        BuyerKind::Table => {
            if b.values.is_some() {
                return Err(at(format!("{field}.values"))("table buyers list bundle values in `table`".into()));
            }
            let entries = b.table.as_ref().ok_or_else(|| at(format!("{field}.table"))("missing".into()))?;
            let mut table: Vec<Option<Rational>> = vec![None; 1 << g];
            table[0] = Some(Rational::from_int(0));
            for (j, e) in entries.iter().enumerate() {
                let entry = format!("{field}.table[{j}]");
                if let Some(&x) = e.bundle.iter().find(|&&x| x >= g) {
                    return Err(at(format!("{entry}.bundle"))(format!("item-type {x} >= g")));
                }
                let mask = Bundle::from_items(e.bundle.iter().copied());
                if mask.len() != e.bundle.len() {
                    return Err(at(format!("{entry}.bundle"))("repeated item-type".into()));
                }
                if mask.is_empty() {
                    return Err(at(format!("{entry}.bundle"))("the empty bundle is always worth 0".into()));
                }
                if table[mask.0 as usize].is_some() {
                    return Err(at(format!("{entry}.bundle"))("bundle listed twice".into()));
                }
                table[mask.0 as usize] = Some(e.value.to_rational().map_err(at(format!("{entry}.value")))?);
            }
            let missing = table.iter().position(|v| v.is_none());
            if let Some(mask) = missing {
                let items: Vec<usize> = Bundle(mask as u32).items().map(|x| x.0).collect();
                return Err(at(format!("{field}.table"))(format!("no value for bundle {items:?}")));
            }
            Ok(BuyerValuation::Table(table.into_iter().map(|v| v.expect("checked")).collect()))
        }
    }
}
