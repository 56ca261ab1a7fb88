use thiserror::Error;

use crate::model::AgentId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    #[error("invalid market: {0}")]
    InvalidMarket(String),
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("price grid too coarse: valuation marginal {0} is not a grid point")]
    GridTooCoarse(String),
    #[error("no Walrasian equilibrium found: {0}")]
    NoEquilibriumFound(String),
    #[error("market too large for exhaustive search: {0}")]
    TooLarge(String),
    #[error("halving is not total: agent {0} is unassigned or unknown")]
    InvalidHalving(AgentId),
    #[error("outcome violates material balance in type {item}: {bought} bought, {sold} sold")]
    Unbalanced { item: usize, bought: usize, sold: usize },
    #[error("deviation search exceeds budget: {0}")]
    GridTooLarge(String),
    #[error("mechanism invariant violated: {0}")]
    InvariantViolation(String),
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
}
