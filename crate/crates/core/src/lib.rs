//! Multi-item double auction with random halving.
//!
//! Sellers hold units of a single item-type with diminishing marginal
//! returns; buyers want at most one unit of each type and have
//! gross-substitute valuations. The mechanism splits the traders into two
//! random halves, computes Walrasian prices in each half and lets every half
//! trade serially at the prices of the other one. The result is truthful,
//! individually rational and strongly budget balanced for every outcome of
//! the coin tosses.
//!
//! All algorithms are generic over an exact [`Scalar`]; the crate root
//! exposes the concrete aliases used by the CLI and the experiments.

pub mod baselines;
pub mod diagnostics;
pub mod equilibrium;
mod error;
pub mod experiments;
pub mod mechanism;
pub mod model;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Arbitrary-precision rational; the default scalar everywhere.
pub type Rational = num_rational::BigRational;
/// Fixed-width rational for small integer scenarios where speed matters.
pub type Rational64 = num_rational::Ratio<i64>;

pub type Market = model::Market<Rational>;
pub type PriceVector = model::PriceVector<Rational>;
pub type BuyerValuation = model::BuyerValuation<Rational>;
pub type SellerValuation = model::SellerValuation<Rational>;
pub type Equilibrium = equilibrium::Equilibrium<Rational>;
pub type TradeOutcome = mechanism::TradeOutcome<Rational>;
