//! Simulation of a repeated two-sided market for a critical good, where a
//! central authority hands out tradable buying rights before each trading
//! period.
//!
//! * [`market`]: domain types, the contested-garment rights split and the
//!   frustration metrics.
//! * [`clearing`]: random, greedy, max-flow and LP clearing of bids.
//! * [`crisis`]: one market and the multi-period crisis built from it.
//! * [`learning`]: actor-critic equilibrium learning and exploitability.

pub mod clearing;
pub mod crisis;
pub mod learning;
pub mod market;

pub use clearing::{ClearingRules, Mechanism, RightsRegime};
pub use market::{
    cgd_allocate, frustration, price_of_anarchy, BuyerAction, FrustrationRecord, MarketState, OfferBook,
    Resource, Role, SellerOffer, Trade, TradeLedger, TraderId,
};
