//! The four bid-clearing mechanisms and the solvers behind them.
//!
//! Every mechanism takes the current holdings, the declared offers and bids,
//! and returns a [`TradeLedger`]. Executed prices are always the asking
//! price of the selling side. Ledgers are validated and applied by
//! [`settle`].

mod flow;
mod graphs;
mod lp;
mod maxflow;
mod sequential;
mod settle;
mod simplex;

pub use flow::{max_flow, FlowArc, FlowNetwork, MaxFlow};
pub use graphs::{build_graphs, CompatibilityGraphs};
pub use lp::{build_average_lp, clear_lp_average, AverageLp, SPREAD_WEIGHT};
pub use maxflow::{build_flow_network, budget_capped_bids, clear_maxflow_absolute, ClearingNetwork};
pub use sequential::{clear_greedy, clear_random};
pub use settle::{check_ledger, settle, Violation};
pub use simplex::{solve_lp, LinearProgram, LpError, LpSolution};

use crate::market::{MarketState, OfferBook, TradeLedger};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    Random,
    Greedy,
    MaxFlowAbsolute,
    LpAverage,
}

impl Mechanism {
    pub const ALL: [Mechanism; 4] = [
        Mechanism::Random,
        Mechanism::Greedy,
        Mechanism::MaxFlowAbsolute,
        Mechanism::LpAverage,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Mechanism::Random => "random",
            Mechanism::Greedy => "greedy",
            Mechanism::MaxFlowAbsolute => "max-flow-absolute",
            Mechanism::LpAverage => "lp-average",
        }
    }

    /// Whether bid prices bound every trade or only the average paid.
    pub fn price_rule(&self) -> PriceRule {
        match self {
            Mechanism::LpAverage => PriceRule::Average,
            _ => PriceRule::Absolute,
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mechanism {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown mechanism `{s}` (expected random, greedy, max-flow-absolute or lp-average)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriceRule {
    Absolute,
    Average,
}

/// Whether Good purchases must be covered by rights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RightsRegime {
    Enforced,
    /// Free market: rights are neither required nor traded.
    Ignored,
}

/// Pairs that may never trade, regardless of prices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeBans {
    /// `(seller, buyer)` pairs banned from trading Good.
    pub good: Vec<(usize, usize)>,
    /// `(right seller, right buyer)` pairs banned from trading Rights.
    pub right: Vec<(usize, usize)>,
}

impl EdgeBans {
    pub fn good_banned(&self, seller: usize, buyer: usize) -> bool {
        self.good.contains(&(seller, buyer))
    }

    pub fn right_banned(&self, from: usize, to: usize) -> bool {
        self.right.contains(&(from, to))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClearingRules {
    pub rights: RightsRegime,
    pub bans: EdgeBans,
}

impl Default for ClearingRules {
    fn default() -> Self {
        ClearingRules { rights: RightsRegime::Enforced, bans: EdgeBans::default() }
    }
}

impl ClearingRules {
    pub fn with_rights(rights: RightsRegime) -> Self {
        ClearingRules { rights, bans: EdgeBans::default() }
    }

    pub fn rights_enforced(&self) -> bool {
        self.rights == RightsRegime::Enforced
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClearingError {
    #[error("offer book has {got} {side} entries, market has {expected}")]
    Shape { side: &'static str, got: usize, expected: usize },
    #[error("illegal ledger: {0}")]
    Illegal(Violation),
    #[error("linear program failed: {0}")]
    Lp(#[from] LpError),
}

pub(crate) fn check_shape(state: &MarketState, book: &OfferBook) -> Result<(), ClearingError> {
    if book.sellers.len() != state.num_sellers() {
        return Err(ClearingError::Shape {
            side: "seller",
            got: book.sellers.len(),
            expected: state.num_sellers(),
        });
    }
    if book.buyers.len() != state.num_buyers() {
        return Err(ClearingError::Shape {
            side: "buyer",
            got: book.buyers.len(),
            expected: state.num_buyers(),
        });
    }
    Ok(())
}

/// Dispatches to the selected mechanism. Only [`Mechanism::Random`] draws
/// from `rng`.
pub fn clear<R: Rng + ?Sized>(
    mechanism: Mechanism,
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
    rng: &mut R,
) -> Result<TradeLedger, ClearingError> {
    match mechanism {
        Mechanism::Random => clear_random(state, book, rules, rng),
        Mechanism::Greedy => clear_greedy(state, book, rules),
        Mechanism::MaxFlowAbsolute => clear_maxflow_absolute(state, book, rules),
        Mechanism::LpAverage => clear_lp_average(state, book, rules),
    }
}
