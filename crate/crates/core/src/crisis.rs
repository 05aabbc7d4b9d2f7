//! One trading period (a market) and the finite sequence of markets that
//! forms a crisis.
//!
//! A market runs in this order: sellers post offers, rights are split from
//! the offered volume, then `k` buyers' stages each collect right offers,
//! collect bids, clear and settle. Money earned by selling rights only
//! becomes spendable in the next market.

use crate::clearing::{self, ClearingError, ClearingRules, Mechanism, RightsRegime};
use crate::market::{
    cgd_allocate, frustration, price_of_anarchy, FrustrationRecord, MarketError, MarketState, OfferBook,
    Resource, SellerOffer, TradeLedger, BuyerAction,
};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrisisError {
    #[error("invalid crisis config: {0}")]
    Config(String),
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error(transparent)]
    Clearing(#[from] ClearingError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FairnessMode {
    /// No rights are handed out or traded; frustration is still measured
    /// against the rights the split would have assigned.
    FreeMarket,
    Rights,
}

impl FairnessMode {
    pub fn regime(&self) -> RightsRegime {
        match self {
            FairnessMode::FreeMarket => RightsRegime::Ignored,
            FairnessMode::Rights => RightsRegime::Enforced,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FairnessMode::FreeMarket => "free-market",
            FairnessMode::Rights => "rights",
        }
    }
}

impl std::str::FromStr for FairnessMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "free-market" | "free" => Ok(FairnessMode::FreeMarket),
            "rights" => Ok(FairnessMode::Rights),
            _ => Err(format!("unknown fairness mode `{s}` (expected free-market or rights)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrisisConfig {
    /// Number of markets `T`.
    pub horizon: usize,
    /// Buyers' stages per market `k`.
    pub repeats: usize,
    pub mechanism: Mechanism,
    pub fairness: FairnessMode,
    /// Money each buyer receives before every market.
    pub earnings: Vec<f64>,
    /// Good each seller receives before every market.
    pub resupply: Vec<f64>,
    pub demands: Vec<f64>,
    pub price_cap: f64,
    /// Per-unit utility of Good a seller still holds after a market (`C1 <= 0`).
    pub storage_cost: f64,
    /// Extra per-unit utility of a seller's stock at the end of the crisis (`C2`).
    pub terminal_stock_value: f64,
    /// Per-unit utility of a buyer's money at the end of the crisis (`C3`).
    pub terminal_money_value: f64,
    pub discount: f64,
}

impl CrisisConfig {
    pub fn num_buyers(&self) -> usize {
        self.demands.len()
    }

    pub fn num_sellers(&self) -> usize {
        self.resupply.len()
    }

    pub fn rules(&self) -> ClearingRules {
        ClearingRules::with_rights(self.fairness.regime())
    }

    pub fn validate(&self) -> Result<(), CrisisError> {
        let fail = |m: String| Err(CrisisError::Config(m));
        if self.horizon == 0 {
            return fail("horizon must be at least 1".into());
        }
        if self.repeats == 0 {
            return fail("buyers' stage repeats must be at least 1".into());
        }
        if self.demands.is_empty() || self.resupply.is_empty() {
            return fail("need at least one buyer and one seller".into());
        }
        if self.earnings.len() != self.demands.len() {
            return fail(format!("{} earnings for {} buyers", self.earnings.len(), self.demands.len()));
        }
        let values = self.earnings.iter().chain(&self.resupply).chain(&self.demands);
        if values.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return fail("earnings, resupply and demands must be finite and non-negative".into());
        }
        if !(self.price_cap.is_finite() && self.price_cap > 0.0) {
            return fail(format!("price cap must be positive, got {}", self.price_cap));
        }
        if self.storage_cost > 0.0 {
            return fail(format!("storage cost C1 must be <= 0, got {}", self.storage_cost));
        }
        if self.storage_cost.abs() * self.horizon as f64 / 2.0 < self.terminal_stock_value {
            return fail(format!(
                "|C1| T / 2 = {} is below C2 = {}; sellers would rather hoard",
                self.storage_cost.abs() * self.horizon as f64 / 2.0,
                self.terminal_stock_value
            ));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return fail(format!("discount must lie in [0, 1], got {}", self.discount));
        }
        Ok(())
    }

    /// Holdings at the start of the first market.
    pub fn initial_state(&self) -> MarketState {
        let mut s = MarketState::new(self.num_buyers(), self.num_sellers());
        s.buyer_money.clone_from(&self.earnings);
        s.seller_good.clone_from(&self.resupply);
        s.demands.clone_from(&self.demands);
        s
    }
}

/// A buyer's bids in the second sub-stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bids {
    pub right_volume: f64,
    pub right_price: f64,
    pub good_volume: f64,
    pub good_price: f64,
}

/// What a buyer sees when acting.
#[derive(Debug, Clone, Copy)]
pub struct BuyerView<'a> {
    pub state: &'a MarketState,
    /// Good still on offer this stage.
    pub offers: &'a [SellerOffer],
    pub fairness: FairnessMode,
    pub price_cap: f64,
    pub round: usize,
}

/// The decisions of every trader. Actions may be out of range; the market
/// clamps them to holdings and the price cap.
pub trait Strategy {
    /// Called before the sellers' stage of every market.
    fn begin_market(&mut self, _market: usize, _state: &MarketState) {}

    fn sell(&mut self, seller: usize, state: &MarketState, config: &CrisisConfig) -> SellerOffer;

    /// First buyers' sub-stage: rights put up for sale as `(volume, price)`.
    fn offer_rights(&mut self, buyer: usize, view: &BuyerView<'_>) -> (f64, f64);

    /// Second sub-stage, after every buyer's right offer is public.
    fn bid(&mut self, buyer: usize, view: &BuyerView<'_>, right_offers: &[(f64, f64)]) -> Bids;
}

/// Seller observation: every buyer's money, every buyer's Good, own Good.
pub fn seller_observation(state: &MarketState, seller: usize) -> Vec<f64> {
    let mut o = Vec::with_capacity(2 * state.num_buyers() + 1);
    o.extend_from_slice(&state.buyer_money);
    o.extend_from_slice(&state.buyer_good);
    o.push(state.seller_good[seller]);
    o
}

/// First-stage buyer observation: offered volumes, asking prices, then own
/// money, Good and rights (rights read as zero in a free market).
pub fn buyer_observation(view: &BuyerView<'_>, buyer: usize) -> Vec<f64> {
    let mut o = Vec::with_capacity(2 * view.offers.len() + 3);
    o.extend(view.offers.iter().map(|x| x.volume));
    o.extend(view.offers.iter().map(|x| x.price));
    o.push(view.state.buyer_money[buyer]);
    o.push(view.state.buyer_good[buyer]);
    o.push(match view.fairness {
        FairnessMode::Rights => view.state.rights[buyer],
        FairnessMode::FreeMarket => 0.0,
    });
    o
}

/// The other buyers' right offers: volumes then prices, skipping `buyer`.
pub fn others_right_offers(right_offers: &[(f64, f64)], buyer: usize) -> Vec<f64> {
    let others = || right_offers.iter().enumerate().filter(move |(i, _)| *i != buyer).map(|(_, o)| *o);
    others().map(|o| o.0).chain(others().map(|o| o.1)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utilities {
    pub buyers: Vec<f64>,
    pub sellers: Vec<f64>,
}

/// One buyers' stage: what was declared and what cleared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Holdings the stage was cleared against.
    pub state: MarketState,
    pub book: OfferBook,
    pub ledger: TradeLedger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketOutcome {
    pub start_state: MarketState,
    /// Holdings after the last buyers' stage, before consumption.
    pub end_state: MarketState,
    pub offers: Vec<SellerOffer>,
    /// Rights split from the offered volume (hypothetical in a free market).
    pub rights: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub ledger: TradeLedger,
    pub utilities: Utilities,
    pub frustrations: FrustrationRecord,
    pub cleared_good_volume: f64,
    pub terminal: bool,
}

fn clean(x: f64) -> f64 {
    if x.is_finite() {
        x.max(0.0)
    } else {
        0.0
    }
}

/// Per-trader utilities of a settled market.
///
/// Sellers earn the money received plus `C1` per unit left in stock (and
/// `C2` per unit at the end of the crisis). Buyers earn their Good up to
/// demand (plus `C3` per unit of money at the end of the crisis).
pub fn utilities(start: &MarketState, end: &MarketState, terminal: bool, config: &CrisisConfig) -> Utilities {
    let sellers = (0..end.num_sellers())
        .map(|s| {
            let mut u = end.seller_money[s] - start.seller_money[s] + config.storage_cost * end.seller_good[s];
            if terminal {
                u += config.terminal_stock_value * end.seller_good[s];
            }
            u
        })
        .collect();
    let buyers = (0..end.num_buyers())
        .map(|b| {
            let mut u = end.demands[b].min(end.buyer_good[b]);
            if terminal {
                u += config.terminal_money_value * end.buyer_money[b];
            }
            u
        })
        .collect();
    Utilities { buyers, sellers }
}

/// Runs one market from `state`, with sellers' offers already posted.
#[allow(clippy::too_many_arguments)]
pub fn run_market<S: Strategy + ?Sized, R: Rng + ?Sized>(
    config: &CrisisConfig,
    state: &MarketState,
    seller_offers: &[SellerOffer],
    strategy: &mut S,
    market_index: usize,
    terminal: bool,
    rng: &mut R,
) -> Result<MarketOutcome, CrisisError> {
    let cap = config.price_cap;
    let rules = config.rules();
    let enforced = rules.rights_enforced();
    let offers: Vec<SellerOffer> = seller_offers
        .iter()
        .zip(&state.seller_good)
        .map(|(o, &held)| SellerOffer { volume: clean(o.volume).min(held), price: clean(o.price).min(cap) })
        .collect();
    let offered: f64 = offers.iter().map(|o| o.volume).sum();
    let rights = cgd_allocate(offered, &state.demands)?;

    let mut current = state.clone();
    current.rights = if enforced { rights.clone() } else { vec![0.0; rights.len()] };
    let mut remaining = offers.clone();
    let mut pending = vec![0.0; state.num_buyers()];
    let mut rounds = Vec::with_capacity(config.repeats);
    let mut ledger = TradeLedger::new();

    for round in 0..config.repeats {
        let view = BuyerView { state: &current, offers: &remaining, fairness: config.fairness, price_cap: cap, round };
        let right_offers: Vec<(f64, f64)> = (0..current.num_buyers())
            .map(|b| {
                if !enforced {
                    return (0.0, 0.0);
                }
                let (v, p) = strategy.offer_rights(b, &view);
                (clean(v).min(current.rights[b]), clean(p).min(cap))
            })
            .collect();
        let buyers: Vec<BuyerAction> = (0..current.num_buyers())
            .map(|b| {
                let bids = strategy.bid(b, &view, &right_offers);
                let (rv, rp) = if enforced { (clean(bids.right_volume), clean(bids.right_price).min(cap)) } else { (0.0, 0.0) };
                BuyerAction {
                    right_sale_volume: right_offers[b].0,
                    right_sale_price: right_offers[b].1,
                    right_bid_volume: rv,
                    right_bid_price: rp,
                    good_bid_volume: clean(bids.good_volume),
                    good_bid_price: clean(bids.good_price).min(cap),
                }
            })
            .collect();
        let book = OfferBook { sellers: remaining.clone(), buyers };
        let cleared = clearing::clear(config.mechanism, &current, &book, &rules, rng)?;
        let mut next = clearing::settle(&cleared, &current, &book, &rules, config.mechanism.price_rule())?;
        for t in &cleared.trades {
            match t.resource {
                Resource::Good => remaining[t.seller.index].volume = (remaining[t.seller.index].volume - t.volume).max(0.0),
                Resource::Right => {
                    // proceeds are locked until the next market
                    next.buyer_money[t.seller.index] -= t.value();
                    pending[t.seller.index] += t.value();
                }
            }
        }
        for m in &mut next.buyer_money {
            *m = m.max(0.0);
        }
        ledger.trades.extend(cleared.trades.iter().copied());
        rounds.push(RoundRecord { state: std::mem::replace(&mut current, next), book, ledger: cleared });
    }
    for (m, p) in current.buyer_money.iter_mut().zip(&pending) {
        *m += p;
    }

    let bought = ledger.good_bought(state.num_buyers());
    let per_buyer = rights
        .iter()
        .zip(&bought)
        .map(|(&r, &g)| frustration(r, g))
        .collect::<Result<Vec<_>, _>>()?;
    let utilities = utilities(state, &current, terminal, config);
    Ok(MarketOutcome {
        start_state: state.clone(),
        cleared_good_volume: ledger.good_volume(),
        end_state: current,
        offers,
        rights,
        rounds,
        ledger,
        utilities,
        frustrations: FrustrationRecord { per_buyer, market_index },
        terminal,
    })
}

/// Holdings at the start of the next market: sellers keep unsold Good plus
/// resupply and start with no money; buyers keep money plus earnings and
/// consume their demand; unused rights expire.
pub fn transition(outcome: &MarketOutcome, config: &CrisisConfig) -> MarketState {
    let end = &outcome.end_state;
    let mut next = end.clone();
    for s in 0..next.num_sellers() {
        next.seller_good[s] = end.seller_good[s] + config.resupply[s];
        next.seller_money[s] = 0.0;
    }
    for b in 0..next.num_buyers() {
        next.buyer_money[b] = end.buyer_money[b] + config.earnings[b];
        next.buyer_good[b] = (end.buyer_good[b] - end.demands[b]).max(0.0);
        next.rights[b] = 0.0;
    }
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrisisTrace {
    pub outcomes: Vec<MarketOutcome>,
    pub poa: f64,
    pub discounted_returns: Utilities,
}

impl CrisisTrace {
    /// Undiscounted utility summed over the crisis.
    pub fn total_utilities(&self) -> Utilities {
        let mut total = Utilities {
            buyers: vec![0.0; self.discounted_returns.buyers.len()],
            sellers: vec![0.0; self.discounted_returns.sellers.len()],
        };
        for o in &self.outcomes {
            for (t, u) in total.buyers.iter_mut().zip(&o.utilities.buyers) {
                *t += u;
            }
            for (t, u) in total.sellers.iter_mut().zip(&o.utilities.sellers) {
                *t += u;
            }
        }
        total
    }
}

pub fn run_crisis<S: Strategy + ?Sized, R: Rng + ?Sized>(
    config: &CrisisConfig,
    strategy: &mut S,
    rng: &mut R,
) -> Result<CrisisTrace, CrisisError> {
    config.validate()?;
    let mut state = config.initial_state();
    let mut outcomes = Vec::with_capacity(config.horizon);
    let mut returns = Utilities { buyers: vec![0.0; config.num_buyers()], sellers: vec![0.0; config.num_sellers()] };
    let mut weight = 1.0;
    for tau in 0..config.horizon {
        let terminal = tau + 1 == config.horizon;
        strategy.begin_market(tau, &state);
        let offers: Vec<SellerOffer> = (0..config.num_sellers()).map(|s| strategy.sell(s, &state, config)).collect();
        let outcome = run_market(config, &state, &offers, strategy, tau, terminal, rng)?;
        weight *= config.discount;
        for (r, u) in returns.buyers.iter_mut().zip(&outcome.utilities.buyers) {
            *r += weight * u;
        }
        for (r, u) in returns.sellers.iter_mut().zip(&outcome.utilities.sellers) {
            *r += weight * u;
        }
        if !terminal {
            state = transition(&outcome, config);
        }
        outcomes.push(outcome);
    }
    let records: Vec<FrustrationRecord> = outcomes.iter().map(|o| o.frustrations.clone()).collect();
    let poa = price_of_anarchy(&records, config.num_buyers())?;
    Ok(CrisisTrace { outcomes, poa, discounted_returns: returns })
}

pub const TRACE_CSV_HEADER: &str = "episode,market,trader,money,good,rights,utility,frustration,cleared_volume";

/// One row per trader and market. Money and Good are end-of-market holdings,
/// rights the allocation; sellers leave rights and frustration empty.
pub fn trace_csv_rows(episode: usize, trace: &CrisisTrace) -> String {
    let mut out = String::new();
    for o in &trace.outcomes {
        let m = o.frustrations.market_index;
        for b in 0..o.end_state.num_buyers() {
            let _ = writeln!(
                out,
                "{episode},{m},b{b},{},{},{},{},{},{}",
                o.end_state.buyer_money[b],
                o.end_state.buyer_good[b],
                o.rights[b],
                o.utilities.buyers[b],
                o.frustrations.per_buyer[b],
                o.cleared_good_volume
            );
        }
        for s in 0..o.end_state.num_sellers() {
            let _ = writeln!(
                out,
                "{episode},{m},s{s},{},{},,{},,{}",
                o.end_state.seller_money[s],
                o.end_state.seller_good[s],
                o.utilities.sellers[s],
                o.cleared_good_volume
            );
        }
    }
    out
}

/// A simple scripted profile: sellers offer their whole stock at a fixed
/// fraction of the cap, buyers bid the cap for their unmet demand and sell
/// any rights beyond it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedStrategy {
    pub ask_fraction: f64,
    pub right_ask_fraction: f64,
}

impl Default for ScriptedStrategy {
    fn default() -> Self {
        ScriptedStrategy { ask_fraction: 0.5, right_ask_fraction: 0.25 }
    }
}

impl ScriptedStrategy {
    fn need(state: &MarketState, buyer: usize) -> f64 {
        (state.demands[buyer] - state.buyer_good[buyer]).max(0.0)
    }
}

impl Strategy for ScriptedStrategy {
    fn sell(&mut self, seller: usize, state: &MarketState, config: &CrisisConfig) -> SellerOffer {
        SellerOffer { volume: state.seller_good[seller], price: self.ask_fraction * config.price_cap }
    }

    fn offer_rights(&mut self, buyer: usize, view: &BuyerView<'_>) -> (f64, f64) {
        let spare = (view.state.rights[buyer] - Self::need(view.state, buyer)).max(0.0);
        (spare, self.right_ask_fraction * view.price_cap)
    }

    fn bid(&mut self, buyer: usize, view: &BuyerView<'_>, right_offers: &[(f64, f64)]) -> Bids {
        let need = Self::need(view.state, buyer);
        let kept = view.state.rights[buyer] - right_offers[buyer].0;
        Bids {
            right_volume: (need - kept).max(0.0),
            right_price: view.price_cap,
            good_volume: need,
            good_price: view.price_cap,
        }
    }
}
