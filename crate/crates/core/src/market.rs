//! Shared domain types, the contested-garment rights allocation and the
//! frustration / price-of-anarchy metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance used for all volume and money comparisons.
pub const TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MarketError {
    #[error("{what} must be finite and non-negative, got {value}")]
    Negative { what: &'static str, value: f64 },
    #[error("price of anarchy needs at least one market record")]
    NoRecords,
    #[error("record {index} has {got} buyers, expected {expected}")]
    BuyerCount { index: usize, got: usize, expected: usize },
}

fn non_negative(what: &'static str, value: f64) -> Result<f64, MarketError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(MarketError::Negative { what, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Buyer,
    Seller,
}

/// A trader is addressed by role plus an index into that role's list, so the
/// buyer and seller index spaces can never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TraderId {
    pub role: Role,
    pub index: usize,
}

impl TraderId {
    pub const fn buyer(index: usize) -> Self {
        TraderId { role: Role::Buyer, index }
    }

    pub const fn seller(index: usize) -> Self {
        TraderId { role: Role::Seller, index }
    }

    pub fn is_buyer(&self) -> bool {
        self.role == Role::Buyer
    }
}

impl std::fmt::Display for TraderId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.role {
            Role::Buyer => write!(f, "b{}", self.index),
            Role::Seller => write!(f, "s{}", self.index),
        }
    }
}

/// Holdings of every trader during one trading period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub buyer_money: Vec<f64>,
    pub buyer_good: Vec<f64>,
    /// Unused buying rights. Purchases of Good consume rights one-for-one.
    pub rights: Vec<f64>,
    pub demands: Vec<f64>,
    pub seller_money: Vec<f64>,
    pub seller_good: Vec<f64>,
}

impl MarketState {
    pub fn new(num_buyers: usize, num_sellers: usize) -> Self {
        MarketState {
            buyer_money: vec![0.0; num_buyers],
            buyer_good: vec![0.0; num_buyers],
            rights: vec![0.0; num_buyers],
            demands: vec![0.0; num_buyers],
            seller_money: vec![0.0; num_sellers],
            seller_good: vec![0.0; num_sellers],
        }
    }

    pub fn num_buyers(&self) -> usize {
        self.buyer_money.len()
    }

    pub fn num_sellers(&self) -> usize {
        self.seller_money.len()
    }

    pub fn money(&self, t: TraderId) -> f64 {
        match t.role {
            Role::Buyer => self.buyer_money[t.index],
            Role::Seller => self.seller_money[t.index],
        }
    }

    pub fn good(&self, t: TraderId) -> f64 {
        match t.role {
            Role::Buyer => self.buyer_good[t.index],
            Role::Seller => self.seller_good[t.index],
        }
    }

    pub fn total_money(&self) -> f64 {
        self.buyer_money.iter().chain(&self.seller_money).sum()
    }

    pub fn total_good(&self) -> f64 {
        self.buyer_good.iter().chain(&self.seller_good).sum()
    }

    /// Checks shape consistency and non-negativity of every entry.
    pub fn validate(&self) -> Result<(), MarketError> {
        let nb = self.num_buyers();
        for v in [&self.buyer_good, &self.rights, &self.demands] {
            if v.len() != nb {
                return Err(MarketError::BuyerCount { index: 0, got: v.len(), expected: nb });
            }
        }
        let all = [
            ("buyer money", &self.buyer_money),
            ("buyer good", &self.buyer_good),
            ("rights", &self.rights),
            ("demand", &self.demands),
            ("seller money", &self.seller_money),
            ("seller good", &self.seller_good),
        ];
        for (what, v) in all {
            for &x in v.iter() {
                // settlement may leave -1e-12 style residue
                if !x.is_finite() || x < -TOL {
                    return Err(MarketError::Negative { what, value: x });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SellerOffer {
    pub volume: f64,
    pub price: f64,
}

/// The six numbers a buyer declares in one buyers' stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BuyerAction {
    pub right_sale_volume: f64,
    pub right_sale_price: f64,
    pub right_bid_volume: f64,
    pub right_bid_price: f64,
    pub good_bid_volume: f64,
    pub good_bid_price: f64,
}

impl BuyerAction {
    pub fn from_array(a: [f64; 6]) -> Self {
        BuyerAction {
            right_sale_volume: a[0],
            right_sale_price: a[1],
            right_bid_volume: a[2],
            right_bid_price: a[3],
            good_bid_volume: a[4],
            good_bid_price: a[5],
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.right_sale_volume,
            self.right_sale_price,
            self.right_bid_volume,
            self.right_bid_price,
            self.good_bid_volume,
            self.good_bid_price,
        ]
    }
}

/// Everything declared for one clearing: sellers' Good offers and the
/// buyers' right offers and bids.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OfferBook {
    pub sellers: Vec<SellerOffer>,
    pub buyers: Vec<BuyerAction>,
}

impl OfferBook {
    pub fn total_good_offered(&self) -> f64 {
        self.sellers.iter().map(|o| o.volume).sum()
    }

    pub fn total_rights_offered(&self) -> f64 {
        self.buyers.iter().map(|a| a.right_sale_volume).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resource {
    Good,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trade {
    pub seller: TraderId,
    pub buyer: TraderId,
    pub resource: Resource,
    pub volume: f64,
    pub unit_price: f64,
}

impl Trade {
    pub fn value(&self) -> f64 {
        self.volume * self.unit_price
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeLedger {
    pub trades: Vec<Trade>,
}

impl TradeLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, trade: Trade) {
        self.trades.push(trade);
    }

    pub fn is_empty(&self) -> bool {
        self.trades.is_empty()
    }

    pub fn extend(&mut self, other: TradeLedger) {
        self.trades.extend(other.trades);
    }

    /// Total volume of Good changing hands.
    pub fn good_volume(&self) -> f64 {
        self.trades
            .iter()
            .filter(|t| t.resource == Resource::Good)
            .fold(0.0, |acc, t| acc + t.volume)
    }

    pub fn right_volume(&self) -> f64 {
        self.trades
            .iter()
            .filter(|t| t.resource == Resource::Right)
            .fold(0.0, |acc, t| acc + t.volume)
    }

    /// Good bought per buyer.
    pub fn good_bought(&self, num_buyers: usize) -> Vec<f64> {
        let mut out = vec![0.0; num_buyers];
        for t in &self.trades {
            if t.resource == Resource::Good && t.buyer.is_buyer() {
                out[t.buyer.index] += t.volume;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrustrationRecord {
    pub per_buyer: Vec<f64>,
    pub market_index: usize,
}

/// Constrained equal awards on `caps`: award `min(cap, level)` with the level
/// chosen so the awards sum to `amount`. Requires `amount <= sum(caps)`.
fn equal_awards(amount: f64, caps: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..caps.len()).collect();
    order.sort_by(|&a, &b| caps[a].total_cmp(&caps[b]));
    let mut remaining = amount;
    let mut level = 0.0;
    let mut left = caps.len();
    for &i in &order {
        // everyone still unsaturated receives the same increment
        let step = caps[i] - level;
        if step * left as f64 <= remaining {
            remaining -= step * left as f64;
            level = caps[i];
            left -= 1;
        } else {
            level += remaining / left as f64;
            break;
        }
    }
    caps.iter().map(|&c| c.min(level)).collect()
}

/// Splits `total_volume` among buyers with the Talmud (contested garment)
/// rule: each claimant is treated through half of their claim, with equal
/// awards below the half-sum and equal losses above it.
///
/// A volume beyond the total claim is capped at the claims; the excess stays
/// unallocated.
pub fn cgd_allocate(total_volume: f64, demands: &[f64]) -> Result<Vec<f64>, MarketError> {
    non_negative("total volume", total_volume)?;
    for &d in demands {
        non_negative("demand", d)?;
    }
    let claims: f64 = demands.iter().sum();
    if total_volume >= claims {
        return Ok(demands.to_vec());
    }
    let halves: Vec<f64> = demands.iter().map(|d| d / 2.0).collect();
    if total_volume <= claims / 2.0 {
        Ok(equal_awards(total_volume, &halves))
    } else {
        let losses = equal_awards(claims - total_volume, &halves);
        Ok(demands
            .iter()
            .zip(losses)
            .map(|(d, l)| (d - l).max(0.0))
            .collect())
    }
}

/// Relative shortfall of Good bought against allocated rights, in `[0, 1]`.
/// A buyer allocated no rights is never frustrated.
pub fn frustration(rights: f64, goods_bought: f64) -> Result<f64, MarketError> {
    non_negative("rights", rights)?;
    non_negative("goods bought", goods_bought)?;
    if rights <= TOL {
        return Ok(0.0);
    }
    Ok(((rights - goods_bought) / rights).clamp(0.0, 1.0))
}

/// Mean frustration over all buyers and markets.
pub fn price_of_anarchy(records: &[FrustrationRecord], num_buyers: usize) -> Result<f64, MarketError> {
    if records.is_empty() || num_buyers == 0 {
        return Err(MarketError::NoRecords);
    }
    let mut sum = 0.0;
    for (index, r) in records.iter().enumerate() {
        if r.per_buyer.len() != num_buyers {
            return Err(MarketError::BuyerCount { index, got: r.per_buyer.len(), expected: num_buyers });
        }
        sum += r.per_buyer.iter().sum::<f64>();
    }
    Ok(sum / (records.len() * num_buyers) as f64)
}
