use super::{check_shape, ClearingError, ClearingRules, PriceRule};
use crate::market::{MarketState, OfferBook, Resource, Role, TradeLedger, TraderId, TOL};
use thiserror::Error;

/// A ledger that cannot be executed. The five numbered market conditions
/// are reported by [`Violation::condition`]; the remaining variants protect
/// holdings.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Violation {
    #[error("{trader} sells {sold} {resource:?} but offered {offered}")]
    OverOffer { trader: TraderId, resource: Resource, sold: f64, offered: f64 },
    #[error("{trader} cannot sell {resource:?}")]
    WrongSeller { trader: TraderId, resource: Resource },
    #[error("{buyer} buys {bought} {resource:?} but declared {declared}")]
    OverDeclared { buyer: TraderId, resource: Resource, bought: f64, declared: f64 },
    #[error("trade {index} priced {price} below the ask {ask}")]
    BelowAsk { index: usize, price: f64, ask: f64 },
    #[error("{buyer} pays {paid} per unit of {resource:?}, above the bid {bid}")]
    AboveBid { buyer: TraderId, resource: Resource, paid: f64, bid: f64 },
    #[error("{buyer} buys rights from themselves")]
    SelfTrade { buyer: TraderId },
    #[error("trade {index} has non-positive or non-finite volume {volume}")]
    BadVolume { index: usize, volume: f64 },
    #[error("{buyer} would end with money {money}")]
    Overdraft { buyer: TraderId, money: f64 },
    #[error("{buyer} would hold {good} Good not covered by rights ({missing} missing)")]
    Uncovered { buyer: TraderId, good: f64, missing: f64 },
}

impl Violation {
    /// The violated market condition (1-5), if any.
    pub fn condition(&self) -> Option<u8> {
        match self {
            Violation::OverOffer { .. } | Violation::WrongSeller { .. } => Some(1),
            Violation::OverDeclared { .. } => Some(2),
            Violation::BelowAsk { .. } => Some(3),
            Violation::AboveBid { .. } => Some(4),
            Violation::SelfTrade { .. } => Some(5),
            Violation::BadVolume { .. } | Violation::Overdraft { .. } | Violation::Uncovered { .. } => None,
        }
    }
}

fn slack(x: f64) -> f64 {
    TOL * (1.0 + x.abs())
}

/// Checks the five market conditions of `ledger` against the book it was
/// cleared from.
pub fn check_ledger(
    ledger: &TradeLedger,
    book: &OfferBook,
    rules: &ClearingRules,
    price_rule: PriceRule,
) -> Result<(), Violation> {
    let (ns, nb) = (book.sellers.len(), book.buyers.len());
    let mut good_sold = vec![0.0; ns];
    let mut rights_sold = vec![0.0; nb];
    let mut good_bought = vec![0.0; nb];
    let mut rights_bought = vec![0.0; nb];
    let mut good_paid = vec![0.0; nb];
    let mut rights_paid = vec![0.0; nb];

    for (index, t) in ledger.trades.iter().enumerate() {
        if !(t.volume.is_finite() && t.volume > 0.0) || !t.unit_price.is_finite() {
            return Err(Violation::BadVolume { index, volume: t.volume });
        }
        if t.buyer.role != Role::Buyer || t.buyer.index >= nb {
            return Err(Violation::WrongSeller { trader: t.buyer, resource: t.resource });
        }
        let b = t.buyer.index;
        let ask = match (t.resource, t.seller.role) {
            (Resource::Good, Role::Seller) if t.seller.index < ns => {
                good_sold[t.seller.index] += t.volume;
                good_bought[b] += t.volume;
                good_paid[b] += t.value();
                book.sellers[t.seller.index].price
            }
            (Resource::Right, Role::Buyer) if t.seller.index < nb && rules.rights_enforced() => {
                if t.seller.index == b {
                    return Err(Violation::SelfTrade { buyer: t.buyer });
                }
                rights_sold[t.seller.index] += t.volume;
                rights_bought[b] += t.volume;
                rights_paid[b] += t.value();
                book.buyers[t.seller.index].right_sale_price
            }
            _ => return Err(Violation::WrongSeller { trader: t.seller, resource: t.resource }),
        };
        if t.unit_price < ask - slack(ask) {
            return Err(Violation::BelowAsk { index, price: t.unit_price, ask });
        }
        if price_rule == PriceRule::Absolute {
            let bid = match t.resource {
                Resource::Good => book.buyers[b].good_bid_price,
                Resource::Right => book.buyers[b].right_bid_price,
            };
            if t.unit_price > bid + slack(bid) {
                return Err(Violation::AboveBid { buyer: t.buyer, resource: t.resource, paid: t.unit_price, bid });
            }
        }
    }

    for (s, offer) in book.sellers.iter().enumerate() {
        if good_sold[s] > offer.volume + slack(offer.volume) {
            return Err(Violation::OverOffer {
                trader: TraderId::seller(s),
                resource: Resource::Good,
                sold: good_sold[s],
                offered: offer.volume,
            });
        }
    }
    for (b, a) in book.buyers.iter().enumerate() {
        if rights_sold[b] > a.right_sale_volume + slack(a.right_sale_volume) {
            return Err(Violation::OverOffer {
                trader: TraderId::buyer(b),
                resource: Resource::Right,
                sold: rights_sold[b],
                offered: a.right_sale_volume,
            });
        }
    }
    for (b, a) in book.buyers.iter().enumerate() {
        let buyer = TraderId::buyer(b);
        if good_bought[b] > a.good_bid_volume + slack(a.good_bid_volume) {
            return Err(Violation::OverDeclared {
                buyer,
                resource: Resource::Good,
                bought: good_bought[b],
                declared: a.good_bid_volume,
            });
        }
        if rights_bought[b] > a.right_bid_volume + slack(a.right_bid_volume) {
            return Err(Violation::OverDeclared {
                buyer,
                resource: Resource::Right,
                bought: rights_bought[b],
                declared: a.right_bid_volume,
            });
        }
        if price_rule == PriceRule::Average {
            for (resource, paid, volume, bid) in [
                (Resource::Good, good_paid[b], good_bought[b], a.good_bid_price),
                (Resource::Right, rights_paid[b], rights_bought[b], a.right_bid_price),
            ] {
                if volume > 0.0 && paid > bid * volume + slack(paid) {
                    return Err(Violation::AboveBid { buyer, resource, paid: paid / volume, bid });
                }
            }
        }
    }
    Ok(())
}

/// Validates `ledger` and applies it to `state`.
///
/// Good and Rights move from seller to buyer and `volume * price` moves the
/// other way. Every unit of Good bought consumes one right when rights are
/// enforced; afterwards no buyer may hold negative money or rights.
pub fn settle(
    ledger: &TradeLedger,
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
    price_rule: PriceRule,
) -> Result<MarketState, ClearingError> {
    check_shape(state, book)?;
    check_ledger(ledger, book, rules, price_rule).map_err(ClearingError::Illegal)?;

    let mut next = state.clone();
    for t in &ledger.trades {
        let b = t.buyer.index;
        let value = t.value();
        next.buyer_money[b] -= value;
        match t.resource {
            Resource::Good => {
                next.seller_good[t.seller.index] -= t.volume;
                next.seller_money[t.seller.index] += value;
                next.buyer_good[b] += t.volume;
                if rules.rights_enforced() {
                    next.rights[b] -= t.volume;
                }
            }
            Resource::Right => {
                next.rights[t.seller.index] -= t.volume;
                next.buyer_money[t.seller.index] += value;
                next.rights[b] += t.volume;
            }
        }
    }

    for b in 0..next.num_buyers() {
        let buyer = TraderId::buyer(b);
        if next.buyer_money[b] < -slack(state.buyer_money[b]) {
            return Err(ClearingError::Illegal(Violation::Overdraft { buyer, money: next.buyer_money[b] }));
        }
        if next.rights[b] < -slack(state.rights[b] + next.buyer_good[b]) {
            return Err(ClearingError::Illegal(Violation::Uncovered {
                buyer,
                good: next.buyer_good[b],
                missing: -next.rights[b],
            }));
        }
        next.buyer_money[b] = next.buyer_money[b].max(0.0);
        next.rights[b] = next.rights[b].max(0.0);
    }
    for s in 0..next.num_sellers() {
        if next.seller_good[s] < -slack(state.seller_good[s]) {
            return Err(ClearingError::Illegal(Violation::OverOffer {
                trader: TraderId::seller(s),
                resource: Resource::Good,
                sold: state.seller_good[s] - next.seller_good[s],
                offered: state.seller_good[s],
            }));
        }
        next.seller_good[s] = next.seller_good[s].max(0.0);
    }
    Ok(next)
}
