//! Buyer-by-buyer clearing shared by the random and greedy mechanisms.
//!
//! Each buyer first spends the rights they keep on Good, then buys Right and
//! Good in lockstep. The only difference between the two mechanisms is the
//! order in which buyers and offers are visited.

use super::{check_shape, ClearingError, ClearingRules};
use crate::market::{MarketState, OfferBook, Resource, Trade, TradeLedger, TraderId, TOL};
use rand::seq::SliceRandom;
use rand::Rng;

/// Visiting order for one buyer: sellers for Good, buyers for Rights.
struct OfferOrder {
    goods: Vec<usize>,
    rights: Vec<usize>,
}

fn affordable(budget: f64, unit_price: f64) -> f64 {
    if unit_price <= 0.0 {
        f64::INFINITY
    } else {
        budget / unit_price
    }
}

fn run<F>(
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
    buyer_order: &[usize],
    mut offers_for: F,
) -> TradeLedger
where
    F: FnMut(usize) -> OfferOrder,
{
    let enforced = rules.rights_enforced();
    let mut good_left: Vec<f64> = book.sellers.iter().map(|o| o.volume.max(0.0)).collect();
    let mut rights_left: Vec<f64> = if enforced {
        book.buyers.iter().map(|a| a.right_sale_volume.max(0.0)).collect()
    } else {
        vec![0.0; book.buyers.len()]
    };
    let mut ledger = TradeLedger::new();

    for &b in buyer_order {
        let bid = &book.buyers[b];
        let mut budget = state.buyer_money[b].max(0.0);
        let mut want_good = bid.good_bid_volume.max(0.0);
        let mut want_right = if enforced { bid.right_bid_volume.max(0.0) } else { 0.0 };
        let mut own_rights = if enforced {
            (state.rights[b] - bid.right_sale_volume).max(0.0)
        } else {
            f64::INFINITY
        };
        let order = offers_for(b);
        let goods: Vec<usize> = order
            .goods
            .into_iter()
            .filter(|&s| book.sellers[s].price <= bid.good_bid_price && !rules.bans.good_banned(s, b))
            .collect();

        // Stage 1: Good covered by the buyer's own rights.
        for &s in &goods {
            if want_good <= TOL || own_rights <= TOL || budget <= TOL {
                break;
            }
            let price = book.sellers[s].price;
            let v = good_left[s].min(want_good).min(own_rights).min(affordable(budget, price));
            if v > TOL {
                ledger.push(Trade {
                    seller: TraderId::seller(s),
                    buyer: TraderId::buyer(b),
                    resource: Resource::Good,
                    volume: v,
                    unit_price: price,
                });
                good_left[s] -= v;
                want_good -= v;
                own_rights -= v;
                budget = (budget - v * price).max(0.0);
            }
        }
        if !enforced {
            continue;
        }

        // Stage 2: Right and Good in equal amounts.
        let rights: Vec<usize> = order
            .rights
            .into_iter()
            .filter(|&r| {
                r != b
                    && book.buyers[r].right_sale_price <= bid.right_bid_price
                    && !rules.bans.right_banned(r, b)
            })
            .collect();
        let (mut gi, mut ri) = (0, 0);
        while gi < goods.len() && ri < rights.len() && want_good > TOL && want_right > TOL && budget > TOL {
            let (s, r) = (goods[gi], rights[ri]);
            if good_left[s] <= TOL {
                gi += 1;
                continue;
            }
            if rights_left[r] <= TOL {
                ri += 1;
                continue;
            }
            let (pg, pr) = (book.sellers[s].price, book.buyers[r].right_sale_price);
            let v = want_good
                .min(want_right)
                .min(good_left[s])
                .min(rights_left[r])
                .min(affordable(budget, pg + pr));
            if v <= TOL {
                break;
            }
            ledger.push(Trade {
                seller: TraderId::buyer(r),
                buyer: TraderId::buyer(b),
                resource: Resource::Right,
                volume: v,
                unit_price: pr,
            });
            ledger.push(Trade {
                seller: TraderId::seller(s),
                buyer: TraderId::buyer(b),
                resource: Resource::Good,
                volume: v,
                unit_price: pg,
            });
            good_left[s] -= v;
            rights_left[r] -= v;
            want_good -= v;
            want_right -= v;
            budget = (budget - v * (pg + pr)).max(0.0);
        }
    }
    ledger
}

/// Buyers in a random order, each facing independently shuffled offer lists.
pub fn clear_random<R: Rng + ?Sized>(
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
    rng: &mut R,
) -> Result<TradeLedger, ClearingError> {
    check_shape(state, book)?;
    let mut buyers: Vec<usize> = (0..book.buyers.len()).collect();
    buyers.shuffle(rng);
    let (ns, nb) = (book.sellers.len(), book.buyers.len());
    Ok(run(state, book, rules, &buyers, |_| {
        let mut goods: Vec<usize> = (0..ns).collect();
        goods.shuffle(rng);
        let mut rights: Vec<usize> = (0..nb).collect();
        rights.shuffle(rng);
        OfferOrder { goods, rights }
    }))
}

/// Buyers by descending Good bid, offers cheapest first; ties go to the
/// lower index.
pub fn clear_greedy(
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
) -> Result<TradeLedger, ClearingError> {
    check_shape(state, book)?;
    let mut buyers: Vec<usize> = (0..book.buyers.len()).collect();
    buyers.sort_by(|&a, &b| {
        book.buyers[b]
            .good_bid_price
            .total_cmp(&book.buyers[a].good_bid_price)
            .then(a.cmp(&b))
    });
    let mut goods: Vec<usize> = (0..book.sellers.len()).collect();
    goods.sort_by(|&a, &b| book.sellers[a].price.total_cmp(&book.sellers[b].price).then(a.cmp(&b)));
    let mut rights: Vec<usize> = (0..book.buyers.len()).collect();
    rights.sort_by(|&a, &b| {
        book.buyers[a]
            .right_sale_price
            .total_cmp(&book.buyers[b].right_sale_price)
            .then(a.cmp(&b))
    });
    Ok(run(state, book, rules, &buyers, |_| OfferOrder { goods: goods.clone(), rights: rights.clone() }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{fixtures, settle, RightsRegime};
    use crate::market::{BuyerAction, SellerOffer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_worked_example() {
        let (state, book) = fixtures::worked_example();
        let rules = ClearingRules::default();
        let ledger = clear_greedy(&state, &book, &rules).unwrap();
        // b1 buys 1 with own rights; b0 buys 0.5 with own rights, then 0.5 Right + 0.5 Good
        let expect = [
            (TraderId::seller(0), TraderId::buyer(1), Resource::Good, 1.0, 1.0),
            (TraderId::seller(0), TraderId::buyer(0), Resource::Good, 0.5, 1.0),
            (TraderId::buyer(1), TraderId::buyer(0), Resource::Right, 0.5, 1.0),
            (TraderId::seller(0), TraderId::buyer(0), Resource::Good, 0.5, 1.0),
        ];
        assert_eq!(ledger.trades.len(), expect.len());
        for (t, e) in ledger.trades.iter().zip(expect) {
            assert_eq!((t.seller, t.buyer, t.resource, t.volume, t.unit_price), e);
        }
        let after = settle(&ledger, &state, &book, &rules, crate::clearing::PriceRule::Absolute).unwrap();
        assert_eq!(after.buyer_good, vec![1.0, 1.0]);
        assert_eq!(after.buyer_money, vec![0.5, 0.5]);
        assert_eq!(after.seller_money, vec![2.0]);
    }

    #[test]
    fn random_worked_example_always_clears_two() {
        let (state, book) = fixtures::worked_example();
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ledger = clear_random(&state, &book, &ClearingRules::default(), &mut rng).unwrap();
            assert!((ledger.good_volume() - 2.0).abs() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn no_compatible_prices_no_trades() {
        let (state, mut book) = fixtures::worked_example();
        book.sellers[0].price = 3.0;
        assert!(clear_greedy(&state, &book, &ClearingRules::default()).unwrap().is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(clear_random(&state, &book, &ClearingRules::default(), &mut rng).unwrap().is_empty());
    }

    #[test]
    fn zero_offered_volume() {
        let (state, mut book) = fixtures::worked_example();
        book.sellers[0].volume = 0.0;
        assert!(clear_greedy(&state, &book, &ClearingRules::default()).unwrap().is_empty());
    }

    #[test]
    fn equal_bids_break_ties_by_index() {
        let mut state = MarketState::new(2, 1);
        state.buyer_money = vec![5.0, 5.0];
        state.rights = vec![1.0, 1.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 1.0, price: 0.5 }],
            buyers: vec![BuyerAction::from_array([0.0, 0.0, 0.0, 0.0, 1.0, 0.8]); 2],
        };
        let ledger = clear_greedy(&state, &book, &ClearingRules::default()).unwrap();
        assert_eq!(ledger.trades.len(), 1);
        assert_eq!(ledger.trades[0].buyer, TraderId::buyer(0));
    }

    #[test]
    fn free_market_ignores_rights() {
        let mut state = MarketState::new(1, 1);
        state.buyer_money = vec![10.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 3.0, price: 1.0 }],
            buyers: vec![BuyerAction::from_array([0.0, 0.0, 0.0, 0.0, 2.0, 1.0])],
        };
        let enforced = clear_greedy(&state, &book, &ClearingRules::default()).unwrap();
        assert!(enforced.is_empty());
        let free = clear_greedy(&state, &book, &ClearingRules::with_rights(RightsRegime::Ignored)).unwrap();
        assert_eq!(free.good_volume(), 2.0);
    }

    #[test]
    fn budget_limits_purchases() {
        let mut state = MarketState::new(1, 2);
        state.buyer_money = vec![1.0];
        state.rights = vec![5.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 1.0, price: 0.5 }, SellerOffer { volume: 1.0, price: 1.0 }],
            buyers: vec![BuyerAction::from_array([0.0, 0.0, 0.0, 0.0, 2.0, 1.0])],
        };
        let ledger = clear_greedy(&state, &book, &ClearingRules::default()).unwrap();
        assert!((ledger.good_volume() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn random_is_replayable() {
        let mut state = MarketState::new(3, 3);
        state.buyer_money = vec![2.0, 1.0, 3.0];
        state.rights = vec![1.0, 1.0, 1.0];
        let book = OfferBook {
            sellers: (0..3).map(|s| SellerOffer { volume: 0.7, price: 0.2 + 0.1 * s as f64 }).collect(),
            buyers: (0..3)
                .map(|b| BuyerAction::from_array([0.3, 0.1 * b as f64, 0.5, 0.5, 1.2, 0.9]))
                .collect(),
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            clear_random(&state, &book, &ClearingRules::default(), &mut rng).unwrap()
        };
        assert_eq!(format!("{:?}", run(42)), format!("{:?}", run(42)));
    }
}
