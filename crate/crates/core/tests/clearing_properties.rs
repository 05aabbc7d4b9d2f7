use critical_market::clearing::{clear, settle, ClearingRules, Mechanism, RightsRegime};
use critical_market::market::{cgd_allocate, BuyerAction, MarketState, OfferBook, Resource, SellerOffer};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Prices on a coarse grid so ties are common.
fn price(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(0..=4) as f64 / 4.0
}

fn market(seed: u64, integral: bool) -> (MarketState, OfferBook, ClearingRules) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nb = rng.random_range(2..=5);
    let ns = rng.random_range(1..=4);
    let amount = |rng: &mut ChaCha8Rng, hi: f64| {
        if integral {
            rng.random_range(0..=hi as u32) as f64
        } else {
            rng.random_range(0.0..hi)
        }
    };
    let mut state = MarketState::new(nb, ns);
    let sellers: Vec<SellerOffer> = (0..ns)
        .map(|_| SellerOffer { volume: amount(&mut rng, 3.0), price: price(&mut rng) })
        .collect();
    state.seller_good = sellers.iter().map(|o| o.volume + amount(&mut rng, 1.0)).collect();
    state.demands = (0..nb).map(|_| amount(&mut rng, 3.0).max(1.0)).collect();
    state.buyer_money = (0..nb).map(|_| amount(&mut rng, 4.0)).collect();
    let regime = if rng.random_bool(0.7) { RightsRegime::Enforced } else { RightsRegime::Ignored };
    if regime == RightsRegime::Enforced {
        let offered: f64 = sellers.iter().map(|o| o.volume).sum();
        state.rights = cgd_allocate(offered, &state.demands).unwrap();
        if integral {
            state.rights.iter_mut().for_each(|r| *r = r.floor());
        }
    }
    let buyers = (0..nb)
        .map(|b| {
            let mut a = BuyerAction {
                right_sale_volume: if regime == RightsRegime::Enforced {
                    amount(&mut rng, 3.0).min(state.rights[b])
                } else {
                    0.0
                },
                right_sale_price: price(&mut rng),
                right_bid_volume: if regime == RightsRegime::Enforced { amount(&mut rng, 3.0) } else { 0.0 },
                right_bid_price: price(&mut rng),
                good_bid_volume: amount(&mut rng, 3.0),
                good_bid_price: price(&mut rng),
            };
            // affordable at the buyer's own bid prices
            let cost = a.good_bid_volume * a.good_bid_price + a.right_bid_volume * a.right_bid_price;
            if !integral && cost > state.buyer_money[b] {
                let f = state.buyer_money[b] / cost;
                a.good_bid_volume *= f;
                a.right_bid_volume *= f;
            }
            if integral {
                state.buyer_money[b] = 1000.0;
            }
            a
        })
        .collect();
    (state, OfferBook { sellers, buyers }, ClearingRules::with_rights(regime))
}

fn volume(m: Mechanism, state: &MarketState, book: &OfferBook, rules: &ClearingRules, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clear(m, state, book, rules, &mut rng).unwrap().good_volume()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn every_mechanism_settles_and_conserves(seed in any::<u64>()) {
        let (state, book, rules) = market(seed, false);
        for m in Mechanism::ALL {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ledger = clear(m, &state, &book, &rules, &mut rng).unwrap();
            let after = settle(&ledger, &state, &book, &rules, m.price_rule()).unwrap();
            prop_assert!((after.total_good() - state.total_good()).abs() <= 1e-9);
            prop_assert!((after.total_money() - state.total_money()).abs() <= 1e-9);
            prop_assert!(after.buyer_money.iter().all(|&x| x >= 0.0));
            if rules.rights_enforced() {
                // every unit bought is covered by a right held at market end
                let bought = ledger.good_bought(state.num_buyers());
                for b in 0..state.num_buyers() {
                    let mut net = state.rights[b];
                    for t in ledger.trades.iter().filter(|t| t.resource == Resource::Right) {
                        if t.buyer.index == b { net += t.volume; }
                        if t.seller.index == b { net -= t.volume; }
                    }
                    prop_assert!(bought[b] <= net + 1e-9, "{m:?} b{b}: {} > {net}", bought[b]);
                }
            }
        }
    }

    #[test]
    fn volumes_are_ordered(seed in any::<u64>()) {
        let (state, book, rules) = market(seed, false);
        let lp = volume(Mechanism::LpAverage, &state, &book, &rules, 0);
        let flow = volume(Mechanism::MaxFlowAbsolute, &state, &book, &rules, 0);
        let greedy = volume(Mechanism::Greedy, &state, &book, &rules, 0);
        prop_assert!(lp >= flow - 1e-7, "lp {lp} < flow {flow}");
        prop_assert!(flow >= greedy - 1e-9, "flow {flow} < greedy {greedy}");
        for s in 0..5 {
            let random = volume(Mechanism::Random, &state, &book, &rules, s);
            prop_assert!(flow >= random - 1e-9, "flow {flow} < random {random}");
        }
    }

    #[test]
    fn integral_markets_clear_integrally(seed in any::<u64>()) {
        let (state, book, rules) = market(seed, true);
        let ledger = clear(Mechanism::MaxFlowAbsolute, &state, &book, &rules, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for t in &ledger.trades {
            prop_assert!((t.volume - t.volume.round()).abs() < 1e-9, "{t:?}");
        }
    }

    #[test]
    fn clearing_is_deterministic_given_seed(seed in any::<u64>()) {
        let (state, book, rules) = market(seed, false);
        for m in Mechanism::ALL {
            let a = clear(m, &state, &book, &rules, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let b = clear(m, &state, &book, &rules, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
