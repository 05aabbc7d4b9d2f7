//! Exhaustive check of max-flow clearing on tiny integer markets.
//!
//! With integer data an optimal clearing with integer per-buyer totals
//! exists, so the maximum can be found by enumerating each buyer's Good
//! total and testing feasibility with Gale's supply-demand condition on
//! both the Good and the Right transport. Money is ample so budgets never
//! bind.

use critical_market::clearing::{clear_maxflow_absolute, ClearingRules, RightsRegime};
use critical_market::market::{BuyerAction, MarketState, OfferBook, SellerOffer, TradeLedger};
use rand::Rng;
use serde::Serialize;

#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub state: MarketState,
    pub book: OfferBook,
    pub rules: ClearingRules,
}

pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, max_traders: usize, max_volume: u32) -> OracleInstance {
    let nb = rng.random_range(1..=max_traders);
    let ns = rng.random_range(1..=max_traders);
    let mut int = |hi: u32| rng.random_range(0..=hi) as f64;
    let mut state = MarketState::new(nb, ns);
    let sellers: Vec<SellerOffer> =
        (0..ns).map(|_| SellerOffer { volume: int(max_volume), price: int(3) }).collect();
    state.seller_good = sellers.iter().map(|s| s.volume).collect();
    let mut buyers = Vec::with_capacity(nb);
    for b in 0..nb {
        state.rights[b] = int(max_volume);
        state.buyer_money[b] = 1000.0;
        state.demands[b] = int(max_volume).max(1.0);
        let sale = int(max_volume).min(state.rights[b]);
        buyers.push(BuyerAction {
            right_sale_volume: sale,
            right_sale_price: int(3),
            right_bid_volume: int(max_volume),
            right_bid_price: int(3),
            good_bid_volume: int(max_volume),
            good_bid_price: int(3),
        });
    }
    let regime = if rng.random_bool(0.75) { RightsRegime::Enforced } else { RightsRegime::Ignored };
    OracleInstance { state, book: OfferBook { sellers, buyers }, rules: ClearingRules::with_rights(regime) }
}

fn subsets(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (1u32..(1 << n)).map(move |mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
}

/// Largest total Good volume any legal integer clearing achieves.
pub fn brute_force_max(inst: &OracleInstance) -> f64 {
    let book = &inst.book;
    let nb = book.buyers.len();
    let enforced = inst.rules.rights == RightsRegime::Enforced;
    let good_link = |s: usize, b: usize| {
        book.sellers[s].volume > 0.0
            && book.buyers[b].good_bid_volume > 0.0
            && book.sellers[s].price <= book.buyers[b].good_bid_price
            && !inst.rules.bans.good_banned(s, b)
    };
    let right_link = |from: usize, to: usize| {
        from != to
            && book.buyers[from].right_sale_volume > 0.0
            && book.buyers[to].right_bid_volume > 0.0
            && book.buyers[from].right_sale_price <= book.buyers[to].right_bid_price
            && !inst.rules.bans.right_banned(from, to)
    };
    let caps: Vec<u32> = book.buyers.iter().map(|a| a.good_bid_volume as u32).collect();
    let groups: Vec<Vec<usize>> = subsets(nb).collect();

    let mut best = 0u32;
    let mut x = vec![0u32; nb];
    loop {
        let total: u32 = x.iter().sum();
        if total > best && feasible(&x, &groups, enforced, inst, &good_link, &right_link) {
            best = total;
        }
        // odometer over 0..=caps[b]
        let mut i = 0;
        while i < nb && x[i] == caps[i] {
            x[i] = 0;
            i += 1;
        }
        if i == nb {
            break;
        }
        x[i] += 1;
    }
    best as f64
}

fn feasible(
    x: &[u32],
    groups: &[Vec<usize>],
    enforced: bool,
    inst: &OracleInstance,
    good_link: &dyn Fn(usize, usize) -> bool,
    right_link: &dyn Fn(usize, usize) -> bool,
) -> bool {
    let book = &inst.book;
    let need: Vec<f64> = (0..x.len())
        .map(|b| {
            let kept = inst.state.rights[b] - book.buyers[b].right_sale_volume;
            (x[b] as f64 - kept).max(0.0)
        })
        .collect();
    if enforced && need.iter().zip(&book.buyers).any(|(n, a)| *n > a.right_bid_volume) {
        return false;
    }
    for group in groups {
        let wanted: f64 = group.iter().map(|&b| x[b] as f64).sum();
        if wanted > 0.0 {
            let reachable: f64 = (0..book.sellers.len())
                .filter(|&s| group.iter().any(|&b| x[b] > 0 && good_link(s, b)))
                .map(|s| book.sellers[s].volume)
                .sum();
            if wanted > reachable {
                return false;
            }
        }
        if enforced {
            let short: f64 = group.iter().map(|&b| need[b]).sum();
            if short > 0.0 {
                let reachable: f64 = (0..book.buyers.len())
                    .filter(|&f| group.iter().any(|&b| need[b] > 0.0 && right_link(f, b)))
                    .map(|f| book.buyers[f].right_sale_volume)
                    .sum();
                if short > reachable {
                    return false;
                }
            }
        }
    }
    true
}

fn integral(ledger: &TradeLedger) -> bool {
    ledger.trades.iter().all(|t| (t.volume - t.volume.round()).abs() < 1e-9)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub case: usize,
    pub buyers: usize,
    pub sellers: usize,
    pub rights_enforced: bool,
    pub brute_force: f64,
    pub max_flow: f64,
    pub integral: bool,
    pub ok: bool,
}

pub fn check_instance(case: usize, inst: &OracleInstance) -> Result<OracleCase, String> {
    let ledger = clear_maxflow_absolute(&inst.state, &inst.book, &inst.rules).map_err(|e| e.to_string())?;
    let brute_force = brute_force_max(inst);
    let max_flow = ledger.good_volume();
    let integral = integral(&ledger);
    Ok(OracleCase {
        case,
        buyers: inst.book.buyers.len(),
        sellers: inst.book.sellers.len(),
        rights_enforced: inst.rules.rights == RightsRegime::Enforced,
        brute_force,
        ok: (brute_force - max_flow).abs() < 1e-9 && integral,
        max_flow,
        integral,
    })
}

pub fn run_suite<R: Rng + ?Sized>(cases: usize, rng: &mut R) -> Result<Vec<OracleCase>, String> {
    (0..cases).map(|i| check_instance(i, &random_instance(rng, 3, 3))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_checked_instance() {
        // two sellers of 2 at prices 1 and 3; one buyer bidding 3 @ 2 holding 3 rights
        let mut state = MarketState::new(1, 2);
        state.rights = vec![3.0];
        state.buyer_money = vec![100.0];
        state.seller_good = vec![2.0, 2.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 2.0, price: 1.0 }, SellerOffer { volume: 2.0, price: 3.0 }],
            buyers: vec![BuyerAction { good_bid_volume: 3.0, good_bid_price: 2.0, ..Default::default() }],
        };
        let inst = OracleInstance { state, book, rules: ClearingRules::default() };
        assert_eq!(brute_force_max(&inst), 2.0);
    }

    #[test]
    fn rights_transport_limits_volume() {
        // b0 holds nothing and may buy one right from b1
        let mut state = MarketState::new(2, 1);
        state.rights = vec![0.0, 2.0];
        state.buyer_money = vec![100.0, 100.0];
        state.seller_good = vec![3.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 3.0, price: 1.0 }],
            buyers: vec![
                BuyerAction { right_bid_volume: 3.0, right_bid_price: 1.0, good_bid_volume: 3.0, good_bid_price: 1.0, ..Default::default() },
                BuyerAction { right_sale_volume: 1.0, right_sale_price: 1.0, good_bid_volume: 3.0, good_bid_price: 1.0, ..Default::default() },
            ],
        };
        let inst = OracleInstance { state, book, rules: ClearingRules::default() };
        // b1 keeps one right, sells one to b0
        assert_eq!(brute_force_max(&inst), 2.0);
        let free = OracleInstance { rules: ClearingRules::with_rights(RightsRegime::Ignored), ..inst };
        assert_eq!(brute_force_max(&free), 3.0);
    }

    #[test]
    fn small_suite_agrees() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cases = run_suite(30, &mut rng).unwrap();
        assert!(cases.iter().all(|c| c.ok), "{:?}", cases.iter().find(|c| !c.ok));
    }
}
