//! Maximum clearing when bid prices bound the average price paid.
//!
//! Variables are `g[s,b]` (Good from seller `s` to buyer `b`), `r[b',b]`
//! (Rights from buyer `b'` to buyer `b`), and the least / largest Good
//! volume bought by any buyer. The objective maximises the Good traded and
//! spreads it across buyers:
//!
//! ```text
//! max  sum g  -  c (max_volume - min_volume)  -  RIGHT_PENALTY * sum r
//! ```

use super::{check_shape, solve_lp, ClearingError, ClearingRules, LinearProgram};
use crate::market::{MarketState, OfferBook, Resource, Trade, TradeLedger, TraderId, TOL};

/// Weight `c` of the spread term.
pub const SPREAD_WEIGHT: f64 = 1e-3;

/// Rights carry no objective weight of their own; a tiny cost keeps the
/// optimum from buying rights that cover nothing.
const RIGHT_PENALTY: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct AverageLp {
    pub lp: LinearProgram,
    /// `(seller, buyer)` for each Good variable, in column order.
    pub good_vars: Vec<(usize, usize)>,
    /// `(from, to)` for each Right variable, following the Good variables.
    pub right_vars: Vec<(usize, usize)>,
}

impl AverageLp {
    fn min_col(&self) -> usize {
        self.good_vars.len() + self.right_vars.len()
    }

    fn max_col(&self) -> usize {
        self.min_col() + 1
    }
}

pub fn build_average_lp(state: &MarketState, book: &OfferBook, rules: &ClearingRules) -> AverageLp {
    let (ns, nb) = (book.sellers.len(), book.buyers.len());
    let mut good_vars = Vec::new();
    for s in 0..ns {
        for b in 0..nb {
            if book.sellers[s].volume > TOL && book.buyers[b].good_bid_volume > TOL && !rules.bans.good_banned(s, b) {
                good_vars.push((s, b));
            }
        }
    }
    let mut right_vars = Vec::new();
    if rules.rights_enforced() {
        for from in 0..nb {
            for to in 0..nb {
                if from != to
                    && book.buyers[from].right_sale_volume > TOL
                    && book.buyers[to].right_bid_volume > TOL
                    && !rules.bans.right_banned(from, to)
                {
                    right_vars.push((from, to));
                }
            }
        }
    }

    let ng = good_vars.len();
    let nr = right_vars.len();
    let n = ng + nr + 2;
    let (lo, hi) = (ng + nr, ng + nr + 1);
    let mut objective = vec![0.0; n];
    objective[..ng].fill(1.0);
    objective[ng..ng + nr].fill(-RIGHT_PENALTY);
    objective[lo] = SPREAD_WEIGHT;
    objective[hi] = -SPREAD_WEIGHT;
    let mut lp = LinearProgram::new(objective);
    lp.variable_names = good_vars
        .iter()
        .map(|(s, b)| format!("g_s{s}_b{b}"))
        .chain(right_vars.iter().map(|(f, t)| format!("r_b{f}_b{t}")))
        .chain(["min_volume".to_string(), "max_volume".to_string()])
        .collect();

    let row = |cells: &mut dyn Iterator<Item = (usize, f64)>| {
        let mut r = vec![0.0; n];
        for (j, v) in cells {
            r[j] += v;
        }
        r
    };
    let goods_of = |b: usize| good_vars.iter().enumerate().filter(move |(_, e)| e.1 == b).map(|(j, _)| j);
    let rights_into = |b: usize| right_vars.iter().enumerate().filter(move |(_, e)| e.1 == b).map(|(j, _)| ng + j);

    for (b, bid) in book.buyers.iter().enumerate() {
        if rules.rights_enforced() {
            let kept = (state.rights[b] - bid.right_sale_volume).max(0.0);
            let coeffs = row(&mut goods_of(b).map(|j| (j, 1.0)).chain(rights_into(b).map(|j| (j, -1.0))));
            lp.add_row(format!("rights_cover_b{b}"), coeffs, kept);
        }
        lp.add_row(format!("good_desired_b{b}"), row(&mut goods_of(b).map(|j| (j, 1.0))), bid.good_bid_volume.max(0.0));
        if rules.rights_enforced() {
            lp.add_row(
                format!("right_desired_b{b}"),
                row(&mut rights_into(b).map(|j| (j, 1.0))),
                bid.right_bid_volume.max(0.0),
            );
        }
    }
    for (s, offer) in book.sellers.iter().enumerate() {
        let cells = good_vars.iter().enumerate().filter(|(_, e)| e.0 == s).map(|(j, _)| (j, 1.0));
        lp.add_row(format!("supply_s{s}"), row(&mut cells.into_iter()), offer.volume.max(0.0));
    }
    if rules.rights_enforced() {
        for (from, bid) in book.buyers.iter().enumerate() {
            let cells = right_vars.iter().enumerate().filter(|(_, e)| e.0 == from).map(|(j, _)| (ng + j, 1.0));
            lp.add_row(format!("right_offer_b{from}"), row(&mut cells.into_iter()), bid.right_sale_volume.max(0.0));
        }
    }
    for b in 0..nb {
        lp.add_row(
            format!("min_volume_b{b}"),
            row(&mut std::iter::once((lo, 1.0)).chain(goods_of(b).map(|j| (j, -1.0)))),
            0.0,
        );
        lp.add_row(
            format!("max_volume_b{b}"),
            row(&mut std::iter::once((hi, -1.0)).chain(goods_of(b).map(|j| (j, 1.0)))),
            0.0,
        );
    }
    for (b, bid) in book.buyers.iter().enumerate() {
        let good_price = goods_of(b).map(|j| (j, book.sellers[good_vars[j].0].price - bid.good_bid_price));
        lp.add_row(format!("good_average_b{b}"), row(&mut good_price.into_iter()), 0.0);
        if rules.rights_enforced() {
            let right_price = rights_into(b)
                .map(|j| (j, book.buyers[right_vars[j - ng].0].right_sale_price - bid.right_bid_price));
            lp.add_row(format!("right_average_b{b}"), row(&mut right_price.into_iter()), 0.0);
        }
        let spend = goods_of(b)
            .map(|j| (j, book.sellers[good_vars[j].0].price))
            .chain(rights_into(b).map(|j| (j, book.buyers[right_vars[j - ng].0].right_sale_price)));
        lp.add_row(format!("budget_b{b}"), row(&mut spend.into_iter()), state.buyer_money[b].max(0.0));
    }

    AverageLp { lp, good_vars, right_vars }
}

pub fn clear_lp_average(
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
) -> Result<TradeLedger, ClearingError> {
    check_shape(state, book)?;
    let problem = build_average_lp(state, book, rules);
    let solution = solve_lp(&problem.lp)?;
    debug_assert!(solution.x[problem.min_col()] <= solution.x[problem.max_col()] + 1e-9);
    let ng = problem.good_vars.len();

    let mut ledger = TradeLedger::new();
    for (j, &(from, to)) in problem.right_vars.iter().enumerate() {
        let volume = solution.x[ng + j];
        if volume > TOL {
            ledger.push(Trade {
                seller: TraderId::buyer(from),
                buyer: TraderId::buyer(to),
                resource: Resource::Right,
                volume,
                unit_price: book.buyers[from].right_sale_price,
            });
        }
    }
    for (j, &(s, b)) in problem.good_vars.iter().enumerate() {
        let volume = solution.x[j];
        if volume > TOL {
            ledger.push(Trade {
                seller: TraderId::seller(s),
                buyer: TraderId::buyer(b),
                resource: Resource::Good,
                volume,
                unit_price: book.sellers[s].price,
            });
        }
    }
    Ok(ledger)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{clear_maxflow_absolute, fixtures, settle, PriceRule};
    use crate::market::{BuyerAction, SellerOffer};

    fn averaging_instance() -> (MarketState, OfferBook) {
        let mut state = MarketState::new(1, 2);
        state.buyer_money = vec![3.0];
        state.rights = vec![2.0];
        state.seller_good = vec![1.0, 1.0];
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 1.0, price: 1.0 }, SellerOffer { volume: 1.0, price: 2.0 }],
            buyers: vec![BuyerAction::from_array([0.0, 0.0, 0.0, 0.0, 2.0, 1.5])],
        };
        (state, book)
    }

    /// Enumerates purchases from the two sellers on a 0.01 grid.
    fn grid_best(state: &MarketState, book: &OfferBook) -> f64 {
        let bid = &book.buyers[0];
        let mut best = 0.0f64;
        for i in 0..=100 {
            for k in 0..=100 {
                let (a, c) = (i as f64 / 100.0, k as f64 / 100.0);
                let volume = a + c;
                let paid = a * book.sellers[0].price + c * book.sellers[1].price;
                if volume <= bid.good_bid_volume + 1e-12
                    && volume <= state.rights[0] + 1e-12
                    && paid <= state.buyer_money[0] + 1e-12
                    && paid <= bid.good_bid_price * volume + 1e-12
                {
                    best = best.max(volume);
                }
            }
        }
        best
    }

    #[test]
    fn averaging_buys_both_offers() {
        let (state, book) = averaging_instance();
        let rules = ClearingRules::default();
        assert!((grid_best(&state, &book) - 2.0).abs() < 1e-9);
        let ledger = clear_lp_average(&state, &book, &rules).unwrap();
        assert!((ledger.good_volume() - 2.0).abs() < 1e-9);
        settle(&ledger, &state, &book, &rules, PriceRule::Average).unwrap();
        let absolute = clear_maxflow_absolute(&state, &book, &rules).unwrap();
        assert!((absolute.good_volume() - 1.0).abs() < 1e-9);

        // a single buyer has zero spread, so the objective is the volume
        let p = build_average_lp(&state, &book, &rules);
        let s = solve_lp(&p.lp).unwrap();
        assert!((s.objective - 2.0).abs() < 1e-9);
    }

    #[test]
    fn worked_example_same_as_flow() {
        let (state, book) = fixtures::worked_example();
        let rules = ClearingRules::default();
        let lp = clear_lp_average(&state, &book, &rules).unwrap();
        assert!((lp.good_volume() - 2.0).abs() < 1e-9);
        let a = settle(&lp, &state, &book, &rules, PriceRule::Average).unwrap();
        let flow = clear_maxflow_absolute(&state, &book, &rules).unwrap();
        let b = settle(&flow, &state, &book, &rules, PriceRule::Absolute).unwrap();
        for (x, y) in a.buyer_good.iter().zip(&b.buyer_good) {
            assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in a.buyer_money.iter().zip(&b.buyer_money) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn incompatible_averages_clear_nothing() {
        let (state, mut book) = averaging_instance();
        book.buyers[0].good_bid_price = 0.5;
        let ledger = clear_lp_average(&state, &book, &ClearingRules::default()).unwrap();
        assert!(ledger.is_empty());
    }

    #[test]
    fn banned_pair_is_excluded() {
        let (state, book) = averaging_instance();
        let mut rules = ClearingRules::default();
        rules.bans.good.push((0, 0));
        let ledger = clear_lp_average(&state, &book, &rules).unwrap();
        assert!(ledger.is_empty());
    }

    #[test]
    fn csv_dump_names_constraints() {
        let (state, book) = fixtures::worked_example();
        let p = build_average_lp(&state, &book, &ClearingRules::default());
        let csv = p.lp.to_csv();
        assert!(csv.starts_with("row,g_s0_b0,g_s0_b1,r_b1_b0,min_volume,max_volume,rhs"));
        assert!(csv.contains("budget_b1"));
    }
}
