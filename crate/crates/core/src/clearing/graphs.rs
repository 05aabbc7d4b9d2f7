use super::ClearingRules;
use crate::market::{OfferBook, TOL};

/// Price-compatibility graphs for absolute bids.
///
/// A good edge `(s, b)` exists when buyer `b` bids at least seller `s`'s ask;
/// a right edge `(b', b)` when `b` bids at least `b'`'s right ask. Both ends
/// need a positive volume and a buyer never faces itself.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompatibilityGraphs {
    pub good_edges: Vec<(usize, usize)>,
    pub right_edges: Vec<(usize, usize)>,
    /// Offered Good per seller.
    pub good_supply: Vec<f64>,
    /// Desired Good per buyer.
    pub good_demand: Vec<f64>,
    /// Offered Rights per buyer.
    pub right_supply: Vec<f64>,
    /// Desired Rights per buyer.
    pub right_demand: Vec<f64>,
}

pub fn build_graphs(book: &OfferBook, rules: &ClearingRules) -> CompatibilityGraphs {
    let good_supply: Vec<f64> = book.sellers.iter().map(|o| o.volume.max(0.0)).collect();
    let good_demand: Vec<f64> = book.buyers.iter().map(|a| a.good_bid_volume.max(0.0)).collect();
    let (right_supply, right_demand) = if rules.rights_enforced() {
        (
            book.buyers.iter().map(|a| a.right_sale_volume.max(0.0)).collect(),
            book.buyers.iter().map(|a| a.right_bid_volume.max(0.0)).collect(),
        )
    } else {
        (vec![0.0; book.buyers.len()], vec![0.0; book.buyers.len()])
    };

    let mut good_edges = Vec::new();
    for (s, offer) in book.sellers.iter().enumerate() {
        for (b, bid) in book.buyers.iter().enumerate() {
            if good_supply[s] > TOL
                && good_demand[b] > TOL
                && bid.good_bid_price >= offer.price
                && !rules.bans.good_banned(s, b)
            {
                good_edges.push((s, b));
            }
        }
    }

    let mut right_edges = Vec::new();
    for (from, ask) in book.buyers.iter().enumerate() {
        for (to, bid) in book.buyers.iter().enumerate() {
            if from != to
                && right_supply[from] > TOL
                && right_demand[to] > TOL
                && bid.right_bid_price >= ask.right_sale_price
                && !rules.bans.right_banned(from, to)
            {
                right_edges.push((from, to));
            }
        }
    }

    CompatibilityGraphs { good_edges, right_edges, good_supply, good_demand, right_supply, right_demand }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::{fixtures, RightsRegime};
    use crate::market::{BuyerAction, SellerOffer};

    #[test]
    fn worked_example_edges() {
        let (_, book) = fixtures::worked_example();
        let g = build_graphs(&book, &ClearingRules::default());
        assert_eq!(g.good_edges, vec![(0, 0), (0, 1)]);
        assert_eq!(g.right_edges, vec![(1, 0)]);
    }

    #[test]
    fn incompatible_prices_give_no_edges() {
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 1.0, price: 1.0 }; 2],
            buyers: vec![BuyerAction::from_array([1.0, 1.0, 1.0, 0.0, 1.0, 0.0]); 2],
        };
        let g = build_graphs(&book, &ClearingRules::default());
        assert!(g.good_edges.is_empty());
        assert!(g.right_edges.is_empty());
    }

    #[test]
    fn equal_prices_are_compatible() {
        let book = OfferBook {
            sellers: vec![SellerOffer { volume: 1.0, price: 0.7 }],
            buyers: vec![BuyerAction::from_array([0.0, 0.0, 0.0, 0.0, 1.0, 0.7])],
        };
        let g = build_graphs(&book, &ClearingRules::default());
        assert_eq!(g.good_edges, vec![(0, 0)]);
    }

    #[test]
    fn free_market_has_no_right_edges() {
        let (_, book) = fixtures::worked_example();
        let g = build_graphs(&book, &ClearingRules::with_rights(RightsRegime::Ignored));
        assert!(g.right_edges.is_empty());
        assert_eq!(g.good_edges.len(), 2);
    }

    #[test]
    fn bans_remove_edges() {
        let (_, book) = fixtures::worked_example();
        let mut rules = ClearingRules::default();
        rules.bans.good.push((0, 1));
        rules.bans.right.push((1, 0));
        let g = build_graphs(&book, &rules);
        assert_eq!(g.good_edges, vec![(0, 0)]);
        assert!(g.right_edges.is_empty());
    }
}
