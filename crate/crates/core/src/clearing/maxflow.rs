//! Maximum clearing with absolute prices as a single-commodity flow.
//!
//! Layers, left to right:
//!
//! ```text
//! source -> own[b]          capacity: rights kept (allocated minus offered for sale)
//! source -> right_seller[b] capacity: rights offered
//! right_seller[b'] -> right_buyer[b]   one arc per compatible right edge
//! right_buyer[b] -> own[b]  capacity: rights desired; couples each bought right to one unit of Good
//! own[b] -> goods[b]        capacity: Good desired
//! goods[b] -> seller[s]     one arc per compatible good edge
//! seller[s] -> sink         capacity: Good offered
//! ```
//!
//! A path through `right_seller -> right_buyer` becomes one Right trade and
//! one Good trade of the same volume.

use super::graphs::{build_graphs, CompatibilityGraphs};
use super::{check_shape, max_flow, ClearingError, ClearingRules, FlowNetwork};
use crate::market::{BuyerAction, MarketState, OfferBook, Resource, Trade, TradeLedger, TraderId, TOL};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Node {
    Terminal,
    RightSeller(usize),
    RightBuyer(usize),
    Own(usize),
    Goods(usize),
    Seller(usize),
}

/// A flow network together with the meaning of each vertex.
#[derive(Debug, Clone)]
pub struct ClearingNetwork {
    pub network: FlowNetwork,
    nodes: Vec<Node>,
}

/// Scales each buyer's declared volumes so that buying all of them at the
/// most expensive compatible asks fits the buyer's money. Executed prices
/// are asks, so a capped bid can never overdraw.
pub fn budget_capped_bids(state: &MarketState, book: &OfferBook, graphs: &CompatibilityGraphs) -> Vec<BuyerAction> {
    book.buyers
        .iter()
        .enumerate()
        .map(|(b, bid)| {
            let sellers = graphs.good_edges.iter().filter(|e| e.1 == b).map(|e| e.0);
            let right_sellers = graphs.right_edges.iter().filter(|e| e.1 == b).map(|e| e.0);
            let (mut good_supply, mut good_ask) = (0.0, 0.0f64);
            for s in sellers {
                good_supply += graphs.good_supply[s];
                good_ask = good_ask.max(book.sellers[s].price);
            }
            let (mut right_supply, mut right_ask) = (0.0, 0.0f64);
            for r in right_sellers {
                right_supply += graphs.right_supply[r];
                right_ask = right_ask.max(book.buyers[r].right_sale_price);
            }
            let good = graphs.good_demand[b].min(good_supply);
            let right = graphs.right_demand[b].min(right_supply).min(good);
            let worst = good * good_ask + right * right_ask;
            let money = state.buyer_money[b].max(0.0);
            let mut capped = *bid;
            capped.good_bid_volume = graphs.good_demand[b];
            capped.right_bid_volume = graphs.right_demand[b];
            if worst > money {
                let scale = money / worst;
                capped.good_bid_volume = good * scale;
                capped.right_bid_volume = right * scale;
            }
            capped
        })
        .collect()
}

pub fn build_flow_network(state: &MarketState, book: &OfferBook, rules: &ClearingRules) -> ClearingNetwork {
    let graphs = build_graphs(book, rules);
    let bids = budget_capped_bids(state, book, &graphs);
    let mut net = FlowNetwork::new();
    let mut nodes = vec![Node::Terminal, Node::Terminal];
    let add = |net: &mut FlowNetwork, nodes: &mut Vec<Node>, node: Node, label: String| {
        nodes.push(node);
        net.add_vertex(label)
    };
    let nb = book.buyers.len();
    let right_seller: Vec<usize> = (0..nb)
        .map(|b| add(&mut net, &mut nodes, Node::RightSeller(b), format!("sell_right_b{b}")))
        .collect();
    let right_buyer: Vec<usize> = (0..nb)
        .map(|b| add(&mut net, &mut nodes, Node::RightBuyer(b), format!("buy_right_b{b}")))
        .collect();
    let own: Vec<usize> = (0..nb)
        .map(|b| add(&mut net, &mut nodes, Node::Own(b), format!("rights_b{b}")))
        .collect();
    let goods: Vec<usize> = (0..nb)
        .map(|b| add(&mut net, &mut nodes, Node::Goods(b), format!("good_b{b}")))
        .collect();
    let sellers: Vec<usize> = (0..book.sellers.len())
        .map(|s| add(&mut net, &mut nodes, Node::Seller(s), format!("s{s}")))
        .collect();
    let (source, sink) = (net.source, net.sink);

    for b in 0..nb {
        let kept = if rules.rights_enforced() {
            (state.rights[b] - book.buyers[b].right_sale_volume).max(0.0)
        } else {
            bids[b].good_bid_volume
        };
        net.add_arc(source, own[b], kept);
        net.add_arc(own[b], goods[b], bids[b].good_bid_volume);
        if rules.rights_enforced() {
            net.add_arc(source, right_seller[b], graphs.right_supply[b]);
            net.add_arc(right_buyer[b], own[b], bids[b].right_bid_volume);
        }
    }
    for &(from, to) in &graphs.right_edges {
        net.add_arc(right_seller[from], right_buyer[to], bids[to].right_bid_volume);
    }
    for &(s, b) in &graphs.good_edges {
        net.add_arc(goods[b], sellers[s], graphs.good_supply[s]);
    }
    for (s, &v) in sellers.iter().enumerate() {
        net.add_arc(v, sink, graphs.good_supply[s]);
    }
    ClearingNetwork { network: net, nodes }
}

/// Splits an acyclic flow into source-sink paths and turns each path into
/// trades. Trades between the same pair are merged.
fn decompose(cn: &ClearingNetwork, arc_flow: &[f64], book: &OfferBook) -> TradeLedger {
    let net = &cn.network;
    let mut flow = arc_flow.to_vec();
    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); net.num_vertices()];
    for (i, a) in net.arcs.iter().enumerate() {
        out_arcs[a.from].push(i);
    }
    let mut merged: BTreeMap<(TraderId, TraderId, bool), f64> = BTreeMap::new();
    let mut order: Vec<(TraderId, TraderId, bool)> = Vec::new();
    let mut record = |key: (TraderId, TraderId, bool), v: f64| {
        let slot = merged.entry(key).or_insert(0.0);
        if *slot == 0.0 {
            order.push(key);
        }
        *slot += v;
    };

    loop {
        let mut path = Vec::new();
        let mut v = net.source;
        while v != net.sink {
            match out_arcs[v].iter().copied().find(|&i| flow[i] > TOL) {
                Some(i) => {
                    path.push(i);
                    v = net.arcs[i].to;
                }
                None => break,
            }
        }
        if path.is_empty() {
            break;
        }
        if v != net.sink {
            // round-off residue with nowhere to go
            flow[*path.last().unwrap()] = 0.0;
            continue;
        }
        let amount = path.iter().map(|&i| flow[i]).fold(f64::INFINITY, f64::min);
        for &i in &path {
            flow[i] -= amount;
        }
        let mut right_from = None;
        let mut buyer = None;
        let mut seller = None;
        for &i in &path {
            match cn.nodes[net.arcs[i].to] {
                Node::RightSeller(b) => right_from = Some(b),
                Node::Goods(b) => buyer = Some(b),
                Node::Seller(s) => seller = Some(s),
                _ => {}
            }
        }
        let (Some(b), Some(s)) = (buyer, seller) else { continue };
        if let Some(r) = right_from {
            record((TraderId::buyer(r), TraderId::buyer(b), true), amount);
        }
        record((TraderId::seller(s), TraderId::buyer(b), false), amount);
    }

    let mut ledger = TradeLedger::new();
    for key in order {
        let (seller, buyer, is_right) = key;
        let volume = merged[&key];
        if volume <= TOL {
            continue;
        }
        let (resource, unit_price) = if is_right {
            (Resource::Right, book.buyers[seller.index].right_sale_price)
        } else {
            (Resource::Good, book.sellers[seller.index].price)
        };
        ledger.push(Trade { seller, buyer, resource, volume, unit_price });
    }
    ledger
}

pub fn clear_maxflow_absolute(
    state: &MarketState,
    book: &OfferBook,
    rules: &ClearingRules,
) -> Result<TradeLedger, ClearingError> {
    check_shape(state, book)?;
    let cn = build_flow_network(state, book, rules);
    let flow = max_flow(&cn.network);
    Ok(decompose(&cn, &flow.arc_flow, book))
}
