//! The set of per-trader learners and the [`Strategy`] that acts with them.
//!
//! Policies emit values in `[0, 1]` that are scaled into absolute actions:
//! seller volume is a share of the seller's stock and prices are shares of
//! the price cap; a buyer's right offer is a share of its rights, its
//! desired Right volume a share of what the other buyers offer, and its
//! desired Good volume a share of the Good on offer.

use super::actor::Actor;
use super::replay::Transition;
use super::td3::{sample_actions, Learner};
use super::{LearningError, TrainConfig};
use crate::crisis::{
    buyer_observation, others_right_offers, seller_observation, Bids, BuyerView, CrisisConfig, CrisisTrace, Strategy,
};
use crate::market::{MarketState, Role, SellerOffer, TraderId};
use ndarray::{s, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub fn seller_obs_dim(buyers: usize) -> usize {
    2 * buyers + 1
}

pub fn buyer_stage1_dim(sellers: usize) -> usize {
    2 * sellers + 3
}

pub fn buyer_others_dim(buyers: usize) -> usize {
    2 * (buyers - 1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicySet {
    pub sellers: Vec<Learner>,
    pub buyers: Vec<Learner>,
}

impl PolicySet {
    pub fn new<R: Rng + ?Sized>(crisis: &CrisisConfig, config: &TrainConfig, rng: &mut R) -> Self {
        let (nb, ns) = (crisis.num_buyers(), crisis.num_sellers());
        let sellers = (0..ns)
            .map(|_| {
                let actor = Actor::seller(seller_obs_dim(nb), config.actor_hidden, rng);
                Learner::new(actor, config, rng)
            })
            .collect();
        let buyers = (0..nb)
            .map(|_| {
                let actor = Actor::buyer(buyer_stage1_dim(ns), buyer_others_dim(nb), config.actor_hidden, rng);
                Learner::new(actor, config, rng)
            })
            .collect();
        PolicySet { sellers, buyers }
    }

    pub fn traders(&self) -> Vec<TraderId> {
        (0..self.sellers.len())
            .map(TraderId::seller)
            .chain((0..self.buyers.len()).map(TraderId::buyer))
            .collect()
    }

    pub fn learner(&self, id: TraderId) -> &Learner {
        match id.role {
            Role::Seller => &self.sellers[id.index],
            Role::Buyer => &self.buyers[id.index],
        }
    }

    pub fn learner_mut(&mut self, id: TraderId) -> &mut Learner {
        match id.role {
            Role::Seller => &mut self.sellers[id.index],
            Role::Buyer => &mut self.buyers[id.index],
        }
    }

    pub fn matches(&self, crisis: &CrisisConfig) -> bool {
        let (nb, ns) = (crisis.num_buyers(), crisis.num_sellers());
        self.sellers.len() == ns
            && self.buyers.len() == nb
            && self.sellers.iter().all(|l| l.actor.obs_dim() == seller_obs_dim(nb))
            && self.buyers.iter().all(|l| l.actor.obs_dim() == buyer_stage1_dim(ns) + buyer_others_dim(nb))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acting {
    /// Draw from the Gaussian policy.
    Sample,
    /// Play the mean action.
    Mean,
}

/// Observations and raw actions of the first buyers' stage of one market.
#[derive(Debug, Clone, Default)]
pub struct MarketRecord {
    pub seller_obs: Vec<Vec<f64>>,
    pub seller_actions: Vec<Vec<f64>>,
    /// Full buyer observations (stage one plus others' right offers).
    pub buyer_obs: Vec<Vec<f64>>,
    pub buyer_actions: Vec<Vec<f64>>,
}

pub struct PolicyStrategy<'a> {
    policies: &'a PolicySet,
    seller_modes: Vec<Acting>,
    buyer_modes: Vec<Acting>,
    rng: ChaCha8Rng,
    stage1: Vec<Vec<f64>>,
    pub records: Vec<MarketRecord>,
}

fn row(v: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

impl<'a> PolicyStrategy<'a> {
    pub fn new(policies: &'a PolicySet, mode: Acting, rng: ChaCha8Rng) -> Self {
        PolicyStrategy {
            seller_modes: vec![mode; policies.sellers.len()],
            buyer_modes: vec![mode; policies.buyers.len()],
            stage1: vec![Vec::new(); policies.buyers.len()],
            policies,
            rng,
            records: Vec::new(),
        }
    }

    pub fn set_mode(&mut self, id: TraderId, mode: Acting) {
        match id.role {
            Role::Seller => self.seller_modes[id.index] = mode,
            Role::Buyer => self.buyer_modes[id.index] = mode,
        }
    }

    fn pick(&mut self, mean: &Array2<f64>, std: &Array2<f64>, mode: Acting) -> Vec<f64> {
        match mode {
            Acting::Mean => mean.iter().copied().collect(),
            Acting::Sample => sample_actions(mean, std, &mut self.rng).0.iter().copied().collect(),
        }
    }

    fn current(&mut self) -> &mut MarketRecord {
        if self.records.is_empty() {
            self.records.push(MarketRecord::default());
        }
        self.records.last_mut().expect("non-empty")
    }

    /// Per-trader transitions of a finished crisis. The next observation of
    /// market `t` is the first-stage observation of market `t + 1`; the last
    /// market is terminal.
    pub fn transitions(&self, trace: &CrisisTrace) -> Vec<(TraderId, Transition)> {
        let mut out = Vec::new();
        let n = self.records.len();
        for (t, rec) in self.records.iter().enumerate() {
            let next = self.records.get(t + 1);
            let done = t + 1 == n;
            for (s, obs) in rec.seller_obs.iter().enumerate() {
                out.push((
                    TraderId::seller(s),
                    Transition {
                        obs: obs.clone(),
                        action: rec.seller_actions[s].clone(),
                        reward: trace.outcomes[t].utilities.sellers[s],
                        next_obs: next.map_or_else(|| vec![0.0; obs.len()], |r| r.seller_obs[s].clone()),
                        done,
                    },
                ));
            }
            for (b, obs) in rec.buyer_obs.iter().enumerate() {
                out.push((
                    TraderId::buyer(b),
                    Transition {
                        obs: obs.clone(),
                        action: rec.buyer_actions[b].clone(),
                        reward: trace.outcomes[t].utilities.buyers[b],
                        next_obs: next.map_or_else(|| vec![0.0; obs.len()], |r| r.buyer_obs[b].clone()),
                        done,
                    },
                ));
            }
        }
        out
    }
}

impl Strategy for PolicyStrategy<'_> {
    fn begin_market(&mut self, _market: usize, state: &MarketState) {
        let (nb, ns) = (state.num_buyers(), state.num_sellers());
        self.records.push(MarketRecord {
            seller_obs: Vec::with_capacity(ns),
            seller_actions: Vec::with_capacity(ns),
            buyer_obs: vec![Vec::new(); nb],
            buyer_actions: vec![Vec::new(); nb],
        });
    }

    fn sell(&mut self, seller: usize, state: &MarketState, config: &CrisisConfig) -> SellerOffer {
        let obs = seller_observation(state, seller);
        let pass = self.policies.sellers[seller].actor.forward(row(&obs).view()).expect("seller observation width");
        let raw = self.pick(&pass.mean, &pass.std, self.seller_modes[seller]);
        let offer = SellerOffer { volume: raw[0] * state.seller_good[seller], price: raw[1] * config.price_cap };
        let rec = self.current();
        rec.seller_obs.push(obs);
        rec.seller_actions.push(raw);
        offer
    }

    fn offer_rights(&mut self, buyer: usize, view: &BuyerView<'_>) -> (f64, f64) {
        let obs1 = buyer_observation(view, buyer);
        let (mean, std) = self.policies.buyers[buyer].actor.stage1(row(&obs1).view()).expect("buyer observation width");
        let raw = self.pick(&mean, &std, self.buyer_modes[buyer]);
        let held = *obs1.last().expect("rights component");
        let offer = (raw[0] * held, raw[1] * view.price_cap);
        self.stage1[buyer] = raw;
        offer
    }

    fn bid(&mut self, buyer: usize, view: &BuyerView<'_>, right_offers: &[(f64, f64)]) -> Bids {
        let mut obs = buyer_observation(view, buyer);
        obs.extend(others_right_offers(right_offers, buyer));
        let pass = self.policies.buyers[buyer].actor.forward(row(&obs).view()).expect("buyer observation width");
        let mean = pass.mean.slice(s![.., 2..]).to_owned();
        let std = pass.std.slice(s![.., 2..]).to_owned();
        let tail = self.pick(&mean, &std, self.buyer_modes[buyer]);
        let rights_for_sale: f64 =
            right_offers.iter().enumerate().filter(|(i, _)| *i != buyer).map(|(_, o)| o.0).sum();
        let good_for_sale: f64 = view.offers.iter().map(|o| o.volume).sum();
        let bids = Bids {
            right_volume: tail[0] * rights_for_sale,
            right_price: tail[1] * view.price_cap,
            good_volume: tail[2] * good_for_sale,
            good_price: tail[3] * view.price_cap,
        };
        if view.round == 0 {
            if self.stage1[buyer].is_empty() {
                // free market: no right offer was asked for, but the record
                // keeps the full action shape
                let m1 = pass.mean.slice(s![.., ..2]).to_owned();
                let s1 = pass.std.slice(s![.., ..2]).to_owned();
                self.stage1[buyer] = self.pick(&m1, &s1, self.buyer_modes[buyer]);
            }
            let mut action = std::mem::take(&mut self.stage1[buyer]);
            action.extend(tail);
            let rec = self.current();
            rec.buyer_obs[buyer] = obs;
            rec.buyer_actions[buyer] = action;
        }
        bids
    }
}

/// Draws a fresh per-episode generator for a strategy.
pub fn strategy_rng<R: Rng + ?Sized>(rng: &mut R) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(rng.random())
}

pub(crate) fn check_dims(policies: &PolicySet, crisis: &CrisisConfig) -> Result<(), LearningError> {
    if policies.matches(crisis) {
        Ok(())
    } else {
        Err(LearningError::Config(format!(
            "policies for {} sellers / {} buyers do not fit a crisis with {} / {}",
            policies.sellers.len(),
            policies.buyers.len(),
            crisis.num_sellers(),
            crisis.num_buyers()
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::Mechanism;
    use crate::crisis::{run_crisis, FairnessMode};
    use rand::SeedableRng;

    pub fn crisis(fairness: FairnessMode, repeats: usize) -> CrisisConfig {
        CrisisConfig {
            horizon: 3,
            repeats,
            mechanism: Mechanism::Greedy,
            fairness,
            earnings: vec![0.2, 0.1, 0.1],
            resupply: vec![0.5, 0.5],
            demands: vec![0.5, 1.0, 1.5],
            price_cap: 1.0,
            storage_cost: -0.125,
            terminal_stock_value: 0.1,
            terminal_money_value: 1.0,
            discount: 0.99,
        }
    }

    fn small() -> TrainConfig {
        TrainConfig { critic_hidden: 16, ..TrainConfig::default() }
    }

    #[test]
    fn sampled_actions_stay_legal() {
        let c = crisis(FairnessMode::Rights, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let set = PolicySet::new(&c, &small(), &mut rng);
        for seed in 0..20 {
            let mut strat = PolicyStrategy::new(&set, Acting::Sample, ChaCha8Rng::seed_from_u64(seed));
            let trace = run_crisis(&c, &mut strat, &mut rng).unwrap();
            for o in &trace.outcomes {
                for (offer, held) in o.offers.iter().zip(&o.start_state.seller_good) {
                    assert!(offer.volume <= *held + 1e-12 && offer.price <= c.price_cap);
                }
                for r in &o.rounds {
                    for (b, a) in r.book.buyers.iter().enumerate() {
                        assert!(a.right_sale_volume <= o.rights[b] + 1e-12);
                        assert!(a.to_array().iter().all(|v| *v >= 0.0));
                        assert!(a.good_bid_price <= c.price_cap && a.right_bid_price <= c.price_cap);
                    }
                }
            }
            for rec in &strat.records {
                assert!(rec.seller_actions.iter().chain(&rec.buyer_actions).flatten().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn one_transition_per_trader_and_market() {
        let c = crisis(FairnessMode::Rights, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let set = PolicySet::new(&c, &small(), &mut rng);
        let mut strat = PolicyStrategy::new(&set, Acting::Sample, ChaCha8Rng::seed_from_u64(3));
        let trace = run_crisis(&c, &mut strat, &mut rng).unwrap();
        let ts = strat.transitions(&trace);
        let sellers = ts.iter().filter(|(id, _)| !id.is_buyer()).count();
        assert_eq!(sellers, c.num_sellers() * c.horizon);
        assert_eq!(ts.len() - sellers, c.num_buyers() * c.horizon);
        for (id, t) in &ts {
            let width = if id.is_buyer() { buyer_stage1_dim(2) + buyer_others_dim(3) } else { seller_obs_dim(3) };
            assert_eq!(t.obs.len(), width);
            assert_eq!(t.next_obs.len(), width);
            assert_eq!(t.action.len(), if id.is_buyer() { 6 } else { 2 });
        }
        assert_eq!(ts.iter().filter(|(_, t)| t.done).count(), 5);
        // chained observations
        let b0: Vec<&Transition> = ts.iter().filter(|(id, _)| *id == TraderId::buyer(0)).map(|(_, t)| t).collect();
        assert_eq!(b0[0].next_obs, b0[1].obs);
    }

    #[test]
    fn free_market_never_trades_rights() {
        let c = crisis(FairnessMode::FreeMarket, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set = PolicySet::new(&c, &small(), &mut rng);
        let mut strat = PolicyStrategy::new(&set, Acting::Sample, ChaCha8Rng::seed_from_u64(4));
        let trace = run_crisis(&c, &mut strat, &mut rng).unwrap();
        assert!(trace.outcomes.iter().all(|o| o.ledger.right_volume() == 0.0));
        assert!(strat.transitions(&trace).iter().all(|(id, t)| t.action.len() == if id.is_buyer() { 6 } else { 2 }));
    }

    #[test]
    fn mean_acting_is_deterministic() {
        let c = crisis(FairnessMode::Rights, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let set = PolicySet::new(&c, &small(), &mut rng);
        let run = |seed| {
            let mut strat = PolicyStrategy::new(&set, Acting::Mean, ChaCha8Rng::seed_from_u64(seed));
            run_crisis(&c, &mut strat, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
        };
        assert_eq!(run(1), run(2));
    }
}
