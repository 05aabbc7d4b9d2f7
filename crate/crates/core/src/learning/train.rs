//! The training loop: roll out a crisis with sampled actions, store one
//! transition per trader and market, and update the learners.

use super::policy::{check_dims, strategy_rng, Acting, PolicySet, PolicyStrategy};
use super::replay::ReplayBuffer;
use super::{LearningError, TrainConfig};
use crate::crisis::{run_crisis, CrisisConfig, CrisisTrace, Utilities};
use crate::market::{Role, TraderId};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    pub poa: f64,
    /// Mean asking price for Good over sellers and markets.
    pub mean_ask: f64,
    /// Mean asking price of Rights actually put up for sale, if any were.
    pub mean_right_ask: Option<f64>,
    pub cleared_volume: f64,
    /// Per-buyer frustration averaged over the markets.
    pub frustration: Vec<f64>,
    pub returns: Utilities,
}

impl EpisodeMetrics {
    pub fn from_trace(episode: usize, trace: &CrisisTrace) -> Self {
        let asks: Vec<f64> = trace.outcomes.iter().flat_map(|o| o.offers.iter().map(|x| x.price)).collect();
        let right_asks: Vec<f64> = trace
            .outcomes
            .iter()
            .flat_map(|o| o.rounds.iter().flat_map(|r| r.book.buyers.iter()))
            .filter(|a| a.right_sale_volume > 0.0)
            .map(|a| a.right_sale_price)
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        EpisodeMetrics {
            episode,
            poa: trace.poa,
            mean_ask: if asks.is_empty() { 0.0 } else { mean(&asks) },
            mean_right_ask: (!right_asks.is_empty()).then(|| mean(&right_asks)),
            cleared_volume: trace.outcomes.iter().map(|o| o.cleared_good_volume).sum(),
            frustration: (0..trace.discounted_returns.buyers.len())
                .map(|b| trace.outcomes.iter().map(|o| o.frustrations.per_buyer[b]).sum::<f64>() / trace.outcomes.len() as f64)
                .collect(),
            returns: trace.discounted_returns.clone(),
        }
    }
}

pub struct TrainOutcome {
    pub policies: PolicySet,
    pub curve: Vec<EpisodeMetrics>,
}

/// Replay storage: one buffer shared by all sellers, one per buyer.
struct Buffers {
    sellers: ReplayBuffer,
    buyers: Vec<ReplayBuffer>,
}

impl Buffers {
    fn for_trader(&self, id: TraderId) -> &ReplayBuffer {
        match id.role {
            Role::Seller => &self.sellers,
            Role::Buyer => &self.buyers[id.index],
        }
    }
}

/// Runs `episodes` crises, training only `learners`; everyone else plays
/// mean actions.
pub(crate) fn run_episodes<R: Rng + ?Sized>(
    policies: &mut PolicySet,
    crisis: &CrisisConfig,
    config: &TrainConfig,
    learners: &[TraderId],
    episodes: usize,
    rng: &mut R,
) -> Result<Vec<EpisodeMetrics>, LearningError> {
    config.validate()?;
    crisis.validate()?;
    check_dims(policies, crisis)?;
    let mut buffers = Buffers {
        sellers: ReplayBuffer::new(config.buffer_capacity),
        buyers: (0..crisis.num_buyers()).map(|_| ReplayBuffer::new(config.buffer_capacity)).collect(),
    };
    let events = (crisis.horizon / config.train_interval.unwrap_or(crisis.horizon)).max(1);
    let mut curve = Vec::with_capacity(episodes);
    for episode in 0..episodes {
        let mut strategy = PolicyStrategy::new(policies, Acting::Mean, strategy_rng(rng));
        for &id in learners {
            strategy.set_mode(id, Acting::Sample);
        }
        let trace = run_crisis(crisis, &mut strategy, rng)?;
        for (id, t) in strategy.transitions(&trace) {
            if learners.contains(&id) {
                match id.role {
                    Role::Seller => buffers.sellers.push(t),
                    Role::Buyer => buffers.buyers[id.index].push(t),
                }
            }
        }
        curve.push(EpisodeMetrics::from_trace(episode, &trace));

        for _ in 0..events * config.updates_per_train {
            for &id in learners {
                let buffer = buffers.for_trader(id);
                if buffer.len() >= config.warmup.max(1) {
                    let batch = buffer.sample(config.batch_size, rng);
                    policies.learner_mut(id).update(&batch, config, rng)?;
                }
            }
        }
    }
    Ok(curve)
}

/// Trains every trader of an existing profile for `config.episodes` crises.
pub fn train_policies<R: Rng + ?Sized>(
    policies: &mut PolicySet,
    crisis: &CrisisConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<EpisodeMetrics>, LearningError> {
    let everyone = policies.traders();
    run_episodes(policies, crisis, config, &everyone, config.episodes, rng)
}

pub fn train<R: Rng + ?Sized>(
    crisis: &CrisisConfig,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainOutcome, LearningError> {
    let mut policies = PolicySet::new(crisis, config, rng);
    let curve = train_policies(&mut policies, crisis, config, rng)?;
    Ok(TrainOutcome { policies, curve })
}

pub const CURVE_CSV_HEADER: &str = "episode,trader,return,poa,nashconv";

/// One row per trader and episode; the exploitability column is left empty
/// except where a value is supplied for that episode.
pub fn curve_csv(curve: &[EpisodeMetrics], nashconv: &[(usize, f64)]) -> String {
    let mut out = String::from(CURVE_CSV_HEADER);
    out.push('\n');
    for m in curve {
        let nc = nashconv.iter().find(|(e, _)| *e == m.episode).map(|(_, v)| v.to_string()).unwrap_or_default();
        let traders = m
            .returns
            .sellers
            .iter()
            .enumerate()
            .map(|(i, r)| (TraderId::seller(i), r))
            .chain(m.returns.buyers.iter().enumerate().map(|(i, r)| (TraderId::buyer(i), r)));
        for (id, r) in traders {
            let _ = writeln!(out, "{},{id},{r},{},{nc}", m.episode, m.poa);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::Mechanism;
    use crate::crisis::FairnessMode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn crisis() -> CrisisConfig {
        CrisisConfig {
            horizon: 3,
            repeats: 1,
            mechanism: Mechanism::Greedy,
            fairness: FairnessMode::Rights,
            earnings: vec![0.2, 0.1],
            resupply: vec![0.5, 0.5],
            demands: vec![0.5, 1.5],
            price_cap: 1.0,
            storage_cost: -0.125,
            terminal_stock_value: 0.1,
            terminal_money_value: 1.0,
            discount: 0.99,
        }
    }

    fn small(episodes: usize) -> TrainConfig {
        TrainConfig { critic_hidden: 16, batch_size: 32, warmup: 8, episodes, ..TrainConfig::default() }
    }

    #[test]
    fn zero_episodes_returns_initial_policies() {
        let c = crisis();
        let trained = train(&c, &small(0), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let fresh = PolicySet::new(&c, &small(0), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(trained.curve.is_empty());
        for (a, b) in trained.policies.buyers.iter().zip(&fresh.buyers) {
            assert_eq!(a.actor, b.actor);
            assert_eq!(a.critics, b.critics);
        }
    }

    #[test]
    fn fixed_seed_reproduces_learning_curve() {
        let c = crisis();
        let run = || train(&c, &small(12), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let (a, b) = (run(), run());
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policies.sellers[1].actor, b.policies.sellers[1].actor);
        assert_ne!(a.policies.sellers[1].actor, PolicySet::new(&c, &small(0), &mut ChaCha8Rng::seed_from_u64(7)).sellers[1].actor);
    }

    #[test]
    fn frozen_traders_do_not_move() {
        let c = crisis();
        let config = small(6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut set = PolicySet::new(&c, &config, &mut rng);
        let before = set.clone();
        run_episodes(&mut set, &c, &config, &[TraderId::buyer(1)], 6, &mut rng).unwrap();
        assert_eq!(set.buyers[0].actor, before.buyers[0].actor);
        assert_eq!(set.sellers[0].critics, before.sellers[0].critics);
        assert_ne!(set.buyers[1].critics, before.buyers[1].critics);
    }

    #[test]
    fn prices_stay_within_cap() {
        let c = crisis();
        let out = train(&c, &small(5), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(out.curve.iter().all(|m| (0.0..=c.price_cap).contains(&m.mean_ask)));
        let csv = curve_csv(&out.curve, &[(4, 0.5)]);
        assert_eq!(csv.lines().count(), 1 + 5 * 4);
        assert!(csv.lines().last().unwrap().ends_with(",0.5"));
    }
}
