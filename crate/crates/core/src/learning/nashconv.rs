//! Exploitability of a policy profile: the summed utility each trader gains
//! by training a best response while everyone else is frozen.
//!
//! Profiles are evaluated with mean actions, summing undiscounted utility
//! over the crisis. Gains below zero count as zero.

use super::policy::{check_dims, Acting, PolicySet, PolicyStrategy};
use super::td3::Learner;
use super::train::run_episodes;
use super::{LearningError, TrainConfig};
use crate::crisis::{run_crisis, CrisisConfig};
use crate::market::{Role, TraderId};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Mean per-trader crisis utility under mean actions, sellers first then
/// buyers. Rollout `i` always uses the same clearing randomness.
pub fn evaluate(
    policies: &PolicySet,
    crisis: &CrisisConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>, LearningError> {
    check_dims(policies, crisis)?;
    let mut total = vec![0.0; policies.sellers.len() + policies.buyers.len()];
    for i in 0..episodes {
        let mut strategy = PolicyStrategy::new(policies, Acting::Mean, ChaCha8Rng::seed_from_u64(seed));
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let u = run_crisis(crisis, &mut strategy, &mut rng)?.total_utilities();
        for (t, v) in total.iter_mut().zip(u.sellers.iter().chain(&u.buyers)) {
            *t += v / episodes as f64;
        }
    }
    Ok(total)
}

fn slot(policies: &PolicySet, id: TraderId) -> usize {
    match id.role {
        Role::Seller => id.index,
        Role::Buyer => policies.sellers.len() + id.index,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraderGain {
    pub trader: TraderId,
    pub incumbent: f64,
    pub best_response: f64,
    /// `max(best_response - incumbent, 0)`.
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashConvReport {
    pub total: f64,
    pub traders: Vec<TraderGain>,
}

/// Trains a best response for `trader` from its current actor and critics
/// and reports its clipped improvement. Independent across traders.
pub fn best_response_gain(
    policies: &PolicySet,
    crisis: &CrisisConfig,
    config: &TrainConfig,
    trader: TraderId,
    incumbent: &[f64],
    seed: u64,
) -> Result<TraderGain, LearningError> {
    let mut deviant = policies.clone();
    // restart from the saved parameters only: targets equal the online
    // networks and the optimizer moments are fresh
    let own = deviant.learner_mut(trader);
    *own = Learner::from_parts(own.actor.clone(), own.critics.clone(), config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (slot(policies, trader) as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    run_episodes(&mut deviant, crisis, config, &[trader], config.nashconv_episodes, &mut rng)?;
    let k = slot(policies, trader);
    let best_response = evaluate(&deviant, crisis, config.eval_episodes, seed)?[k];
    Ok(TraderGain {
        trader,
        incumbent: incumbent[k],
        best_response,
        gain: (best_response - incumbent[k]).max(0.0),
    })
}

pub fn nashconv(
    policies: &PolicySet,
    crisis: &CrisisConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<NashConvReport, LearningError> {
    let incumbent = evaluate(policies, crisis, config.eval_episodes, seed)?;
    let traders = policies
        .traders()
        .into_iter()
        .map(|t| best_response_gain(policies, crisis, config, t, &incumbent, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(NashConvReport { total: traders.iter().map(|t| t.gain).sum(), traders })
}
