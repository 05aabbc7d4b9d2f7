//! JSON checkpoints holding every trader's actor and online critics.

use super::actor::Actor;
use super::mlp::Mlp;
use super::policy::PolicySet;
use super::td3::Learner;
use super::{LearningError, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_FORMAT: &str = "critical-market-policies";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraderParams {
    pub actor: Actor,
    pub critics: [Mlp; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub train: TrainConfig,
    pub sellers: Vec<TraderParams>,
    pub buyers: Vec<TraderParams>,
}

impl Checkpoint {
    pub fn from_policies(policies: &PolicySet, train: &TrainConfig) -> Self {
        let params = |l: &Learner| TraderParams { actor: l.actor.clone(), critics: l.critics.clone() };
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            train: train.clone(),
            sellers: policies.sellers.iter().map(params).collect(),
            buyers: policies.buyers.iter().map(params).collect(),
        }
    }

    /// Rebuilds learners; optimizer state and targets start fresh.
    pub fn into_policies(self) -> PolicySet {
        let train = self.train;
        let learner = |p: TraderParams| Learner::from_parts(p.actor, p.critics, &train);
        PolicySet {
            sellers: self.sellers.into_iter().map(learner).collect(),
            buyers: self.buyers.into_iter().map(learner).collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, LearningError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| LearningError::Checkpoint(e.to_string()))?;
        if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(LearningError::Checkpoint(format!("not a {CHECKPOINT_FORMAT} file")));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(CHECKPOINT_VERSION as u64) {
            return Err(LearningError::Checkpoint(format!(
                "unsupported version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let cp: Checkpoint = serde_json::from_value(value).map_err(|e| LearningError::Checkpoint(e.to_string()))?;
        let nets = cp.sellers.iter().chain(&cp.buyers).flat_map(|p| p.actor.nets.iter().chain(&p.critics));
        if !nets.clone().all(Mlp::is_finite) {
            return Err(LearningError::Checkpoint("non-finite parameters".into()));
        }
        Ok(cp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }
}

pub fn save_checkpoint(path: &Path, policies: &PolicySet, train: &TrainConfig) -> Result<(), LearningError> {
    std::fs::write(path, Checkpoint::from_policies(policies, train).to_json())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(PolicySet, TrainConfig), LearningError> {
    let cp = Checkpoint::from_json(&std::fs::read_to_string(path)?)?;
    let train = cp.train.clone();
    Ok((cp.into_policies(), train))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clearing::Mechanism;
    use crate::crisis::{CrisisConfig, FairnessMode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn set() -> (PolicySet, TrainConfig) {
        let c = CrisisConfig {
            horizon: 2,
            repeats: 1,
            mechanism: Mechanism::Greedy,
            fairness: FairnessMode::Rights,
            earnings: vec![0.2, 0.1],
            resupply: vec![0.5],
            demands: vec![0.5, 1.5],
            price_cap: 1.0,
            storage_cost: -0.125,
            terminal_stock_value: 0.1,
            terminal_money_value: 1.0,
            discount: 0.99,
        };
        let t = TrainConfig { critic_hidden: 8, ..TrainConfig::default() };
        (PolicySet::new(&c, &t, &mut ChaCha8Rng::seed_from_u64(0)), t)
    }

    #[test]
    fn round_trip_is_exact() {
        let (p, t) = set();
        let cp = Checkpoint::from_policies(&p, &t);
        let back = Checkpoint::from_json(&cp.to_json()).unwrap();
        assert_eq!(back, cp);
        let q = back.into_policies();
        assert_eq!(q.buyers[1].actor, p.buyers[1].actor);
        assert_eq!(q.sellers[0].critic_targets, p.sellers[0].critics);
    }

    #[test]
    fn rejects_foreign_or_newer_files() {
        let (p, t) = set();
        let mut cp = Checkpoint::from_policies(&p, &t);
        cp.version = 99;
        assert!(Checkpoint::from_json(&cp.to_json()).is_err());
        assert!(Checkpoint::from_json("{\"format\":\"other\",\"version\":1}").is_err());
        assert!(Checkpoint::from_json("not json").is_err());
    }
}
