//! TOML run configuration. Every section is optional; command-line flags
//! override the file.
//!
//! ```toml
//! seed = 7
//! workers = 2
//!
//! [instance]        # InstanceSpec
//! num_buyers = 4
//! num_sellers = 4
//! roles = { kind = "fixed" }
//!
//! [train]           # TrainConfig
//! episodes = 300
//!
//! [market]          # single-crisis commands
//! mechanism = "greedy"
//! fairness = "rights"
//! repeats = 1
//!
//! [plan]            # sweep
//! mechanisms = ["greedy"]
//! settings = ["free-market", "rights-k1", "rights-k2"]
//! traders = [[4, 4]]
//! repetitions = 3
//! nashconv = true
//! ```

use crate::instance::InstanceSpec;
use critical_market::clearing::Mechanism;
use critical_market::crisis::FairnessMode;
use critical_market::learning::TrainConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// A fairness regime together with the number of buyers' stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Setting {
    pub fairness: FairnessMode,
    pub repeats: usize,
}

impl Setting {
    pub const FREE_MARKET: Setting = Setting { fairness: FairnessMode::FreeMarket, repeats: 1 };

    pub fn rights(repeats: usize) -> Setting {
        Setting { fairness: FairnessMode::Rights, repeats }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.fairness {
            FairnessMode::FreeMarket if self.repeats == 1 => f.write_str("free-market"),
            FairnessMode::FreeMarket => write!(f, "free-market-k{}", self.repeats),
            FairnessMode::Rights => write!(f, "rights-k{}", self.repeats),
        }
    }
}

impl FromStr for Setting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "free-market" {
            return Ok(Setting::FREE_MARKET);
        }
        let (fairness, k) = if let Some(k) = s.strip_prefix("free-market-k") {
            (FairnessMode::FreeMarket, k)
        } else if let Some(k) = s.strip_prefix("rights-k") {
            (FairnessMode::Rights, k)
        } else {
            return Err(format!("unknown setting `{s}` (expected free-market or rights-k<N>)"));
        };
        match k.parse::<usize>() {
            Ok(repeats) if repeats >= 1 => Ok(Setting { fairness, repeats }),
            _ => Err(format!("bad stage count in `{s}`")),
        }
    }
}

impl Serialize for Setting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketSettings {
    pub mechanism: Mechanism,
    pub fairness: FairnessMode,
    pub repeats: usize,
}

impl Default for MarketSettings {
    fn default() -> Self {
        MarketSettings { mechanism: Mechanism::Greedy, fairness: FairnessMode::Rights, repeats: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub mechanisms: Vec<Mechanism>,
    pub settings: Vec<Setting>,
    /// `(buyers, sellers)` pairs.
    pub traders: Vec<(usize, usize)>,
    /// Independent instance-and-learner draws per combination.
    pub repetitions: usize,
    /// Overrides `train.episodes` for the sweep.
    pub episodes: Option<usize>,
    pub nashconv: bool,
    /// Also measure the exploitability of the untrained profile.
    pub initial_nashconv: bool,
}

impl Default for PlanConfig {
    fn default() -> Self {
        PlanConfig {
            mechanisms: vec![Mechanism::Greedy],
            settings: vec![Setting::FREE_MARKET, Setting::rights(1), Setting::rights(2)],
            traders: vec![(4, 4)],
            repetitions: 3,
            episodes: None,
            nashconv: false,
            initial_nashconv: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub instance: InstanceSpec,
    pub train: TrainConfig,
    pub market: MarketSettings,
    pub plan: PlanConfig,
}

impl FileConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}
