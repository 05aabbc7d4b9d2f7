//! Rich/poor buyer instances.
//!
//! Rich buyers have modest demand and large earnings, poor buyers the
//! reverse. Demands and earnings are rescaled so their buyer means hit fixed
//! targets exactly; every seller is resupplied `1 / |S|` per market.

use critical_market::clearing::Mechanism;
use critical_market::crisis::{CrisisConfig, FairnessMode};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Roles {
    /// Every buyer rich except the last.
    Fixed,
    /// Each buyer independently rich with the given probability.
    Random { rich_probability: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InstanceSpec {
    pub num_buyers: usize,
    pub num_sellers: usize,
    pub roles: Roles,
    pub rich_demand: (f64, f64),
    pub rich_earning: (f64, f64),
    pub poor_demand: (f64, f64),
    pub poor_earning: (f64, f64),
    pub mean_demand: f64,
    pub mean_earning: f64,
    pub price_cap: f64,
    pub storage_cost: f64,
    pub terminal_stock_value: f64,
    pub terminal_money_value: f64,
    pub horizon: usize,
    pub discount: f64,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        InstanceSpec {
            num_buyers: 4,
            num_sellers: 4,
            roles: Roles::Fixed,
            rich_demand: (1.0, 2.0),
            rich_earning: (4.0, 6.0),
            poor_demand: (4.0, 6.0),
            poor_earning: (1.0, 2.0),
            mean_demand: 1.0,
            mean_earning: 0.125,
            price_cap: 1.0,
            storage_cost: -0.125,
            terminal_stock_value: 0.5,
            terminal_money_value: 1.0,
            horizon: 10,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub config: CrisisConfig,
    /// Whether each buyer was drawn as rich.
    pub rich: Vec<bool>,
    /// Demands before rescaling.
    pub raw_demands: Vec<f64>,
}

impl InstanceSpec {
    pub fn with_traders(mut self, buyers: usize, sellers: usize) -> Self {
        self.num_buyers = buyers;
        self.num_sellers = sellers;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.num_buyers < 2 || self.num_sellers < 1 {
            return Err(format!(
                "need at least 2 buyers and 1 seller, got {} and {}",
                self.num_buyers, self.num_sellers
            ));
        }
        for (name, (lo, hi)) in [
            ("rich_demand", self.rich_demand),
            ("rich_earning", self.rich_earning),
            ("poor_demand", self.poor_demand),
            ("poor_earning", self.poor_earning),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(format!("{name} must be a positive range, got ({lo}, {hi})"));
            }
        }
        if let Roles::Random { rich_probability: p } = self.roles {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("rich probability must lie in [0, 1], got {p}"));
            }
        }
        if !(self.mean_demand > 0.0 && self.mean_earning > 0.0) {
            return Err("normalization targets must be positive".into());
        }
        Ok(())
    }
}

fn draw<R: Rng + ?Sized>((lo, hi): (f64, f64), rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn rescale(values: &mut [f64], target_mean: f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    for v in values {
        *v *= target_mean / mean;
    }
}

pub fn generate_instance<R: Rng + ?Sized>(
    spec: &InstanceSpec,
    mechanism: Mechanism,
    fairness: FairnessMode,
    repeats: usize,
    rng: &mut R,
) -> Result<Instance, String> {
    spec.validate()?;
    let n = spec.num_buyers;
    loop {
        let rich: Vec<bool> = match spec.roles {
            Roles::Fixed => (0..n).map(|b| b + 1 < n).collect(),
            Roles::Random { rich_probability } => (0..n).map(|_| rng.random_bool(rich_probability)).collect(),
        };
        let mut demands = Vec::with_capacity(n);
        let mut earnings = Vec::with_capacity(n);
        for &r in &rich {
            let (d, m) = if r { (spec.rich_demand, spec.rich_earning) } else { (spec.poor_demand, spec.poor_earning) };
            demands.push(draw(d, rng));
            earnings.push(draw(m, rng));
        }
        if demands.iter().sum::<f64>() <= 0.0 || earnings.iter().sum::<f64>() <= 0.0 {
            continue;
        }
        let raw_demands = demands.clone();
        rescale(&mut demands, spec.mean_demand);
        rescale(&mut earnings, spec.mean_earning);
        let config = CrisisConfig {
            horizon: spec.horizon,
            repeats,
            mechanism,
            fairness,
            earnings,
            resupply: vec![1.0 / spec.num_sellers as f64; spec.num_sellers],
            demands,
            price_cap: spec.price_cap,
            storage_cost: spec.storage_cost,
            terminal_stock_value: spec.terminal_stock_value,
            terminal_money_value: spec.terminal_money_value,
            discount: spec.discount,
        };
        config.validate().map_err(|e| e.to_string())?;
        return Ok(Instance { config, rich, raw_demands });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gen(spec: &InstanceSpec, seed: u64) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_instance(spec, Mechanism::Greedy, FairnessMode::Rights, 1, &mut rng).unwrap()
    }

    #[test]
    fn fixed_roles_have_one_poor_last_buyer() {
        for seed in 0..50 {
            let inst = gen(&InstanceSpec::default(), seed);
            assert_eq!(inst.rich, vec![true, true, true, false]);
            assert!((4.0..=6.0).contains(&inst.raw_demands[3]));
            assert!(inst.raw_demands[..3].iter().all(|d| (1.0..=2.0).contains(d)));
        }
    }

    #[test]
    fn means_hit_targets() {
        let spec = InstanceSpec { roles: Roles::Random { rich_probability: 0.75 }, ..InstanceSpec::default() }
            .with_traders(8, 8);
        for seed in 0..50 {
            let c = gen(&spec, seed).config;
            let md = c.demands.iter().sum::<f64>() / 8.0;
            let mm = c.earnings.iter().sum::<f64>() / 8.0;
            assert!((md - 1.0).abs() < 1e-9 && (mm - 0.125).abs() < 1e-9);
            assert_eq!(c.resupply, vec![0.125; 8]);
        }
    }

    #[test]
    fn seed_replay_gives_same_instance() {
        let spec = InstanceSpec::default();
        assert_eq!(gen(&spec, 9), gen(&spec, 9));
        assert_ne!(gen(&spec, 9), gen(&spec, 10));
    }

    #[test]
    fn default_constants_prevent_hoarding() {
        let c = gen(&InstanceSpec::default(), 0).config;
        assert!(c.validate().is_ok());
        assert_eq!((c.horizon, c.price_cap, c.storage_cost, c.terminal_stock_value), (10, 1.0, -0.125, 0.5));
    }

    #[test]
    fn rejects_single_buyer() {
        let spec = InstanceSpec::default().with_traders(1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_instance(&spec, Mechanism::Greedy, FairnessMode::Rights, 1, &mut rng).is_err());
    }
}
