//! Twin-delayed actor-critic updates for one trader.
//!
//! Critics regress `clip(r) + gamma (1 - done) min(Q1', Q2')` evaluated at an
//! action drawn from the target policy. Every few critic steps the actor
//! follows the gradient of `Q1` at a reparameterised sample, restricted to
//! samples that the critic rates above the mean action, plus an entropy
//! bonus; target networks are then Polyak-averaged.

use super::actor::{Actor, ActorOptimizer};
use super::adam::Adam;
use super::mlp::{Activation, Mlp};
use super::replay::Batch;
use super::{LearningError, TrainConfig};
use ndarray::{concatenate, s, Array2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Learner {
    pub actor: Actor,
    pub actor_target: Actor,
    pub critics: [Mlp; 2],
    pub critic_targets: [Mlp; 2],
    pub actor_opt: ActorOptimizer,
    pub critic_opt: [Adam; 2],
    pub critic_steps: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_updated: bool,
    /// Share of the batch that passed the upgoing filter.
    pub upgoing_fraction: f64,
}

pub fn new_critic<R: Rng + ?Sized>(obs_dim: usize, action_dim: usize, hidden: usize, rng: &mut R) -> Mlp {
    Mlp::new(&[obs_dim + action_dim, hidden, hidden, 1], Activation::Relu, Activation::Identity, rng)
}

/// Draws `clip(mean + std * eps, 0, 1)`; also returns the noise.
pub fn sample_actions<R: Rng + ?Sized>(mean: &Array2<f64>, std: &Array2<f64>, rng: &mut R) -> (Array2<f64>, Array2<f64>) {
    let eps = Array2::from_shape_fn(mean.raw_dim(), |_| rng.sample::<f64, _>(StandardNormal));
    let a = (mean + &(std * &eps)).mapv(|v| v.clamp(0.0, 1.0));
    (a, eps)
}

fn join(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a.view(), b.view()]).expect("same batch size")
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(actor: Actor, config: &TrainConfig, rng: &mut R) -> Self {
        let critics = [
            new_critic(actor.obs_dim(), actor.action_dim(), config.critic_hidden, rng),
            new_critic(actor.obs_dim(), actor.action_dim(), config.critic_hidden, rng),
        ];
        Self::from_parts(actor, critics, config)
    }

    /// Fresh optimizers and targets equal to the online networks.
    pub fn from_parts(actor: Actor, critics: [Mlp; 2], config: &TrainConfig) -> Self {
        Learner {
            actor_target: actor.clone(),
            actor_opt: ActorOptimizer::new(&actor, config.actor_lr),
            critic_opt: [Adam::new(&critics[0], config.critic_lr), Adam::new(&critics[1], config.critic_lr)],
            critic_targets: critics.clone(),
            critics,
            actor,
            critic_steps: 0,
        }
    }

    pub fn q1(&self, obs: &Array2<f64>, action: &Array2<f64>) -> Result<Array2<f64>, LearningError> {
        self.critics[0].forward(join(obs, action).view())
    }

    pub fn is_finite(&self) -> bool {
        self.actor.is_finite()
            && self.actor_target.is_finite()
            && self.critics.iter().chain(&self.critic_targets).all(Mlp::is_finite)
    }

    pub fn update<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        config: &TrainConfig,
        rng: &mut R,
    ) -> Result<UpdateStats, LearningError> {
        let n = batch.len();
        if n == 0 {
            return Ok(UpdateStats::default());
        }
        let target_pass = self.actor_target.forward(batch.next_obs.view())?;
        let (next_action, _) = sample_actions(&target_pass.mean, &target_pass.std, rng);
        let next_x = join(&batch.next_obs, &next_action);
        let q1n = self.critic_targets[0].forward(next_x.view())?;
        let q2n = self.critic_targets[1].forward(next_x.view())?;
        let clip = config.reward_clip;
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let r = batch.reward[i].clamp(-clip, clip);
                let cont = if batch.done[i] { 0.0 } else { 1.0 };
                r + config.discount * cont * q1n[[i, 0]].min(q2n[[i, 0]])
            })
            .collect();

        let x = join(&batch.obs, &batch.action);
        let mut critic_loss = 0.0;
        for k in 0..2 {
            let cache = self.critics[k].forward_cached(x.view())?;
            let q = cache.output();
            let mut upstream = Array2::zeros((n, 1));
            for i in 0..n {
                let d = q[[i, 0]] - y[i];
                critic_loss += d * d / (2.0 * n as f64);
                upstream[[i, 0]] = 2.0 * d / n as f64;
            }
            let (mut g, _) = self.critics[k].backward_cached(&cache, upstream.view());
            self.critics[k].add_l2_gradient(&mut g, config.l2_penalty);
            self.critic_opt[k].step(&mut self.critics[k], &g);
        }
        self.critic_steps += 1;

        let mut stats = UpdateStats { critic_loss, ..Default::default() };
        if self.critic_steps.is_multiple_of(config.actor_frequency as u64) {
            stats.upgoing_fraction = self.actor_step(batch, config, rng)?;
            stats.actor_updated = true;
            self.actor_target.polyak(&self.actor, config.target_rate);
            for k in 0..2 {
                self.critic_targets[k].polyak(&self.critics[k], config.target_rate);
            }
        }
        if !self.is_finite() {
            return Err(LearningError::NonFinite { step: self.critic_steps });
        }
        Ok(stats)
    }

    fn actor_step<R: Rng + ?Sized>(&mut self, batch: &Batch, config: &TrainConfig, rng: &mut R) -> Result<f64, LearningError> {
        let n = batch.len() as f64;
        let od = batch.obs.ncols();
        let pass = self.actor.forward(batch.obs.view())?;
        let (action, eps) = sample_actions(&pass.mean, &pass.std, rng);
        let raw = &pass.mean + &(&pass.std * &eps);
        let cache = self.critics[0].forward_cached(join(&batch.obs, &action).view())?;
        let q_mean = self.q1(&batch.obs, &pass.mean)?;
        let q_sample = cache.output();

        let mut upstream = Array2::zeros((batch.len(), 1));
        let mut kept = 0usize;
        for i in 0..batch.len() {
            if q_sample[[i, 0]] > q_mean[[i, 0]] {
                upstream[[i, 0]] = -1.0 / n;
                kept += 1;
            }
        }
        let (_, dx) = self.critics[0].backward_cached(&cache, upstream.view());
        let mut d_action = dx.slice(s![.., od..]).to_owned();
        // no gradient through the clip
        d_action.zip_mut_with(&raw, |g, &r| {
            if !(0.0..=1.0).contains(&r) {
                *g = 0.0
            }
        });
        let d_mean = d_action.clone();
        let d_std = &d_action * &eps - &pass.std.mapv(|s| config.entropy_bonus / (n * s));
        let mut grads = self.actor.backward(&pass, d_mean.view(), d_std.view());
        self.actor.add_l2_gradient(&mut grads, config.l2_penalty);
        self.actor_opt.step(&mut self.actor, &grads);
        Ok(kept as f64 / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::mlp::tests::{numeric_grads, random_matrix, rel_error, flatten};
    use crate::learning::replay::{ReplayBuffer, Transition};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> TrainConfig {
        TrainConfig { critic_hidden: 16, actor_hidden: 8, l2_penalty: 0.0, ..TrainConfig::default() }
    }

    fn repeated(reward: f64, done: bool, n: usize) -> Batch {
        let t = Transition { obs: vec![0.2, 0.4, 0.1], action: vec![0.5, 0.5], reward, next_obs: vec![0.2, 0.4, 0.1], done };
        Batch::from_transitions(&vec![&t; n])
    }

    #[test]
    fn critic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let critic = new_critic(5, 2, 12, &mut rng);
            let x = random_matrix(4, 7, &mut rng);
            let up = random_matrix(4, 1, &mut rng);
            let (g, _) = critic.backward(x.view(), up.view()).unwrap();
            let f = |n: &Mlp| (n.forward(x.view()).unwrap() * &up).sum();
            for (a, b) in flatten(&g).iter().zip(numeric_grads(&critic, &f, 1e-5)) {
                assert!(rel_error(*a, b) < 1e-4);
            }
        }
    }

    #[test]
    fn zero_learning_rates_leave_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let config = TrainConfig { actor_lr: 0.0, critic_lr: 0.0, ..small_config() };
        let mut l = Learner::new(Actor::seller(3, 8, &mut rng), &config, &mut rng);
        let before = (l.actor.clone(), l.critics.clone(), l.critic_targets.clone(), l.actor_target.clone());
        let batch = repeated(0.3, false, 16);
        for _ in 0..6 {
            l.update(&batch, &config, &mut rng).unwrap();
        }
        assert_eq!((l.actor.clone(), l.critics.clone(), l.critic_targets.clone(), l.actor_target.clone()), before);
    }

    #[test]
    fn terminal_critic_learns_clipped_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = small_config();
        for (reward, expect) in [(0.4, 0.4), (5.0, 1.0), (-3.0, -1.0)] {
            let mut l = Learner::new(Actor::seller(3, 8, &mut rng), &config, &mut rng);
            let batch = repeated(reward, true, 16);
            for _ in 0..3000 {
                l.update(&batch, &config, &mut rng).unwrap();
            }
            let q = l.q1(&batch.obs, &batch.action).unwrap();
            assert!((q[[0, 0]] - expect).abs() < 1e-2, "{reward}: {}", q[[0, 0]]);
        }
    }

    #[test]
    fn bootstrapped_critic_reaches_fixed_point() {
        // r / (1 - gamma) with the next state equal to the current one
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let config = TrainConfig { discount: 0.5, target_rate: 0.05, actor_lr: 0.0, ..small_config() };
        let mut l = Learner::new(Actor::seller(3, 8, &mut rng), &config, &mut rng);
        // a near-deterministic target policy pinned at the logged action
        for net in &mut l.actor.nets {
            for layer in &mut net.layers {
                layer.weights.fill(0.0);
                layer.bias.fill(0.0);
            }
        }
        let last = l.actor.nets[0].layers.len() - 1;
        l.actor.nets[0].layers[last].bias.slice_mut(s![2..]).fill(-20.0);
        l.actor_target = l.actor.clone();
        let batch = repeated(0.4, false, 16);
        for _ in 0..4000 {
            l.update(&batch, &config, &mut rng).unwrap();
        }
        let q = l.q1(&batch.obs, &batch.action).unwrap();
        assert!((q[[0, 0]] - 0.8).abs() < 1e-2, "{}", q[[0, 0]]);
    }

    #[test]
    fn actor_climbs_a_known_critic() {
        // Reward peaks when the first action component is high.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = TrainConfig { actor_lr: 3e-3, ..small_config() };
        let mut l = Learner::new(Actor::seller(3, 8, &mut rng), &config, &mut rng);
        let mut buf = ReplayBuffer::new(1000);
        for _ in 0..500 {
            let a: f64 = rng.random();
            let b: f64 = rng.random();
            buf.push(Transition { obs: vec![0.2, 0.4, 0.1], action: vec![a, b], reward: a, next_obs: vec![0.0; 3], done: true });
        }
        let obs = Array2::from_shape_vec((1, 3), vec![0.2, 0.4, 0.1]).unwrap();
        let start = l.actor.forward(obs.view()).unwrap().mean[[0, 0]];
        for _ in 0..1500 {
            let batch = buf.sample(64, &mut rng);
            l.update(&batch, &config, &mut rng).unwrap();
        }
        let end = l.actor.forward(obs.view()).unwrap().mean[[0, 0]];
        assert!(end > start + 0.2, "{start} -> {end}");
    }

    #[test]
    fn nan_aborts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let config = small_config();
        let mut l = Learner::new(Actor::seller(3, 8, &mut rng), &config, &mut rng);
        let mut batch = repeated(0.1, true, 4);
        batch.obs[[0, 0]] = f64::NAN;
        assert!(matches!(l.update(&batch, &config, &mut rng), Err(LearningError::NonFinite { .. })));
    }
}
