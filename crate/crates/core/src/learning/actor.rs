//! Gaussian actors. Networks emit raw values; means are squashed with a
//! sigmoid into `[0, 1]` and standard deviations pass through a softplus.
//!
//! The seller actor is a plain two-hidden-layer network. The buyer actor
//! predicts its right offer from the first hidden layer alone, then
//! concatenates that layer with the other buyers' right offers to predict
//! its bids.

use super::adam::Adam;
use super::mlp::{Activation, Gradients, Mlp, MlpCache};
use super::LearningError;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Smallest standard deviation a policy can express.
pub const STD_FLOOR: f64 = 1e-3;

pub const SELLER_ACTION_DIM: usize = 2;
pub const BUYER_STAGE1_DIM: usize = 2;
pub const BUYER_ACTION_DIM: usize = 6;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Splits raw head output `[mean_raw | std_raw]` into means and stds.
fn gaussian(raw: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let d = raw.ncols() / 2;
    let mean = raw.slice(s![.., ..d]).mapv(sigmoid);
    let std = raw.slice(s![.., d..]).mapv(|v| softplus(v) + STD_FLOOR);
    (mean, std)
}

/// Gradient with respect to the raw head output.
fn gaussian_backward(raw: ArrayView2<'_, f64>, d_mean: ArrayView2<'_, f64>, d_std: ArrayView2<'_, f64>) -> Array2<f64> {
    let d = raw.ncols() / 2;
    let mut out = Array2::zeros(raw.raw_dim());
    for i in 0..raw.nrows() {
        for j in 0..d {
            let m = sigmoid(raw[[i, j]]);
            out[[i, j]] = d_mean[[i, j]] * m * (1.0 - m);
            out[[i, d + j]] = d_std[[i, j]] * sigmoid(raw[[i, d + j]]);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActorKind {
    Seller,
    Buyer {
        /// Width of the stage-one observation.
        stage1_obs: usize,
        /// Number of other buyers' offer components appended in stage two.
        others: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub kind: ActorKind,
    /// Seller: one network. Buyer: trunk, right-offer head, bid head.
    pub nets: Vec<Mlp>,
}

/// Everything needed to backpropagate through one actor evaluation.
pub struct ActorPass {
    pub mean: Array2<f64>,
    pub std: Array2<f64>,
    caches: Vec<MlpCache>,
}

impl Actor {
    pub fn seller<R: Rng + ?Sized>(obs_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let net = Mlp::new(&[obs_dim, hidden, hidden, 2 * SELLER_ACTION_DIM], Activation::Tanh, Activation::Identity, rng);
        Actor { kind: ActorKind::Seller, nets: vec![net] }
    }

    pub fn buyer<R: Rng + ?Sized>(stage1_obs: usize, others: usize, hidden: usize, rng: &mut R) -> Self {
        let trunk = Mlp::new(&[stage1_obs, hidden], Activation::Tanh, Activation::Tanh, rng);
        let head1 = Mlp::new(&[hidden, 2 * BUYER_STAGE1_DIM], Activation::Identity, Activation::Identity, rng);
        let d2 = BUYER_ACTION_DIM - BUYER_STAGE1_DIM;
        let head2 = Mlp::new(&[hidden + others, hidden, 2 * d2], Activation::Tanh, Activation::Identity, rng);
        Actor { kind: ActorKind::Buyer { stage1_obs, others }, nets: vec![trunk, head1, head2] }
    }

    /// Width of the full observation (for buyers, stage one plus others' offers).
    pub fn obs_dim(&self) -> usize {
        match self.kind {
            ActorKind::Seller => self.nets[0].input_dim(),
            ActorKind::Buyer { stage1_obs, others } => stage1_obs + others,
        }
    }

    pub fn action_dim(&self) -> usize {
        match self.kind {
            ActorKind::Seller => SELLER_ACTION_DIM,
            ActorKind::Buyer { .. } => BUYER_ACTION_DIM,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.nets.iter().all(Mlp::is_finite)
    }

    /// Buyer stage one: right-offer distribution from the stage-one
    /// observation only.
    pub fn stage1(&self, obs1: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>), LearningError> {
        match self.kind {
            ActorKind::Seller => Err(LearningError::WrongActor("sellers have no stage-one offer")),
            ActorKind::Buyer { .. } => {
                let h1 = self.nets[0].forward(obs1)?;
                let raw = self.nets[1].forward(h1.view())?;
                Ok(gaussian(raw.view()))
            }
        }
    }

    pub fn forward(&self, obs: ArrayView2<'_, f64>) -> Result<ActorPass, LearningError> {
        if obs.ncols() != self.obs_dim() {
            return Err(LearningError::Shape { expected: self.obs_dim(), got: obs.ncols() });
        }
        match self.kind {
            ActorKind::Seller => {
                let c = self.nets[0].forward_cached(obs)?;
                let (mean, std) = gaussian(c.output().view());
                Ok(ActorPass { mean, std, caches: vec![c] })
            }
            ActorKind::Buyer { stage1_obs, .. } => {
                let trunk = self.nets[0].forward_cached(obs.slice(s![.., ..stage1_obs]))?;
                let h1 = trunk.output().clone();
                let head1 = self.nets[1].forward_cached(h1.view())?;
                let z = concatenate(Axis(1), &[h1.view(), obs.slice(s![.., stage1_obs..])]).expect("same rows");
                let head2 = self.nets[2].forward_cached(z.view())?;
                let (m1, s1) = gaussian(head1.output().view());
                let (m2, s2) = gaussian(head2.output().view());
                let mean = concatenate(Axis(1), &[m1.view(), m2.view()]).expect("same rows");
                let std = concatenate(Axis(1), &[s1.view(), s2.view()]).expect("same rows");
                Ok(ActorPass { mean, std, caches: vec![trunk, head1, head2] })
            }
        }
    }

    /// Parameter gradients given upstream gradients on means and stds.
    pub fn backward(&self, pass: &ActorPass, d_mean: ArrayView2<'_, f64>, d_std: ArrayView2<'_, f64>) -> Vec<Gradients> {
        match self.kind {
            ActorKind::Seller => {
                let raw = pass.caches[0].output();
                let d_raw = gaussian_backward(raw.view(), d_mean, d_std);
                vec![self.nets[0].backward_cached(&pass.caches[0], d_raw.view()).0]
            }
            ActorKind::Buyer { .. } => {
                let k = BUYER_STAGE1_DIM;
                let d1 = gaussian_backward(
                    pass.caches[1].output().view(),
                    d_mean.slice(s![.., ..k]),
                    d_std.slice(s![.., ..k]),
                );
                let d2 = gaussian_backward(
                    pass.caches[2].output().view(),
                    d_mean.slice(s![.., k..]),
                    d_std.slice(s![.., k..]),
                );
                let (g1, dh1) = self.nets[1].backward_cached(&pass.caches[1], d1.view());
                let (g2, dz) = self.nets[2].backward_cached(&pass.caches[2], d2.view());
                let hidden = self.nets[0].output_dim();
                let dh = dh1 + dz.slice(s![.., ..hidden]);
                let (g0, _) = self.nets[0].backward_cached(&pass.caches[0], dh.view());
                vec![g0, g1, g2]
            }
        }
    }

    pub fn add_l2_gradient(&self, grads: &mut [Gradients], coef: f64) {
        for (net, g) in self.nets.iter().zip(grads) {
            net.add_l2_gradient(g, coef);
        }
    }

    pub fn polyak(&mut self, online: &Actor, rate: f64) {
        for (t, o) in self.nets.iter_mut().zip(&online.nets) {
            t.polyak(o, rate);
        }
    }
}

/// Adam state for each network of an actor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActorOptimizer {
    pub nets: Vec<Adam>,
}

impl ActorOptimizer {
    pub fn new(actor: &Actor, lr: f64) -> Self {
        ActorOptimizer { nets: actor.nets.iter().map(|n| Adam::new(n, lr)).collect() }
    }

    pub fn step(&mut self, actor: &mut Actor, grads: &[Gradients]) {
        for ((opt, net), g) in self.nets.iter_mut().zip(&mut actor.nets).zip(grads) {
            opt.step(net, g);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::mlp::tests::{flatten, random_matrix, rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar test objective over an actor pass.
    fn objective(actor: &Actor, obs: &Array2<f64>, wm: &Array2<f64>, ws: &Array2<f64>) -> f64 {
        let p = actor.forward(obs.view()).unwrap();
        (&p.mean * wm).sum() + (&p.std * ws).sum()
    }

    fn check_actor(actor: &Actor, rng: &mut ChaCha8Rng) {
        let obs = random_matrix(3, actor.obs_dim(), rng);
        let wm = random_matrix(3, actor.action_dim(), rng);
        let ws = random_matrix(3, actor.action_dim(), rng);
        let pass = actor.forward(obs.view()).unwrap();
        let grads = actor.backward(&pass, wm.view(), ws.view());
        for (k, g) in grads.iter().enumerate() {
            let analytic = flatten(g);
            let mut probe = actor.clone();
            for (i, a) in analytic.iter().enumerate() {
                let h = 1e-5;
                let orig = *probe.nets[k].parameters_mut().nth(i).unwrap();
                *probe.nets[k].parameters_mut().nth(i).unwrap() = orig + h;
                let up = objective(&probe, &obs, &wm, &ws);
                *probe.nets[k].parameters_mut().nth(i).unwrap() = orig - h;
                let down = objective(&probe, &obs, &wm, &ws);
                *probe.nets[k].parameters_mut().nth(i).unwrap() = orig;
                let fd = (up - down) / (2.0 * h);
                assert!(rel_error(*a, fd) < 1e-4, "net {k} param {i}: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn seller_actor_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..3 {
            let actor = Actor::seller(9, 8, &mut rng);
            check_actor(&actor, &mut rng);
        }
    }

    #[test]
    fn buyer_actor_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            let actor = Actor::buyer(11, 6, 8, &mut rng);
            check_actor(&actor, &mut rng);
        }
    }

    #[test]
    fn stage_one_ignores_other_offers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let actor = Actor::buyer(11, 6, 32, &mut rng);
        assert_eq!(actor.nets[2].input_dim(), 32 + 6);
        let mut a = random_matrix(1, 17, &mut rng);
        let mut b = a.clone();
        b.slice_mut(s![.., 11..]).assign(&random_matrix(1, 6, &mut rng));
        let pa = actor.forward(a.view()).unwrap();
        let pb = actor.forward(b.view()).unwrap();
        assert_eq!(pa.mean.slice(s![.., ..2]), pb.mean.slice(s![.., ..2]));
        assert_ne!(pa.mean.slice(s![.., 2..]), pb.mean.slice(s![.., 2..]));
        let (m1, s1) = actor.stage1(a.slice(s![.., ..11])).unwrap();
        assert_eq!(m1, pa.mean.slice(s![.., ..2]));
        assert_eq!(s1, pa.std.slice(s![.., ..2]));
        a.mapv_inplace(|v| v * 100.0);
        let p = actor.forward(a.view()).unwrap();
        assert!(p.mean.iter().all(|m| (0.0..=1.0).contains(m)));
        assert!(p.std.iter().all(|s| *s >= STD_FLOOR));
    }
}
