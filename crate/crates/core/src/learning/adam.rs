use super::mlp::{Gradients, Mlp};
use serde::{Deserialize, Serialize};

/// Adam moments for one network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> =
            net.layers.iter().flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]]).collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
        let mut slot = 0;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let gw = grads.weights[i].as_standard_layout();
            let pairs = [
                (layer.weights.as_slice_mut().expect("standard layout"), gw.as_slice().expect("standard layout")),
                (layer.bias.as_slice_mut().expect("standard layout"), grads.bias[i].as_slice().expect("contiguous")),
            ];
            for (params, g) in pairs {
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for (((p, g), m), v) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
                slot += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::mlp::Activation;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, &mut rng);
        let before = net.clone();
        let mut opt = Adam::new(&net, 0.0);
        let x = Array2::from_elem((3, 2), 0.5);
        let (g, _) = net.backward(x.view(), Array2::ones((3, 1)).view()).unwrap();
        opt.step(&mut net, &g);
        assert_eq!(net, before);
    }

    #[test]
    fn first_step_moves_each_parameter_by_lr() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[2, 3], Activation::Identity, Activation::Identity, &mut rng);
        let before = net.clone();
        let mut opt = Adam::new(&net, 0.01);
        let x = Array2::from_elem((1, 2), 1.0);
        let (g, _) = net.backward(x.view(), Array2::ones((1, 3)).view()).unwrap();
        opt.step(&mut net, &g);
        for (a, b) in net.layers[0].weights.iter().zip(&before.layers[0].weights) {
            assert!((b - a - 0.01).abs() < 1e-6);
        }
    }
}
