use crate::tensor::Scalar;

use super::Network;

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + (g + weight_decay * p)`, `p <- p - lr * v`.
#[derive(Debug, Clone)]
pub struct SgdOptimizer<T: Scalar = f32> {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> SgdOptimizer<T> {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        assert!(
            learning_rate >= 0.0 && momentum >= 0.0 && weight_decay >= 0.0,
            "optimizer hyperparameters must be non-negative"
        );
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
            steps: 0,
        }
    }

    /// Total steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies the gradients currently stored in `net`.
    pub fn step(&mut self, net: &mut Network<T>) {
        let lr = T::of(self.learning_rate);
        let mu = T::of(self.momentum);
        let wd = T::of(self.weight_decay);
        let params = net.params_mut();
        self.velocity.resize_with(params.len(), Vec::new);
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            // A grown head appends rows at the end, so new entries start at rest.
            v.resize(p.value.len(), T::zero());
            for ((w, &g), vel) in p.value.iter_mut().zip(p.grad).zip(v.iter_mut()) {
                *vel = mu * *vel + g + wd * *w;
                *w = *w - lr * *vel;
            }
        }
        self.steps += 1;
    }
}
