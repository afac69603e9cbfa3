//! Stochastic gradient descent with classical momentum and L2 weight decay.

use crate::nn::Module;
use crate::tensor::{Parameter, Scalar};

/// Update rule, applied per element:
///
/// ```text
/// g   <- grad + weight_decay * value
/// buf <- momentum * buf + g
/// value <- value - lr * buf
/// ```
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for Sgd {
    /// lr 1e-3, momentum 0.9, weight decay 5e-4.
    fn default() -> Self {
        Sgd {
            lr: 1e-3,
            momentum: 0.9,
            weight_decay: 5e-4,
        }
    }
}

impl Sgd {
    pub fn step_param<T: Scalar>(&self, p: &mut Parameter<T>) {
        let lr = T::from_f64(self.lr);
        let mom = T::from_f64(self.momentum);
        let wd = T::from_f64(self.weight_decay);
        for ((v, &g), buf) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(p.grad.data().iter())
            .zip(p.momentum.data_mut().iter_mut())
        {
            let g = g + wd * *v;
            *buf = mom * *buf + g;
            *v -= lr * *buf;
        }
    }

    pub fn step<T: Scalar>(&self, module: &mut impl Module<T>) {
        module.for_each_param(&mut |_, p| self.step_param(p));
    }
}
