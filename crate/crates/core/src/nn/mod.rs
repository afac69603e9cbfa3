//! Differentiable building blocks: layers, loss, optimizer, gradient checking.
//!
//! Layers follow a tape discipline rather than a general autograd graph:
//! every train-mode forward pushes the intermediates needed for its backward
//! onto a per-layer stack, and `backward` pops them in LIFO order. Evaluating
//! the same layer object twice before backpropagating (as the two Siamese
//! branch passes do) therefore just stacks two tape frames, and gradients
//! from both passes accumulate additively into the shared parameters.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod loss;
mod optim;
mod pool;

pub use activation::Relu;
pub use batchnorm::BatchNorm2d;
pub use conv::{conv_output_dim, Conv2d};
pub use dense::Dense;
pub use dropout::Dropout;
pub use loss::{one_hot, softmax_cross_entropy, LossResult};
pub use optim::Sgd;
pub use pool::{AdaptiveAvgPool2d, MaxPool2d};

use crate::tensor::{Parameter, Scalar};

/// Forward-pass mode. `Train` records the tape and uses batch statistics;
/// `Eval` is pure inference (identity dropout, running batch-norm stats).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Anything that owns trainable parameters and a backward tape.
pub trait Module<T: Scalar> {
    /// Visits every parameter with its name, in a fixed deterministic order.
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>));

    /// Discards recorded forward intermediates without backpropagating.
    fn reset_tape(&mut self);
}

/// Zeroes the gradients of every parameter in a module.
pub fn zero_grads<T: Scalar>(module: &mut impl Module<T>) {
    module.for_each_param(&mut |_, p| p.zero_grad());
}

/// Total number of parameter elements in a module.
pub fn param_count<T: Scalar>(module: &mut impl Module<T>) -> usize {
    let mut n = 0;
    module.for_each_param(&mut |_, p| n += p.value.len());
    n
}
