//! Rectified linear activation.

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Elementwise max(0, x) with a tape of forward outputs for masking.
pub struct Relu<T: Scalar> {
    tape: Vec<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { tape: Vec::new() }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x);
        if mode == Mode::Train {
            self.tape.push(y.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        x.map(|v| v.max_val(T::ZERO))
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.tape.pop().ok_or(Error::StaleGraph("relu"))?;
        if y.shape() != grad_out.shape() {
            return Err(Error::ShapeMismatch("relu backward gradient shape".into()));
        }
        let mut gx = grad_out.clone();
        for (g, &yi) in gx.data_mut().iter_mut().zip(y.data()) {
            if yi <= T::ZERO {
                *g = T::ZERO;
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> Default for Relu<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Module<T> for Relu<T> {
    fn for_each_param(&mut self, _f: &mut dyn FnMut(&str, &mut Parameter<T>)) {}

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}
