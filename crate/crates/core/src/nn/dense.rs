//! Fully connected layer.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Affine map `y = x Wᵀ + b` over rows of a `[batch, n_in]` tensor.
pub struct Dense<T: Scalar> {
    pub weight: Parameter<T>, // [n_out, n_in]
    pub bias: Parameter<T>,   // [n_out]
    tape: Vec<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>) -> Self {
        Dense {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
            tape: Vec::new(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.weight.value.shape()[0]
    }

    fn check(&self, x: &Tensor<T>) -> Result<usize> {
        let s = x.shape();
        if s.len() != 2 || s[1] != self.n_in() {
            return Err(Error::ShapeMismatch(format!(
                "dense expects [batch, {}], got {s:?}",
                self.n_in()
            )));
        }
        Ok(s[0])
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.tape.push(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let batch = self.check(x)?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        let mut out = Tensor::zeros(&[batch, n_out]);
        let w = self.weight.value.data();
        let b = self.bias.value.data();
        out.data_mut()
            .par_chunks_mut(n_out)
            .zip(x.data().par_chunks(n_in))
            .for_each(|(orow, xrow)| {
                for (j, o) in orow.iter_mut().enumerate() {
                    let wrow = &w[j * n_in..(j + 1) * n_in];
                    let mut acc = b[j];
                    for (&wi, &xi) in wrow.iter().zip(xrow) {
                        acc += wi * xi;
                    }
                    *o = acc;
                }
            });
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.tape.pop().ok_or(Error::StaleGraph("dense"))?;
        let batch = self.check(&x)?;
        let (n_in, n_out) = (self.n_in(), self.n_out());
        if grad_out.shape() != [batch, n_out] {
            return Err(Error::ShapeMismatch("dense backward gradient shape".into()));
        }
        let gyd = grad_out.data();
        let xd = x.data();

        // Weight/bias gradients: rows of W are disjoint per output unit.
        self.weight
            .grad
            .data_mut()
            .par_chunks_mut(n_in)
            .zip(self.bias.grad.data_mut().par_iter_mut())
            .enumerate()
            .for_each(|(j, (gwrow, gbj))| {
                for bi in 0..batch {
                    let g = gyd[bi * n_out + j];
                    *gbj += g;
                    let xrow = &xd[bi * n_in..(bi + 1) * n_in];
                    for (gw, &xi) in gwrow.iter_mut().zip(xrow) {
                        *gw += g * xi;
                    }
                }
            });

        // Input gradient: gx = gy W.
        let mut gx = Tensor::zeros(&[batch, n_in]);
        let w = self.weight.value.data();
        gx.data_mut()
            .par_chunks_mut(n_in)
            .zip(gyd.par_chunks(n_out))
            .for_each(|(gxrow, gyrow)| {
                for (j, &g) in gyrow.iter().enumerate() {
                    let wrow = &w[j * n_in..(j + 1) * n_in];
                    for (o, &wi) in gxrow.iter_mut().zip(wrow) {
                        *o += g * wi;
                    }
                }
            });
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for Dense<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}
