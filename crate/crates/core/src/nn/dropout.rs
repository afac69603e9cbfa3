//! Inverted dropout: scaling happens at train time, eval is the identity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Zeroes each element with probability `p` and scales survivors by 1/(1-p).
pub struct Dropout<T: Scalar> {
    p: f64,
    rng: ChaCha8Rng,
    tape: Vec<Option<Vec<bool>>>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidHyperparameter(format!(
                "dropout probability must be in [0, 1), got {p}"
            )));
        }
        Ok(Dropout {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
            tape: Vec::new(),
            _marker: std::marker::PhantomData,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Eval {
            return Ok(x.clone());
        }
        // p == 0 keeps the tape entry but draws nothing from the RNG, so
        // repeated forward passes (e.g. finite differencing) stay reproducible.
        if self.p == 0.0 {
            self.tape.push(None);
            return Ok(x.clone());
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - self.p));
        let mut mask = Vec::with_capacity(x.len());
        let mut out = x.clone();
        for v in out.data_mut().iter_mut() {
            let keep = self.rng.gen_range(0.0..1.0) >= self.p;
            mask.push(keep);
            *v = if keep { *v * keep_scale } else { T::ZERO };
        }
        self.tape.push(Some(mask));
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let mask = self.tape.pop().ok_or(Error::StaleGraph("dropout"))?;
        match mask {
            None => Ok(grad_out.clone()),
            Some(mask) => {
                if mask.len() != grad_out.len() {
                    return Err(Error::ShapeMismatch("dropout backward gradient shape".into()));
                }
                let keep_scale = T::from_f64(1.0 / (1.0 - self.p));
                let mut gx = grad_out.clone();
                for (g, keep) in gx.data_mut().iter_mut().zip(mask) {
                    *g = if keep { *g * keep_scale } else { T::ZERO };
                }
                Ok(gx)
            }
        }
    }
}

impl<T: Scalar> Module<T> for Dropout<T> {
    fn for_each_param(&mut self, _f: &mut dyn FnMut(&str, &mut Parameter<T>)) {}

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}
