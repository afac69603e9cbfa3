//! Batch normalization over the (batch, height, width) axes of NCHW tensors.

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

struct BnFrame<T: Scalar> {
    input: Tensor<T>,
    mean: Vec<T>,
    inv_std: Vec<T>,
}

/// Per-channel affine batch normalization with running statistics.
pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    eps: f64,
    momentum: f64,
    tape: Vec<BnFrame<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    /// gamma = 1, beta = 0, zero running mean, unit running variance.
    pub fn new(channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm2d {
            gamma: Parameter::new(Tensor::full(&[channels], T::ONE)),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::ONE),
            eps,
            momentum,
            tape: Vec::new(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::ShapeMismatch(format!(
                "batchnorm2d expects [batch, {}, H, W], got {s:?}",
                self.channels()
            )));
        }
        Ok((s[0], s[2], s[3]))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (batch, h, w) = self.check_input(x)?;
        let c = self.channels();
        let n = batch * h * w;
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());

        match mode {
            Mode::Train => {
                if n < 2 {
                    return Err(Error::DegenerateBatch(n));
                }
                let mut mean = vec![T::ZERO; c];
                let mut inv_std = vec![T::ZERO; c];
                let inv_n = T::from_f64(1.0 / n as f64);
                for ch in 0..c {
                    let mut sum = T::ZERO;
                    let mut sq = T::ZERO;
                    for b in 0..batch {
                        let base = (b * c + ch) * plane;
                        for &v in &x.data()[base..base + plane] {
                            sum += v;
                            sq += v * v;
                        }
                    }
                    let m = sum * inv_n;
                    // Population variance of the batch.
                    let var = (sq * inv_n - m * m).max_val(T::ZERO);
                    mean[ch] = m;
                    inv_std[ch] = T::ONE / (var + T::from_f64(self.eps)).sqrt();
                    let mom = T::from_f64(self.momentum);
                    let keep = T::from_f64(1.0 - self.momentum);
                    self.running_mean.data_mut()[ch] =
                        keep * self.running_mean.data()[ch] + mom * m;
                    self.running_var.data_mut()[ch] =
                        keep * self.running_var.data()[ch] + mom * var;
                }
                for ch in 0..c {
                    let g = self.gamma.value.data()[ch];
                    let bta = self.beta.value.data()[ch];
                    let (m, is) = (mean[ch], inv_std[ch]);
                    for b in 0..batch {
                        let base = (b * c + ch) * plane;
                        let src = &x.data()[base..base + plane];
                        let dst = &mut out.data_mut()[base..base + plane];
                        for (o, &v) in dst.iter_mut().zip(src) {
                            *o = g * (v - m) * is + bta;
                        }
                    }
                }
                self.tape.push(BnFrame {
                    input: x.clone(),
                    mean,
                    inv_std,
                });
            }
            Mode::Eval => return self.infer(x),
        }
        Ok(out)
    }

    /// Eval-mode normalization with running statistics, tape-free.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (batch, h, w) = self.check_input(x)?;
        let c = self.channels();
        let plane = h * w;
        let mut out = Tensor::zeros(x.shape());
        for ch in 0..c {
            let g = self.gamma.value.data()[ch];
            let bta = self.beta.value.data()[ch];
            let m = self.running_mean.data()[ch];
            let is = T::ONE / (self.running_var.data()[ch] + T::from_f64(self.eps)).sqrt();
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                let src = &x.data()[base..base + plane];
                let dst = &mut out.data_mut()[base..base + plane];
                for (o, &v) in dst.iter_mut().zip(src) {
                    *o = g * (v - m) * is + bta;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let frame = self.tape.pop().ok_or(Error::StaleGraph("batchnorm2d"))?;
        let (batch, h, w) = self.check_input(&frame.input)?;
        if grad_out.shape() != frame.input.shape() {
            return Err(Error::ShapeMismatch(
                "batchnorm2d backward gradient shape".into(),
            ));
        }
        let c = self.channels();
        let plane = h * w;
        let n = batch * h * w;
        let inv_n = T::from_f64(1.0 / n as f64);
        let mut gx = Tensor::zeros(frame.input.shape());

        for ch in 0..c {
            let (m, is) = (frame.mean[ch], frame.inv_std[ch]);
            let g = self.gamma.value.data()[ch];
            let mut sum_gy = T::ZERO;
            let mut sum_gy_xhat = T::ZERO;
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                let gy = &grad_out.data()[base..base + plane];
                let xv = &frame.input.data()[base..base + plane];
                for (&gyi, &xi) in gy.iter().zip(xv) {
                    sum_gy += gyi;
                    sum_gy_xhat += gyi * (xi - m) * is;
                }
            }
            self.beta.grad.data_mut()[ch] += sum_gy;
            self.gamma.grad.data_mut()[ch] += sum_gy_xhat;
            let k = g * is;
            for b in 0..batch {
                let base = (b * c + ch) * plane;
                let gy = &grad_out.data()[base..base + plane];
                let xv = &frame.input.data()[base..base + plane];
                let dst = &mut gx.data_mut()[base..base + plane];
                for ((o, &gyi), &xi) in dst.iter_mut().zip(gy).zip(xv) {
                    let xhat = (xi - m) * is;
                    *o = k * (gyi - (sum_gy + xhat * sum_gy_xhat) * inv_n);
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for BatchNorm2d<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        f("gamma", &mut self.gamma);
        f("beta", &mut self.beta);
    }

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalized_input_is_a_fixed_point() {
        // Zero-mean unit-variance per channel already; gamma=1 beta=0.
        let vals = vec![-1.0f32, 1.0, -1.0, 1.0];
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vals.clone()).unwrap();
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(&vals) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn constant_input_maps_to_beta() {
        let x = Tensor::full(&[2, 1, 2, 2], 5.0f32);
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        bn.beta.value.fill(0.7);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for &v in y.data() {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn four_values_match_hand_computation() {
        // mean 2.5, population variance 1.25 -> [-1.3416, -0.4472, 0.4472, 1.3416]
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let mut bn = BatchNorm2d::new(1, 1e-5, 0.1);
        let y = bn.forward(&x, Mode::Train).unwrap();
        let expect = [-1.3416, -0.4472, 0.4472, 1.3416];
        for (a, e) in y.data().iter().zip(expect) {
            assert!((a - e).abs() < 1e-3, "{a} vs {e}");
        }
    }

    #[test]
    fn train_mode_rejects_single_element_batches() {
        let x = Tensor::full(&[1, 2, 1, 1], 1.0f32);
        let mut bn = BatchNorm2d::new(2, 1e-5, 0.1);
        assert!(matches!(
            bn.forward(&x, Mode::Train),
            Err(Error::DegenerateBatch(1))
        ));
        // Eval mode is fine with a single element.
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_uses_running_stats() {
        let mut bn = BatchNorm2d::<f64>::new(1, 1e-5, 0.1);
        // Feed a few train batches so running stats move off their init.
        for i in 0..20 {
            let x = Tensor::from_vec(
                vec![1, 1, 1, 4],
                vec![1.0 + i as f64 * 0.01, 2.0, 3.0, 4.0],
            )
            .unwrap();
            bn.forward(&x, Mode::Train).unwrap();
            bn.reset_tape();
        }
        let x = Tensor::from_vec(vec![1, 1, 1, 2], vec![2.5, 2.5]).unwrap();
        let y = bn.forward(&x, Mode::Eval).unwrap();
        // Running mean approaches 2.5ish; outputs must be close to zero, and
        // crucially not normalized by the (zero-variance) eval batch.
        assert!(y.data()[0].abs() < 1.0);
        assert_eq!(y.data()[0], y.data()[1]);
    }
}
