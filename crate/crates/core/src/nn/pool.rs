//! Max pooling and adaptive average pooling.

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

struct MaxPoolFrame {
    in_shape: Vec<usize>,
    /// Flat input index of the winning element, per output element.
    argmax: Vec<u32>,
}

/// Max pooling over square windows; incomplete border windows are dropped.
pub struct MaxPool2d<T: Scalar> {
    window: usize,
    stride: usize,
    tape: Vec<MaxPoolFrame>,
    _marker: std::marker::PhantomData<T>,
}

impl<T: Scalar> MaxPool2d<T> {
    pub fn new(window: usize, stride: usize) -> Self {
        MaxPool2d {
            window,
            stride,
            tape: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn output_dim(&self, input: usize) -> Option<usize> {
        if input < self.window {
            None
        } else {
            Some((input - self.window) / self.stride + 1)
        }
    }

    fn compute(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "maxpool2d expects a 4-D tensor, got {s:?}"
            )));
        }
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = match (self.output_dim(h), self.output_dim(w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::InputTooSmall {
                    h,
                    w,
                    window: self.window,
                })
            }
        };
        let mut out = Tensor::zeros(&[batch, c, oh, ow]);
        let mut argmax = vec![0u32; batch * c * oh * ow];
        let xd = x.data();
        let od = out.data_mut();
        for b in 0..batch {
            for ch in 0..c {
                let in_base = (b * c + ch) * h * w;
                let out_base = (b * c + ch) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let iy0 = oy * self.stride;
                        let ix0 = ox * self.stride;
                        let mut best = xd[in_base + iy0 * w + ix0];
                        let mut best_idx = in_base + iy0 * w + ix0;
                        for dy in 0..self.window {
                            let row = in_base + (iy0 + dy) * w + ix0;
                            for dx in 0..self.window {
                                let v = xd[row + dx];
                                if v > best {
                                    best = v;
                                    best_idx = row + dx;
                                }
                            }
                        }
                        od[out_base + oy * ow + ox] = best;
                        argmax[out_base + oy * ow + ox] = best_idx as u32;
                    }
                }
            }
        }
        Ok((out, argmax))
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (out, argmax) = self.compute(x)?;
        if mode == Mode::Train {
            self.tape.push(MaxPoolFrame {
                in_shape: x.shape().to_vec(),
                argmax,
            });
        }
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.compute(x)?.0)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let frame = self.tape.pop().ok_or(Error::StaleGraph("maxpool2d"))?;
        if grad_out.len() != frame.argmax.len() {
            return Err(Error::ShapeMismatch("maxpool2d backward gradient shape".into()));
        }
        let mut gx = Tensor::zeros(&frame.in_shape);
        let gxd = gx.data_mut();
        for (&idx, &g) in frame.argmax.iter().zip(grad_out.data()) {
            gxd[idx as usize] += g;
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for MaxPool2d<T> {
    fn for_each_param(&mut self, _f: &mut dyn FnMut(&str, &mut Parameter<T>)) {}

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}

/// Average pooling to a fixed output size, window edges chosen so the
/// windows tile the input (floor/ceil rule).
pub struct AdaptiveAvgPool2d<T: Scalar> {
    out_h: usize,
    out_w: usize,
    tape: Vec<Vec<usize>>,
    _marker: std::marker::PhantomData<T>,
}

#[inline]
fn window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end.max(start + 1))
}

impl<T: Scalar> AdaptiveAvgPool2d<T> {
    pub fn new(out_h: usize, out_w: usize) -> Self {
        AdaptiveAvgPool2d {
            out_h,
            out_w,
            tape: Vec::new(),
            _marker: std::marker::PhantomData,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = self.infer(x)?;
        if mode == Mode::Train {
            self.tape.push(x.shape().to_vec());
        }
        Ok(out)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "adaptive_avg_pool expects a 4-D tensor, got {s:?}"
            )));
        }
        let (batch, c, h, w) = (s[0], s[1], s[2], s[3]);
        let mut out = Tensor::zeros(&[batch, c, self.out_h, self.out_w]);
        let xd = x.data();
        let od = out.data_mut();
        for b in 0..batch {
            for ch in 0..c {
                let in_base = (b * c + ch) * h * w;
                let out_base = (b * c + ch) * self.out_h * self.out_w;
                for oy in 0..self.out_h {
                    let (y0, y1) = window(oy, h, self.out_h);
                    for ox in 0..self.out_w {
                        let (x0, x1) = window(ox, w, self.out_w);
                        let mut acc = T::ZERO;
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                acc += xd[in_base + iy * w + ix];
                            }
                        }
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        od[out_base + oy * self.out_w + ox] = acc * T::from_f64(1.0 / count);
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let in_shape = self.tape.pop().ok_or(Error::StaleGraph("adaptive_avg_pool"))?;
        let (batch, c, h, w) = (in_shape[0], in_shape[1], in_shape[2], in_shape[3]);
        if grad_out.shape() != [batch, c, self.out_h, self.out_w] {
            return Err(Error::ShapeMismatch(
                "adaptive_avg_pool backward gradient shape".into(),
            ));
        }
        let mut gx = Tensor::zeros(&in_shape);
        let gd = grad_out.data();
        let gxd = gx.data_mut();
        for b in 0..batch {
            for ch in 0..c {
                let in_base = (b * c + ch) * h * w;
                let out_base = (b * c + ch) * self.out_h * self.out_w;
                for oy in 0..self.out_h {
                    let (y0, y1) = window(oy, h, self.out_h);
                    for ox in 0..self.out_w {
                        let (x0, x1) = window(ox, w, self.out_w);
                        let count = ((y1 - y0) * (x1 - x0)) as f64;
                        let g = gd[out_base + oy * self.out_w + ox] * T::from_f64(1.0 / count);
                        for iy in y0..y1 {
                            for ix in x0..x1 {
                                gxd[in_base + iy * w + ix] += g;
                            }
                        }
                    }
                }
            }
        }
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for AdaptiveAvgPool2d<T> {
    fn for_each_param(&mut self, _f: &mut dyn FnMut(&str, &mut Parameter<T>)) {}

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_input_pools_to_same_constant() {
        let x = Tensor::full(&[1, 2, 5, 5], 3.25f32);
        let mut pool = MaxPool2d::new(3, 2);
        let y = pool.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 3.25));
    }

    #[test]
    fn ramp_input_matches_window_enumeration_oracle() {
        // x(r, c) = 5r + c on a 5x5 grid; 3x3 stride-2 max pool -> [[12,14],[22,24]]
        let data: Vec<f32> = (0..5)
            .flat_map(|r| (0..5).map(move |c| (5 * r + c) as f32))
            .collect();
        let x = Tensor::from_vec(vec![1, 1, 5, 5], data.clone()).unwrap();
        let mut pool = MaxPool2d::new(3, 2);
        let y = pool.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), &[12.0, 14.0, 22.0, 24.0]);

        // Oracle: enumerate all windows directly.
        let mut oracle = Vec::new();
        for oy in 0..2 {
            for ox in 0..2 {
                let mut best = f32::NEG_INFINITY;
                for dy in 0..3 {
                    for dx in 0..3 {
                        best = best.max(data[(oy * 2 + dy) * 5 + ox * 2 + dx]);
                    }
                }
                oracle.push(best);
            }
        }
        assert_eq!(y.data(), oracle.as_slice());
    }

    #[test]
    fn spatial_dims_follow_floor_rule() {
        let pool = MaxPool2d::<f32>::new(3, 2);
        assert_eq!(pool.output_dim(112), Some(55));
        assert_eq!(pool.output_dim(55), Some(27));
        assert_eq!(pool.output_dim(2), None);
    }

    #[test]
    fn too_small_input_is_an_error() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 5]);
        let mut pool = MaxPool2d::new(3, 2);
        assert!(matches!(
            pool.forward(&x, Mode::Eval),
            Err(Error::InputTooSmall { .. })
        ));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor::from_vec(
            vec![1, 1, 3, 3],
            vec![0.0f32, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 9.0],
        )
        .unwrap();
        let mut pool = MaxPool2d::new(3, 2);
        pool.forward(&x, Mode::Train).unwrap();
        let g = Tensor::full(&[1, 1, 1, 1], 2.0f32);
        let gx = pool.backward(&g).unwrap();
        let mut expect = vec![0.0f32; 9];
        expect[8] = 2.0;
        assert_eq!(gx.data(), expect.as_slice());
    }

    #[test]
    fn adaptive_pool_averages_tiled_windows() {
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let x = Tensor::from_vec(vec![1, 1, 4, 4], data).unwrap();
        let mut pool = AdaptiveAvgPool2d::new(2, 2);
        let y = pool.forward(&x, Mode::Train).unwrap();
        // 2x2 disjoint quadrants of a 4x4 ramp.
        assert_eq!(y.data(), &[2.5, 4.5, 10.5, 12.5]);
        // Backward spreads gradient uniformly.
        let g = Tensor::full(&[1, 1, 2, 2], 4.0f64);
        let gx = pool.backward(&g).unwrap();
        assert!(gx.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn adaptive_pool_identity_when_sizes_match() {
        let data: Vec<f32> = (0..9).map(|v| v as f32).collect();
        let x = Tensor::from_vec(vec![1, 1, 3, 3], data.clone()).unwrap();
        let mut pool = AdaptiveAvgPool2d::new(3, 3);
        let y = pool.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.data(), data.as_slice());
    }
}
