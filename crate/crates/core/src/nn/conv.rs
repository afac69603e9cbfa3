//! 2D convolution (cross-correlation, no kernel flip).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::{Mode, Module};
use crate::tensor::{Parameter, Scalar, Tensor};

/// Output extent of a convolution along one axis, if the kernel fits.
pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if kernel == 0 || kernel > padded || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Valid output range `[lo, hi)` along one spatial axis for kernel offset `k`:
/// the outputs whose input index `o*stride + k - padding` lands inside `[0, input)`.
#[inline]
fn valid_out_range(input: usize, out: usize, k: usize, stride: usize, padding: usize) -> (usize, usize) {
    let s = stride as isize;
    let shift = k as isize - padding as isize;
    // o*s + shift >= 0
    let lo = if shift >= 0 { 0 } else { (-shift + s - 1) / s };
    // o*s + shift <= input-1
    let top = input as isize - 1 - shift;
    let hi = if top < 0 { 0 } else { top / s + 1 };
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(out);
    (lo, hi.max(lo))
}

struct ConvDims {
    batch: usize,
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

fn check_dims<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<ConvDims> {
    let xs = x.shape();
    let ws = weight.shape();
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d expects 4-D input and weights, got {xs:?} and {ws:?}"
        )));
    }
    if xs[1] != ws[1] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input has {} channels but weights expect {}",
            xs[1], ws[1]
        )));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d bias shape {:?}, expected [{}]",
            bias.shape(),
            ws[0]
        )));
    }
    if stride == 0 {
        return Err(Error::InvalidHyperparameter("conv2d stride must be >= 1".into()));
    }
    let oh = conv_output_dim(xs[2], ws[2], stride, padding);
    let ow = conv_output_dim(xs[3], ws[3], stride, padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok(ConvDims {
            batch: xs[0],
            in_ch: xs[1],
            h: xs[2],
            w: xs[3],
            out_ch: ws[0],
            kh: ws[2],
            kw: ws[3],
            oh,
            ow,
        }),
        _ => Err(Error::InvalidHyperparameter(format!(
            "conv2d kernel {}x{} exceeds padded input {}x{}",
            ws[2],
            ws[3],
            xs[2] + 2 * padding,
            xs[3] + 2 * padding
        ))),
    }
}

/// Cross-correlation of a batched NCHW input with OIHW weights plus bias.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let d = check_dims(x, weight, bias, stride, padding)?;
    let mut out = Tensor::zeros(&[d.batch, d.out_ch, d.oh, d.ow]);
    let wdat = weight.data();
    let bdat = bias.data();
    let in_plane = d.in_ch * d.h * d.w;
    let out_plane = d.out_ch * d.oh * d.ow;

    out.data_mut()
        .par_chunks_mut(out_plane)
        .zip(x.data().par_chunks(in_plane))
        .for_each(|(ob, xb)| forward_one(ob, xb, wdat, bdat, &d, stride, padding));
    Ok(out)
}

fn forward_one<T: Scalar>(
    out_b: &mut [T],
    x_b: &[T],
    w: &[T],
    bias: &[T],
    d: &ConvDims,
    stride: usize,
    padding: usize,
) {
    for oc in 0..d.out_ch {
        let ob = &mut out_b[oc * d.oh * d.ow..(oc + 1) * d.oh * d.ow];
        ob.iter_mut().for_each(|v| *v = bias[oc]);
        for ic in 0..d.in_ch {
            let xc = &x_b[ic * d.h * d.w..(ic + 1) * d.h * d.w];
            let wbase = (oc * d.in_ch + ic) * d.kh * d.kw;
            for ky in 0..d.kh {
                for kx in 0..d.kw {
                    let wv = w[wbase + ky * d.kw + kx];
                    let (lo, hi) = valid_out_range(d.w, d.ow, kx, stride, padding);
                    if lo >= hi {
                        continue;
                    }
                    for oy in 0..d.oh {
                        let iy = (oy * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= d.h as isize {
                            continue;
                        }
                        let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                        let orow = &mut ob[oy * d.ow..(oy + 1) * d.ow];
                        if stride == 1 {
                            let ix_lo = (lo * stride + kx) as isize - padding as isize;
                            let seg = &xrow[ix_lo as usize..ix_lo as usize + (hi - lo)];
                            for (o, &xi) in orow[lo..hi].iter_mut().zip(seg.iter()) {
                                *o += wv * xi;
                            }
                        } else {
                            for ox in lo..hi {
                                let ix = (ox * stride + kx) as isize - padding as isize;
                                orow[ox] += wv * xrow[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradients of [`conv2d_forward`] with respect to input, weights and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let bias_probe = Tensor::zeros(&[weight.shape()[0]]);
    let d = check_dims(x, weight, &bias_probe, stride, padding)?;
    if grad_out.shape() != [d.batch, d.out_ch, d.oh, d.ow] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d backward: grad shape {:?}, expected {:?}",
            grad_out.shape(),
            [d.batch, d.out_ch, d.oh, d.ow]
        )));
    }
    let in_plane = d.in_ch * d.h * d.w;
    let out_plane = d.out_ch * d.oh * d.ow;
    let wdat = weight.data();

    // d(loss)/d(input): disjoint per batch element.
    let mut gx = Tensor::zeros(x.shape());
    gx.data_mut()
        .par_chunks_mut(in_plane)
        .zip(grad_out.data().par_chunks(out_plane))
        .for_each(|(gxb, gob)| {
            for oc in 0..d.out_ch {
                let gc = &gob[oc * d.oh * d.ow..(oc + 1) * d.oh * d.ow];
                for ic in 0..d.in_ch {
                    let gxc = &mut gxb[ic * d.h * d.w..(ic + 1) * d.h * d.w];
                    let wbase = (oc * d.in_ch + ic) * d.kh * d.kw;
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let wv = wdat[wbase + ky * d.kw + kx];
                            let (lo, hi) = valid_out_range(d.w, d.ow, kx, stride, padding);
                            if lo >= hi {
                                continue;
                            }
                            for oy in 0..d.oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                let grow = &gc[oy * d.ow..(oy + 1) * d.ow];
                                let xrow =
                                    &mut gxc[iy as usize * d.w..(iy as usize + 1) * d.w];
                                if stride == 1 {
                                    let ix_lo = (lo + kx) as isize - padding as isize;
                                    let seg =
                                        &mut xrow[ix_lo as usize..ix_lo as usize + (hi - lo)];
                                    for (xi, &g) in seg.iter_mut().zip(grow[lo..hi].iter()) {
                                        *xi += wv * g;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix =
                                            (ox * stride + kx) as isize - padding as isize;
                                        xrow[ix as usize] += wv * grow[ox];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        });

    // d(loss)/d(weight) and d(loss)/d(bias): disjoint per output channel.
    let mut gw = Tensor::zeros(weight.shape());
    let mut gb = Tensor::zeros(&[d.out_ch]);
    let xdat = x.data();
    let godat = grad_out.data();
    let wplane = d.in_ch * d.kh * d.kw;
    gw.data_mut()
        .par_chunks_mut(wplane)
        .zip(gb.data_mut().par_iter_mut())
        .enumerate()
        .for_each(|(oc, (gwc, gbc))| {
            for b in 0..d.batch {
                let xb = &xdat[b * in_plane..(b + 1) * in_plane];
                let gc = &godat[b * out_plane + oc * d.oh * d.ow
                    ..b * out_plane + (oc + 1) * d.oh * d.ow];
                let mut bsum = T::ZERO;
                for &g in gc.iter() {
                    bsum += g;
                }
                *gbc += bsum;
                for ic in 0..d.in_ch {
                    let xc = &xb[ic * d.h * d.w..(ic + 1) * d.h * d.w];
                    for ky in 0..d.kh {
                        for kx in 0..d.kw {
                            let (lo, hi) = valid_out_range(d.w, d.ow, kx, stride, padding);
                            if lo >= hi {
                                continue;
                            }
                            let mut acc = T::ZERO;
                            for oy in 0..d.oh {
                                let iy = (oy * stride + ky) as isize - padding as isize;
                                if iy < 0 || iy >= d.h as isize {
                                    continue;
                                }
                                let grow = &gc[oy * d.ow..(oy + 1) * d.ow];
                                let xrow = &xc[iy as usize * d.w..(iy as usize + 1) * d.w];
                                if stride == 1 {
                                    let ix_lo = (lo + kx) as isize - padding as isize;
                                    let seg = &xrow[ix_lo as usize..ix_lo as usize + (hi - lo)];
                                    for (&g, &xi) in grow[lo..hi].iter().zip(seg.iter()) {
                                        acc += g * xi;
                                    }
                                } else {
                                    for ox in lo..hi {
                                        let ix =
                                            (ox * stride + kx) as isize - padding as isize;
                                        acc += grow[ox] * xrow[ix as usize];
                                    }
                                }
                            }
                            gwc[ic * d.kh * d.kw + ky * d.kw + kx] += acc;
                        }
                    }
                }
            }
        });

    Ok((gx, gw, gb))
}

/// Convolutional layer owning its weights and backward tape.
pub struct Conv2d<T: Scalar> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    stride: usize,
    padding: usize,
    tape: Vec<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Self {
        Conv2d {
            weight: Parameter::new(weight),
            bias: Parameter::new(bias),
            stride,
            padding,
            tape: Vec::new(),
        }
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.infer(x)?;
        if mode == Mode::Train {
            self.tape.push(x.clone());
        }
        Ok(y)
    }

    /// Tape-free forward for frozen models; safe to call from `&self`.
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(x, &self.weight.value, &self.bias.value, self.stride, self.padding)
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self.tape.pop().ok_or(Error::StaleGraph("conv2d"))?;
        let (gx, gw, gb) =
            conv2d_backward(&x, &self.weight.value, grad_out, self.stride, self.padding)?;
        self.weight.grad.add_assign(&gw)?;
        self.bias.grad.add_assign(&gb)?;
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        f("weight", &mut self.weight);
        f("bias", &mut self.bias);
    }

    fn reset_tape(&mut self) {
        self.tape.clear();
    }
}
