//! The Siamese residual network.
//!
//! Two branch evaluations share one set of parameters: the branch layers are
//! stored once and simply run twice per pair. Tape frames stack per layer, so
//! backpropagating the query pass and then the reference pass accumulates
//! both gradient contributions into the shared weights.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::config::SResnnConfig;
use crate::nn::{
    AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Dense, Dropout, MaxPool2d, Mode, Module, Relu,
};
use crate::tensor::{Parameter, Scalar, Tensor};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

fn kaiming_uniform<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: &[usize],
    fan_in: usize,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape.to_vec(), data).expect("shape/data agree by construction")
}

fn conv_layer<T: Scalar>(
    rng: &mut ChaCha8Rng,
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Conv2d<T> {
    let fan_in = in_ch * kernel * kernel;
    let w = kaiming_uniform(rng, &[out_ch, in_ch, kernel, kernel], fan_in);
    Conv2d::new(w, Tensor::zeros(&[out_ch]), stride, padding)
}

/// Bottleneck block: 1x1 C->C/4, 3x3 C/4->C/4, 1x1 C/4->C, each with batch
/// norm; identity shortcut; final ReLU. Spatial size is preserved.
pub struct ResidualBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    relu1: Relu<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    relu2: Relu<T>,
    pub conv3: Conv2d<T>,
    pub bn3: BatchNorm2d<T>,
    relu_out: Relu<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(rng: &mut ChaCha8Rng, channels: usize) -> Result<Self> {
        if channels % 4 != 0 || channels == 0 {
            return Err(Error::InvalidConfig(format!(
                "residual block channels {channels} must be a positive multiple of 4"
            )));
        }
        let mid = channels / 4;
        Ok(ResidualBlock {
            conv1: conv_layer(rng, channels, mid, 1, 1, 0),
            bn1: BatchNorm2d::new(mid, BN_EPS, BN_MOMENTUM),
            relu1: Relu::new(),
            conv2: conv_layer(rng, mid, mid, 3, 1, 1),
            bn2: BatchNorm2d::new(mid, BN_EPS, BN_MOMENTUM),
            relu2: Relu::new(),
            conv3: conv_layer(rng, mid, channels, 1, 1, 0),
            bn3: BatchNorm2d::new(channels, BN_EPS, BN_MOMENTUM),
            relu_out: Relu::new(),
        })
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut y = self.conv1.forward(x, mode)?;
        y = self.bn1.forward(&y, mode)?;
        y = self.relu1.forward(&y, mode)?;
        y = self.conv2.forward(&y, mode)?;
        y = self.bn2.forward(&y, mode)?;
        y = self.relu2.forward(&y, mode)?;
        y = self.conv3.forward(&y, mode)?;
        y = self.bn3.forward(&y, mode)?;
        y.add_assign(x)?;
        self.relu_out.forward(&y, mode)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.conv1.infer(x)?;
        y = self.bn1.infer(&y)?;
        y = self.relu1.infer(&y);
        y = self.conv2.infer(&y)?;
        y = self.bn2.infer(&y)?;
        y = self.relu2.infer(&y);
        y = self.conv3.infer(&y)?;
        y = self.bn3.infer(&y)?;
        y.add_assign(x)?;
        Ok(self.relu_out.infer(&y))
    }

    /// Returns the input gradient (main path plus identity shortcut).
    pub fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g_sum = self.relu_out.backward(grad_out)?;
        let mut g = self.bn3.backward(&g_sum)?;
        g = self.conv3.backward(&g)?;
        g = self.relu2.backward(&g)?;
        g = self.bn2.backward(&g)?;
        g = self.conv2.backward(&g)?;
        g = self.relu1.backward(&g)?;
        g = self.bn1.backward(&g)?;
        let mut gx = self.conv1.backward(&g)?;
        gx.add_assign(&g_sum)?;
        Ok(gx)
    }
}

impl<T: Scalar> Module<T> for ResidualBlock<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        self.conv1.for_each_param(&mut |n, p| f(&format!("conv1.{n}"), p));
        self.bn1.for_each_param(&mut |n, p| f(&format!("bn1.{n}"), p));
        self.conv2.for_each_param(&mut |n, p| f(&format!("conv2.{n}"), p));
        self.bn2.for_each_param(&mut |n, p| f(&format!("bn2.{n}"), p));
        self.conv3.for_each_param(&mut |n, p| f(&format!("conv3.{n}"), p));
        self.bn3.for_each_param(&mut |n, p| f(&format!("bn3.{n}"), p));
    }

    fn reset_tape(&mut self) {
        self.conv1.reset_tape();
        self.bn1.reset_tape();
        self.relu1.reset_tape();
        self.conv2.reset_tape();
        self.bn2.reset_tape();
        self.relu2.reset_tape();
        self.conv3.reset_tape();
        self.bn3.reset_tape();
        self.relu_out.reset_tape();
    }
}

struct Stage<T: Scalar> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
    relu: Relu<T>,
    pool: MaxPool2d<T>,
    block: ResidualBlock<T>,
}

impl<T: Scalar> Stage<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut y = self.conv.forward(x, mode)?;
        y = self.bn.forward(&y, mode)?;
        y = self.relu.forward(&y, mode)?;
        let pooled = self.pool.forward(&y, mode)?;
        self.block.forward(&pooled, mode)
    }

    fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut y = self.conv.infer(x)?;
        y = self.bn.infer(&y)?;
        y = self.relu.infer(&y);
        let pooled = self.pool.infer(&y)?;
        self.block.infer(&pooled)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.block.backward(grad)?;
        let g = self.pool.backward(&g)?;
        let g = self.relu.backward(&g)?;
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }
}

/// Siamese residual network over (reference, query) image pairs.
pub struct SResnn<T: Scalar> {
    config: SResnnConfig,
    stages: Vec<Stage<T>>,
    branch_pool: AdaptiveAvgPool2d<T>,
    branch_fc: Dense<T>,
    branch_relu: Relu<T>,
    dropout: Dropout<T>,
    classifier: Dense<T>,
    flatten_tape: Vec<Vec<usize>>,
    concat_tape: Vec<usize>,
}

impl<T: Scalar> SResnn<T> {
    /// Builds the network with Kaiming-uniform weights, zero biases and
    /// identity batch-norm affine. Deterministic for a given seed, and the
    /// same draws are made regardless of the scalar type.
    pub fn build(config: &SResnnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut stages = Vec::new();
        let mut in_ch = config.input.0;
        for s in &config.stages {
            let conv = conv_layer(
                &mut rng,
                in_ch,
                s.out_channels,
                s.conv_kernel,
                s.conv_stride,
                s.conv_padding,
            );
            stages.push(Stage {
                conv,
                bn: BatchNorm2d::new(s.out_channels, BN_EPS, BN_MOMENTUM),
                relu: Relu::new(),
                pool: MaxPool2d::new(3, 2),
                block: ResidualBlock::new(&mut rng, s.out_channels)?,
            });
            in_ch = s.out_channels;
        }
        let fc_in = config.branch_fc_in();
        let branch_fc = Dense::new(
            kaiming_uniform(&mut rng, &[config.branch_fc_out, fc_in], fc_in),
            Tensor::zeros(&[config.branch_fc_out]),
        );
        let cls_in = config.classifier_in();
        let classifier = Dense::new(
            kaiming_uniform(&mut rng, &[config.n_classes, cls_in], cls_in),
            Tensor::zeros(&[config.n_classes]),
        );
        let dropout_seed: u64 = rng.gen();
        Ok(SResnn {
            config: config.clone(),
            stages,
            branch_pool: AdaptiveAvgPool2d::new(config.branch_pool.0, config.branch_pool.1),
            branch_fc,
            branch_relu: Relu::new(),
            dropout: Dropout::new(config.head_dropout_p, dropout_seed)?,
            classifier,
            flatten_tape: Vec::new(),
            concat_tape: Vec::new(),
        })
    }

    pub fn config(&self) -> &SResnnConfig {
        &self.config
    }

    /// Disables head dropout (used by gradient checking).
    pub fn disable_dropout(&mut self) -> Result<()> {
        self.dropout = Dropout::new(0.0, 0)?;
        self.config.head_dropout_p = 0.0;
        Ok(())
    }

    fn check_images(&self, x: &Tensor<T>) -> Result<()> {
        let (c, h, w) = self.config.input;
        let s = x.shape();
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::ShapeMismatch(format!(
                "expected image batch [N, {c}, {h}, {w}], got {s:?}"
            )));
        }
        Ok(())
    }

    /// One branch pass: 4 stages, adaptive pool, flatten, FC, ReLU.
    /// Both Siamese slots call this with the same `self`.
    pub fn branch_forward(&mut self, images: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut x = images.clone();
        for stage in self.stages.iter_mut() {
            x = stage.forward(&x, mode)?;
        }
        let pooled = self.branch_pool.forward(&x, mode)?;
        if mode == Mode::Train {
            self.flatten_tape.push(pooled.shape().to_vec());
        }
        let batch = pooled.shape()[0];
        let flat = pooled.reshape(vec![batch, self.config.branch_fc_in()])?;
        let fc = self.branch_fc.forward(&flat, mode)?;
        self.branch_relu.forward(&fc, mode)
    }

    /// Tape-free branch pass on a frozen model.
    pub fn branch_infer(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(images)?;
        let mut x = images.clone();
        for stage in &self.stages {
            x = stage.infer(&x)?;
        }
        let pooled = self.branch_pool.infer(&x)?;
        let batch = pooled.shape()[0];
        let flat = pooled.reshape(vec![batch, self.config.branch_fc_in()])?;
        let fc = self.branch_fc.infer(&flat)?;
        Ok(self.branch_relu.infer(&fc))
    }

    /// Full forward over a batch of pairs: reference embedding first, query
    /// second, concatenated, dropout, classifier.
    pub fn forward_pair(
        &mut self,
        reference: &Tensor<T>,
        query: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let g1 = self.branch_forward(reference, mode)?;
        let g2 = self.branch_forward(query, mode)?;
        let cat = concat_features(&g1, &g2)?;
        if mode == Mode::Train {
            self.concat_tape.push(g1.shape()[1]);
        }
        let dropped = self.dropout.forward(&cat, mode)?;
        self.classifier.forward(&dropped, mode)
    }

    /// Frozen full forward.
    pub fn infer_pair(&self, reference: &Tensor<T>, query: &Tensor<T>) -> Result<Tensor<T>> {
        let g1 = self.branch_infer(reference)?;
        let g2 = self.branch_infer(query)?;
        let cat = concat_features(&g1, &g2)?;
        self.classifier.infer(&cat)
    }

    fn branch_backward(&mut self, grad: &Tensor<T>) -> Result<()> {
        let g = self.branch_relu.backward(grad)?;
        let g = self.branch_fc.backward(&g)?;
        let pooled_shape = self
            .flatten_tape
            .pop()
            .ok_or(Error::StaleGraph("flatten"))?;
        let g = g.reshape(pooled_shape)?;
        let mut g = self.branch_pool.backward(&g)?;
        for stage in self.stages.iter_mut().rev() {
            g = stage.backward(&g)?;
        }
        Ok(())
    }

    /// Backpropagates both branch slots from per-branch embedding gradients.
    /// The query pass was recorded last, so it unwinds first.
    pub fn backward_embeddings(
        &mut self,
        grad_reference: &Tensor<T>,
        grad_query: &Tensor<T>,
    ) -> Result<()> {
        self.branch_backward(grad_query)?;
        self.branch_backward(grad_reference)
    }

    /// Full backward pass from the logit gradient; accumulates into all
    /// parameter gradients.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<()> {
        let g = self.classifier.backward(grad_logits)?;
        let g = self.dropout.backward(&g)?;
        let width = self.concat_tape.pop().ok_or(Error::StaleGraph("concat"))?;
        let (g1, g2) = split_features(&g, width)?;
        self.backward_embeddings(&g1, &g2)
    }

    /// Visits batch-norm running statistics (buffers, not parameters).
    pub fn for_each_buffer(&mut self, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            f(&format!("stage{i}.bn.running_mean"), &mut stage.bn.running_mean);
            f(&format!("stage{i}.bn.running_var"), &mut stage.bn.running_var);
            let b = &mut stage.block;
            f(&format!("stage{i}.block.bn1.running_mean"), &mut b.bn1.running_mean);
            f(&format!("stage{i}.block.bn1.running_var"), &mut b.bn1.running_var);
            f(&format!("stage{i}.block.bn2.running_mean"), &mut b.bn2.running_mean);
            f(&format!("stage{i}.block.bn2.running_var"), &mut b.bn2.running_var);
            f(&format!("stage{i}.block.bn3.running_mean"), &mut b.bn3.running_mean);
            f(&format!("stage{i}.block.bn3.running_var"), &mut b.bn3.running_var);
        }
    }

    /// Converts the whole model to another precision (e.g. f32 -> f64 for
    /// gradient checking).
    pub fn cast<U: Scalar>(&mut self) -> Result<SResnn<U>> {
        let mut out = SResnn::<U>::build(&self.config, 0)?;
        let mut values: Vec<Tensor<T>> = Vec::new();
        self.for_each_param(&mut |_, p| values.push(p.value.clone()));
        let mut idx = 0;
        out.for_each_param(&mut |_, p| {
            p.value = values[idx].cast();
            idx += 1;
        });
        let mut buffers: Vec<Tensor<T>> = Vec::new();
        self.for_each_buffer(&mut |_, b| buffers.push(b.clone()));
        let mut idx = 0;
        out.for_each_buffer(&mut |_, b| {
            *b = buffers[idx].cast();
            idx += 1;
        });
        Ok(out)
    }
}

/// Concatenates two `[batch, f]` feature tensors along the feature axis.
pub fn concat_features<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
        return Err(Error::ShapeMismatch(format!(
            "concat expects matching [batch, f] tensors, got {sa:?} and {sb:?}"
        )));
    }
    let (batch, fa, fb) = (sa[0], sa[1], sb[1]);
    let mut out = Tensor::zeros(&[batch, fa + fb]);
    let od = out.data_mut();
    for i in 0..batch {
        od[i * (fa + fb)..i * (fa + fb) + fa].copy_from_slice(&a.data()[i * fa..(i + 1) * fa]);
        od[i * (fa + fb) + fa..(i + 1) * (fa + fb)]
            .copy_from_slice(&b.data()[i * fb..(i + 1) * fb]);
    }
    Ok(out)
}

fn split_features<T: Scalar>(g: &Tensor<T>, width: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let s = g.shape();
    if s.len() != 2 || s[1] < width {
        return Err(Error::ShapeMismatch("concat backward gradient shape".into()));
    }
    let (batch, total) = (s[0], s[1]);
    let fb = total - width;
    let mut a = Tensor::zeros(&[batch, width]);
    let mut b = Tensor::zeros(&[batch, fb]);
    for i in 0..batch {
        a.data_mut()[i * width..(i + 1) * width]
            .copy_from_slice(&g.data()[i * total..i * total + width]);
        b.data_mut()[i * fb..(i + 1) * fb]
            .copy_from_slice(&g.data()[i * total + width..(i + 1) * total]);
    }
    Ok((a, b))
}

impl<T: Scalar> Module<T> for SResnn<T> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<T>)) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            stage.conv.for_each_param(&mut |n, p| f(&format!("stage{i}.conv.{n}"), p));
            stage.bn.for_each_param(&mut |n, p| f(&format!("stage{i}.bn.{n}"), p));
            stage.block.for_each_param(&mut |n, p| f(&format!("stage{i}.block.{n}"), p));
        }
        self.branch_fc.for_each_param(&mut |n, p| f(&format!("branch_fc.{n}"), p));
        self.classifier.for_each_param(&mut |n, p| f(&format!("classifier.{n}"), p));
    }

    fn reset_tape(&mut self) {
        for stage in self.stages.iter_mut() {
            stage.conv.reset_tape();
            stage.bn.reset_tape();
            stage.relu.reset_tape();
            stage.pool.reset_tape();
            stage.block.reset_tape();
        }
        self.branch_pool.reset_tape();
        self.branch_fc.reset_tape();
        self.branch_relu.reset_tape();
        self.dropout.reset_tape();
        self.classifier.reset_tape();
        self.flatten_tape.clear();
        self.concat_tape.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{one_hot, softmax_cross_entropy, zero_grads};

    fn tiny_config(n_classes: usize) -> SResnnConfig {
        SResnnConfig {
            stages: vec![
                StageCfg { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageCfg { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageCfg { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageCfg { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
            ],
            branch_pool: (1, 1),
            branch_fc_out: 8,
            head_dropout_p: 0.5,
            n_classes,
            input: (3, 40, 40),
        }
    }

    use crate::model::config::StageConfig as StageCfg;

    fn random_images(batch: usize, cfg: &SResnnConfig, seed: u64) -> Tensor<f32> {
        let (c, h, w) = cfg.input;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_vec(
            vec![batch, c, h, w],
            (0..batch * c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let cfg = tiny_config(5);
        let mut a = SResnn::<f32>::build(&cfg, 7).unwrap();
        let mut b = SResnn::<f32>::build(&cfg, 7).unwrap();
        let mut pa = Vec::new();
        a.for_each_param(&mut |_, p| pa.push(p.value.clone()));
        let mut i = 0;
        b.for_each_param(&mut |_, p| {
            assert_eq!(p.value, pa[i]);
            i += 1;
        });
        let mut c = SResnn::<f32>::build(&cfg, 8).unwrap();
        let mut any_diff = false;
        let mut i = 0;
        c.for_each_param(&mut |_, p| {
            if p.value != pa[i] {
                any_diff = true;
            }
            i += 1;
        });
        assert!(any_diff);
    }

    #[test]
    fn weight_sharing_makes_equal_inputs_equal_embeddings() {
        let cfg = tiny_config(5);
        let mut model = SResnn::<f32>::build(&cfg, 3).unwrap();
        let img = random_images(2, &cfg, 1);
        let g1 = model.branch_forward(&img, Mode::Eval).unwrap();
        let g2 = model.branch_forward(&img, Mode::Eval).unwrap();
        assert_eq!(g1.data(), g2.data());
        // Frozen path agrees with the eval-mode mutable path.
        let g3 = model.branch_infer(&img).unwrap();
        assert_eq!(g1.data(), g3.data());
    }

    #[test]
    fn swapping_reference_and_query_changes_logits() {
        let cfg = tiny_config(6);
        let model = SResnn::<f32>::build(&cfg, 11).unwrap();
        let a = random_images(1, &cfg, 21);
        let b = random_images(1, &cfg, 22);
        let ab = model.infer_pair(&a, &b).unwrap();
        let ba = model.infer_pair(&b, &a).unwrap();
        let diff = ab
            .data()
            .iter()
            .zip(ba.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f32, f32::max);
        assert!(diff > 1e-6, "concatenation order had no effect");
    }

    #[test]
    fn residual_block_with_zero_weights_is_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut block = ResidualBlock::<f32>::new(&mut rng, 8).unwrap();
        block.for_each_param(&mut |name, p| {
            if name.contains("conv") {
                p.value.fill(0.0);
            }
        });
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::from_vec(
            vec![1, 8, 4, 4],
            (0..128).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
        )
        .unwrap();
        let y = block.forward(&x, Mode::Train).unwrap();
        for (&yi, &xi) in y.data().iter().zip(x.data()) {
            assert!((yi - xi.max(0.0)).abs() < 1e-6);
        }
        assert_eq!(y.shape(), x.shape());
    }

    #[test]
    fn residual_block_matches_composition_oracle() {
        // Eval mode with hand-set running stats: compare against a direct
        // conv -> normalize -> relu chain built from the free kernels.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut block = ResidualBlock::<f64>::new(&mut rng, 8).unwrap();
        for bn in [&mut block.bn1, &mut block.bn2, &mut block.bn3] {
            for v in bn.running_mean.data_mut() {
                *v = 0.05;
            }
            for v in bn.running_var.data_mut() {
                *v = 0.8;
            }
            bn.gamma.value.fill(1.2);
            bn.beta.value.fill(-0.1);
        }
        let mut xr = ChaCha8Rng::seed_from_u64(14);
        let x = Tensor::from_vec(
            vec![1, 8, 5, 5],
            (0..200).map(|_| xr.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let normalize = |t: &Tensor<f64>| {
            t.map(|v| 1.2 * (v - 0.05) / (0.8f64 + 1e-5).sqrt() - 0.1)
        };
        let relu = |t: &Tensor<f64>| t.map(|v| v.max(0.0));
        let mut o = block.conv1.infer(&x).unwrap();
        o = relu(&normalize(&o));
        o = block.conv2.infer(&o).unwrap();
        o = relu(&normalize(&o));
        o = block.conv3.infer(&o).unwrap();
        o = normalize(&o);
        o.add_assign(&x).unwrap();
        let oracle = relu(&o);

        let got = block.infer(&x).unwrap();
        for (a, b) in got.data().iter().zip(oracle.data()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }

    #[test]
    fn gradients_flow_through_both_branches() {
        let cfg = tiny_config(4);
        let mut model = SResnn::<f64>::build(&cfg, 2).unwrap();
        model.disable_dropout().unwrap();
        let reference = random_images(1, &cfg, 31).cast::<f64>();
        let query = random_images(1, &cfg, 32).cast::<f64>();

        let grads_with = |m: &mut SResnn<f64>, gq: bool, gr: bool| -> Vec<f64> {
            zero_grads(m);
            m.branch_forward(&reference, Mode::Train).unwrap();
            m.branch_forward(&query, Mode::Train).unwrap();
            let shape = vec![1usize, 8];
            let ones = Tensor::full(&shape, 1.0f64);
            let zeros = Tensor::zeros(&shape);
            m.backward_embeddings(
                if gr { &ones } else { &zeros },
                if gq { &ones } else { &zeros },
            )
            .unwrap();
            let mut out = Vec::new();
            m.for_each_param(&mut |name, p| {
                if name == "stage0.conv.weight" {
                    out = p.grad.data().to_vec();
                }
            });
            out
        };

        let g_query_only = grads_with(&mut model, true, false);
        let g_ref_only = grads_with(&mut model, false, true);
        let g_both = grads_with(&mut model, true, true);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(norm(&g_query_only) > 1e-12, "query branch contributes no gradient");
        assert!(norm(&g_ref_only) > 1e-12, "reference branch contributes no gradient");
        for i in 0..g_both.len() {
            let sum = g_query_only[i] + g_ref_only[i];
            assert!(
                (g_both[i] - sum).abs() <= 1e-9 * g_both[i].abs().max(1.0),
                "branch gradients do not accumulate additively"
            );
        }
    }

    #[test]
    fn untrained_loss_is_near_ln_n_classes() {
        let cfg = tiny_config(7);
        let mut model = SResnn::<f32>::build(&cfg, 5).unwrap();
        let reference = random_images(7, &cfg, 41);
        let query = random_images(7, &cfg, 42);
        let logits = model.forward_pair(&reference, &query, Mode::Eval).unwrap();
        let labels = one_hot::<f32>(&[0, 1, 2, 3, 4, 5, 6], 7).unwrap();
        let loss = softmax_cross_entropy(&logits, &labels).unwrap().loss as f64;
        let expect = (7.0f64).ln();
        assert!(
            (loss - expect).abs() / expect < 0.10,
            "loss {loss}, expected about {expect}"
        );
    }

    #[test]
    fn stale_backward_is_an_error() {
        let cfg = tiny_config(4);
        let mut model = SResnn::<f32>::build(&cfg, 1).unwrap();
        let g = Tensor::zeros(&[1, 4]);
        assert!(matches!(model.backward(&g), Err(Error::StaleGraph(_))));
    }

    #[test]
    fn desk_spatial_trace_matches_floor_arithmetic() {
        let cfg = SResnnConfig::desk(28);
        let mut model = SResnn::<f32>::build(&cfg, 0).unwrap();
        let img = random_images(1, &cfg, 9);
        let g = model.branch_forward(&img, Mode::Eval).unwrap();
        assert_eq!(g.shape(), &[1, 128]);
        let logits = model.infer_pair(&img, &img).unwrap();
        assert_eq!(logits.shape(), &[1, 28]);
    }
}
