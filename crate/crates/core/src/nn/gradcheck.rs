//! Central finite-difference verification of analytic gradients.
//!
//! The engine treats any [`Module`] plus a loss closure as a black box:
//! it snapshots the analytic gradients from one forward/backward pass, then
//! perturbs sampled parameter elements by ±eps and compares the loss slope.
//! Everything runs in f64; callers are expected to build their models in
//! 64-bit mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::nn::{
    zero_grads, AdaptiveAvgPool2d, BatchNorm2d, Conv2d, Dense, Dropout, MaxPool2d, Mode, Module,
    Relu,
};
use crate::tensor::{Parameter, Tensor};

/// Settings for a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Elements sampled per parameter tensor (small tensors are checked fully).
    pub max_elems_per_tensor: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_elems_per_tensor: 8,
            seed: 0,
        }
    }
}

/// Outcome of a sweep: worst relative error and where it occurred.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub checked_elems: usize,
}

/// Relative error convention used throughout:
/// |analytic - fd| / max(|analytic|, |fd|, 1e-8).
#[inline]
pub fn relative_error(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-8)
}

/// Compares analytic gradients of `model` against central finite differences.
///
/// `loss_fn(model, with_backward)` must run one deterministic forward pass
/// and return the scalar loss; when `with_backward` is true it must also
/// backpropagate so parameter gradients are populated. The engine clears the
/// tape after forward-only evaluations.
pub fn grad_check<M: Module<f64>>(
    model: &mut M,
    mut loss_fn: impl FnMut(&mut M, bool) -> Result<f64>,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    zero_grads(model);
    loss_fn(model, true)?;
    model.reset_tape();

    let mut names: Vec<String> = Vec::new();
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.for_each_param(&mut |name, p| {
        names.push(name.to_string());
        analytic.push(p.grad.data().to_vec());
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        checked_elems: 0,
    };

    for (p_idx, grads) in analytic.iter().enumerate() {
        let len = grads.len();
        let elems: Vec<usize> = if len <= cfg.max_elems_per_tensor {
            (0..len).collect()
        } else {
            let mut picked = std::collections::BTreeSet::new();
            while picked.len() < cfg.max_elems_per_tensor {
                picked.insert(rng.gen_range(0..len));
            }
            picked.into_iter().collect()
        };
        for e_idx in elems {
            perturb(model, p_idx, e_idx, cfg.eps);
            let plus = loss_fn(model, false)?;
            model.reset_tape();
            perturb(model, p_idx, e_idx, -2.0 * cfg.eps);
            let minus = loss_fn(model, false)?;
            model.reset_tape();
            perturb(model, p_idx, e_idx, cfg.eps);

            let fd = (plus - minus) / (2.0 * cfg.eps);
            let rel = relative_error(grads[e_idx], fd);
            report.checked_elems += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = format!("{}[{}]", names[p_idx], e_idx);
            }
        }
    }
    Ok(report)
}

fn perturb<M: Module<f64>>(model: &mut M, p_idx: usize, e_idx: usize, delta: f64) {
    let mut k = 0usize;
    model.for_each_param(&mut |_, p| {
        if k == p_idx {
            p.value.data_mut()[e_idx] += delta;
        }
        k += 1;
    });
}

/// Layer kinds exposed to the per-kind gradient check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv2d,
    BatchNorm2d,
    Relu,
    MaxPool2d,
    Dense,
    Dropout,
    AdaptiveAvgPool,
    SoftmaxCrossEntropy,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Conv2d,
        LayerKind::BatchNorm2d,
        LayerKind::Relu,
        LayerKind::MaxPool2d,
        LayerKind::Dense,
        LayerKind::Dropout,
        LayerKind::AdaptiveAvgPool,
        LayerKind::SoftmaxCrossEntropy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Conv2d => "conv2d",
            LayerKind::BatchNorm2d => "batchnorm2d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool2d => "maxpool2d",
            LayerKind::Dense => "dense",
            LayerKind::Dropout => "dropout",
            LayerKind::AdaptiveAvgPool => "adaptive_avg_pool",
            LayerKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }
}

trait CheckableLayer: Module<f64> {
    fn fwd(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>>;
    fn bwd(&mut self, gy: &Tensor<f64>) -> Result<Tensor<f64>>;
}

macro_rules! checkable {
    ($t:ty) => {
        impl CheckableLayer for $t {
            fn fwd(&mut self, x: &Tensor<f64>, mode: Mode) -> Result<Tensor<f64>> {
                self.forward(x, mode)
            }
            fn bwd(&mut self, gy: &Tensor<f64>) -> Result<Tensor<f64>> {
                self.backward(gy)
            }
        }
    };
}

checkable!(Conv2d<f64>);
checkable!(BatchNorm2d<f64>);
checkable!(Relu<f64>);
checkable!(MaxPool2d<f64>);
checkable!(Dense<f64>);
checkable!(Dropout<f64>);
checkable!(AdaptiveAvgPool2d<f64>);

/// Wraps a layer with its input promoted to a parameter, so the sweep also
/// verifies input gradients. Loss is 0.5 * sum((y - target)^2).
struct LayerHarness<L: CheckableLayer> {
    input: Parameter<f64>,
    layer: L,
    target: Tensor<f64>,
}

impl<L: CheckableLayer> Module<f64> for LayerHarness<L> {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<f64>)) {
        f("input", &mut self.input);
        self.layer.for_each_param(f);
    }

    fn reset_tape(&mut self) {
        self.layer.reset_tape();
    }
}

fn harness_loss<L: CheckableLayer>(h: &mut LayerHarness<L>, with_backward: bool) -> Result<f64> {
    let x = h.input.value.clone();
    let y = h.layer.fwd(&x, Mode::Train)?;
    let mut loss = 0.0;
    for (&yi, &ti) in y.data().iter().zip(h.target.data()) {
        loss += 0.5 * (yi - ti) * (yi - ti);
    }
    if with_backward {
        let mut gy = y.clone();
        for (g, &ti) in gy.data_mut().iter_mut().zip(h.target.data()) {
            *g -= ti;
        }
        let gx = h.layer.bwd(&gy)?;
        h.input.grad.add_assign(&gx)?;
    } else {
        h.layer.reset_tape();
    }
    Ok(loss)
}

/// Random values kept away from zero so ReLU kinks and pooling ties cannot
/// sit within eps of the perturbation.
fn safe_random(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

fn check_harness<L: CheckableLayer>(layer: L, in_shape: &[usize], seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let n: usize = in_shape.iter().product();
    let input = Tensor::from_vec(in_shape.to_vec(), safe_random(&mut rng, n))?;
    let mut probe = LayerHarness {
        input: Parameter::new(input),
        layer,
        target: Tensor::zeros(&[1]),
    };
    // Dry run to size the target, then randomize it.
    let y = {
        let x = probe.input.value.clone();
        let out = probe.layer.fwd(&x, Mode::Train)?;
        probe.layer.reset_tape();
        out
    };
    probe.target = Tensor::from_vec(y.shape().to_vec(), safe_random(&mut rng, y.len()))?;
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    let report = grad_check(&mut probe, harness_loss, &cfg)?;
    Ok(report.max_rel_error)
}

/// Logits-as-parameter harness for the loss function itself.
struct LossHarness {
    logits: Parameter<f64>,
    labels: Tensor<f64>,
}

impl Module<f64> for LossHarness {
    fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<f64>)) {
        f("logits", &mut self.logits);
    }

    fn reset_tape(&mut self) {}
}

/// Runs the finite-difference check for one layer kind and returns the
/// maximum relative error across parameter and input gradients.
pub fn check_layer_kind(kind: LayerKind, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match kind {
        LayerKind::Conv2d => {
            let w = Tensor::from_vec(vec![4, 3, 3, 3], safe_random(&mut rng, 108))?;
            let b = Tensor::from_vec(vec![4], safe_random(&mut rng, 4))?;
            check_harness(Conv2d::new(w, b, 2, 1), &[2, 3, 7, 8], seed)
        }
        LayerKind::BatchNorm2d => {
            let mut bn = BatchNorm2d::new(3, 1e-5, 0.1);
            bn.gamma.value = Tensor::from_vec(vec![3], safe_random(&mut rng, 3))?;
            bn.beta.value = Tensor::from_vec(vec![3], safe_random(&mut rng, 3))?;
            check_harness(bn, &[2, 3, 4, 5], seed)
        }
        LayerKind::Relu => check_harness(Relu::new(), &[2, 3, 5, 4], seed),
        LayerKind::MaxPool2d => check_harness(MaxPool2d::new(3, 2), &[2, 2, 7, 9], seed),
        LayerKind::Dense => {
            let w = Tensor::from_vec(vec![7, 10], safe_random(&mut rng, 70))?;
            let b = Tensor::from_vec(vec![7], safe_random(&mut rng, 7))?;
            check_harness(Dense::new(w, b), &[4, 10], seed)
        }
        LayerKind::Dropout => {
            // Checked with p = 0 (training runs the check with dropout off);
            // the masking path has no parameters and is covered by unit tests.
            check_harness(Dropout::new(0.0, seed)?, &[3, 20], seed)
        }
        LayerKind::AdaptiveAvgPool => {
            check_harness(AdaptiveAvgPool2d::new(2, 2), &[2, 3, 7, 5], seed)
        }
        LayerKind::SoftmaxCrossEntropy => {
            let classes = 9;
            let batch = 4;
            let logits = Tensor::from_vec(
                vec![batch, classes],
                (0..batch * classes).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            )?;
            let ids: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..classes)).collect();
            let labels = crate::nn::loss::one_hot(&ids, classes)?;
            let mut probe = LossHarness {
                logits: Parameter::new(logits),
                labels,
            };
            let report = grad_check(
                &mut probe,
                |h, with_backward| {
                    let r = crate::nn::softmax_cross_entropy(&h.logits.value, &h.labels)?;
                    if with_backward {
                        h.logits.grad.add_assign(&r.logit_grad)?;
                    }
                    Ok(r.loss)
                },
                &GradCheckConfig {
                    seed,
                    ..GradCheckConfig::default()
                },
            )?;
            Ok(report.max_rel_error)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_layer_error_is_tiny() {
        // Linear layer + quadratic loss: central differences are exact up to
        // floating-point noise.
        let err = check_layer_kind(LayerKind::Dense, 1).unwrap();
        assert!(err <= 1e-6, "dense fd error {err}");
    }

    #[test]
    fn every_layer_kind_passes_over_20_seeds() {
        for seed in 0..20 {
            for kind in LayerKind::ALL {
                let err = check_layer_kind(kind, seed).unwrap();
                assert!(
                    err <= 1e-4,
                    "{} failed at seed {seed}: {err}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn engine_detects_a_wrong_gradient() {
        // A dense layer whose backward we sabotage by doubling the loss in
        // the forward-only path must be flagged.
        struct Bad {
            w: Parameter<f64>,
        }
        impl Module<f64> for Bad {
            fn for_each_param(&mut self, f: &mut dyn FnMut(&str, &mut Parameter<f64>)) {
                f("w", &mut self.w);
            }
            fn reset_tape(&mut self) {}
        }
        let mut bad = Bad {
            w: Parameter::new(Tensor::from_vec(vec![2], vec![0.5, -0.25]).unwrap()),
        };
        let report = grad_check(
            &mut bad,
            |m, with_backward| {
                let v = m.w.value.data().to_vec();
                let loss = v[0] * v[0] + v[1] * v[1];
                if with_backward {
                    // Wrong on purpose: claims a gradient of x instead of 2x.
                    m.w.grad.data_mut()[0] += v[0];
                    m.w.grad.data_mut()[1] += v[1];
                }
                Ok(loss)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error > 0.3, "sabotage went unnoticed");
    }
}
