//! Mini-batch training loop over (reference, query, label) pairs.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::sresnn::SResnn;
use crate::nn::{one_hot, softmax_cross_entropy, zero_grads, Mode, Sgd};
use crate::tensor::Tensor;

/// One training sample: preprocessed images shared via `Arc` so the same
/// reference image can back all 27 shaped clips of a piece.
#[derive(Debug, Clone)]
pub struct PairSample {
    pub reference: Arc<Tensor<f32>>,
    pub query: Arc<Tensor<f32>>,
    pub label: usize,
}

/// Training hyperparameters. Defaults follow the training recipe:
/// 200 epochs, batch 16, SGD with lr 1e-3 / momentum 0.9 / decay 5e-4.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        let sgd = Sgd::default();
        FitConfig {
            epochs: 200,
            batch_size: 16,
            lr: sgd.lr,
            momentum: sgd.momentum,
            weight_decay: sgd.weight_decay,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn optimizer(&self) -> Sgd {
        Sgd {
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_loss: f64,
    pub final_accuracy: f64,
}

fn stack_images(samples: &[&PairSample], pick_query: bool) -> Result<Tensor<f32>> {
    let first = if pick_query {
        &samples[0].query
    } else {
        &samples[0].reference
    };
    let s = first.shape();
    if s.len() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "pair images must be [C, H, W], got {s:?}"
        )));
    }
    let plane = s.iter().product::<usize>();
    let mut out = Tensor::zeros(&[samples.len(), s[0], s[1], s[2]]);
    for (i, sample) in samples.iter().enumerate() {
        let img = if pick_query { &sample.query } else { &sample.reference };
        if img.shape() != s {
            return Err(Error::ShapeMismatch("inconsistent image shapes in batch".into()));
        }
        out.data_mut()[i * plane..(i + 1) * plane].copy_from_slice(img.data());
    }
    Ok(out)
}

fn argmax_rows(logits: &Tensor<f32>) -> Vec<usize> {
    let classes = logits.shape()[1];
    logits
        .data()
        .chunks_exact(classes)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Trains in shuffled mini-batches; deterministic for a fixed seed.
/// `on_epoch` fires after every epoch with that epoch's statistics.
pub fn fit(
    model: &mut SResnn<f32>,
    samples: &[PairSample],
    cfg: &FitConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("training samples"));
    }
    let n_classes = model.config().n_classes;
    for s in samples {
        if s.label >= n_classes {
            return Err(Error::UnknownLabel(s.label));
        }
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let sgd = cfg.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        final_loss: f64::NAN,
        final_accuracy: f64::NAN,
    };

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut correct = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&PairSample> = chunk.iter().map(|&i| &samples[i]).collect();
            let references = stack_images(&batch, false)?;
            let queries = stack_images(&batch, true)?;
            let labels: Vec<usize> = batch.iter().map(|s| s.label).collect();
            let targets = one_hot::<f32>(&labels, n_classes)?;

            zero_grads(model);
            let logits = model.forward_pair(&references, &queries, Mode::Train)?;
            let loss = softmax_cross_entropy(&logits, &targets)?;
            if !loss.loss.is_finite() {
                return Err(Error::TrainDiverged {
                    epoch,
                    batch: batch_idx,
                });
            }
            model.backward(&loss.logit_grad)?;
            sgd.step(model);

            loss_sum += loss.loss as f64 * batch.len() as f64;
            for (pred, &truth) in argmax_rows(&logits).iter().zip(&labels) {
                if *pred == truth {
                    correct += 1;
                }
            }
        }
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
        };
        on_epoch(&stats);
        report.final_loss = stats.mean_loss;
        report.final_accuracy = stats.train_accuracy;
        report.epochs.push(stats);
    }
    Ok(report)
}

/// Frozen-model predictions for a set of pairs; parallelizes across samples.
pub fn predict_pairs(model: &SResnn<f32>, samples: &[PairSample]) -> Result<Vec<usize>> {
    samples
        .par_iter()
        .map(|s| {
            let (c, h, w) = model.config().input;
            let reference = Tensor::from_vec(vec![1, c, h, w], s.reference.data().to_vec())?;
            let query = Tensor::from_vec(vec![1, c, h, w], s.query.data().to_vec())?;
            let logits = model.infer_pair(&reference, &query)?;
            Ok(argmax_rows(&logits)[0])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::{SResnnConfig, StageConfig};
    use rand::Rng;

    fn tiny_config(n_classes: usize) -> SResnnConfig {
        SResnnConfig {
            stages: vec![
                StageConfig { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 8, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
            ],
            branch_pool: (1, 1),
            branch_fc_out: 16,
            head_dropout_p: 0.25,
            n_classes,
            input: (3, 40, 40),
        }
    }

    fn toy_samples(cfg: &SResnnConfig, n_per_class: usize, classes: usize) -> Vec<PairSample> {
        // Distinguishable by construction: class k gets a bright horizontal
        // band at row k in the query image; references are all the same.
        let (c, h, w) = cfg.input;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let reference = Arc::new(
            Tensor::from_vec(
                vec![c, h, w],
                (0..c * h * w).map(|_| rng.gen_range(-0.1..0.1)).collect(),
            )
            .unwrap(),
        );
        let mut out = Vec::new();
        for k in 0..classes {
            for _ in 0..n_per_class {
                let mut img = Tensor::zeros(&[c, h, w]);
                for ch in 0..c {
                    for x in 0..w {
                        for dy in 0..4 {
                            img.data_mut()[ch * h * w + (8 * k + dy) * w + x] =
                                1.0 + rng.gen_range(-0.05..0.05f32);
                        }
                    }
                }
                out.push(PairSample {
                    reference: reference.clone(),
                    query: Arc::new(img),
                    label: k,
                });
            }
        }
        out
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        use crate::nn::Module;
        let cfg = tiny_config(3);
        let mut model = SResnn::<f32>::build(&cfg, 1).unwrap();
        let mut before = Vec::new();
        model.for_each_param(&mut |_, p| before.push(p.value.clone()));
        let samples = toy_samples(&cfg, 2, 3);
        let fit_cfg = FitConfig {
            epochs: 2,
            batch_size: 4,
            lr: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
            seed: 0,
        };
        fit(&mut model, &samples, &fit_cfg, |_| {}).unwrap();
        let mut i = 0;
        model.for_each_param(&mut |_, p| {
            assert_eq!(p.value, before[i]);
            i += 1;
        });
    }

    #[test]
    fn overfits_a_toy_set() {
        let cfg = tiny_config(4);
        let mut model = SResnn::<f32>::build(&cfg, 7).unwrap();
        let samples = toy_samples(&cfg, 2, 4);
        let fit_cfg = FitConfig {
            epochs: 60,
            batch_size: 8,
            lr: 0.02,
            seed: 3,
            ..FitConfig::default()
        };
        let report = fit(&mut model, &samples, &fit_cfg, |_| {}).unwrap();
        assert_eq!(report.final_accuracy, 1.0, "failed to overfit toy set");
        assert!(report.final_loss < 0.05, "final loss {}", report.final_loss);
        // And the frozen model reproduces the memorized labels.
        let preds = predict_pairs(&model, &samples).unwrap();
        for (p, s) in preds.iter().zip(&samples) {
            assert_eq!(*p, s.label);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = tiny_config(3);
        let samples = toy_samples(&cfg, 2, 3);
        let fit_cfg = FitConfig {
            epochs: 3,
            batch_size: 4,
            seed: 11,
            ..FitConfig::default()
        };
        let run = || {
            let mut model = SResnn::<f32>::build(&cfg, 2).unwrap();
            let r = fit(&mut model, &samples, &fit_cfg, |_| {}).unwrap();
            let logits = model
                .infer_pair(
                    &Tensor::from_vec(
                        vec![1, 3, 40, 40],
                        samples[0].reference.data().to_vec(),
                    )
                    .unwrap(),
                    &Tensor::from_vec(vec![1, 3, 40, 40], samples[0].query.data().to_vec())
                        .unwrap(),
                )
                .unwrap();
            (r.final_loss, logits.data().to_vec())
        };
        let (l1, o1) = run();
        let (l2, o2) = run();
        assert_eq!(l1, l2);
        assert_eq!(o1, o2);
    }

    #[test]
    fn bad_labels_are_rejected() {
        let cfg = tiny_config(3);
        let mut model = SResnn::<f32>::build(&cfg, 1).unwrap();
        let mut samples = toy_samples(&cfg, 1, 3);
        samples[0].label = 7;
        assert!(matches!(
            fit(&mut model, &samples, &FitConfig::default(), |_| {}),
            Err(Error::UnknownLabel(7))
        ));
    }
}
