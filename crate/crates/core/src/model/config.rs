//! Architecture hyperparameters and the structural layer plan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::conv_output_dim;

/// One of the four branch stages: a convolution (with batch norm and ReLU)
/// followed by 3x3/stride-2 max pooling and a bottleneck residual block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub out_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub conv_padding: usize,
}

/// Full architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SResnnConfig {
    /// Exactly four stages.
    pub stages: Vec<StageConfig>,
    /// Adaptive average-pool output (h, w) at the end of each branch.
    pub branch_pool: (usize, usize),
    /// Width of the per-branch fully connected embedding.
    pub branch_fc_out: usize,
    /// Dropout probability on the concatenated embeddings.
    pub head_dropout_p: f64,
    pub n_classes: usize,
    /// Branch input (channels, height, width).
    pub input: (usize, usize, usize),
}

impl SResnnConfig {
    /// Paper-fidelity configuration: 3x224x224 input, stage channels
    /// (32, 64, 128, 256) with kernels (7, 5, 3, 3), 5x5 adaptive pool so the
    /// branch flatten width is exactly 6400, branch FC 6400 -> 2048.
    pub fn paper_default() -> Self {
        SResnnConfig {
            stages: vec![
                StageConfig { out_channels: 32, conv_kernel: 7, conv_stride: 2, conv_padding: 3 },
                StageConfig { out_channels: 64, conv_kernel: 5, conv_stride: 1, conv_padding: 2 },
                StageConfig { out_channels: 128, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 256, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
            ],
            branch_pool: (5, 5),
            branch_fc_out: 2048,
            head_dropout_p: 0.5,
            n_classes: 28,
            input: (3, 224, 224),
        }
    }

    /// Desk-scale configuration trainable on a CPU in minutes:
    /// 3x64x64 input, channels (8, 16, 32, 64), branch FC 256 -> 128.
    pub fn desk(n_classes: usize) -> Self {
        SResnnConfig {
            stages: vec![
                StageConfig { out_channels: 8, conv_kernel: 5, conv_stride: 1, conv_padding: 2 },
                StageConfig { out_channels: 16, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 32, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 64, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
            ],
            branch_pool: (2, 2),
            branch_fc_out: 128,
            head_dropout_p: 0.5,
            n_classes,
            input: (3, 64, 64),
        }
    }

    /// Branch flatten width: last stage channels x pool area.
    pub fn branch_fc_in(&self) -> usize {
        self.stages.last().map(|s| s.out_channels).unwrap_or(0)
            * self.branch_pool.0
            * self.branch_pool.1
    }

    /// Classifier input width: two concatenated branch embeddings.
    pub fn classifier_in(&self) -> usize {
        2 * self.branch_fc_out
    }

    /// (channels, h, w) after each stage, ending before the adaptive pool.
    pub fn spatial_trace(&self) -> Result<Vec<(usize, usize, usize)>> {
        let (mut c, mut h, mut w) = self.input;
        let mut trace = vec![(c, h, w)];
        for (i, s) in self.stages.iter().enumerate() {
            let err = |what: String| Error::InvalidConfig(format!("stage {i}: {what}"));
            let oh = conv_output_dim(h, s.conv_kernel, s.conv_stride, s.conv_padding)
                .ok_or_else(|| err(format!("conv kernel {} does not fit {h}x{w}", s.conv_kernel)))?;
            let ow = conv_output_dim(w, s.conv_kernel, s.conv_stride, s.conv_padding)
                .ok_or_else(|| err(format!("conv kernel {} does not fit {h}x{w}", s.conv_kernel)))?;
            if oh < 3 || ow < 3 {
                return Err(err(format!("pooling input {oh}x{ow} is smaller than 3x3")));
            }
            h = (oh - 3) / 2 + 1;
            w = (ow - 3) / 2 + 1;
            c = s.out_channels;
            trace.push((c, h, w));
        }
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "exactly 4 stages required, got {}",
                self.stages.len()
            )));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.out_channels == 0 || s.out_channels % 4 != 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: out_channels {} must be a positive multiple of 4 (bottleneck C/4)",
                    s.out_channels
                )));
            }
            if s.conv_kernel % 2 == 0 || s.conv_kernel == 0 {
                return Err(Error::InvalidConfig(format!(
                    "stage {i}: kernel {} must be odd",
                    s.conv_kernel
                )));
            }
            if s.conv_stride == 0 {
                return Err(Error::InvalidConfig(format!("stage {i}: stride must be >= 1")));
            }
        }
        if self.branch_pool.0 == 0 || self.branch_pool.1 == 0 {
            return Err(Error::InvalidConfig("adaptive pool size must be positive".into()));
        }
        if self.branch_fc_out == 0 {
            return Err(Error::InvalidConfig("branch_fc_out must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.head_dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "head_dropout_p must be in [0, 1), got {}",
                self.head_dropout_p
            )));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidConfig("n_classes must be >= 2".into()));
        }
        if self.input.0 == 0 || self.input.1 == 0 || self.input.2 == 0 {
            return Err(Error::InvalidConfig("input dimensions must be positive".into()));
        }
        self.spatial_trace()?;
        for spec in self.layer_plan() {
            spec.validate()?;
        }
        Ok(())
    }

    /// Structural description of the full pipeline, stage by stage, as it is
    /// also embedded in checkpoints.
    pub fn layer_plan(&self) -> Vec<LayerSpec> {
        let mut plan = Vec::new();
        let mut in_ch = self.input.0;
        for s in &self.stages {
            plan.push(LayerSpec::Conv2d {
                in_channels: in_ch,
                out_channels: s.out_channels,
                kernel: s.conv_kernel,
                stride: s.conv_stride,
                padding: s.conv_padding,
            });
            plan.push(LayerSpec::Batchnorm2d { channels: s.out_channels });
            plan.push(LayerSpec::Relu);
            plan.push(LayerSpec::Maxpool2d { window: 3, stride: 2 });
            plan.push(LayerSpec::ResidualBlock { channels: s.out_channels });
            in_ch = s.out_channels;
        }
        plan.push(LayerSpec::AdaptiveAvgPool {
            out_h: self.branch_pool.0,
            out_w: self.branch_pool.1,
        });
        plan.push(LayerSpec::Flatten);
        plan.push(LayerSpec::Dense {
            n_in: self.branch_fc_in(),
            n_out: self.branch_fc_out,
        });
        plan.push(LayerSpec::Relu);
        plan.push(LayerSpec::Concat);
        plan.push(LayerSpec::Dropout { p: self.head_dropout_p });
        plan.push(LayerSpec::Dense {
            n_in: self.classifier_in(),
            n_out: self.n_classes,
        });
        plan
    }
}

/// One entry of the structural layer plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Batchnorm2d {
        channels: usize,
    },
    Relu,
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    /// Bottleneck block: 1x1 C->C/4, 3x3 C/4->C/4, 1x1 C/4->C plus identity.
    ResidualBlock {
        channels: usize,
    },
    AdaptiveAvgPool {
        out_h: usize,
        out_w: usize,
    },
    Flatten,
    Dense {
        n_in: usize,
        n_out: usize,
    },
    Dropout {
        p: f64,
    },
    Concat,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        match *self {
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, .. } => {
                if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 {
                    return bad(format!("conv2d: {self:?}"));
                }
            }
            LayerSpec::Batchnorm2d { channels } => {
                if channels == 0 {
                    return bad("batchnorm2d: zero channels".into());
                }
            }
            LayerSpec::Maxpool2d { window, stride } => {
                if window == 0 || stride == 0 {
                    return bad(format!("maxpool2d: {self:?}"));
                }
            }
            LayerSpec::ResidualBlock { channels } => {
                if channels == 0 || channels % 4 != 0 {
                    return bad(format!("residual_block: channels {channels} not a multiple of 4"));
                }
            }
            LayerSpec::AdaptiveAvgPool { out_h, out_w } => {
                if out_h == 0 || out_w == 0 {
                    return bad(format!("adaptive_avg_pool: {self:?}"));
                }
            }
            LayerSpec::Dense { n_in, n_out } => {
                if n_in == 0 || n_out == 0 {
                    return bad(format!("dense: {self:?}"));
                }
            }
            LayerSpec::Dropout { p } => {
                if !(0.0..1.0).contains(&p) {
                    return bad(format!("dropout: p = {p}"));
                }
            }
            LayerSpec::Relu | LayerSpec::Flatten | LayerSpec::Concat => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_config_hits_the_published_head_sizes() {
        let cfg = SResnnConfig::paper_default();
        cfg.validate().unwrap();
        // 224 -> 112 -> 55 -> 27 -> 13 -> 6, then 5x5 adaptive pool.
        let trace = cfg.spatial_trace().unwrap();
        assert_eq!(trace, vec![
            (3, 224, 224),
            (32, 55, 55),
            (64, 27, 27),
            (128, 13, 13),
            (256, 6, 6),
        ]);
        assert_eq!(cfg.branch_fc_in(), 6400);
        assert_eq!(cfg.branch_fc_out, 2048);
        assert_eq!(cfg.classifier_in(), 4096);
    }

    #[test]
    fn desk_config_classifier_width_is_256() {
        let cfg = SResnnConfig::desk(28);
        cfg.validate().unwrap();
        assert_eq!(cfg.classifier_in(), 256);
        assert_eq!(cfg.branch_fc_in(), 256);
        let trace = cfg.spatial_trace().unwrap();
        assert_eq!(trace.last(), Some(&(64, 3, 3)));
    }

    #[test]
    fn stage_count_and_channel_multiples_are_enforced() {
        let mut cfg = SResnnConfig::desk(28);
        cfg.stages.pop();
        assert!(cfg.validate().is_err());

        let mut cfg = SResnnConfig::desk(28);
        cfg.stages[1].out_channels = 18;
        assert!(cfg.validate().is_err());

        let mut cfg = SResnnConfig::desk(28);
        cfg.stages[0].conv_kernel = 4;
        assert!(cfg.validate().is_err());

        let mut cfg = SResnnConfig::desk(28);
        cfg.head_dropout_p = 1.0;
        assert!(cfg.validate().is_err());

        // Input too small for four pooling steps.
        let mut cfg = SResnnConfig::desk(28);
        cfg.input = (3, 16, 16);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn layer_plan_orders_stage_pipeline_correctly() {
        let cfg = SResnnConfig::desk(28);
        let plan = cfg.layer_plan();
        // conv -> BN -> ReLU -> maxpool -> resblock per stage.
        for stage in 0..4 {
            let base = stage * 5;
            assert!(matches!(plan[base], LayerSpec::Conv2d { .. }));
            assert!(matches!(plan[base + 1], LayerSpec::Batchnorm2d { .. }));
            assert!(matches!(plan[base + 2], LayerSpec::Relu));
            assert!(matches!(plan[base + 3], LayerSpec::Maxpool2d { window: 3, stride: 2 }));
            assert!(matches!(plan[base + 4], LayerSpec::ResidualBlock { .. }));
        }
        let tail = &plan[20..];
        assert!(matches!(tail[0], LayerSpec::AdaptiveAvgPool { .. }));
        assert!(matches!(tail[1], LayerSpec::Flatten));
        assert!(matches!(tail[2], LayerSpec::Dense { n_in: 256, n_out: 128 }));
        assert!(matches!(tail[3], LayerSpec::Relu));
        assert!(matches!(tail[4], LayerSpec::Concat));
        assert!(matches!(tail[5], LayerSpec::Dropout { .. }));
        assert!(matches!(tail[6], LayerSpec::Dense { n_in: 256, n_out: 28 }));
    }
}
