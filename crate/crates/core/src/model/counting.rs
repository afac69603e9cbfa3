//! Exact parameter and FLOP accounting from the configuration alone.

use crate::error::Result;
use crate::model::config::SResnnConfig;

/// Multiply-accumulate count for one forward pass of an input pair (both
/// branch evaluations plus the classifier head), and the conventional
/// 2-ops-per-MAC figure. Only conv and dense layers are counted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlopCount {
    pub macs: u64,
    pub flops_mul2: u64,
}

/// Exact trainable-parameter count: conv/dense weights and biases plus
/// batch-norm affine pairs. Running statistics are buffers, not parameters.
pub fn count_params(config: &SResnnConfig) -> Result<usize> {
    config.validate()?;
    let mut total = 0usize;
    let mut in_ch = config.input.0;
    for s in &config.stages {
        let c = s.out_channels;
        // Stage conv + BN.
        total += c * in_ch * s.conv_kernel * s.conv_kernel + c;
        total += 2 * c;
        // Bottleneck block: 1x1 C->C/4, 3x3 C/4->C/4, 1x1 C/4->C, 3 BNs.
        let mid = c / 4;
        total += mid * c + mid + 2 * mid;
        total += mid * mid * 9 + mid + 2 * mid;
        total += c * mid + c + 2 * c;
        in_ch = c;
    }
    total += config.branch_fc_out * config.branch_fc_in() + config.branch_fc_out;
    total += config.n_classes * config.classifier_in() + config.n_classes;
    Ok(total)
}

/// MAC count at the configured input size.
pub fn count_flops(config: &SResnnConfig) -> Result<FlopCount> {
    config.validate()?;
    let trace = config.spatial_trace()?;
    let mut branch_macs = 0u64;
    let mut in_ch = config.input.0;
    let (mut h, mut w) = (config.input.1, config.input.2);
    for (i, s) in config.stages.iter().enumerate() {
        let c = s.out_channels as u64;
        let oh = (h + 2 * s.conv_padding - s.conv_kernel) / s.conv_stride + 1;
        let ow = (w + 2 * s.conv_padding - s.conv_kernel) / s.conv_stride + 1;
        branch_macs +=
            (oh * ow) as u64 * c * in_ch as u64 * (s.conv_kernel * s.conv_kernel) as u64;
        // Residual block runs at the pooled size.
        let (_, ph, pw) = trace[i + 1];
        let plane = (ph * pw) as u64;
        let mid = c / 4;
        branch_macs += plane * mid * c; // 1x1 reduce
        branch_macs += plane * mid * mid * 9; // 3x3
        branch_macs += plane * c * mid; // 1x1 expand
        in_ch = s.out_channels;
        h = ph;
        w = pw;
    }
    branch_macs += (config.branch_fc_out * config.branch_fc_in()) as u64;
    let head_macs = (config.n_classes * config.classifier_in()) as u64;
    let macs = 2 * branch_macs + head_macs;
    Ok(FlopCount {
        macs,
        flops_mul2: 2 * macs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::StageConfig;

    #[test]
    fn branch_fc_contributes_exactly_13109248_parameters() {
        let cfg = SResnnConfig::paper_default();
        assert_eq!(cfg.branch_fc_in(), 6400);
        let fc_params = cfg.branch_fc_out * cfg.branch_fc_in() + cfg.branch_fc_out;
        assert_eq!(fc_params, 13_109_248);
    }

    #[test]
    fn paper_config_total_sits_in_the_calibration_band() {
        let total = count_params(&SResnnConfig::paper_default()).unwrap();
        assert!(
            (12_600_000..=17_100_000).contains(&total),
            "total {total} outside [12.6M, 17.1M]"
        );
    }

    #[test]
    fn hand_counted_tiny_config() {
        // One handmade config, counted with pencil and paper:
        // stage (in 3 -> out 4, k3): conv 4*3*9+4 = 112, bn 8
        // block (C=4, mid=1): 1x1 4->1: 4+1=5, bn 2; 3x3 1->1: 9+1=10, bn 2;
        //                     1x1 1->4: 4+4=8, bn 8  => 35
        // stages 2..4 (in 4 -> out 4, k3): conv 4*4*9+4 = 148, bn 8, block 35
        // branch fc (4*1*1 -> 8): 32+8 = 40
        // classifier (16 -> 5): 80+5 = 85
        let cfg = SResnnConfig {
            stages: vec![
                StageConfig { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
                StageConfig { out_channels: 4, conv_kernel: 3, conv_stride: 1, conv_padding: 1 },
            ],
            branch_pool: (1, 1),
            branch_fc_out: 8,
            head_dropout_p: 0.5,
            n_classes: 5,
            input: (3, 40, 40),
        };
        let expected = (112 + 8 + 35) + 3 * (148 + 8 + 35) + 40 + 85;
        assert_eq!(count_params(&cfg).unwrap(), expected);
    }

    #[test]
    fn count_matches_actually_built_model() {
        use crate::nn::param_count;
        let cfg = SResnnConfig::desk(28);
        let mut model = crate::model::SResnn::<f32>::build(&cfg, 0).unwrap();
        assert_eq!(count_params(&cfg).unwrap(), param_count(&mut model));
    }

    #[test]
    fn flops_report_both_conventions() {
        let fc = count_flops(&SResnnConfig::desk(28)).unwrap();
        assert_eq!(fc.flops_mul2, 2 * fc.macs);
        assert!(fc.macs > 0);
        // Dense-only sanity: the classifier contributes 256*28 MACs once.
        let paper = count_flops(&SResnnConfig::paper_default()).unwrap();
        assert!(paper.macs > fc.macs);
    }
}
