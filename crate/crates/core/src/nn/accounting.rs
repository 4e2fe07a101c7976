//! Closed-form parameter and FLOP accounting.
//!
//! These formulas are written independently of the model builder so the
//! runtime tally of a built [`ParameterSet`](crate::nn::ParameterSet) can be
//! checked against them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::config::{GatingAxis, ModelConfig, StemKind, IMU_CHANNELS, MIN_INPUT_LEN};

/// Reference figures for the default configuration as reported for the
/// original architecture (FLOPs, parameters).
pub const REFERENCE_FLOPS: f64 = 7.3e7;
pub const REFERENCE_PARAMS: f64 = 1.1e7;

fn norm_params(c: usize) -> usize {
    2 * c
}

fn conv_params(cin: usize, cout: usize, k: usize) -> usize {
    cin * cout * k + cout
}

fn depthwise_params(c: usize, k: usize) -> usize {
    c * k + c
}

fn block_params(cfg: &ModelConfig, c: usize) -> usize {
    let h = c / 2;
    let mut n = norm_params(c);
    for wing in 0..2 {
        n += norm_params(h);
        n += cfg
            .branch_kernels(wing)
            .iter()
            .map(|&k| depthwise_params(h, k))
            .sum::<usize>();
        n += conv_params(h, 3 * h, 1);
    }
    n += conv_params(c, c, 1);
    if cfg.stgu_enabled {
        n += norm_params(c);
        n += match cfg.stgu_gating_axis {
            GatingAxis::Time => conv_params(2, 1, 1),
            GatingAxis::Channel => conv_params(2 * c, c, 1),
        };
        n += depthwise_params(c, cfg.stgu_value_kernel);
    }
    n
}

/// Trainable parameter count derived from the configuration alone.
pub fn count_parameters(cfg: &ModelConfig) -> Result<usize> {
    cfg.validate()?;
    let w = cfg.stage_widths;
    let stem_k = match cfg.stem_kind {
        StemKind::NonoverlapK4s4 => 4,
        StemKind::Conv7s2Maxpool => 7,
    };
    let mut n = conv_params(IMU_CHANNELS, w[0], stem_k) + norm_params(w[0]);
    for s in 0..4 {
        if s > 0 {
            n += norm_params(w[s - 1]) + conv_params(w[s - 1], w[s], 2);
        }
        n += cfg.stage_depths[s] * block_params(cfg, w[s]);
    }
    n += norm_params(w[3]) + w[3] * cfg.output_dim + cfg.output_dim;
    Ok(n)
}

/// Temporal length after the stem and after each stage for input length `len`.
pub fn stage_lengths(cfg: &ModelConfig, len: usize) -> Result<[usize; 5]> {
    if len < MIN_INPUT_LEN {
        return Err(Error::Shape(format!(
            "input length {len} below minimum {MIN_INPUT_LEN}"
        )));
    }
    let stem = match cfg.stem_kind {
        StemKind::NonoverlapK4s4 => len / 4,
        StemKind::Conv7s2Maxpool => {
            let conv = (len + 6 - 7) / 2 + 1;
            (conv + 2 - 3) / 2 + 1
        }
    };
    let mut out = [stem; 5];
    let mut t = stem;
    for s in 1..4 {
        if t < 2 {
            return Err(Error::Shape(format!(
                "length {t} too short to downsample before stage {}",
                s + 1
            )));
        }
        t /= 2;
        out[s + 1] = t;
    }
    Ok(out)
}

/// Multiply-accumulate breakdown for one input window.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    /// Multiply-accumulates in convolution and linear layers.
    pub macs: u64,
    /// `2 × macs`.
    pub flops: u64,
    pub input_len: usize,
}

/// Counts MACs of every convolution and linear layer at its output positions;
/// normalization, pooling, softmax and gating element-wise ops are excluded.
pub fn estimate_flops(cfg: &ModelConfig, len: usize) -> Result<FlopReport> {
    cfg.validate()?;
    let lens = stage_lengths(cfg, len)?;
    let w = cfg.stage_widths;
    let mut macs: u64 = 0;
    let conv = |cin: usize, cout: usize, k: usize, tout: usize| (cin * cout * k * tout) as u64;
    macs += match cfg.stem_kind {
        StemKind::NonoverlapK4s4 => conv(IMU_CHANNELS, w[0], 4, lens[0]),
        StemKind::Conv7s2Maxpool => conv(IMU_CHANNELS, w[0], 7, (len + 6 - 7) / 2 + 1),
    };
    for s in 0..4 {
        let t = lens[s + 1];
        if s > 0 {
            macs += conv(w[s - 1], w[s], 2, t);
        }
        let c = w[s];
        let h = c / 2;
        let mut block: u64 = 0;
        for wing in 0..2 {
            block += cfg
                .branch_kernels(wing)
                .iter()
                .map(|&k| (h * k * t) as u64)
                .sum::<u64>();
            block += (h * 3 * h) as u64;
        }
        block += conv(c, c, 1, t);
        if cfg.stgu_enabled {
            block += (c * cfg.stgu_value_kernel * t) as u64;
            block += match cfg.stgu_gating_axis {
                GatingAxis::Time => 2 * t as u64,
                GatingAxis::Channel => (2 * c * c) as u64,
            };
        }
        macs += cfg.stage_depths[s] as u64 * block;
    }
    macs += (w[3] * cfg.output_dim) as u64;
    Ok(FlopReport {
        macs,
        flops: 2 * macs,
        input_len: len,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lengths_for_default_window() {
        let cfg = ModelConfig::default();
        assert_eq!(stage_lengths(&cfg, 200).unwrap(), [50, 50, 25, 12, 6]);
        let base = crate::nn::Variant::BaseAde.config();
        assert_eq!(stage_lengths(&base, 200).unwrap()[0], 50);
        assert!(stage_lengths(&cfg, 31).is_err());
    }

    #[test]
    fn pointwise_params_scale_quadratically_with_width() {
        let small = ModelConfig::desk();
        let big = ModelConfig {
            stage_widths: small.stage_widths.map(|w| 2 * w),
            ..small.clone()
        };
        let a = count_parameters(&small).unwrap() as f64;
        let b = count_parameters(&big).unwrap() as f64;
        let ratio = b / a;
        assert!(ratio > 3.8 && ratio < 4.0, "ratio {ratio}");
    }
}
