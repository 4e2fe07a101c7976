use super::sequence::{GroundTruthTrack, ImuSequence, GRID_TOLERANCE};
use crate::error::{Error, Result};
use crate::nn::config::{IMU_CHANNELS, MIN_INPUT_LEN};
use crate::scalar::Scalar;
use crate::tensor::FeatureBatch;

/// One unit-time slice of IMU data with its average-velocity label.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuWindow {
    /// Channel-major `[6][len]`: gx, gy, gz, ax, ay, az.
    pub signal: Vec<f64>,
    pub len: usize,
    pub label: [f64; 2],
    pub start: f64,
}

/// Window and stride converted to whole samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowGeometry {
    pub len: usize,
    pub stride: usize,
}

impl WindowGeometry {
    pub fn new(sample_rate: f64, window_seconds: f64, stride_seconds: f64) -> Result<Self> {
        if !(window_seconds > 0.0 && stride_seconds > 0.0) {
            return Err(Error::Invalid(format!(
                "window ({window_seconds} s) and stride ({stride_seconds} s) must be positive"
            )));
        }
        let len = (sample_rate * window_seconds).round() as usize;
        let stride = (sample_rate * stride_seconds).round() as usize;
        if len < MIN_INPUT_LEN {
            return Err(Error::Invalid(format!(
                "window of {window_seconds} s at {sample_rate} Hz has {len} samples, need at least {MIN_INPUT_LEN}"
            )));
        }
        if stride == 0 {
            return Err(Error::Invalid(format!(
                "stride of {stride_seconds} s is below one sample at {sample_rate} Hz"
            )));
        }
        Ok(Self { len, stride })
    }
}

/// Slices `seq` into windows of `window_seconds` every `stride_seconds`.
///
/// The label is the ground-truth displacement across the window divided by
/// its duration. A window needs the ground-truth position at its end, so the
/// last window is limited by whichever of the two series ends first.
pub fn make_windows(
    seq: &ImuSequence,
    gt: &GroundTruthTrack,
    window_seconds: f64,
    stride_seconds: f64,
) -> Result<Vec<ImuWindow>> {
    let geo = WindowGeometry::new(seq.sample_rate, window_seconds, stride_seconds)?;
    check_alignment(seq, gt)?;
    let duration = geo.len as f64 / seq.sample_rate;
    let usable = seq.len().min(gt.len().saturating_sub(1));
    if usable < geo.len {
        return Err(Error::Invalid(format!(
            "sequence {} covers {} s, shorter than one {window_seconds} s window",
            seq.id,
            usable as f64 / seq.sample_rate
        )));
    }
    let count = (usable - geo.len) / geo.stride + 1;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let s = k * geo.stride;
        let e = s + geo.len;
        let mut signal = vec![0.0; IMU_CHANNELS * geo.len];
        for (t, i) in (s..e).enumerate() {
            for a in 0..3 {
                signal[a * geo.len + t] = seq.gyro[i][a];
                signal[(3 + a) * geo.len + t] = seq.accel[i][a];
            }
        }
        let (p0, p1) = (gt.positions[s], gt.positions[e]);
        out.push(ImuWindow {
            signal,
            len: geo.len,
            label: [(p1[0] - p0[0]) / duration, (p1[1] - p0[1]) / duration],
            start: seq.timestamps[s],
        });
    }
    Ok(out)
}

fn check_alignment(seq: &ImuSequence, gt: &GroundTruthTrack) -> Result<()> {
    let n = seq.len().min(gt.len());
    if n == 0 {
        return Err(Error::Invalid(format!("sequence {} is empty", seq.id)));
    }
    let dt = 1.0 / seq.sample_rate;
    let t0 = seq.timestamps[0];
    for (i, &t) in gt.timestamps.iter().enumerate() {
        if (t - (t0 + i as f64 * dt)).abs() > GRID_TOLERANCE * (1.0 + i as f64) {
            return Err(Error::Invalid(format!(
                "sequence {}: ground-truth sample {i} at {t} s is off the IMU grid",
                seq.id
            )));
        }
    }
    Ok(())
}

/// Stacks windows into a `[6, N, T]` batch of the requested precision.
pub fn batch_signals<S: Scalar>(windows: &[&ImuWindow]) -> Result<FeatureBatch<S>> {
    let len = windows
        .first()
        .map(|w| w.len)
        .ok_or_else(|| Error::Invalid("empty batch".into()))?;
    let n = windows.len();
    let mut batch = FeatureBatch::zeros(IMU_CHANNELS, n, len);
    for (j, w) in windows.iter().enumerate() {
        if w.len != len {
            return Err(Error::Shape(format!(
                "window lengths differ: {len} vs {}",
                w.len
            )));
        }
        for c in 0..IMU_CHANNELS {
            let src = &w.signal[c * len..(c + 1) * len];
            for (d, &v) in batch.row_mut(c, j).iter_mut().zip(src) {
                *d = S::lit(v);
            }
        }
    }
    Ok(batch)
}

/// Row-major `[N][2]` labels.
pub fn batch_labels<S: Scalar>(windows: &[&ImuWindow]) -> Vec<S> {
    windows.iter().flat_map(|w| w.label).map(S::lit).collect()
}
