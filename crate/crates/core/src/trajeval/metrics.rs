use crate::datahub::GroundTruthTrack;
use crate::error::{Error, Result};

/// Slack when checking that prediction timestamps lie inside the ground truth.
const TIME_SLACK: f64 = 1e-9;

/// Dead-reckoned positions at window boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEstimate {
    pub timestamps: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
}

impl TrajectoryEstimate {
    /// Shifts all timestamps so the trajectory starts at `t0`.
    pub fn starting_at(mut self, t0: f64) -> Self {
        let shift = t0 - self.timestamps[0];
        self.timestamps.iter_mut().for_each(|t| *t += shift);
        self
    }

    pub fn duration(&self) -> f64 {
        self.timestamps.last().unwrap_or(&0.0) - self.timestamps.first().unwrap_or(&0.0)
    }
}

/// Integrates window velocities: `p[0] = origin`, `p[n+1] = p[n] + v[n]·stride`.
/// Timestamps start at 0 and advance by `stride`.
pub fn reconstruct(
    velocities: &[[f64; 2]],
    stride: f64,
    origin: [f64; 2],
) -> Result<TrajectoryEstimate> {
    if velocities.is_empty() {
        return Err(Error::Invalid("no velocities to integrate".into()));
    }
    if !(stride.is_finite() && stride > 0.0) {
        return Err(Error::Invalid(format!(
            "stride must be positive, got {stride}"
        )));
    }
    let mut positions = Vec::with_capacity(velocities.len() + 1);
    let mut p = origin;
    positions.push(p);
    for v in velocities {
        p = [p[0] + v[0] * stride, p[1] + v[1] * stride];
        positions.push(p);
    }
    if positions.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Invalid(
            "reconstructed positions are not finite".into(),
        ));
    }
    let timestamps = (0..positions.len()).map(|i| i as f64 * stride).collect();
    Ok(TrajectoryEstimate {
        timestamps,
        positions,
    })
}

/// Linear interpolation of the ground-truth position at `t`.
pub fn position_at(gt: &GroundTruthTrack, t: f64) -> Result<[f64; 2]> {
    let ts = &gt.timestamps;
    let (Some(&first), Some(&last)) = (ts.first(), ts.last()) else {
        return Err(Error::Invalid("empty ground truth".into()));
    };
    if t < first - TIME_SLACK || t > last + TIME_SLACK {
        return Err(Error::Invalid(format!(
            "time {t} s lies outside the ground truth span [{first}, {last}] s"
        )));
    }
    let i = ts.partition_point(|&x| x <= t);
    if i == 0 {
        return Ok(gt.positions[0]);
    }
    if i == ts.len() {
        return Ok(gt.positions[ts.len() - 1]);
    }
    let (t0, t1) = (ts[i - 1], ts[i]);
    let (p0, p1) = (gt.positions[i - 1], gt.positions[i]);
    let a = (t - t0) / (t1 - t0);
    if a == 0.0 {
        return Ok(p0);
    }
    Ok([p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])])
}

fn gt_at_pred(pred: &TrajectoryEstimate, gt: &GroundTruthTrack) -> Result<Vec<[f64; 2]>> {
    if pred.timestamps.is_empty() || pred.timestamps.len() != pred.positions.len() {
        return Err(Error::Invalid(
            "prediction needs matching, non-empty timestamps and positions".into(),
        ));
    }
    pred.timestamps
        .iter()
        .map(|&t| position_at(gt, t))
        .collect()
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn rms(errors: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = errors.len() as f64;
    (errors.map(|e| e * e).sum::<f64>() / n).sqrt()
}

/// Root-mean-square position error at the prediction timestamps, in the
/// shared frame without any alignment.
pub fn ate(pred: &TrajectoryEstimate, gt: &GroundTruthTrack) -> Result<f64> {
    let g = gt_at_pred(pred, gt)?;
    Ok(rms(pred
        .positions
        .iter()
        .zip(&g)
        .map(|(&p, &q)| dist(p, q))))
}

/// Root-mean-square error of displacements over `horizon` seconds.
///
/// The horizon is rounded to a whole number of prediction steps. A
/// trajectory shorter than the horizon contributes its full-span error
/// scaled by `horizon / duration`.
pub fn rte(pred: &TrajectoryEstimate, gt: &GroundTruthTrack, horizon: f64) -> Result<f64> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Invalid(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let g = gt_at_pred(pred, gt)?;
    let n = pred.positions.len();
    if n < 2 {
        return Err(Error::Invalid(
            "relative error needs at least 2 points".into(),
        ));
    }
    let p = &pred.positions;
    let err = |i: usize, j: usize| {
        let dp = [p[j][0] - p[i][0], p[j][1] - p[i][1]];
        let dg = [g[j][0] - g[i][0], g[j][1] - g[i][1]];
        dist(dp, dg)
    };
    let duration = pred.duration();
    if duration < horizon {
        return Ok(err(0, n - 1) * horizon / duration);
    }
    let dt = duration / (n - 1) as f64;
    let h = ((horizon / dt).round() as usize).clamp(1, n - 1);
    Ok(rms((0..n - h).map(|i| err(i, i + h))))
}

pub fn path_length(points: &[[f64; 2]]) -> f64 {
    points.windows(2).map(|w| dist(w[0], w[1])).sum()
}

/// Length of the ground-truth path over `[t0, t1]`, using every sample in
/// between plus interpolated end points.
pub fn gt_length(gt: &GroundTruthTrack, t0: f64, t1: f64) -> Result<f64> {
    let mut pts = vec![position_at(gt, t0)?];
    let lo = gt.timestamps.partition_point(|&t| t <= t0);
    let hi = gt.timestamps.partition_point(|&t| t < t1);
    pts.extend_from_slice(&gt.positions[lo..hi.max(lo)]);
    pts.push(position_at(gt, t1)?);
    Ok(path_length(&pts))
}

/// `(L̂, L)`: predicted and ground-truth path lengths over the prediction span.
pub fn lengths(pred: &TrajectoryEstimate, gt: &GroundTruthTrack) -> Result<(f64, f64)> {
    if pred.positions.len() < 2 || gt.positions.len() < 2 {
        return Err(Error::Invalid(
            "length error needs at least 2 points".into(),
        ));
    }
    gt_at_pred(pred, gt)?;
    let (t0, t1) = (
        pred.timestamps[0],
        pred.timestamps[pred.timestamps.len() - 1],
    );
    Ok((path_length(&pred.positions), gt_length(gt, t0, t1)?))
}

/// Absolute difference of predicted and ground-truth path lengths.
pub fn ale(pred: &TrajectoryEstimate, gt: &GroundTruthTrack) -> Result<f64> {
    let (lp, lg) = lengths(pred, gt)?;
    Ok((lp - lg).abs())
}

/// Length-normalized aggregate `Σ m_i / Σ L_i`.
pub fn normalize(values: &[f64], lengths: &[f64]) -> Result<f64> {
    if values.is_empty() || values.len() != lengths.len() {
        return Err(Error::Invalid(format!(
            "need matching non-empty metric and length lists, got {} and {}",
            values.len(),
            lengths.len()
        )));
    }
    if let Some(l) = lengths.iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Invalid(format!(
            "trajectory lengths must be positive, got {l}"
        )));
    }
    Ok(values.iter().sum::<f64>() / lengths.iter().sum::<f64>())
}
