use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{ate, lengths, normalize, position_at, reconstruct, rte};
use crate::datahub::{batch_signals, make_windows, GroundTruthTrack, ImuSequence, ImuWindow};
use crate::error::{Error, Result};
use crate::nn::{Checkpoint, IoNext};
use crate::scalar::Scalar;

pub const REPORT_FILE: &str = "report.csv";
pub const AGGREGATES_FILE: &str = "aggregates.csv";
pub const CDF_ATE_FILE: &str = "cdf_ate.csv";
pub const CDF_RTE_FILE: &str = "cdf_rte.csv";

/// Anything that maps windows to planar velocities.
pub trait VelocityPredictor {
    fn predict(&self, windows: &[&ImuWindow]) -> Result<Vec<[f64; 2]>>;
}

impl<S: Scalar> VelocityPredictor for IoNext<S> {
    fn predict(&self, windows: &[&ImuWindow]) -> Result<Vec<[f64; 2]>> {
        if self.config().output_dim != 2 {
            return Err(Error::Config(format!(
                "trajectory evaluation needs a 2-D output, model has {}",
                self.config().output_dim
            )));
        }
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(256) {
            let y = self.forward(&batch_signals(chunk)?)?;
            out.extend(
                y.chunks(2)
                    .map(|v| [v[0].to_f64_lossy(), v[1].to_f64_lossy()]),
            );
        }
        Ok(out)
    }
}

impl<F> VelocityPredictor for F
where
    F: Fn(&ImuWindow) -> [f64; 2],
{
    fn predict(&self, windows: &[&ImuWindow]) -> Result<Vec<[f64; 2]>> {
        Ok(windows.iter().map(|w| self(w)).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub window_seconds: f64,
    /// Reconstruction stride, which is also the window spacing.
    pub stride: f64,
    pub horizon: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            window_seconds: 1.0,
            stride: 1.0,
            horizon: 60.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMetrics {
    pub id: String,
    #[serde(rename = "L_gt")]
    pub length_gt: f64,
    #[serde(rename = "L_pred")]
    pub length_pred: f64,
    pub ate: f64,
    pub rte: f64,
    pub ale: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<TrajectoryMetrics>,
    pub ate_norm: f64,
    pub rte_norm: f64,
    pub ale_norm: f64,
    pub options: EvalOptions,
}

impl MetricReport {
    /// Builds a report, computing the aggregates from `rows`.
    pub fn from_rows(rows: Vec<TrajectoryMetrics>, options: EvalOptions) -> Result<Self> {
        let l: Vec<f64> = rows.iter().map(|r| r.length_gt).collect();
        let col = |f: fn(&TrajectoryMetrics) -> f64| rows.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            ate_norm: normalize(&col(|r| r.ate), &l)?,
            rte_norm: normalize(&col(|r| r.rte), &l)?,
            ale_norm: normalize(&col(|r| r.ale), &l)?,
            rows,
            options,
        })
    }

    pub fn aggregates(&self) -> [(&'static str, f64); 3] {
        [
            ("ate_norm", self.ate_norm),
            ("rte_norm", self.rte_norm),
            ("ale_norm", self.ale_norm),
        ]
    }
}

/// Metrics for one sequence.
pub fn evaluate_sequence(
    model: &impl VelocityPredictor,
    seq: &ImuSequence,
    gt: &GroundTruthTrack,
    opts: &EvalOptions,
) -> Result<TrajectoryMetrics> {
    let windows = make_windows(seq, gt, opts.window_seconds, opts.stride)?;
    let refs: Vec<&ImuWindow> = windows.iter().collect();
    let v = model.predict(&refs)?;
    if v.len() != windows.len() {
        return Err(Error::Shape(format!(
            "predictor returned {} velocities for {} windows",
            v.len(),
            windows.len()
        )));
    }
    let t0 = windows[0].start;
    let pred = reconstruct(&v, opts.stride, position_at(gt, t0)?)?.starting_at(t0);
    let (length_pred, length_gt) = lengths(&pred, gt)?;
    Ok(TrajectoryMetrics {
        id: seq.id.clone(),
        length_gt,
        length_pred,
        ate: ate(&pred, gt)?,
        rte: rte(&pred, gt, opts.horizon)?,
        ale: (length_pred - length_gt).abs(),
    })
}

/// Evaluates every sequence; rows are ordered by sequence id.
pub fn evaluate(
    model: &impl VelocityPredictor,
    data: &[(ImuSequence, GroundTruthTrack)],
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if data.is_empty() {
        return Err(Error::Invalid("no sequences to evaluate".into()));
    }
    let mut rows = data
        .iter()
        .map(|(s, g)| evaluate_sequence(model, s, g, opts))
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.id.cmp(&b.id));
    MetricReport::from_rows(rows, *opts)
}

/// Rejects data recorded at a rate other than the checkpoint's.
pub fn check_rate(ckpt: &Checkpoint, seq: &ImuSequence) -> Result<()> {
    match ckpt.meta.sample_rate_hz {
        Some(r) if (r - seq.sample_rate).abs() > 1e-9 * r => Err(Error::Invalid(format!(
            "sample rate mismatch: checkpoint trained at {r} Hz, sequence {} is at {} Hz",
            seq.id, seq.sample_rate
        ))),
        _ => Ok(()),
    }
}

/// Empirical CDF: sorted values with cumulative fraction `(i + 1) / n`.
pub fn cdf(values: &[f64]) -> Vec<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::data(path, e.to_string())
}

fn write_pairs(
    path: &Path,
    header: [&str; 2],
    rows: impl Iterator<Item = (String, f64)>,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for (k, v) in rows {
        w.write_record([k, v.to_string()])
            .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `aggregates.csv`, `cdf_ate.csv` and `cdf_rte.csv`.
pub fn write_report(dir: &Path, report: &MetricReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(REPORT_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for r in &report.rows {
        w.serialize(r).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_pairs(
        &dir.join(AGGREGATES_FILE),
        ["metric", "value"],
        report
            .aggregates()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v)),
    )?;
    for (file, f) in [
        (
            CDF_ATE_FILE,
            (|r: &TrajectoryMetrics| r.ate) as fn(&TrajectoryMetrics) -> f64,
        ),
        (CDF_RTE_FILE, |r: &TrajectoryMetrics| r.rte),
    ] {
        let values: Vec<f64> = report.rows.iter().map(f).collect();
        write_pairs(
            &dir.join(file),
            ["value", "cum_frac"],
            cdf(&values).into_iter().map(|(x, c)| (x.to_string(), c)),
        )?;
    }
    Ok(())
}

pub fn read_report_rows(path: &Path) -> Result<Vec<TrajectoryMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

pub fn read_aggregates(path: &Path) -> Result<Vec<(String, f64)>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}
