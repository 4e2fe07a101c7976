use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const IMU_FILE: &str = "imu.csv";
pub const GT_FILE: &str = "gt.csv";

const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
const GT_HEADER: [&str; 3] = ["t", "px", "py"];
const GT_HEADER_VEL: [&str; 5] = ["t", "px", "py", "vx", "vy"];

/// Largest accepted deviation of a sample interval from `1 / rate`, seconds.
pub const GRID_TOLERANCE: f64 = 1e-9;

/// Uniformly sampled 6-axis IMU recording. Gyro in rad/s, accel in m/s².
#[derive(Clone, Debug, PartialEq)]
pub struct ImuSequence {
    pub id: String,
    pub sample_rate: f64,
    pub timestamps: Vec<f64>,
    pub gyro: Vec<[f64; 3]>,
    pub accel: Vec<[f64; 3]>,
}

/// Planar ground-truth positions (m), optionally with velocities (m/s).
///
/// Shares the IMU time grid; it may extend one sample past the last IMU
/// sample so the final window has an end position.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthTrack {
    pub timestamps: Vec<f64>,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Option<Vec<[f64; 2]>>,
}

impl ImuSequence {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(Error::Invalid(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if self.gyro.len() != n || self.accel.len() != n {
            return Err(Error::Invalid(format!(
                "sequence {}: {} timestamps but {} gyro and {} accel samples",
                self.id,
                n,
                self.gyro.len(),
                self.accel.len()
            )));
        }
        check_grid(&self.timestamps, self.sample_rate).map_err(|(i, msg)| {
            Error::Invalid(format!("sequence {} sample {i}: {msg}", self.id))
        })?;
        for i in 0..n {
            if !self.gyro[i]
                .iter()
                .chain(&self.accel[i])
                .all(|v| v.is_finite())
            {
                return Err(Error::Invalid(format!(
                    "sequence {} sample {i}: non-finite value",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

impl GroundTruthTrack {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.timestamps.len();
        if self.positions.len() != n {
            return Err(Error::Invalid(format!(
                "ground truth: {n} timestamps but {} positions",
                self.positions.len()
            )));
        }
        if let Some(v) = &self.velocities {
            if v.len() != n {
                return Err(Error::Invalid(format!(
                    "ground truth: {n} positions but {} velocities",
                    v.len()
                )));
            }
        }
        for (i, w) in self.timestamps.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::Invalid(format!(
                    "ground truth sample {}: timestamps not strictly increasing",
                    i + 1
                )));
            }
        }
        let finite = |p: &[f64; 2]| p.iter().all(|v| v.is_finite());
        if let Some(i) = self.positions.iter().position(|p| !finite(p)) {
            return Err(Error::Invalid(format!(
                "ground truth sample {i}: non-finite position"
            )));
        }
        if let Some(i) = self.velocities.iter().flatten().position(|v| !finite(v)) {
            return Err(Error::Invalid(format!(
                "ground truth sample {i}: non-finite velocity"
            )));
        }
        Ok(())
    }
}

/// Index and message of the first sample breaking the uniform grid.
fn check_grid(t: &[f64], rate: f64) -> std::result::Result<(), (usize, String)> {
    let dt = 1.0 / rate;
    for (i, w) in t.windows(2).enumerate() {
        if !(w[1] > w[0]) {
            return Err((i + 1, "timestamps not strictly increasing".into()));
        }
        if ((w[1] - w[0]) - dt).abs() > GRID_TOLERANCE {
            return Err((
                i + 1,
                format!(
                    "sample interval {} s does not match rate {rate} Hz",
                    w[1] - w[0]
                ),
            ));
        }
    }
    Ok(())
}

/// Writes `imu.csv` and `gt.csv` into `dir`, creating it if needed.
pub fn write_sequence(dir: &Path, seq: &ImuSequence, gt: &GroundTruthTrack) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(IMU_FILE);
    let mut out = Vec::with_capacity(seq.len() * 96);
    writeln!(out, "# rate_hz={}", seq.sample_rate).expect("write to Vec");
    writeln!(out, "{}", IMU_HEADER.join(",")).expect("write to Vec");
    for i in 0..seq.len() {
        let [gx, gy, gz] = seq.gyro[i];
        let [ax, ay, az] = seq.accel[i];
        writeln!(out, "{},{gx},{gy},{gz},{ax},{ay},{az}", seq.timestamps[i]).expect("write to Vec");
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    let path = dir.join(GT_FILE);
    let mut out = Vec::with_capacity(gt.len() * 64);
    match &gt.velocities {
        Some(_) => writeln!(out, "{}", GT_HEADER_VEL.join(",")),
        None => writeln!(out, "{}", GT_HEADER.join(",")),
    }
    .expect("write to Vec");
    for i in 0..gt.len() {
        let [px, py] = gt.positions[i];
        write!(out, "{},{px},{py}", gt.timestamps[i]).expect("write to Vec");
        if let Some(v) = &gt.velocities {
            write!(out, ",{},{}", v[i][0], v[i][1]).expect("write to Vec");
        }
        out.push(b'\n');
    }
    fs::write(&path, out).map_err(|e| Error::io(&path, e))
}

/// Reads and validates `imu.csv` and `gt.csv` from `dir`. The sequence id is
/// the directory name.
pub fn load_sequence(dir: &Path) -> Result<(ImuSequence, GroundTruthTrack)> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seq = read_imu(&dir.join(IMU_FILE), id)?;
    let gt = read_gt(&dir.join(GT_FILE))?;
    Ok((seq, gt))
}

fn row_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Parses numeric CSV rows with a fixed header. `first_line` is the file
/// line number of the header, used in error messages.
fn parse_rows(
    path: &Path,
    text: &str,
    first_line: u64,
    accepted: &[&[&str]],
) -> Result<(usize, Vec<(u64, Vec<f64>)>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| row_err(path, first_line, e.to_string()))?
        .iter()
        .map(str::to_owned)
        .collect();
    let width = accepted
        .iter()
        .find(|h| h.len() == header.len() && h.iter().zip(&header).all(|(a, b)| *a == b))
        .map(|h| h.len())
        .ok_or_else(|| {
            let options: Vec<String> = accepted.iter().map(|h| h.join(",")).collect();
            row_err(
                path,
                first_line,
                format!(
                    "unexpected header `{}`, expected {}",
                    header.join(","),
                    options.join(" or ")
                ),
            )
        })?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = first_line + 1 + i as u64;
        let record = record.map_err(|e| row_err(path, line, e.to_string()))?;
        if record.len() != width {
            return Err(row_err(
                path,
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        let mut values = Vec::with_capacity(width);
        for (field, name) in record.iter().zip(&header) {
            let v: f64 = field.parse().map_err(|_| {
                row_err(path, line, format!("column {name}: cannot parse `{field}`"))
            })?;
            if !v.is_finite() {
                return Err(row_err(
                    path,
                    line,
                    format!("column {name}: non-finite value"),
                ));
            }
            values.push(v);
        }
        rows.push((line, values));
    }
    Ok((width, rows))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn read_imu(path: &Path, id: String) -> Result<ImuSequence> {
    let text = read_text(path)?;
    let (first, rest) = text.split_once('\n').unwrap_or((text.as_str(), ""));
    let rate: f64 = first
        .trim()
        .strip_prefix('#')
        .and_then(|s| s.trim().strip_prefix("rate_hz="))
        .ok_or_else(|| row_err(path, 1, "expected `# rate_hz=<value>` comment line"))?
        .trim()
        .parse()
        .map_err(|_| row_err(path, 1, "cannot parse rate_hz"))?;
    if !(rate.is_finite() && rate > 0.0) {
        return Err(row_err(
            path,
            1,
            format!("rate_hz must be positive, got {rate}"),
        ));
    }
    let (_, rows) = parse_rows(path, rest, 2, &[&IMU_HEADER])?;
    let mut seq = ImuSequence {
        id,
        sample_rate: rate,
        timestamps: Vec::with_capacity(rows.len()),
        gyro: Vec::with_capacity(rows.len()),
        accel: Vec::with_capacity(rows.len()),
    };
    for (_, r) in &rows {
        seq.timestamps.push(r[0]);
        seq.gyro.push([r[1], r[2], r[3]]);
        seq.accel.push([r[4], r[5], r[6]]);
    }
    if let Err((i, msg)) = check_grid(&seq.timestamps, rate) {
        return Err(row_err(path, rows[i].0, msg));
    }
    Ok(seq)
}

fn read_gt(path: &Path) -> Result<GroundTruthTrack> {
    let text = read_text(path)?;
    let (width, rows) = parse_rows(path, &text, 1, &[&GT_HEADER, &GT_HEADER_VEL])?;
    for w in rows.windows(2) {
        if !(w[1].1[0] > w[0].1[0]) {
            return Err(row_err(path, w[1].0, "timestamps not strictly increasing"));
        }
    }
    Ok(GroundTruthTrack {
        timestamps: rows.iter().map(|(_, r)| r[0]).collect(),
        positions: rows.iter().map(|(_, r)| [r[1], r[2]]).collect(),
        velocities: (width == 5).then(|| rows.iter().map(|(_, r)| [r[3], r[4]]).collect()),
    })
}

/// Path of a sequence directory inside a dataset split.
pub fn sequence_dir(root: &Path, split: &str, id: &str) -> PathBuf {
    root.join(split).join(id)
}
