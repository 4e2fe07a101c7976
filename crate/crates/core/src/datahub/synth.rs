use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sequence::{GroundTruthTrack, ImuSequence};
use crate::error::{Error, Result};

pub const GRAVITY: f64 = 9.81;

/// Spacing of the spline control points shaping heading and speed, seconds.
pub const KNOT_SPACING: f64 = 0.5;

/// Parameters of the planar motion generator.
///
/// Heading and speed are smooth curves through control points drawn from
/// Ornstein-Uhlenbeck processes with time constant `heading_smoothness`.
/// Heading reverts to 0 rad (world +x) with stationary std `heading_std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub duration: f64,
    pub sample_rate: f64,
    pub speed_range: [f64; 2],
    pub heading_smoothness: f64,
    pub heading_std: f64,
    pub noise_std_gyro: f64,
    pub noise_std_accel: f64,
    pub bias_std_gyro: f64,
    pub bias_std_accel: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            duration: 60.0,
            sample_rate: 200.0,
            speed_range: [0.5, 1.5],
            heading_smoothness: 2.0,
            heading_std: 1.0,
            noise_std_gyro: 0.01,
            noise_std_accel: 0.05,
            bias_std_gyro: 0.002,
            bias_std_accel: 0.02,
            rng_seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Shortest duration accepted: twice the default one-second window.
    pub const MIN_DURATION: f64 = 2.0;

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return bad(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            ));
        }
        if !(self.duration.is_finite() && self.duration > Self::MIN_DURATION) {
            return bad(format!(
                "duration must exceed {} s, got {}",
                Self::MIN_DURATION,
                self.duration
            ));
        }
        let [lo, hi] = self.speed_range;
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return bad(format!(
                "speed_range must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"
            ));
        }
        if !(self.heading_smoothness.is_finite() && self.heading_smoothness > 0.0) {
            return bad(format!(
                "heading_smoothness must be positive, got {}",
                self.heading_smoothness
            ));
        }
        for (name, v) in [
            ("heading_std", self.heading_std),
            ("noise_std_gyro", self.noise_std_gyro),
            ("noise_std_accel", self.noise_std_accel),
            ("bias_std_gyro", self.bias_std_gyro),
            ("bias_std_accel", self.bias_std_accel),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        Ok(())
    }

    /// Number of IMU samples.
    pub fn samples(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    /// Same trajectory without sensor noise or bias.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_std_gyro: 0.0,
            noise_std_accel: 0.0,
            bias_std_gyro: 0.0,
            bias_std_accel: 0.0,
            ..self.clone()
        }
    }
}

/// Uniform cubic B-spline with knots every `KNOT_SPACING`; the segment
/// starting at knot `i` blends control points `i..i + 4`.
struct Spline {
    ctrl: Vec<f64>,
}

impl Spline {
    fn segment(&self, t: f64) -> (usize, f64) {
        let u = t / KNOT_SPACING;
        let i = (u.floor().max(0.0) as usize).min(self.ctrl.len() - 4);
        (i, u - i as f64)
    }

    /// Value and first two time derivatives.
    fn eval(&self, t: f64) -> [f64; 3] {
        let (i, f) = self.segment(t);
        let c = &self.ctrl[i..i + 4];
        let (f2, f3) = (f * f, f * f * f);
        let g = 1.0 - f;
        let b = [
            g * g * g / 6.0,
            (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
            (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
            f3 / 6.0,
        ];
        let db = [
            -g * g / 2.0,
            (3.0 * f2 - 4.0 * f) / 2.0,
            (-3.0 * f2 + 2.0 * f + 1.0) / 2.0,
            f2 / 2.0,
        ];
        let ddb = [g, 3.0 * f - 2.0, -3.0 * f + 1.0, f];
        let dot = |w: &[f64; 4]| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>();
        let h = KNOT_SPACING;
        [dot(&b), dot(&db) / h, dot(&ddb) / (h * h)]
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Ornstein-Uhlenbeck samples at `KNOT_SPACING` with stationary std `std`.
fn ou_path(rng: &mut ChaCha8Rng, n: usize, tau: f64, std: f64) -> Vec<f64> {
    let phi = (-KNOT_SPACING / tau).exp();
    let innov = std * (1.0 - phi * phi).sqrt();
    let mut x = std * standard_normal(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(x);
        x = phi * x + innov * standard_normal(rng);
    }
    out
}

/// Noise-free planar motion: heading and speed curves with derivatives.
struct Motion {
    heading: Spline,
    speed_latent: Spline,
    lo: f64,
    span: f64,
}

/// Kinematic state at one instant.
struct State {
    vel: [f64; 2],
    acc: [f64; 2],
    yaw_rate: f64,
}

impl Motion {
    fn new(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Self {
        let knots = (spec.duration / KNOT_SPACING).ceil() as usize + 4;
        let tau = spec.heading_smoothness;
        let heading = Spline {
            ctrl: ou_path(rng, knots, tau, spec.heading_std),
        };
        let speed_latent = Spline {
            ctrl: ou_path(rng, knots, tau, 1.0),
        };
        let [lo, hi] = spec.speed_range;
        Self {
            heading,
            speed_latent,
            lo,
            span: hi - lo,
        }
    }

    fn state(&self, t: f64) -> State {
        let [th, dth, _] = self.heading.eval(t);
        let [z, dz, _] = self.speed_latent.eval(t);
        let sig = 1.0 / (1.0 + (-z).exp());
        let s = self.lo + self.span * sig;
        let ds = self.span * sig * (1.0 - sig) * dz;
        let (sin, cos) = th.sin_cos();
        State {
            vel: [s * cos, s * sin],
            acc: [ds * cos - s * dth * sin, ds * sin + s * dth * cos],
            yaw_rate: dth,
        }
    }

    fn velocity(&self, t: f64) -> [f64; 2] {
        self.state(t).vel
    }

    /// Integral of velocity over `[a, b]`, split at spline knots so every
    /// piece is smooth, with 5-point Gauss-Legendre per piece.
    fn displacement(&self, a: f64, b: f64) -> [f64; 2] {
        const X: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683,
            0.538_469_310_105_683,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const W: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let mut out = [0.0; 2];
        let mut lo = a;
        while lo < b {
            let next_knot = ((lo / KNOT_SPACING).floor() + 1.0) * KNOT_SPACING;
            let hi = if next_knot < b - 1e-12 { next_knot } else { b };
            let (mid, half) = ((lo + hi) / 2.0, (hi - lo) / 2.0);
            for (x, w) in X.iter().zip(W) {
                let v = self.velocity(mid + half * x);
                out[0] += w * half * v[0];
                out[1] += w * half * v[1];
            }
            lo = hi;
        }
        out
    }
}

/// Generates one IMU sequence with exact ground truth.
///
/// The IMU has `round(duration * rate)` samples at `i / rate`; the ground
/// truth has one more sample so the final interval has an end position.
/// Positions start at the origin and are the integral of velocity. Gyro z is
/// the yaw rate, accel x/y the world-frame acceleration and accel z gravity,
/// each plus a per-sequence constant bias and white Gaussian noise.
pub fn synthesize(spec: &SyntheticSpec) -> Result<(ImuSequence, GroundTruthTrack)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let motion = Motion::new(spec, &mut rng);
    let n = spec.samples();
    let dt = 1.0 / spec.sample_rate;

    let mut bias = [0.0; 6];
    for (i, b) in bias.iter_mut().enumerate() {
        let std = if i < 3 {
            spec.bias_std_gyro
        } else {
            spec.bias_std_accel
        };
        *b = std * standard_normal(&mut rng);
    }

    let time = |i: usize| i as f64 * dt;
    let mut seq = ImuSequence {
        id: format!("synthetic_{}", spec.rng_seed),
        sample_rate: spec.sample_rate,
        timestamps: Vec::with_capacity(n),
        gyro: Vec::with_capacity(n),
        accel: Vec::with_capacity(n),
    };
    for i in 0..n {
        let t = time(i);
        let st = motion.state(t);
        let clean = [0.0, 0.0, st.yaw_rate, st.acc[0], st.acc[1], GRAVITY];
        let mut m = [0.0; 6];
        for a in 0..6 {
            let std = if a < 3 {
                spec.noise_std_gyro
            } else {
                spec.noise_std_accel
            };
            m[a] = clean[a] + bias[a] + std * standard_normal(&mut rng);
        }
        seq.timestamps.push(t);
        seq.gyro.push([m[0], m[1], m[2]]);
        seq.accel.push([m[3], m[4], m[5]]);
    }

    let mut gt = GroundTruthTrack {
        timestamps: Vec::with_capacity(n + 1),
        positions: Vec::with_capacity(n + 1),
        velocities: Some(Vec::with_capacity(n + 1)),
    };
    let mut p = [0.0; 2];
    for i in 0..=n {
        let t = time(i);
        if i > 0 {
            let d = motion.displacement(time(i - 1), t);
            p = [p[0] + d[0], p[1] + d[1]];
        }
        gt.timestamps.push(t);
        gt.positions.push(p);
        gt.velocities
            .as_mut()
            .expect("velocities")
            .push(motion.velocity(t));
    }
    Ok((seq, gt))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spline_derivatives_match_differences() {
        let s = Spline {
            ctrl: vec![0.3, -1.0, 0.5, 2.0, 0.1, -0.4, 1.2],
        };
        let h = 1e-6;
        for &t in &[0.1, 0.49, 0.7, 1.3, 1.74] {
            let [_, d, dd] = s.eval(t);
            let nd = (s.eval(t + h)[0] - s.eval(t - h)[0]) / (2.0 * h);
            let ndd = (s.eval(t + h)[1] - s.eval(t - h)[1]) / (2.0 * h);
            assert!((d - nd).abs() < 1e-6, "{d} {nd}");
            assert!((dd - ndd).abs() < 1e-5, "{dd} {ndd}");
        }
    }

    #[test]
    fn spline_is_continuous_across_knots() {
        let s = Spline {
            ctrl: vec![0.3, -1.0, 0.5, 2.0, 0.1, -0.4],
        };
        let k = KNOT_SPACING;
        for j in 0..3 {
            let a = s.eval(k * (j + 1) as f64 - 1e-12);
            let b = s.eval(k * (j + 1) as f64 + 1e-12);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
