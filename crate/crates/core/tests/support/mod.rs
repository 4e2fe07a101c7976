//! Independent reference implementations shared by the integration tests
//! and the acceptance suite. Everything here is written with explicit loops
//! over `[channel][batch][time]` arrays and shares no code with the library.

#![allow(dead_code)]

use ionext_core::datahub::{GroundTruthTrack, ImuSequence};
use ionext_core::nn::ops::BATCH_NORM_EPS;
use ionext_core::nn::*;
use ionext_core::FeatureBatch;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type Arr = Vec<Vec<Vec<f64>>>;

pub fn randomize(model: &mut IoNext<f64>, rng: &mut ChaCha8Rng) {
    for (_, p) in model.params_mut().iter_mut() {
        let role = p.role;
        for v in p.tensor.data_mut() {
            *v = match role {
                ParamRole::RunningVar => rng.gen_range(0.5..2.0),
                ParamRole::NormScale => rng.gen_range(0.5..1.5),
                _ => rng.gen_range(-1.0..1.0),
            };
        }
    }
}

pub fn random_batch(rng: &mut ChaCha8Rng, c: usize, n: usize, t: usize) -> FeatureBatch<f64> {
    let data = (0..c * n * t).map(|_| rng.gen_range(-2.0..2.0)).collect();
    FeatureBatch::from_vec(c, n, t, data).unwrap()
}

pub fn to_arr(x: &FeatureBatch<f64>) -> Arr {
    (0..x.channels())
        .map(|c| (0..x.batch()).map(|n| x.row(c, n).to_vec()).collect())
        .collect()
}

pub fn p<'a>(m: &'a IoNext<f64>, name: &str) -> &'a [f64] {
    m.params()
        .get(name)
        .unwrap_or_else(|| panic!("{name}"))
        .tensor
        .data()
}

pub fn rel_close(a: &Arr, b: &Arr, tol: f64) -> Result<(), String> {
    for c in 0..a.len() {
        for n in 0..a[c].len() {
            for t in 0..a[c][n].len() {
                let (x, y) = (a[c][n][t], b[c][n][t]);
                let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
                if !(rel <= tol) {
                    return Err(format!("[{c}][{n}][{t}]: {x} vs {y} (rel {rel:e})"));
                }
            }
        }
    }
    Ok(())
}

pub fn oracle_batch_norm(x: &Arr, m: &IoNext<f64>, prefix: &str, train: bool) -> Arr {
    let (g, b) = (
        p(m, &format!("{prefix}.weight")),
        p(m, &format!("{prefix}.bias")),
    );
    let (rm, rv) = (
        p(m, &format!("{prefix}.running_mean")),
        p(m, &format!("{prefix}.running_var")),
    );
    let mut out = x.clone();
    for c in 0..x.len() {
        let (mean, var) = if train {
            let mut s = 0.0;
            let mut k = 0.0;
            for row in &x[c] {
                for &v in row {
                    s += v;
                    k += 1.0;
                }
            }
            let mean = s / k;
            let mut q = 0.0;
            for row in &x[c] {
                for &v in row {
                    q += (v - mean) * (v - mean);
                }
            }
            (mean, q / k)
        } else {
            (rm[c], rv[c])
        };
        for n in 0..x[c].len() {
            for t in 0..x[c][n].len() {
                out[c][n][t] = g[c] * (x[c][n][t] - mean) / (var + BATCH_NORM_EPS).sqrt() + b[c];
            }
        }
    }
    out
}

/// Same-padded depthwise convolution; `w` is `[C][k]`.
pub fn oracle_depthwise(x: &Arr, w: &[f64], b: &[f64], k: usize) -> Arr {
    let half = (k / 2) as isize;
    let mut y = x.clone();
    for c in 0..x.len() {
        for n in 0..x[c].len() {
            let len = x[c][n].len() as isize;
            for t in 0..len {
                let mut acc = b[c];
                for j in 0..k as isize {
                    let s = t + j - half;
                    if (0..len).contains(&s) {
                        acc += w[c * k + j as usize] * x[c][n][s as usize];
                    }
                }
                y[c][n][t as usize] = acc;
            }
        }
    }
    y
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mixer output for block `stage1.block1`, written straight from the
/// definitions: split, per-wing norm, three depthwise scales, softmax fusion
/// from pooled statistics, pointwise output projection.
pub fn oracle_dadm(x: &Arr, m: &IoNext<f64>, train: bool) -> Arr {
    let cfg = m.config();
    let c_all = x.len();
    let h = c_all / 2;
    let (batch, len) = (x[0].len(), x[0][0].len());
    let pre = "stage1.block1.dadm";
    let mut fused: Arr = Vec::new();
    for j in 0..2 {
        let xj: Arr = x[j * h..(j + 1) * h].to_vec();
        let wp = format!("{pre}.wing{j}");
        let normed = oracle_batch_norm(&xj, m, &format!("{wp}.norm"), train);
        let kernels = cfg.branch_kernels(j);
        let ys: Vec<Arr> = (0..3)
            .map(|i| {
                oracle_depthwise(
                    &normed,
                    p(m, &format!("{wp}.dw{i}.weight")),
                    p(m, &format!("{wp}.dw{i}.bias")),
                    kernels[i],
                )
            })
            .collect();
        let w1 = p(m, &format!("{wp}.w1.weight"));
        let b1 = p(m, &format!("{wp}.w1.bias"));
        let mut f = vec![vec![vec![0.0; len]; batch]; h];
        for n in 0..batch {
            let pooled: Vec<f64> = (0..h)
                .map(|c| xj[c][n].iter().sum::<f64>() / len as f64)
                .collect();
            for c in 0..h {
                let logits: Vec<f64> = (0..3)
                    .map(|i| {
                        let o = i * h + c;
                        b1[o] + (0..h).map(|q| w1[o * h + q] * pooled[q]).sum::<f64>()
                    })
                    .collect();
                let z: f64 = logits.iter().map(|l| l.exp()).sum();
                for t in 0..len {
                    f[c][n][t] = (0..3).map(|i| logits[i].exp() / z * ys[i][c][n][t]).sum();
                }
            }
        }
        fused.extend(f);
    }
    let w2 = p(m, &format!("{pre}.w2.weight"));
    let b2 = p(m, &format!("{pre}.w2.bias"));
    let mut out = vec![vec![vec![0.0; len]; batch]; c_all];
    for o in 0..c_all {
        for n in 0..batch {
            for t in 0..len {
                out[o][n][t] = b2[o]
                    + (0..c_all)
                        .map(|c| w2[o * c_all + c] * fused[c][n][t])
                        .sum::<f64>();
            }
        }
    }
    out
}

pub fn oracle_stgu(x: &Arr, m: &IoNext<f64>) -> (Arr, Vec<f64>) {
    let cfg = m.config();
    let pre = "stage1.block1.stgu";
    let c_all = x.len();
    let (batch, len) = (x[0].len(), x[0][0].len());
    let value = oracle_depthwise(
        x,
        p(m, &format!("{pre}.value.weight")),
        p(m, &format!("{pre}.value.bias")),
        cfg.stgu_value_kernel,
    );
    let w = p(m, &format!("{pre}.w3.weight"));
    let b = p(m, &format!("{pre}.w3.bias"));
    let mut out = value.clone();
    let mut gates = Vec::new();
    for n in 0..batch {
        match cfg.stgu_gating_axis {
            GatingAxis::Time => {
                for t in 0..len {
                    let col: Vec<f64> = (0..c_all).map(|c| x[c][n][t]).collect();
                    let mean = col.iter().sum::<f64>() / c_all as f64;
                    let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let g = sigmoid(w[0] * mean + w[1] * max + b[0]);
                    gates.push(g);
                    for c in 0..c_all {
                        out[c][n][t] = g * value[c][n][t];
                    }
                }
            }
            GatingAxis::Channel => {
                let mean: Vec<f64> = (0..c_all)
                    .map(|c| x[c][n].iter().sum::<f64>() / len as f64)
                    .collect();
                let max: Vec<f64> = (0..c_all)
                    .map(|c| x[c][n].iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                    .collect();
                for c in 0..c_all {
                    let mut z = b[c];
                    for q in 0..c_all {
                        z += w[c * 2 * c_all + q] * mean[q] + w[c * 2 * c_all + c_all + q] * max[q];
                    }
                    let g = sigmoid(z);
                    gates.push(g);
                    for t in 0..len {
                        out[c][n][t] = g * value[c][n][t];
                    }
                }
            }
        }
    }
    (out, gates)
}

pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let c = 2 * rng.gen_range(1..=4);
    let odd = |rng: &mut ChaCha8Rng| 2 * rng.gen_range(0..4) + 1;
    ModelConfig {
        stage_widths: [c, 4, 4, 4],
        stage_depths: [1, 1, 1, 1],
        wing_kernel_bases: [odd(rng), odd(rng)],
        stgu_value_kernel: odd(rng),
        stgu_gating_axis: if rng.gen() {
            GatingAxis::Time
        } else {
            GatingAxis::Channel
        },
        ..ModelConfig::default()
    }
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

fn flat(a: &Arr) -> Vec<f64> {
    a.iter().flatten().flatten().copied().collect()
}

/// Worst relative deviation of the library mixer and gating unit from the
/// loop oracles over `cases` random tiny instances, both modes and both
/// gating axes. Returns `(mixer, gating)`.
pub fn oracle_sweep(seed: u64, cases: u64) -> (f64, f64) {
    use ionext_core::nn::ops::ForwardCtx;
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst_mix, mut worst_gate) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let mut cfg = random_config(&mut rng);
        cfg.stgu_gating_axis = if case % 2 == 0 {
            GatingAxis::Time
        } else {
            GatingAxis::Channel
        };
        let mut m = IoNext::<f64>::new(cfg.clone(), case).unwrap();
        randomize(&mut m, &mut rng);
        let (batch, len) = (rng.gen_range(1..4), rng.gen_range(8..=32));
        let x = random_batch(&mut rng, cfg.stage_widths[0], batch, len);
        let xa = to_arr(&x);
        for (mode, train) in [(Mode::Eval, false), (Mode::Train, true)] {
            let dadm = &m.block(0, 0).dadm;
            let (y, _) = dadm
                .forward(m.params(), &x, &mut ForwardCtx::new(mode))
                .unwrap();
            worst_mix = worst_mix.max(max_rel_err(y.data(), &flat(&oracle_dadm(&xa, &m, train))));
        }
        let (_, stgu) = m.block(0, 0).gating.as_ref().unwrap();
        let (y, cache) = stgu.forward(m.params(), &x);
        let (want, gates) = oracle_stgu(&xa, &m);
        worst_gate = worst_gate
            .max(max_rel_err(y.data(), &flat(&want)))
            .max(max_rel_err(cache.gates(), &gates));
    }
    (worst_mix, worst_gate)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Direct-definition metrics for a prediction and ground truth sampled at
/// the same uniformly spaced timestamps `dt` apart.
pub fn brute_ate(p: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
    let mut sq = 0.0;
    for i in 0..p.len() {
        sq += dist(p[i], g[i]).powi(2);
    }
    (sq / p.len() as f64).sqrt()
}

pub fn brute_rte(p: &[[f64; 2]], g: &[[f64; 2]], dt: f64, horizon: f64) -> f64 {
    let n = p.len();
    let span = |i: usize, j: usize| {
        let dp = [p[j][0] - p[i][0], p[j][1] - p[i][1]];
        let dg = [g[j][0] - g[i][0], g[j][1] - g[i][1]];
        dist(dp, dg)
    };
    let duration = (n - 1) as f64 * dt;
    if duration < horizon {
        return span(0, n - 1) * horizon / duration;
    }
    let h = (horizon / dt).round() as usize;
    let mut sq = 0.0;
    let mut count = 0.0;
    for i in 0..n - h {
        sq += span(i, i + h).powi(2);
        count += 1.0;
    }
    (sq / count).sqrt()
}

pub fn brute_ale(p: &[[f64; 2]], g: &[[f64; 2]]) -> f64 {
    let len = |v: &[[f64; 2]]| {
        let mut s = 0.0;
        for i in 1..v.len() {
            s += dist(v[i - 1], v[i]);
        }
        s
    };
    (len(p) - len(g)).abs()
}

pub fn random_walk(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 2]> {
    let mut p = [0.0, 0.0];
    (0..n)
        .map(|_| {
            p = [
                p[0] + rng.gen_range(-2.0..2.0),
                p[1] + rng.gen_range(-2.0..2.0),
            ];
            p
        })
        .collect()
}

/// A track that moves at constant velocity within each whole second and
/// turns only at whole seconds, with a flat IMU record of matching length.
pub fn piecewise_linear(
    id: &str,
    secs: usize,
    rate: f64,
    seed: u64,
) -> (ImuSequence, GroundTruthTrack) {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per = rate as usize;
    let n = secs * per;
    let vels: Vec<[f64; 2]> = (0..secs)
        .map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)])
        .collect();
    let mut p = [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)];
    let mut positions = vec![p];
    for i in 0..n {
        let v = vels[i / per];
        p = [p[0] + v[0] / rate, p[1] + v[1] / rate];
        positions.push(p);
    }
    let ts: Vec<f64> = (0..=n).map(|i| i as f64 / rate).collect();
    let seq = ImuSequence {
        id: id.into(),
        sample_rate: rate,
        timestamps: ts[..n].to_vec(),
        gyro: vec![[0.0; 3]; n],
        accel: vec![[0.0, 0.0, 9.81]; n],
    };
    let gt = GroundTruthTrack {
        timestamps: ts,
        positions,
        velocities: None,
    };
    (seq, gt)
}
