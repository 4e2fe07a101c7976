//! Layer primitives with hand-written reverse-mode gradients.
//!
//! Every layer reads its weights from a [`ParameterSet`] by id, returns a cache
//! from `forward`, and accumulates parameter gradients into [`Gradients`] in
//! `backward`.

use crate::error::{Error, Result};
use crate::nn::config::NormKind;
use crate::nn::params::{Gradients, ParamId, ParameterSet};
use crate::scalar::{gemm, sum, Scalar, Strides};
use crate::tensor::FeatureBatch;

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.1;
pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Whether normalization layers use batch statistics or running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch statistics observed by one batch-norm layer during a training pass.
#[derive(Clone, Debug)]
pub struct StatUpdate<S> {
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub mean: Vec<S>,
    pub var_unbiased: Vec<S>,
}

/// Per-pass state threaded through every layer.
#[derive(Debug)]
pub struct ForwardCtx<S> {
    pub mode: Mode,
    pub stats: Vec<StatUpdate<S>>,
}

impl<S> ForwardCtx<S> {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            stats: Vec::new(),
        }
    }
}

/// Dense 1-D convolution, `weight` shaped `[cout, cin, kernel]`.
#[derive(Clone, Debug)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct ConvCache<S> {
    cols: Vec<S>,
    batch: usize,
    in_len: usize,
    out_len: usize,
}

impl Conv1d {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
    ) -> Result<(FeatureBatch<S>, ConvCache<S>)> {
        if x.channels() != self.cin {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.cin,
                x.channels()
            )));
        }
        let (batch, len) = (x.batch(), x.len());
        let out_len = self.out_len(len).ok_or_else(|| {
            Error::Shape(format!(
                "input length {len} shorter than kernel {}",
                self.kernel
            ))
        })?;
        let cols = if self.is_pointwise() {
            x.data().to_vec()
        } else {
            self.im2col(x, out_len)
        };
        let width = batch * out_len;
        let rows = self.cin * self.kernel;
        let mut y = FeatureBatch::zeros(self.cout, batch, out_len);
        gemm(
            self.cout,
            rows,
            width,
            ps.values(self.weight),
            Strides::row_major(rows),
            &cols,
            Strides::row_major(width),
            y.data_mut(),
            false,
        );
        if let Some(b) = self.bias {
            let bias = ps.values(b);
            for (co, &bv) in bias.iter().enumerate() {
                y.channel_mut(co).iter_mut().for_each(|v| *v += bv);
            }
        }
        Ok((
            y,
            ConvCache {
                cols,
                batch,
                in_len: len,
                out_len,
            },
        ))
    }

    fn im2col<S: Scalar>(&self, x: &FeatureBatch<S>, out_len: usize) -> Vec<S> {
        let (batch, len) = (x.batch(), x.len());
        let width = batch * out_len;
        let mut cols = vec![S::zero(); self.cin * self.kernel * width];
        for ci in 0..self.cin {
            for n in 0..batch {
                let src = x.row(ci, n);
                for kk in 0..self.kernel {
                    let row = (ci * self.kernel + kk) * width + n * out_len;
                    for to in 0..out_len {
                        let t = (to * self.stride + kk) as isize - self.pad as isize;
                        if t >= 0 && (t as usize) < len {
                            cols[row + to] = src[t as usize];
                        }
                    }
                }
            }
        }
        cols
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &ConvCache<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let width = cache.batch * cache.out_len;
        let rows = self.cin * self.kernel;
        gemm(
            self.cout,
            width,
            rows,
            dy.data(),
            Strides::row_major(width),
            &cache.cols,
            Strides::transposed(width),
            grads.get_mut(self.weight),
            true,
        );
        if let Some(b) = self.bias {
            let gb = grads.get_mut(b);
            for (co, g) in gb.iter_mut().enumerate() {
                *g += sum(dy.channel(co).iter().copied());
            }
        }
        let mut dcols = vec![S::zero(); rows * width];
        gemm(
            rows,
            self.cout,
            width,
            ps.values(self.weight),
            Strides::transposed(rows),
            dy.data(),
            Strides::row_major(width),
            &mut dcols,
            false,
        );
        if self.is_pointwise() {
            return FeatureBatch::from_vec(self.cin, cache.batch, cache.in_len, dcols)
                .expect("pointwise gradient shape");
        }
        let mut dx = FeatureBatch::zeros(self.cin, cache.batch, cache.in_len);
        for ci in 0..self.cin {
            for n in 0..cache.batch {
                let dst = dx.row_mut(ci, n);
                for kk in 0..self.kernel {
                    let row = (ci * self.kernel + kk) * width + n * cache.out_len;
                    for to in 0..cache.out_len {
                        let t = (to * self.stride + kk) as isize - self.pad as isize;
                        if t >= 0 && (t as usize) < cache.in_len {
                            dst[t as usize] += dcols[row + to];
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Depthwise 1-D convolution with odd kernel, zero "same" padding and bias.
/// `weight` is shaped `[channels, kernel]`.
#[derive(Clone, Debug)]
pub struct DepthwiseConv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub channels: usize,
    pub kernel: usize,
}

impl DepthwiseConv1d {
    fn half(&self) -> isize {
        (self.kernel / 2) as isize
    }

    pub fn forward<S: Scalar>(&self, ps: &ParameterSet<S>, x: &FeatureBatch<S>) -> FeatureBatch<S> {
        let (batch, len) = (x.batch(), x.len());
        let w = ps.values(self.weight);
        let b = ps.values(self.bias);
        let mut y = FeatureBatch::zeros(self.channels, batch, len);
        for c in 0..self.channels {
            let wc = &w[c * self.kernel..(c + 1) * self.kernel];
            for n in 0..batch {
                let src = x.row(c, n);
                let dst = y.row_mut(c, n);
                dst.iter_mut().for_each(|v| *v = b[c]);
                for (kk, &wk) in wc.iter().enumerate() {
                    let off = kk as isize - self.half();
                    let (lo, hi) = valid_range(off, len);
                    for t in lo..hi {
                        dst[t] += wk * src[(t as isize + off) as usize];
                    }
                }
            }
        }
        y
    }

    /// Accumulates parameter gradients; `x` is the forward input.
    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let (batch, len) = (x.batch(), x.len());
        let w = ps.values(self.weight);
        let mut dx = FeatureBatch::zeros(self.channels, batch, len);
        for c in 0..self.channels {
            let wc = &w[c * self.kernel..(c + 1) * self.kernel];
            let mut gw = vec![S::zero(); self.kernel];
            let mut gb = S::zero();
            for n in 0..batch {
                let src = x.row(c, n);
                let g = dy.row(c, n);
                gb += sum(g.iter().copied());
                let dst = dx.row_mut(c, n);
                for (kk, &wk) in wc.iter().enumerate() {
                    let off = kk as isize - self.half();
                    let (lo, hi) = valid_range(off, len);
                    let mut acc = S::zero();
                    for t in lo..hi {
                        let s = (t as isize + off) as usize;
                        acc += g[t] * src[s];
                        dst[s] += wk * g[t];
                    }
                    gw[kk] += acc;
                }
            }
            let gwc = &mut grads.get_mut(self.weight)[c * self.kernel..(c + 1) * self.kernel];
            for (a, b) in gwc.iter_mut().zip(&gw) {
                *a += *b;
            }
            grads.get_mut(self.bias)[c] += gb;
        }
        dx
    }
}

/// Output positions `t` for which `t + off` indexes a real input sample.
#[inline]
fn valid_range(off: isize, len: usize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (len as isize - off.max(0)).max(0) as usize;
    (lo.min(len), hi)
}

/// Affine map on row-major `[batch, in]` matrices; `weight` is `[out, in]`
/// (trailing unit dimensions allowed).
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn forward<S: Scalar>(&self, ps: &ParameterSet<S>, x: &[S], rows: usize) -> Vec<S> {
        debug_assert_eq!(x.len(), rows * self.fan_in);
        let mut y = vec![S::zero(); rows * self.fan_out];
        gemm(
            rows,
            self.fan_in,
            self.fan_out,
            x,
            Strides::row_major(self.fan_in),
            ps.values(self.weight),
            Strides::transposed(self.fan_in),
            &mut y,
            false,
        );
        let b = ps.values(self.bias);
        for row in y.chunks_exact_mut(self.fan_out) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
        y
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &[S],
        dy: &[S],
        rows: usize,
        grads: &mut Gradients<S>,
    ) -> Vec<S> {
        gemm(
            self.fan_out,
            rows,
            self.fan_in,
            dy,
            Strides::transposed(self.fan_out),
            x,
            Strides::row_major(self.fan_in),
            grads.get_mut(self.weight),
            true,
        );
        let gb = grads.get_mut(self.bias);
        for row in dy.chunks_exact(self.fan_out) {
            for (g, &v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let mut dx = vec![S::zero(); rows * self.fan_in];
        gemm(
            rows,
            self.fan_out,
            self.fan_in,
            dy,
            Strides::row_major(self.fan_out),
            ps.values(self.weight),
            Strides::row_major(self.fan_in),
            &mut dx,
            false,
        );
        dx
    }
}

/// Batch norm (per channel over batch and time) or channels-first layer norm
/// (per position over channels), both with a per-channel affine.
#[derive(Clone, Debug)]
pub struct Norm {
    pub kind: NormKind,
    pub channels: usize,
    pub scale: ParamId,
    pub shift: ParamId,
    pub running_mean: Option<ParamId>,
    pub running_var: Option<ParamId>,
}

#[derive(Clone, Debug)]
pub enum NormCache<S> {
    /// Normalized input and per-channel inverse std from batch statistics.
    Batch {
        xhat: FeatureBatch<S>,
        inv_std: Vec<S>,
    },
    /// Running-statistics normalization is affine; only inverse std is kept.
    Frozen { inv_std: Vec<S> },
    /// Normalized input and per-position inverse std.
    Layer {
        xhat: FeatureBatch<S>,
        inv_std: Vec<S>,
    },
}

impl Norm {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
        ctx: &mut ForwardCtx<S>,
    ) -> (FeatureBatch<S>, NormCache<S>) {
        match (self.kind, ctx.mode) {
            (NormKind::BatchNorm, Mode::Train) => self.batch_train(ps, x, ctx),
            (NormKind::BatchNorm, Mode::Eval) => self.batch_eval(ps, x),
            (NormKind::LayerNorm, _) => self.layer(ps, x),
        }
    }

    fn batch_train<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
        ctx: &mut ForwardCtx<S>,
    ) -> (FeatureBatch<S>, NormCache<S>) {
        let gamma = ps.values(self.scale);
        let beta = ps.values(self.shift);
        let count = x.batch() * x.len();
        let m = S::lit(count as f64);
        let eps = S::lit(BATCH_NORM_EPS);
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(self.channels);
        let mut means = Vec::with_capacity(self.channels);
        let mut vars = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let row = x.channel(c);
            let mean = sum(row.iter().copied()) / m;
            let var = sum(row.iter().map(|&v| (v - mean) * (v - mean))) / m;
            let is = (var + eps).sqrt().recip();
            for ((h, o), &v) in xhat
                .channel_mut(c)
                .iter_mut()
                .zip(y.channel_mut(c))
                .zip(row)
            {
                *h = (v - mean) * is;
                *o = gamma[c] * *h + beta[c];
            }
            inv_std.push(is);
            means.push(mean);
            vars.push(if count > 1 {
                var * m / (m - S::one())
            } else {
                var
            });
        }
        if let (Some(rm), Some(rv)) = (self.running_mean, self.running_var) {
            ctx.stats.push(StatUpdate {
                running_mean: rm,
                running_var: rv,
                mean: means,
                var_unbiased: vars,
            });
        }
        (y, NormCache::Batch { xhat, inv_std })
    }

    fn batch_eval<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
    ) -> (FeatureBatch<S>, NormCache<S>) {
        let gamma = ps.values(self.scale);
        let beta = ps.values(self.shift);
        let rm = ps.values(self.running_mean.expect("batch norm has running mean"));
        let rv = ps.values(self.running_var.expect("batch norm has running var"));
        let eps = S::lit(BATCH_NORM_EPS);
        let mut y = x.clone();
        let mut inv_std = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let is = (rv[c] + eps).sqrt().recip();
            for v in y.channel_mut(c) {
                *v = gamma[c] * (*v - rm[c]) * is + beta[c];
            }
            inv_std.push(is);
        }
        (y, NormCache::Frozen { inv_std })
    }

    fn layer<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
    ) -> (FeatureBatch<S>, NormCache<S>) {
        let gamma = ps.values(self.scale);
        let beta = ps.values(self.shift);
        let positions = x.batch() * x.len();
        let c_count = S::lit(self.channels as f64);
        let eps = S::lit(LAYER_NORM_EPS);
        let data = x.data();
        let mut xhat = x.clone();
        let mut y = x.clone();
        let mut inv_std = vec![S::zero(); positions];
        for (p, is_out) in inv_std.iter_mut().enumerate() {
            let mut mean = S::zero();
            for c in 0..self.channels {
                mean += data[c * positions + p];
            }
            mean /= c_count;
            let mut var = S::zero();
            for c in 0..self.channels {
                let d = data[c * positions + p] - mean;
                var += d * d;
            }
            var /= c_count;
            let is = (var + eps).sqrt().recip();
            *is_out = is;
            for c in 0..self.channels {
                let i = c * positions + p;
                let h = (data[i] - mean) * is;
                xhat.data_mut()[i] = h;
                y.data_mut()[i] = gamma[c] * h + beta[c];
            }
        }
        (y, NormCache::Layer { xhat, inv_std })
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &NormCache<S>,
        x: &FeatureBatch<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let gamma = ps.values(self.scale).to_vec();
        let mut dx = FeatureBatch::zeros(dy.channels(), dy.batch(), dy.len());
        match cache {
            NormCache::Batch { xhat, inv_std } => {
                let m = S::lit((dy.batch() * dy.len()) as f64);
                for c in 0..self.channels {
                    let g = dy.channel(c);
                    let h = xhat.channel(c);
                    let sum_g: S = sum(g.iter().copied());
                    let sum_gh: S = sum(g.iter().zip(h).map(|(&a, &b)| a * b));
                    grads.get_mut(self.shift)[c] += sum_g;
                    grads.get_mut(self.scale)[c] += sum_gh;
                    let k = gamma[c] * inv_std[c] / m;
                    for ((d, &gv), &hv) in dx.channel_mut(c).iter_mut().zip(g).zip(h) {
                        *d = k * (m * gv - sum_g - hv * sum_gh);
                    }
                }
            }
            NormCache::Frozen { inv_std } => {
                let rm = ps.values(self.running_mean.expect("running mean"));
                for c in 0..self.channels {
                    let g = dy.channel(c);
                    let xs = x.channel(c);
                    let mut sum_g = S::zero();
                    let mut sum_gh = S::zero();
                    for ((d, &gv), &xv) in dx.channel_mut(c).iter_mut().zip(g).zip(xs) {
                        sum_g += gv;
                        sum_gh += gv * (xv - rm[c]) * inv_std[c];
                        *d = gamma[c] * inv_std[c] * gv;
                    }
                    grads.get_mut(self.shift)[c] += sum_g;
                    grads.get_mut(self.scale)[c] += sum_gh;
                }
            }
            NormCache::Layer { xhat, inv_std } => {
                let positions = dy.batch() * dy.len();
                let c_count = S::lit(self.channels as f64);
                let g = dy.data();
                let h = xhat.data();
                for c in 0..self.channels {
                    let range = c * positions..(c + 1) * positions;
                    grads.get_mut(self.shift)[c] += sum(g[range.clone()].iter().copied());
                    grads.get_mut(self.scale)[c] +=
                        sum(g[range.clone()].iter().zip(&h[range]).map(|(&a, &b)| a * b));
                }
                let out = dx.data_mut();
                for (p, &is) in inv_std.iter().enumerate() {
                    let mut sum_dh = S::zero();
                    let mut sum_dh_h = S::zero();
                    for c in 0..self.channels {
                        let i = c * positions + p;
                        let dh = gamma[c] * g[i];
                        sum_dh += dh;
                        sum_dh_h += dh * h[i];
                    }
                    for c in 0..self.channels {
                        let i = c * positions + p;
                        let dh = gamma[c] * g[i];
                        out[i] = is / c_count * (c_count * dh - sum_dh - h[i] * sum_dh_h);
                    }
                }
            }
        }
        dx
    }
}

/// Folds one training pass's batch statistics into the running buffers.
pub fn apply_stat_updates<S: Scalar>(ps: &mut ParameterSet<S>, updates: &[StatUpdate<S>]) {
    let mom = S::lit(BATCH_NORM_MOMENTUM);
    let keep = S::one() - mom;
    for u in updates {
        for (r, &m) in ps.values_mut(u.running_mean).iter_mut().zip(&u.mean) {
            *r = keep * *r + mom * m;
        }
        for (r, &v) in ps.values_mut(u.running_var).iter_mut().zip(&u.var_unbiased) {
            *r = keep * *r + mom * v;
        }
    }
}

/// 1-D max pooling with `-inf` padding.
#[derive(Clone, Copy, Debug)]
pub struct MaxPool1d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_len: usize,
}

impl MaxPool1d {
    pub fn out_len(&self, len: usize) -> Option<usize> {
        let padded = len + 2 * self.pad;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn forward<S: Scalar>(
        &self,
        x: &FeatureBatch<S>,
    ) -> Result<(FeatureBatch<S>, MaxPoolCache)> {
        let len = x.len();
        let out_len = self
            .out_len(len)
            .ok_or_else(|| Error::Shape(format!("max pool input length {len} too short")))?;
        let mut y = FeatureBatch::zeros(x.channels(), x.batch(), out_len);
        let mut argmax = Vec::with_capacity(x.channels() * x.batch() * out_len);
        for c in 0..x.channels() {
            for n in 0..x.batch() {
                let src = x.row(c, n);
                let dst = y.row_mut(c, n);
                for (to, d) in dst.iter_mut().enumerate() {
                    let start = (to * self.stride) as isize - self.pad as isize;
                    let lo = start.max(0) as usize;
                    let hi = ((start + self.kernel as isize) as usize).min(len);
                    let mut best = lo;
                    for t in lo + 1..hi {
                        if src[t] > src[best] {
                            best = t;
                        }
                    }
                    *d = src[best];
                    argmax.push(best);
                }
            }
        }
        Ok((
            y,
            MaxPoolCache {
                argmax,
                in_len: len,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        cache: &MaxPoolCache,
        dy: &FeatureBatch<S>,
    ) -> FeatureBatch<S> {
        let mut dx = FeatureBatch::zeros(dy.channels(), dy.batch(), cache.in_len);
        let mut k = 0;
        for c in 0..dy.channels() {
            for n in 0..dy.batch() {
                let g = dy.row(c, n).to_vec();
                let dst = dx.row_mut(c, n);
                for gv in g {
                    dst[cache.argmax[k]] += gv;
                    k += 1;
                }
            }
        }
        dx
    }
}

/// Numerically stable in-place softmax.
pub fn softmax_in_place<S: Scalar>(v: &mut [S]) {
    let Some(&first) = v.first() else { return };
    let max = v
        .iter()
        .copied()
        .fold(first, |m, x| if x > m { x } else { m });
    let mut sum = S::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
