//! Dual-wing adaptive dynamic mixer.
//!
//! The input is split into two contiguous channel halves ("wings"). Each wing
//! is normalized once and passed through three depthwise convolutions with
//! kernels `(1, k, 3k + 2)`. Per-sample, per-channel softmax weights over the
//! three scales are predicted from the wing's temporal mean, the branches are
//! blended with those weights, and a pointwise projection mixes the two wings.

use crate::error::{Error, Result};
use crate::nn::ops::{
    softmax_in_place, Conv1d, ConvCache, DepthwiseConv1d, ForwardCtx, Linear, Norm, NormCache,
};
use crate::nn::params::{Gradients, ParameterSet};
use crate::scalar::{sum, Scalar};
use crate::tensor::FeatureBatch;

/// Number of scale branches per wing.
pub const SCALES: usize = 3;

#[derive(Clone, Debug)]
pub struct Wing {
    pub norm: Norm,
    pub branches: [DepthwiseConv1d; SCALES],
    /// Pointwise projection from `C/2` pooled statistics to `3·C/2` logits.
    pub fusion: Linear,
}

#[derive(Clone, Debug)]
pub struct Dadm {
    pub channels: usize,
    pub wings: [Wing; 2],
    /// Output projection over the concatenated wings.
    pub mix: Conv1d,
}

#[derive(Clone, Debug)]
pub struct WingCache<S> {
    input: FeatureBatch<S>,
    norm: NormCache<S>,
    normed: FeatureBatch<S>,
    branches: [FeatureBatch<S>; SCALES],
    pooled: Vec<S>,
    /// `[batch][scale][channel]`, softmax-normalized over the scale axis.
    weights: Vec<S>,
}

#[derive(Clone, Debug)]
pub struct DadmCache<S> {
    wings: [WingCache<S>; 2],
    mix: ConvCache<S>,
}

impl<S: Scalar> DadmCache<S> {
    /// Fusion weights of wing `j`, laid out `[batch][scale][channel]`.
    pub fn fusion_weights(&self, wing: usize) -> &[S] {
        &self.wings[wing].weights
    }
}

impl Wing {
    fn half(&self) -> usize {
        self.norm.channels
    }

    fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: FeatureBatch<S>,
        ctx: &mut ForwardCtx<S>,
    ) -> (FeatureBatch<S>, WingCache<S>) {
        let h = self.half();
        let (batch, len) = (x.batch(), x.len());
        let (normed, norm_cache) = self.norm.forward(ps, &x, ctx);
        let branches = [0, 1, 2].map(|i| self.branches[i].forward(ps, &normed));

        let inv_len = S::lit(1.0 / len as f64);
        let mut pooled = vec![S::zero(); batch * h];
        for n in 0..batch {
            for c in 0..h {
                pooled[n * h + c] = sum(x.row(c, n).iter().copied()) * inv_len;
            }
        }
        let mut weights = self.fusion.forward(ps, &pooled, batch);
        let mut column = [S::zero(); SCALES];
        for n in 0..batch {
            for c in 0..h {
                for (i, v) in column.iter_mut().enumerate() {
                    *v = weights[(n * SCALES + i) * h + c];
                }
                softmax_in_place(&mut column);
                for (i, v) in column.iter().enumerate() {
                    weights[(n * SCALES + i) * h + c] = *v;
                }
            }
        }

        let mut fused = FeatureBatch::zeros(h, batch, len);
        for c in 0..h {
            for n in 0..batch {
                let dst = fused.row_mut(c, n);
                for (i, br) in branches.iter().enumerate() {
                    let w = weights[(n * SCALES + i) * h + c];
                    for (d, &y) in dst.iter_mut().zip(br.row(c, n)) {
                        *d += w * y;
                    }
                }
            }
        }
        let cache = WingCache {
            input: x,
            norm: norm_cache,
            normed,
            branches,
            pooled,
            weights,
        };
        (fused, cache)
    }

    fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &WingCache<S>,
        d_fused: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let h = self.half();
        let (batch, len) = (d_fused.batch(), d_fused.len());
        let w = &cache.weights;

        // d(weights) and d(branch outputs).
        let mut d_weights = vec![S::zero(); batch * SCALES * h];
        let mut d_branches = [0, 1, 2].map(|_| FeatureBatch::zeros(h, batch, len));
        for c in 0..h {
            for n in 0..batch {
                let g = d_fused.row(c, n);
                for i in 0..SCALES {
                    let wi = w[(n * SCALES + i) * h + c];
                    d_weights[(n * SCALES + i) * h + c] = sum(g
                        .iter()
                        .zip(cache.branches[i].row(c, n))
                        .map(|(&a, &b)| a * b));
                    for (d, &gv) in d_branches[i].row_mut(c, n).iter_mut().zip(g) {
                        *d = wi * gv;
                    }
                }
            }
        }

        // Softmax backward over the scale axis.
        let mut d_logits = vec![S::zero(); batch * SCALES * h];
        for n in 0..batch {
            for c in 0..h {
                let dot: S = sum((0..SCALES)
                    .map(|i| w[(n * SCALES + i) * h + c] * d_weights[(n * SCALES + i) * h + c]));
                for i in 0..SCALES {
                    let k = (n * SCALES + i) * h + c;
                    d_logits[k] = w[k] * (d_weights[k] - dot);
                }
            }
        }
        let d_pooled = self
            .fusion
            .backward(ps, &cache.pooled, &d_logits, batch, grads);

        let mut d_normed = FeatureBatch::zeros(h, batch, len);
        for (branch, d_branch) in self.branches.iter().zip(&d_branches) {
            let dn = branch.backward(ps, &cache.normed, d_branch, grads);
            d_normed.add_assign(&dn);
        }
        let mut dx = self
            .norm
            .backward(ps, &cache.norm, &cache.input, &d_normed, grads);
        let inv_len = S::lit(1.0 / len as f64);
        for c in 0..h {
            for n in 0..batch {
                let g = d_pooled[n * h + c] * inv_len;
                dx.row_mut(c, n).iter_mut().for_each(|v| *v += g);
            }
        }
        dx
    }
}

impl Dadm {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
        ctx: &mut ForwardCtx<S>,
    ) -> Result<(FeatureBatch<S>, DadmCache<S>)> {
        if x.channels() != self.channels || !self.channels.is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "mixer expects an even channel count {}, got {}",
                self.channels,
                x.channels()
            )));
        }
        let h = self.channels / 2;
        let (f0, c0) = self.wings[0].forward(ps, x.slice_channels(0, h), ctx);
        let (f1, c1) = self.wings[1].forward(ps, x.slice_channels(h, self.channels), ctx);
        let fused = FeatureBatch::concat_channels(&[f0, f1]);
        let (out, mix) = self.mix.forward(ps, &fused)?;
        Ok((
            out,
            DadmCache {
                wings: [c0, c1],
                mix,
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &DadmCache<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let h = self.channels / 2;
        let d_fused = self.mix.backward(ps, &cache.mix, dy, grads);
        let d0 = self.wings[0].backward(ps, &cache.wings[0], &d_fused.slice_channels(0, h), grads);
        let d1 = self.wings[1].backward(
            ps,
            &cache.wings[1],
            &d_fused.slice_channels(h, self.channels),
            grads,
        );
        FeatureBatch::concat_channels(&[d0, d1])
    }
}
