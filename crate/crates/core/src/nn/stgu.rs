//! Gating unit: a depthwise-convolution value branch multiplied by sigmoid
//! gates computed from pooled mean/max statistics.

use crate::nn::config::GatingAxis;
use crate::nn::ops::{sigmoid, DepthwiseConv1d, Linear};
use crate::nn::params::{Gradients, ParameterSet};
use crate::scalar::{sum, Scalar};
use crate::tensor::FeatureBatch;

#[derive(Clone, Debug)]
pub struct Stgu {
    pub channels: usize,
    pub axis: GatingAxis,
    /// `2 → 1` per time step (time axis) or `2C → C` per sample (channel axis).
    pub gate: Linear,
    pub value: DepthwiseConv1d,
}

#[derive(Clone, Debug)]
pub struct StguCache<S> {
    input: FeatureBatch<S>,
    value: FeatureBatch<S>,
    stats: Vec<S>,
    argmax: Vec<usize>,
    gates: Vec<S>,
}

impl<S: Scalar> StguCache<S> {
    /// Gate values: `[batch][time]` for the time axis, `[batch][channel]` for
    /// the channel axis.
    pub fn gates(&self) -> &[S] {
        &self.gates
    }
}

impl Stgu {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
    ) -> (FeatureBatch<S>, StguCache<S>) {
        let (c_n, batch, len) = (x.channels(), x.batch(), x.len());
        let value = self.value.forward(ps, x);
        let mut out = value.clone();
        let (stats, argmax, gates) = match self.axis {
            GatingAxis::Time => {
                // rows (n, t): [mean over channels, max over channels]
                let inv_c = S::lit(1.0 / c_n as f64);
                let mut stats = vec![S::zero(); batch * len * 2];
                let mut argmax = vec![0usize; batch * len];
                for n in 0..batch {
                    for t in 0..len {
                        let mut sum = S::zero();
                        let mut best = 0;
                        let mut best_v = x.get(0, n, t);
                        for c in 0..c_n {
                            let v = x.get(c, n, t);
                            sum += v;
                            if v > best_v {
                                best_v = v;
                                best = c;
                            }
                        }
                        let r = n * len + t;
                        stats[2 * r] = sum * inv_c;
                        stats[2 * r + 1] = best_v;
                        argmax[r] = best;
                    }
                }
                let mut gates = self.gate.forward(ps, &stats, batch * len);
                gates.iter_mut().for_each(|g| *g = sigmoid(*g));
                for c in 0..c_n {
                    for n in 0..batch {
                        let g = &gates[n * len..(n + 1) * len];
                        for (v, &gv) in out.row_mut(c, n).iter_mut().zip(g) {
                            *v *= gv;
                        }
                    }
                }
                (stats, argmax, gates)
            }
            GatingAxis::Channel => {
                // rows n: [mean over time per channel.., max over time per channel..]
                let inv_t = S::lit(1.0 / len as f64);
                let mut stats = vec![S::zero(); batch * 2 * c_n];
                let mut argmax = vec![0usize; batch * c_n];
                for n in 0..batch {
                    for c in 0..c_n {
                        let row = x.row(c, n);
                        let mut best = 0;
                        for (t, &v) in row.iter().enumerate() {
                            if v > row[best] {
                                best = t;
                            }
                        }
                        stats[n * 2 * c_n + c] = sum(row.iter().copied()) * inv_t;
                        stats[n * 2 * c_n + c_n + c] = row[best];
                        argmax[n * c_n + c] = best;
                    }
                }
                let mut gates = self.gate.forward(ps, &stats, batch);
                gates.iter_mut().for_each(|g| *g = sigmoid(*g));
                for c in 0..c_n {
                    for n in 0..batch {
                        let g = gates[n * c_n + c];
                        out.row_mut(c, n).iter_mut().for_each(|v| *v *= g);
                    }
                }
                (stats, argmax, gates)
            }
        };
        (
            out,
            StguCache {
                input: x.clone(),
                value,
                stats,
                argmax,
                gates,
            },
        )
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &StguCache<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let (c_n, batch, len) = (dy.channels(), dy.batch(), dy.len());
        let gates = &cache.gates;
        let mut d_value = dy.clone();
        let mut dx;
        match self.axis {
            GatingAxis::Time => {
                let mut d_logit = vec![S::zero(); batch * len];
                for c in 0..c_n {
                    for n in 0..batch {
                        let g = &gates[n * len..(n + 1) * len];
                        let v = cache.value.row(c, n);
                        let dl = &mut d_logit[n * len..(n + 1) * len];
                        for (t, dv) in d_value.row_mut(c, n).iter_mut().enumerate() {
                            dl[t] += *dv * v[t];
                            *dv *= g[t];
                        }
                    }
                }
                for (d, &g) in d_logit.iter_mut().zip(gates) {
                    *d *= g * (S::one() - g);
                }
                let d_stats = self
                    .gate
                    .backward(ps, &cache.stats, &d_logit, batch * len, grads);
                dx = self.value.backward(ps, &cache.input, &d_value, grads);
                let inv_c = S::lit(1.0 / c_n as f64);
                for n in 0..batch {
                    for t in 0..len {
                        let r = n * len + t;
                        let dm = d_stats[2 * r] * inv_c;
                        for c in 0..c_n {
                            let i = dx.index(c, n, t);
                            dx.data_mut()[i] += dm;
                        }
                        let i = dx.index(cache.argmax[r], n, t);
                        dx.data_mut()[i] += d_stats[2 * r + 1];
                    }
                }
            }
            GatingAxis::Channel => {
                let mut d_logit = vec![S::zero(); batch * c_n];
                for c in 0..c_n {
                    for n in 0..batch {
                        let g = gates[n * c_n + c];
                        let v = cache.value.row(c, n);
                        let mut acc = S::zero();
                        for (t, dv) in d_value.row_mut(c, n).iter_mut().enumerate() {
                            acc += *dv * v[t];
                            *dv *= g;
                        }
                        d_logit[n * c_n + c] = acc * g * (S::one() - g);
                    }
                }
                let d_stats = self.gate.backward(ps, &cache.stats, &d_logit, batch, grads);
                dx = self.value.backward(ps, &cache.input, &d_value, grads);
                let inv_t = S::lit(1.0 / len as f64);
                for n in 0..batch {
                    for c in 0..c_n {
                        let dm = d_stats[n * 2 * c_n + c] * inv_t;
                        let row = dx.row_mut(c, n);
                        row.iter_mut().for_each(|v| *v += dm);
                        row[cache.argmax[n * c_n + c]] += d_stats[n * 2 * c_n + c_n + c];
                    }
                }
            }
        }
        dx
    }
}
