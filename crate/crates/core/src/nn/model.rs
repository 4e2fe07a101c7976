//! The full backbone: stem, four stages of encoder blocks joined by stride-2
//! downsampling, and a pooled affine regression head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::block::{AdeBlock, BlockCache};
use crate::nn::config::{GatingAxis, ModelConfig, NormKind, StemKind, IMU_CHANNELS, MIN_INPUT_LEN};
use crate::nn::dadm::{Dadm, Wing, SCALES};
use crate::nn::ops::{
    apply_stat_updates, Conv1d, ConvCache, DepthwiseConv1d, ForwardCtx, Linear, MaxPool1d,
    MaxPoolCache, Mode, Norm, NormCache, StatUpdate,
};
use crate::nn::params::{trunc_normal, Gradients, ParamId, ParamRole, ParameterSet};
use crate::nn::stgu::Stgu;
use crate::scalar::{sum, Scalar};
use crate::tensor::{FeatureBatch, Tensor};

#[derive(Clone, Debug)]
pub struct Stem {
    pub conv: Conv1d,
    pub norm: Norm,
    pub pool: Option<MaxPool1d>,
}

#[derive(Clone, Debug)]
pub struct Downsample {
    pub norm: Norm,
    pub conv: Conv1d,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub norm: Norm,
    pub fc: Linear,
}

/// Layer structure of a built model; weights live in the [`ParameterSet`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub stem: Stem,
    pub stages: Vec<Vec<AdeBlock>>,
    pub downsamples: Vec<Downsample>,
    pub head: Head,
}

/// Backbone instance generic over the scalar type.
#[derive(Clone, Debug)]
pub struct IoNext<S> {
    config: ModelConfig,
    params: ParameterSet<S>,
    layout: Layout,
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug)]
pub struct Tape<S> {
    batch: usize,
    stem_conv: ConvCache<S>,
    stem_conv_out: FeatureBatch<S>,
    stem_norm: NormCache<S>,
    stem_pool: Option<MaxPoolCache>,
    blocks: Vec<Vec<BlockCache<S>>>,
    downs: Vec<(FeatureBatch<S>, NormCache<S>, ConvCache<S>)>,
    head_in: FeatureBatch<S>,
    head_norm: NormCache<S>,
    pooled: Vec<S>,
    stats: Vec<StatUpdate<S>>,
    shapes: Vec<(usize, usize)>,
}

impl<S: Scalar> Tape<S> {
    /// `(channels, length)` after the stem and after each of the four stages.
    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    pub fn block(&self, stage: usize, block: usize) -> &BlockCache<S> {
        &self.blocks[stage][block]
    }

    pub fn stat_updates(&self) -> &[StatUpdate<S>] {
        &self.stats
    }
}

struct Builder<'a, S> {
    ps: &'a mut ParameterSet<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Builder<'_, S> {
    fn add(&mut self, name: String, role: ParamRole, shape: &[usize]) -> Result<ParamId> {
        let len: usize = shape.iter().product();
        let data = match role {
            ParamRole::ConvWeight | ParamRole::LinearWeight => trunc_normal(&mut self.rng, len),
            ParamRole::NormScale | ParamRole::RunningVar => vec![S::one(); len],
            _ => vec![S::zero(); len],
        };
        self.ps.insert(name, role, Tensor::from_vec(shape, data)?)
    }

    fn conv(
        &mut self,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Conv1d> {
        let weight = self.add(
            format!("{name}.weight"),
            ParamRole::ConvWeight,
            &[cout, cin, kernel],
        )?;
        let bias = Some(self.add(format!("{name}.bias"), ParamRole::ConvBias, &[cout])?);
        Ok(Conv1d {
            weight,
            bias,
            cin,
            cout,
            kernel,
            stride,
            pad,
        })
    }

    fn depthwise(&mut self, name: &str, channels: usize, kernel: usize) -> Result<DepthwiseConv1d> {
        let weight = self.add(
            format!("{name}.weight"),
            ParamRole::ConvWeight,
            &[channels, 1, kernel],
        )?;
        let bias = self.add(format!("{name}.bias"), ParamRole::ConvBias, &[channels])?;
        Ok(DepthwiseConv1d {
            weight,
            bias,
            channels,
            kernel,
        })
    }

    /// Kernel-size-1 convolution applied to pooled vectors.
    fn pointwise(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let weight = self.add(
            format!("{name}.weight"),
            ParamRole::ConvWeight,
            &[fan_out, fan_in, 1],
        )?;
        let bias = self.add(format!("{name}.bias"), ParamRole::ConvBias, &[fan_out])?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        let weight = self.add(
            format!("{name}.weight"),
            ParamRole::LinearWeight,
            &[fan_out, fan_in],
        )?;
        let bias = self.add(format!("{name}.bias"), ParamRole::LinearBias, &[fan_out])?;
        Ok(Linear {
            weight,
            bias,
            fan_in,
            fan_out,
        })
    }

    fn norm(&mut self, name: &str, kind: NormKind, channels: usize) -> Result<Norm> {
        let scale = self.add(format!("{name}.weight"), ParamRole::NormScale, &[channels])?;
        let shift = self.add(format!("{name}.bias"), ParamRole::NormShift, &[channels])?;
        let (running_mean, running_var) = match kind {
            NormKind::BatchNorm => (
                Some(self.add(
                    format!("{name}.running_mean"),
                    ParamRole::RunningMean,
                    &[channels],
                )?),
                Some(self.add(
                    format!("{name}.running_var"),
                    ParamRole::RunningVar,
                    &[channels],
                )?),
            ),
            NormKind::LayerNorm => (None, None),
        };
        Ok(Norm {
            kind,
            channels,
            scale,
            shift,
            running_mean,
            running_var,
        })
    }

    fn block(&mut self, prefix: &str, cfg: &ModelConfig, channels: usize) -> Result<AdeBlock> {
        let norm1 = self.norm(&format!("{prefix}.norm1"), cfg.norm_kind, channels)?;
        let half = channels / 2;
        let mut wings = Vec::with_capacity(2);
        for j in 0..2 {
            let wp = format!("{prefix}.dadm.wing{j}");
            let norm = self.norm(&format!("{wp}.norm"), cfg.norm_kind, half)?;
            let kernels = cfg.branch_kernels(j);
            let b0 = self.depthwise(&format!("{wp}.dw0"), half, kernels[0])?;
            let b1 = self.depthwise(&format!("{wp}.dw1"), half, kernels[1])?;
            let b2 = self.depthwise(&format!("{wp}.dw2"), half, kernels[2])?;
            let fusion = self.pointwise(&format!("{wp}.w1"), half, SCALES * half)?;
            wings.push(Wing {
                norm,
                branches: [b0, b1, b2],
                fusion,
            });
        }
        let mix = self.conv(&format!("{prefix}.dadm.w2"), channels, channels, 1, 1, 0)?;
        let wings: [Wing; 2] = wings.try_into().expect("two wings");
        let dadm = Dadm {
            channels,
            wings,
            mix,
        };
        let gating = if cfg.stgu_enabled {
            let norm2 = self.norm(&format!("{prefix}.norm2"), cfg.norm_kind, channels)?;
            let gate = match cfg.stgu_gating_axis {
                GatingAxis::Time => self.pointwise(&format!("{prefix}.stgu.w3"), 2, 1)?,
                GatingAxis::Channel => {
                    self.pointwise(&format!("{prefix}.stgu.w3"), 2 * channels, channels)?
                }
            };
            let value = self.depthwise(
                &format!("{prefix}.stgu.value"),
                channels,
                cfg.stgu_value_kernel,
            )?;
            Some((
                norm2,
                Stgu {
                    channels,
                    axis: cfg.stgu_gating_axis,
                    gate,
                    value,
                },
            ))
        } else {
            None
        };
        Ok(AdeBlock {
            norm1,
            dadm,
            gating,
        })
    }
}

impl<S: Scalar> IoNext<S> {
    /// Allocates and initializes every parameter. Conv and linear weights are
    /// drawn from a truncated normal (std 0.02), biases and shifts are zero,
    /// norm scales one.
    pub fn new(config: ModelConfig, init_seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParameterSet::new();
        let mut b = Builder {
            ps: &mut params,
            rng: ChaCha8Rng::seed_from_u64(init_seed),
        };
        let widths = config.stage_widths;
        let stem = match config.stem_kind {
            StemKind::NonoverlapK4s4 => Stem {
                conv: b.conv("stem.conv", IMU_CHANNELS, widths[0], 4, 4, 0)?,
                norm: b.norm("stem.norm", config.norm_kind, widths[0])?,
                pool: None,
            },
            StemKind::Conv7s2Maxpool => Stem {
                conv: b.conv("stem.conv", IMU_CHANNELS, widths[0], 7, 2, 3)?,
                norm: b.norm("stem.norm", config.norm_kind, widths[0])?,
                pool: Some(MaxPool1d {
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                }),
            },
        };
        let mut stages = Vec::with_capacity(4);
        let mut downsamples = Vec::with_capacity(3);
        for s in 0..4 {
            if s > 0 {
                let name = format!("down{s}");
                downsamples.push(Downsample {
                    norm: b.norm(&format!("{name}.norm"), config.norm_kind, widths[s - 1])?,
                    conv: b.conv(&format!("{name}.conv"), widths[s - 1], widths[s], 2, 2, 0)?,
                });
            }
            let blocks = (0..config.stage_depths[s])
                .map(|i| {
                    b.block(
                        &format!("stage{}.block{}", s + 1, i + 1),
                        &config,
                        widths[s],
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            stages.push(blocks);
        }
        let head = Head {
            norm: b.norm("head.norm", config.norm_kind, widths[3])?,
            fc: b.linear("head.fc", widths[3], config.output_dim)?,
        };
        let layout = Layout {
            stem,
            stages,
            downsamples,
            head,
        };
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    /// Rebuilds a model around existing parameters; names and shapes must
    /// match what `config` produces.
    pub fn with_params(config: ModelConfig, params: ParameterSet<S>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if model.params.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors for this config, got {}",
                model.params.len(),
                params.len()
            )));
        }
        for ((name, want), (got_name, got)) in model.params.iter().zip(params.iter()) {
            if name != got_name
                || want.tensor.shape() != got.tensor.shape()
                || want.role != got.role
            {
                return Err(Error::Checkpoint(format!(
                    "tensor {got_name} {:?} does not match expected {name} {:?}",
                    got.tensor.shape(),
                    want.tensor.shape()
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet<S> {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn block(&self, stage: usize, block: usize) -> &AdeBlock {
        &self.layout.stages[stage][block]
    }

    /// Inference with running statistics; returns `[batch][output_dim]`.
    pub fn forward(&self, x: &FeatureBatch<S>) -> Result<Vec<S>> {
        self.forward_with(x, Mode::Eval).map(|(y, _)| y)
    }

    pub fn forward_with(&self, x: &FeatureBatch<S>, mode: Mode) -> Result<(Vec<S>, Tape<S>)> {
        let ps = &self.params;
        let l = &self.layout;
        if x.channels() != IMU_CHANNELS {
            return Err(Error::Shape(format!(
                "expected {IMU_CHANNELS} input channels, got {}",
                x.channels()
            )));
        }
        if x.len() < MIN_INPUT_LEN {
            return Err(Error::Shape(format!(
                "input length {} below minimum {MIN_INPUT_LEN}",
                x.len()
            )));
        }
        if x.batch() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        let mut ctx = ForwardCtx::new(mode);
        let mut shapes = Vec::with_capacity(5);

        let (stem_conv_out, stem_conv) = l.stem.conv.forward(ps, x)?;
        let (mut h, stem_norm) = l.stem.norm.forward(ps, &stem_conv_out, &mut ctx);
        let stem_pool = match &l.stem.pool {
            Some(pool) => {
                let (y, c) = pool.forward(&h)?;
                h = y;
                Some(c)
            }
            None => None,
        };
        shapes.push(h.dims());

        let mut blocks = Vec::with_capacity(4);
        let mut downs = Vec::with_capacity(3);
        for (s, stage) in l.stages.iter().enumerate() {
            if s > 0 {
                let d = &l.downsamples[s - 1];
                if h.len() < 2 {
                    return Err(Error::Shape(format!(
                        "stage {} output length {} too short to downsample",
                        s,
                        h.len()
                    )));
                }
                let (a, nc) = d.norm.forward(ps, &h, &mut ctx);
                let (y, cc) = d.conv.forward(ps, &a)?;
                downs.push((std::mem::replace(&mut h, y), nc, cc));
            }
            let mut caches = Vec::with_capacity(stage.len());
            for block in stage {
                let (y, c) = block.forward(ps, &h, &mut ctx)?;
                h = y;
                caches.push(c);
            }
            blocks.push(caches);
            shapes.push(h.dims());
        }

        let (normed, head_norm) = l.head.norm.forward(ps, &h, &mut ctx);
        let (batch, len, width) = (normed.batch(), normed.len(), normed.channels());
        let inv_len = S::lit(1.0 / len as f64);
        let mut pooled = vec![S::zero(); batch * width];
        for c in 0..width {
            for n in 0..batch {
                pooled[n * width + c] = sum(normed.row(c, n).iter().copied()) * inv_len;
            }
        }
        let out = l.head.fc.forward(ps, &pooled, batch);
        let tape = Tape {
            batch,
            stem_conv,
            stem_conv_out,
            stem_norm,
            stem_pool,
            blocks,
            downs,
            head_in: h,
            head_norm,
            pooled,
            stats: ctx.stats,
            shapes,
        };
        Ok((out, tape))
    }

    /// Gradients of `sum(d_out ⊙ output)` with respect to every trainable parameter.
    pub fn backward(&self, tape: &Tape<S>, d_out: &[S]) -> Gradients<S> {
        let ps = &self.params;
        let l = &self.layout;
        let mut grads = Gradients::zeros_for(ps);
        let batch = tape.batch;
        let d_pooled = l
            .head
            .fc
            .backward(ps, &tape.pooled, d_out, batch, &mut grads);
        let (width, len) = tape.head_in.dims();
        let inv_len = S::lit(1.0 / len as f64);
        let mut d_normed = FeatureBatch::zeros(width, batch, len);
        for c in 0..width {
            for n in 0..batch {
                let g = d_pooled[n * width + c] * inv_len;
                d_normed.row_mut(c, n).iter_mut().for_each(|v| *v = g);
            }
        }
        let mut dh =
            l.head
                .norm
                .backward(ps, &tape.head_norm, &tape.head_in, &d_normed, &mut grads);
        for s in (0..l.stages.len()).rev() {
            for (block, cache) in l.stages[s].iter().zip(&tape.blocks[s]).rev() {
                dh = block.backward(ps, cache, &dh, &mut grads);
            }
            if s > 0 {
                let d = &l.downsamples[s - 1];
                let (input, nc, cc) = &tape.downs[s - 1];
                let da = d.conv.backward(ps, cc, &dh, &mut grads);
                dh = d.norm.backward(ps, nc, input, &da, &mut grads);
            }
        }
        if let (Some(pool), Some(pc)) = (&l.stem.pool, &tape.stem_pool) {
            dh = pool.backward(pc, &dh);
        }
        let da = l
            .stem
            .norm
            .backward(ps, &tape.stem_norm, &tape.stem_conv_out, &dh, &mut grads);
        l.stem.conv.backward(ps, &tape.stem_conv, &da, &mut grads);
        grads
    }

    /// Folds the batch statistics recorded in a training-mode tape into the
    /// running buffers.
    pub fn update_running_stats(&mut self, tape: &Tape<S>) {
        apply_stat_updates(&mut self.params, &tape.stats);
    }

    /// Same model with parameters converted to another scalar type.
    pub fn cast<T: Scalar>(&self) -> IoNext<T> {
        IoNext {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }
}
