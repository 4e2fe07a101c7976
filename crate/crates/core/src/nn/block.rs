//! Residual encoder block: `x' = x + DADM(norm(x))`, `out = x' + STGU(norm(x'))`.

use crate::error::Result;
use crate::nn::dadm::{Dadm, DadmCache};
use crate::nn::ops::{ForwardCtx, Norm, NormCache};
use crate::nn::params::{Gradients, ParameterSet};
use crate::nn::stgu::{Stgu, StguCache};
use crate::scalar::Scalar;
use crate::tensor::FeatureBatch;

#[derive(Clone, Debug)]
pub struct AdeBlock {
    pub norm1: Norm,
    pub dadm: Dadm,
    /// Present only when the gating unit is enabled.
    pub gating: Option<(Norm, Stgu)>,
}

#[derive(Clone, Debug)]
pub struct BlockCache<S> {
    input: FeatureBatch<S>,
    norm1: NormCache<S>,
    dadm: DadmCache<S>,
    gating: Option<GatingCache<S>>,
}

#[derive(Clone, Debug)]
struct GatingCache<S> {
    mid: FeatureBatch<S>,
    norm2: NormCache<S>,
    stgu: StguCache<S>,
}

impl<S: Scalar> BlockCache<S> {
    pub fn dadm(&self) -> &DadmCache<S> {
        &self.dadm
    }

    pub fn stgu(&self) -> Option<&StguCache<S>> {
        self.gating.as_ref().map(|g| &g.stgu)
    }
}

impl AdeBlock {
    pub fn forward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        x: &FeatureBatch<S>,
        ctx: &mut ForwardCtx<S>,
    ) -> Result<(FeatureBatch<S>, BlockCache<S>)> {
        let (a, norm1) = self.norm1.forward(ps, x, ctx);
        let (mut mid, dadm) = self.dadm.forward(ps, &a, ctx)?;
        mid.add_assign(x);
        let Some((norm2, stgu)) = &self.gating else {
            return Ok((
                mid,
                BlockCache {
                    input: x.clone(),
                    norm1,
                    dadm,
                    gating: None,
                },
            ));
        };
        let (b, norm2_cache) = norm2.forward(ps, &mid, ctx);
        let (mut out, stgu_cache) = stgu.forward(ps, &b);
        out.add_assign(&mid);
        let gating = GatingCache {
            mid,
            norm2: norm2_cache,
            stgu: stgu_cache,
        };
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                norm1,
                dadm,
                gating: Some(gating),
            },
        ))
    }

    pub fn backward<S: Scalar>(
        &self,
        ps: &ParameterSet<S>,
        cache: &BlockCache<S>,
        dy: &FeatureBatch<S>,
        grads: &mut Gradients<S>,
    ) -> FeatureBatch<S> {
        let mut d_mid = dy.clone();
        if let (Some((norm2, stgu)), Some(g)) = (&self.gating, &cache.gating) {
            let d_b = stgu.backward(ps, &g.stgu, dy, grads);
            let d = norm2.backward(ps, &g.norm2, &g.mid, &d_b, grads);
            d_mid.add_assign(&d);
        }
        let d_a = self.dadm.backward(ps, &cache.dadm, &d_mid, grads);
        let mut dx = self
            .norm1
            .backward(ps, &cache.norm1, &cache.input, &d_a, grads);
        dx.add_assign(&d_mid);
        dx
    }
}
