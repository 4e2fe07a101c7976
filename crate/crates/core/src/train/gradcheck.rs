use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use f128::f128;

use super::loss::{mse_loss, mse_loss_and_grad};
use crate::error::{Error, Result};
use crate::nn::{IoNext, Mode, ModelConfig, ParamId};
use crate::scalar::Scalar;
use crate::tensor::FeatureBatch;

/// Upper bound on model size for which a finite-difference check is sensible.
pub const MAX_GRADCHECK_PARAMS: usize = 50_000;

#[derive(Clone, Debug)]
pub struct GradcheckOptions {
    pub config: ModelConfig,
    pub batch: usize,
    pub len: usize,
    pub step: f64,
    pub sampled: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl GradcheckOptions {
    pub fn new(config: ModelConfig) -> Self {
        Self {
            config,
            batch: 8,
            len: 32,
            step: 1e-5,
            sampled: 200,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckEntry {
    pub name: String,
    pub offset: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradcheckEntry>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn worst(&self) -> Option<&GradcheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn loss(model: &IoNext<f128>, x: &FeatureBatch<f128>, y: &[f128], dim: usize) -> Result<f128> {
    let (pred, _) = model.forward_with(x, Mode::Train)?;
    mse_loss(&pred, y, dim)
}

/// Compares analytic gradients of the batch MSE against central differences,
/// in training mode. Covers every parameter of the first block's DADM and
/// gating unit plus a random sample of the rest.
///
/// The analytic side runs in `f64`. The finite differences are evaluated in
/// quad precision: batch norm cancels most of the effect of many
/// parameters, and in plain `f64` the rounding noise of the perturbed losses
/// (about `1e-16 / h`) is comparable to those small gradients. The default
/// batch of 8 keeps the deepest batch-norm layers from normalizing over so
/// few values that the `O(h²)` truncation error nears the tolerance.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let model = IoNext::<f64>::new(opts.config.clone(), rng.gen())?;
    let total: usize = model.params().trainable_count();
    if total > MAX_GRADCHECK_PARAMS {
        return Err(Error::Config(format!(
            "gradcheck needs a model with at most {MAX_GRADCHECK_PARAMS} parameters, got {total}"
        )));
    }
    let dim = opts.config.output_dim;
    let channels = crate::nn::config::IMU_CHANNELS;
    let x_data = (0..channels * opts.batch * opts.len)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let x = FeatureBatch::from_vec(channels, opts.batch, opts.len, x_data)?;
    let y: Vec<f64> = (0..opts.batch * dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();

    let (pred, tape) = model.forward_with(&x, Mode::Train)?;
    let (_, d_out) = mse_loss_and_grad(&pred, &y, dim)?;
    let grads = model.backward(&tape, &d_out);

    // (param, offset) pairs to probe.
    let mut probes: Vec<(ParamId, usize)> = Vec::new();
    let full = ["stage1.block1.dadm.", "stage1.block1.stgu."];
    let mut flat: Vec<(ParamId, usize)> = Vec::new();
    for id in model.params().ids() {
        let name = model.params().name(id);
        let p = model.params().param(id);
        if !p.role.is_trainable() {
            continue;
        }
        let covered = full.iter().any(|pre| name.starts_with(pre));
        for off in 0..p.tensor.len() {
            if covered {
                probes.push((id, off));
            } else {
                flat.push((id, off));
            }
        }
    }
    let n_sample = opts.sampled.min(flat.len());
    for i in sample(&mut rng, flat.len(), n_sample) {
        probes.push(flat[i]);
    }

    let mut probe_model: IoNext<f128> = model.cast();
    let x_hi = x.map(f128::lit);
    let y_hi: Vec<f128> = y.iter().map(|&v| f128::lit(v)).collect();
    let h = opts.step;
    let h_hi = f128::lit(h);
    let mut entries = Vec::with_capacity(probes.len());
    for (id, off) in probes {
        let orig = probe_model.params().values(id)[off];
        probe_model.params_mut().values_mut(id)[off] = orig + h_hi;
        let lp = loss(&probe_model, &x_hi, &y_hi, dim)?;
        probe_model.params_mut().values_mut(id)[off] = orig - h_hi;
        let lm = loss(&probe_model, &x_hi, &y_hi, dim)?;
        probe_model.params_mut().values_mut(id)[off] = orig;
        let numeric = ((lp - lm) / (h_hi + h_hi)).to_f64_lossy();
        let analytic = grads.get(id)[off];
        entries.push(GradcheckEntry {
            name: model.params().name(id).to_string(),
            offset: off,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    let max_rel_error =
        entries
            .iter()
            .map(|e| e.rel_error)
            .fold(0.0, |m, e| if e.is_nan() || e > m { e } else { m });
    Ok(GradcheckReport {
        entries,
        max_rel_error,
        tolerance: opts.tolerance,
        passed: max_rel_error < opts.tolerance, // false for NaN
    })
}
