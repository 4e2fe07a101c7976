use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamHyper;
use crate::error::{Error, Result};

/// Optimization protocol. Serialized as a flat TOML table; missing keys take
/// the defaults below and unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub initial_lr: f64,
    pub lr_floor: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Seeds model initialization and the per-epoch shuffles.
    pub rng_seed: u64,
    pub window_seconds: f64,
    pub train_stride: f64,
    pub val_stride: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            initial_lr: 1e-4,
            lr_floor: 1e-6,
            plateau_factor: 0.1,
            plateau_patience: 10,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            rng_seed: 0,
            window_seconds: 1.0,
            train_stride: 0.25,
            val_stride: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return fail("max_epochs must be at least 1".into());
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail(format!(
                "plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            ));
        }
        if !(self.lr_floor > 0.0 && self.lr_floor < self.initial_lr) {
            return fail(format!(
                "need 0 < lr_floor < initial_lr, got {} and {}",
                self.lr_floor, self.initial_lr
            ));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return fail(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_epsilon > 0.0) {
            return fail(format!(
                "adam_epsilon must be positive, got {}",
                self.adam_epsilon
            ));
        }
        for (name, v) in [
            ("window_seconds", self.window_seconds),
            ("train_stride", self.train_stride),
            ("val_stride", self.val_stride),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return fail(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("train config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::data(path, e.to_string()))
    }
}
