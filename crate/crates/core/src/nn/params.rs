//! Named parameter storage.

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Standard deviation of the truncated normal used for conv/linear weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    ConvWeight,
    ConvBias,
    LinearWeight,
    LinearBias,
    NormScale,
    NormShift,
    /// Batch-norm running mean (buffer, not trained).
    RunningMean,
    /// Batch-norm running variance (buffer, not trained).
    RunningVar,
}

impl ParamRole {
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub role: ParamRole,
    pub tensor: Tensor<S>,
}

/// Index of a parameter inside a [`ParameterSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered map from hierarchical names (`stage2.block1.dadm.w2.weight`) to
/// tensors. Insertion order is the canonical order for serialization and
/// optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet<S> {
    entries: IndexMap<String, Param<S>>,
}

impl<S: Scalar> ParameterSet<S> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(
        &mut self,
        name: impl Into<String>,
        role: ParamRole,
        tensor: Tensor<S>,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        let (idx, _) = self.entries.insert_full(name, Param { role, tensor });
        Ok(ParamId(idx))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn get(&self, name: &str) -> Option<&Param<S>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<S>> {
        self.entries.get_mut(name)
    }

    pub fn name(&self, id: ParamId) -> &str {
        self.entries
            .get_index(id.0)
            .map(|(k, _)| k.as_str())
            .expect("valid parameter id")
    }

    pub fn param(&self, id: ParamId) -> &Param<S> {
        &self.entries[id.0]
    }

    #[inline]
    pub fn values(&self, id: ParamId) -> &[S] {
        self.entries[id.0].tensor.data()
    }

    #[inline]
    pub fn values_mut(&mut self, id: ParamId) -> &mut [S] {
        self.entries[id.0].tensor.data_mut()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Total number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.role.is_trainable())
            .map(|p| p.tensor.len())
            .sum()
    }

    /// Same names, shapes and roles with every value zeroed.
    pub fn zeros_like(&self) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                (
                    k.clone(),
                    Param {
                        role: p.role,
                        tensor: Tensor::zeros(p.tensor.shape()),
                    },
                )
            })
            .collect();
        Self { entries }
    }

    /// Converts every tensor to another scalar type.
    pub fn cast<T: Scalar>(&self) -> ParameterSet<T> {
        let entries = self
            .entries
            .iter()
            .map(|(k, p)| {
                let data = p
                    .tensor
                    .data()
                    .iter()
                    .map(|v| T::lit(v.to_f64_lossy()))
                    .collect();
                let tensor = Tensor::from_vec(p.tensor.shape(), data).expect("same shape");
                (
                    k.clone(),
                    Param {
                        role: p.role,
                        tensor,
                    },
                )
            })
            .collect();
        ParameterSet { entries }
    }
}

/// Draws from a normal with std [`INIT_STD`] truncated to two standard deviations.
pub fn trunc_normal<S: Scalar, R: Rng>(rng: &mut R, n: usize) -> Vec<S> {
    (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break S::lit(z * INIT_STD);
            }
        })
        .collect()
}


/// Gradient buffers aligned with a [`ParameterSet`]; buffers get empty slots.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<S> {
    values: Vec<Vec<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn zeros_for(params: &ParameterSet<S>) -> Self {
        let values = params
            .entries
            .values()
            .map(|p| {
                if p.role.is_trainable() {
                    vec![S::zero(); p.tensor.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self { values }
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[S] {
        &self.values[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [S] {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[S])> {
        self.values
            .iter()
            .enumerate()
            .map(|(i, v)| (ParamId(i), v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}
