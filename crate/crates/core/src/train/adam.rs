use crate::error::{Error, Result};
use crate::nn::{Gradients, OptimizerState, ParameterSet};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias correction; moments are aligned with the parameter set.
#[derive(Clone, Debug)]
pub struct Adam<S> {
    hyper: AdamHyper,
    step: u64,
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(params: &ParameterSet<S>, hyper: AdamHyper) -> Self {
        let zeros: Vec<Vec<S>> = params
            .iter()
            .map(|(_, p)| {
                if p.role.is_trainable() {
                    vec![S::zero(); p.tensor.len()]
                } else {
                    Vec::new()
                }
            })
            .collect();
        Self {
            hyper,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn from_state(
        params: &ParameterSet<S>,
        hyper: AdamHyper,
        state: &OptimizerState,
    ) -> Result<Self> {
        let mut adam = Self::new(params, hyper);
        if state.first_moments.len() != adam.m.len() || state.second_moments.len() != adam.v.len() {
            return Err(Error::Checkpoint(
                "optimizer state does not match parameters".into(),
            ));
        }
        for (i, (m, v)) in state
            .first_moments
            .iter()
            .zip(&state.second_moments)
            .enumerate()
        {
            if m.len() != adam.m[i].len() || v.len() != adam.v[i].len() {
                return Err(Error::Checkpoint("optimizer moment shape mismatch".into()));
            }
            adam.m[i] = m.iter().map(|&x| S::lit(f64::from(x))).collect();
            adam.v[i] = v.iter().map(|&x| S::lit(f64::from(x))).collect();
        }
        adam.step = state.step;
        Ok(adam)
    }

    pub fn state(&self) -> OptimizerState {
        let conv = |all: &Vec<Vec<S>>| -> Vec<Vec<f32>> {
            all.iter()
                .map(|t| t.iter().map(|x| x.to_f64_lossy() as f32).collect())
                .collect()
        };
        OptimizerState {
            step: self.step,
            first_moments: conv(&self.m),
            second_moments: conv(&self.v),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet<S>, grads: &Gradients<S>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let h = self.hyper;
        let b1 = S::lit(h.beta1);
        let b2 = S::lit(h.beta2);
        let one = S::one();
        let bc1 = S::lit(1.0 - h.beta1.powi(t));
        let bc2 = S::lit(1.0 - h.beta2.powi(t));
        let eps = S::lit(h.epsilon);
        let lr = S::lit(lr);
        for (id, g) in grads.iter() {
            if g.is_empty() {
                continue;
            }
            let m = &mut self.m[id.index()];
            let v = &mut self.v[id.index()];
            let theta = params.values_mut(id);
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
