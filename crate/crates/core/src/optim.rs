//! SGD and Adam parameter updates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Gradients, Precision};
use crate::params::{ParamId, ParameterStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            lr: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Sgd,
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerConfig {
            algorithm: Algorithm::Adam,
            lr,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Config(format!(
                "adam betas must lie in [0, 1), got ({b1}, {b2})"
            )));
        }
        if self.eps <= 0.0 {
            return Err(Error::Config("adam eps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

/// Applies updates to non-frozen parameters only; frozen parameters are never
/// touched, so they stay bit-identical across any number of steps.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: BTreeMap<ParamId, AdamState>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Optimizer {
            config,
            state: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// One update step. Parameters without a gradient entry (including all
    /// frozen ones) are left untouched.
    pub fn step(
        &mut self,
        store: &mut ParameterStore,
        grads: &Gradients,
        precision: Precision,
    ) -> Result<()> {
        for (&id, grad) in grads.params() {
            if store.is_frozen(id) {
                continue;
            }
            let lr = self.config.lr;
            match self.config.algorithm {
                Algorithm::Sgd => {
                    let tensor = store.tensor_mut(id)?;
                    for (p, g) in tensor.values_mut().iter_mut().zip(grad.values()) {
                        *p -= lr * g;
                    }
                    if precision == Precision::F32 {
                        tensor.quantize_f32();
                    }
                }
                Algorithm::Adam => {
                    let (b1, b2) = self.config.betas;
                    let eps = self.config.eps;
                    let n = grad.len();
                    let state = self.state.entry(id).or_insert_with(|| AdamState {
                        m: vec![0.0; n],
                        v: vec![0.0; n],
                        step: 0,
                    });
                    if state.m.len() != n {
                        return Err(Error::State(format!(
                            "optimizer state size mismatch for parameter {}",
                            id.0
                        )));
                    }
                    state.step += 1;
                    let t = state.step as i32;
                    let bias1 = 1.0 - b1.powi(t);
                    let bias2 = 1.0 - b2.powi(t);
                    let tensor = store.tensor_mut(id)?;
                    for (i, (p, &g)) in tensor
                        .values_mut()
                        .iter_mut()
                        .zip(grad.values())
                        .enumerate()
                    {
                        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
                        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
                        let m_hat = state.m[i] / bias1;
                        let v_hat = state.v[i] / bias2;
                        *p -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                    if precision == Precision::F32 {
                        tensor.quantize_f32();
                    }
                }
            }
        }
        Ok(())
    }
}
