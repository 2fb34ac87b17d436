use serde::{Deserialize, Serialize};

use super::{Gradients, Network};
use crate::error::{ensure_dims, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for every parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: &[usize]) -> Result<Self> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(config.beta1) || !in_unit(config.beta2) {
            return Err(Error::InvalidInput("Adam betas must lie in (0, 1)".into()));
        }
        if !(config.learning_rate.is_finite() && config.learning_rate > 0.0) {
            return Err(Error::InvalidInput("learning rate must be > 0".into()));
        }
        Ok(Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }

    pub fn for_network(config: AdamConfig, net: &Network) -> Result<Self> {
        let mut probe = net.clone();
        let sizes: Vec<usize> = probe
            .param_slices_mut()
            .iter()
            .map(|(_, _, s)| s.len())
            .collect();
        Self::new(config, &sizes)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    /// One bias-corrected Adam update. A non-finite gradient leaves the
    /// parameters untouched and reports divergence.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        ensure_dims(
            params.len() == self.m.len() && grads.len() == self.m.len(),
            || {
                format!(
                    "{} parameter and {} gradient tensors for {} moment slots",
                    params.len(),
                    grads.len(),
                    self.m.len()
                )
            },
        )?;
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            ensure_dims(p.len() == self.m[k].len() && g.len() == p.len(), || {
                format!("tensor {k}: shapes disagree")
            })?;
        }
        if grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                iteration: self.step as usize,
                reason: "non-finite gradient".into(),
            });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let (inv_c1, inv_c2) = (1.0 / c1, 1.0 / c2);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, &g), m), v) in p
                .iter_mut()
                .zip(g.iter())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= learning_rate * (*m * inv_c1) / ((*v * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Applies [`AdamState::step`] to every trainable tensor of `net`.
    pub fn step_network(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        let grad_refs: Vec<&[f64]> = grads.tensors.iter().map(|t| t.values.as_slice()).collect();
        let mut slices = net.param_slices_mut();
        let mut params: Vec<&mut [f64]> = slices.iter_mut().map(|(_, _, s)| &mut **s).collect();
        self.step(&mut params, &grad_refs)
    }
}
