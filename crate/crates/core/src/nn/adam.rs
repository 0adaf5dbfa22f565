use serde::{Deserialize, Serialize};

use super::{Checkpoint, NnError, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. `m` and `v` are aligned with the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: ParamSet,
    pub v: ParamSet,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        Self {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            config,
        }
    }

    /// Stores `t`, `m` and `v` under `prefix` (the config lives with the caller).
    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.add(format!("{prefix}.t"), vec![1], vec![self.t as f64]);
        ckpt.add_params(&format!("{prefix}.m"), &self.m);
        ckpt.add_params(&format!("{prefix}.v"), &self.v);
    }

    pub fn load_from(
        ckpt: &Checkpoint,
        prefix: &str,
        params: &ParamSet,
        config: AdamConfig,
    ) -> Result<Self, NnError> {
        let (_, _, t) = ckpt.tensor(&format!("{prefix}.t"))?;
        Ok(Self {
            t: t[0] as u64,
            m: ckpt.params(&format!("{prefix}.m"), params)?,
            v: ckpt.params(&format!("{prefix}.v"), params)?,
            config,
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) -> Result<(), NnError> {
        params.check_aligned(grads)?;
        params.check_aligned(&self.m)?;
        if !grads.is_finite() {
            return Err(NnError::NonFinite(format!(
                "gradient at optimizer step {}",
                self.t + 1
            )));
        }
        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for (((p, g), m), v) in params
            .iter_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for k in 0..p.data.len() {
                let gk = g.data[k];
                m.data[k] = beta1 * m.data[k] + (1.0 - beta1) * gk;
                v.data[k] = beta2 * v.data[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m.data[k] / c1;
                let v_hat = v.data[k] / c2;
                p.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
