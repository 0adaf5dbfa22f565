//! Score models: geometric noise schedule, denoising score matching over
//! joint `[x05, x15]` samples, the training loop, and closed-form scores of
//! Gaussian mixtures for testing samplers without a learned network.

mod mixture;
mod student;

pub use mixture::{GaussianMixture, MixtureComponent};
pub use student::{
    dsm_loss, dsm_terms, smoothed, train_student, write_loss_csv, DsmOutput, JointSample, LossForm,
    LossRow, StudentConfig, StudentModel, StudentTrainer,
};

use serde::{Deserialize, Serialize};

use crate::nn::{NnError, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum ScoreError {
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Noise levels `eps_1 < ... < eps_L` with a constant ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    sigmas: Vec<f64>,
    ratio: f64,
}

/// `eps_i = eps_1 r^(i-1)` with `r = (eps_L / eps_1)^(1/(L-1))`; both
/// endpoints are stored exactly as given.
pub fn make_schedule(eps_1: f64, eps_l: f64, levels: usize) -> Result<NoiseSchedule, ScoreError> {
    if !(eps_1 > 0.0 && eps_1 < eps_l && eps_l.is_finite()) {
        return Err(ScoreError::Schedule(format!(
            "need 0 < eps_1 < eps_L, got {eps_1}, {eps_l}"
        )));
    }
    if levels < 2 {
        return Err(ScoreError::Schedule(format!(
            "need at least 2 levels, got {levels}"
        )));
    }
    let ratio = (eps_l / eps_1).powf(1.0 / (levels - 1) as f64);
    let mut sigmas: Vec<f64> = (0..levels).map(|i| eps_1 * ratio.powi(i as i32)).collect();
    sigmas[0] = eps_1;
    sigmas[levels - 1] = eps_l;
    Ok(NoiseSchedule { sigmas, ratio })
}

impl NoiseSchedule {
    pub fn levels(&self) -> usize {
        self.sigmas.len()
    }

    /// `eps_i` for `i` in `1..=L`.
    pub fn sigma(&self, level: usize) -> f64 {
        self.sigmas[level - 1]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn min(&self) -> f64 {
        self.sigmas[0]
    }

    pub fn max(&self) -> f64 {
        self.sigmas[self.sigmas.len() - 1]
    }
}

/// Anything that returns `grad log p_eps(x)` at a noise level.
pub trait ScoreSource {
    fn channels(&self) -> usize;
    fn score(&self, x: &Tensor, level: usize, sigma: f64) -> Result<Tensor, ScoreError>;
}

/// The zero score, i.e. a flat prior.
pub struct ZeroScore {
    pub channels: usize,
}

impl ScoreSource for ZeroScore {
    fn channels(&self) -> usize {
        self.channels
    }

    fn score(&self, x: &Tensor, _level: usize, _sigma: f64) -> Result<Tensor, ScoreError> {
        Ok(Tensor::zeros(x.channels, x.height, x.width))
    }
}
