//! Minimal differentiable-network substrate: dense and 3x3 conv layers with
//! hand-written reverse passes, Adam, parameter EMA, spectral normalization
//! and checkpoint directories.

mod adam;
mod checkpoint;
mod ema;
mod gemm;
mod network;
mod params;
mod spectral;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use ema::EmaState;
pub use network::{conv_out_hw, Activation, LayerSpec, NetworkSpec, Trace};
pub use params::{Param, ParamSet};
pub use spectral::{power_iteration, spectral_normalize, SpectralCache, SpectralNorm};
pub use tensor::Tensor;

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
