//! Synthetic data plant: ellipse phantoms standing in for reference-field
//! images, a known degradation `f*` producing the low-field counterpart, and
//! dataset / toy-instance assembly.

mod dataset;
mod degrade;
mod theorem;

pub use dataset::{
    build_dataset, generate_dataset, load_images, DatasetArrays, DatasetManifest, DATASET_SCHEMA,
};
pub use degrade::{blur, degrade, gaussian_kernel, measure_snr, snr_masks, DegradationParams};
pub use theorem::{
    check_assumption2, euclidean, make_theorem_instance, make_theorem_instance_with, TheoremConfig,
    TheoremInstance,
};

use serde::{Deserialize, Serialize};

use crate::numerics::{NumericsError, RealArray2D, SeededRng};

#[derive(Debug, thiserror::Error)]
pub enum PhantomError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error("no valid instance after {0} attempts")]
    BudgetExceeded(usize),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

// Substream keys under a phantom or dataset seed.
const STREAM_GEOMETRY: u64 = 1;
const STREAM_REFERENCE_NOISE: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Image side length (square, power of two).
    pub size: usize,
    pub min_ellipses: usize,
    pub max_ellipses: usize,
    /// Reference-field intensity of each tissue class.
    pub intensities: Vec<f64>,
    /// Acquisition noise of the reference images.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            size: 64,
            min_ellipses: 4,
            max_ellipses: 8,
            intensities: vec![0.25, 0.45, 0.65, 0.9],
            noise_std: 0.005,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.size < 32 || !self.size.is_power_of_two() {
            return Err(PhantomError::Invalid(format!(
                "size {} must be a power of two >= 32",
                self.size
            )));
        }
        if self.min_ellipses > self.max_ellipses {
            return Err(PhantomError::Invalid(
                "min_ellipses exceeds max_ellipses".into(),
            ));
        }
        if self.max_ellipses > 0 && self.intensities.is_empty() {
            return Err(PhantomError::Invalid("no tissue classes".into()));
        }
        if self.intensities.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PhantomError::Invalid(
                "intensities must lie in [0, 1]".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(PhantomError::Invalid(
                "noise_std must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    theta: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.theta.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        u * u + v * v <= 1.0
    }
}

/// Noise-free piecewise-constant phantom. Ellipses are painted in order, later
/// ones overwriting earlier ones; the first plays the role of the head outline.
/// Assumes `spec` passed [`PhantomSpec::validate`].
pub fn make_phantom(spec: &PhantomSpec, index: u64) -> RealArray2D {
    let mut rng = SeededRng::new(spec.seed).fork(STREAM_GEOMETRY).fork(index);
    let count = spec.min_ellipses + rng.below(spec.max_ellipses - spec.min_ellipses + 1);
    let mut ellipses = Vec::with_capacity(count);
    for k in 0..count {
        let value = spec.intensities[rng.below(spec.intensities.len())];
        let e = if k == 0 {
            Ellipse {
                cx: rng.uniform_range(-0.05, 0.05),
                cy: rng.uniform_range(-0.05, 0.05),
                a: rng.uniform_range(0.6, 0.8),
                b: rng.uniform_range(0.7, 0.88),
                theta: rng.uniform_range(-0.25, 0.25),
                value,
            }
        } else {
            Ellipse {
                cx: rng.uniform_range(-0.45, 0.45),
                cy: rng.uniform_range(-0.45, 0.45),
                a: rng.uniform_range(0.08, 0.35),
                b: rng.uniform_range(0.08, 0.35),
                theta: rng.uniform_range(0.0, std::f64::consts::PI),
                value,
            }
        };
        ellipses.push(e);
    }
    let n = spec.size as f64;
    RealArray2D::from_fn(spec.size, spec.size, |r, c| {
        let x = (c as f64 + 0.5) / n * 2.0 - 1.0;
        let y = (r as f64 + 0.5) / n * 2.0 - 1.0;
        ellipses
            .iter()
            .rev()
            .find(|e| e.contains(x, y))
            .map_or(0.0, |e| e.value)
    })
}

/// Reference-field acquisition: phantom plus Gaussian noise of `spec.noise_std`,
/// clipped to `[0, 1]` (magnitude images are non-negative).
pub fn reference_image(spec: &PhantomSpec, index: u64) -> RealArray2D {
    let mut img = make_phantom(spec, index);
    let mut rng = SeededRng::new(spec.seed)
        .fork(STREAM_REFERENCE_NOISE)
        .fork(index);
    for v in img.data_mut() {
        *v = (*v + spec.noise_std * rng.standard_normal()).clamp(0.0, 1.0);
    }
    img
}
