//! The ground-truth degradation `f*`: contrast remap, Gaussian blur, noise.

use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::numerics::{RealArray2D, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    /// Knots `(input, output)` of a monotone piecewise-linear contrast map.
    /// Inputs must start at 0, end at 1 and increase strictly; outside
    /// `[0, 1]` the end segments are extended.
    pub remap: Vec<[f64; 2]>,
    /// Gaussian blur standard deviation in pixels.
    pub blur_sigma: f64,
    pub noise_std: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self::calibrated(Self::default_remap(), 1.0, 0.005, 3.0)
    }
}

impl DegradationParams {
    /// Squeezes the mid range `[0.2, 0.8]` to 60% of its contrast.
    pub fn default_remap() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [0.2, 0.32], [0.8, 0.68], [1.0, 1.0]]
    }

    pub fn identity() -> Self {
        Self {
            remap: vec![[0.0, 0.0], [1.0, 1.0]],
            blur_sigma: 0.0,
            noise_std: 0.0,
        }
    }

    /// Picks `noise_std` so that background noise of the output is
    /// `snr_ratio` times the reference noise, accounting for the reference
    /// noise that survives the remap (slope at 0) and the blur.
    pub fn calibrated(
        remap: Vec<[f64; 2]>,
        blur_sigma: f64,
        reference_noise: f64,
        snr_ratio: f64,
    ) -> Self {
        let kernel = gaussian_kernel(blur_sigma);
        let kappa2: f64 = kernel.iter().map(|k| k * k).sum::<f64>().powi(2);
        let slope0 = (remap[1][1] - remap[0][1]) / (remap[1][0] - remap[0][0]);
        let target = (snr_ratio * reference_noise).powi(2);
        let carried = kappa2 * (slope0 * reference_noise).powi(2);
        Self {
            remap,
            blur_sigma,
            noise_std: (target - carried).max(0.0).sqrt(),
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let k = &self.remap;
        if k.len() < 2 || k[0][0] != 0.0 || k[k.len() - 1][0] != 1.0 {
            return Err(PhantomError::Invalid("remap knots must span [0, 1]".into()));
        }
        for w in k.windows(2) {
            if w[1][0] <= w[0][0] || w[1][1] < w[0][1] {
                return Err(PhantomError::Invalid(
                    "remap must be monotone with increasing knots".into(),
                ));
            }
        }
        if k.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PhantomError::Invalid("remap knots must be finite".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(PhantomError::Invalid(
                "blur_sigma must be finite and >= 0".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(PhantomError::Invalid(
                "noise_std must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }

    pub fn remap_value(&self, v: f64) -> f64 {
        let k = &self.remap;
        let seg = k
            .windows(2)
            .position(|w| v <= w[1][0])
            .unwrap_or(k.len() - 2);
        let (a, b) = (k[seg], k[seg + 1]);
        a[1] + (v - a[0]) * (b[1] - a[1]) / (b[0] - a[0])
    }
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`; `[1]` for sigma 0.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian blur with zero padding.
pub fn blur(img: &RealArray2D, sigma: f64) -> RealArray2D {
    let kernel = gaussian_kernel(sigma);
    if kernel.len() == 1 {
        return img.clone();
    }
    let radius = (kernel.len() / 2) as isize;
    let (rows, cols) = img.shape();
    let pass = |src: &RealArray2D, horizontal: bool| {
        RealArray2D::from_fn(rows, cols, |r, c| {
            let mut acc = 0.0;
            for (t, k) in kernel.iter().enumerate() {
                let d = t as isize - radius;
                let (rr, cc) = if horizontal {
                    (r as isize, c as isize + d)
                } else {
                    (r as isize + d, c as isize)
                };
                if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                    acc += k * src.get(rr as usize, cc as usize);
                }
            }
            acc
        })
    };
    pass(&pass(img, true), false)
}

/// `f*`: remap, blur, add `N(0, noise_std^2)` and clip to `[0, 1.5]`.
pub fn degrade(x15: &RealArray2D, p: &DegradationParams, rng: &mut SeededRng) -> RealArray2D {
    let mut out = blur(&x15.map(|v| p.remap_value(v)), p.blur_sigma);
    for v in out.data_mut() {
        if p.noise_std > 0.0 {
            *v += p.noise_std * rng.standard_normal();
        }
        *v = v.clamp(0.0, 1.5);
    }
    out
}

/// Signal mask (inside the object, at least `margin` pixels from any
/// boundary) and background mask (at least `margin` pixels from the object),
/// derived from a noise-free phantom.
pub fn snr_masks(phantom: &RealArray2D, margin: usize) -> (Vec<bool>, Vec<bool>) {
    let (rows, cols) = phantom.shape();
    let m = margin as isize;
    let mut signal = vec![false; rows * cols];
    let mut background = vec![false; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let centre = phantom.get(r, c);
            let mut uniform = true;
            let mut empty = true;
            for dr in -m..=m {
                for dc in -m..=m {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    let v = if rr >= 0 && cc >= 0 && (rr as usize) < rows && (cc as usize) < cols {
                        phantom.get(rr as usize, cc as usize)
                    } else {
                        0.0
                    };
                    uniform &= v == centre;
                    empty &= v == 0.0;
                }
            }
            signal[r * cols + c] = centre > 0.0 && uniform;
            background[r * cols + c] = empty;
        }
    }
    (signal, background)
}

/// Mean over the signal mask divided by the background noise level. Images
/// are clipped at zero, so background samples follow a rectified Gaussian
/// with `E[v^2] = sigma^2 / 2`; the noise level is `sqrt(2 mean(v^2))`.
pub fn measure_snr(img: &RealArray2D, signal: &[bool], background: &[bool]) -> Option<f64> {
    let pick = |mask: &[bool]| -> Vec<f64> {
        img.data()
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v)
            .collect()
    };
    let (s, b) = (pick(signal), pick(background));
    if s.is_empty() || b.is_empty() {
        return None;
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let noise = (2.0 * b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64).sqrt();
    (noise > 0.0).then(|| mean / noise)
}
