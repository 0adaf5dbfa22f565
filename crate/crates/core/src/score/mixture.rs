//! Isotropic Gaussian mixtures and the exact score of their noised density.

use serde::{Deserialize, Serialize};

use super::{ScoreError, ScoreSource};
use crate::nn::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Per-coordinate variance (isotropic covariance `var * I`).
    pub var: f64,
}

/// `pi = sum_k w_k N(mu_k, var_k I)` over tensors of a fixed shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub shape: [usize; 3],
    pub components: Vec<MixtureComponent>,
}

impl GaussianMixture {
    pub fn new(shape: [usize; 3], components: Vec<MixtureComponent>) -> Result<Self, ScoreError> {
        let d = shape.iter().product::<usize>();
        if components.is_empty() {
            return Err(ScoreError::Config(
                "mixture needs at least one component".into(),
            ));
        }
        for c in &components {
            if c.mean.len() != d {
                return Err(ScoreError::Shape(format!(
                    "component mean has {} entries, expected {d}",
                    c.mean.len()
                )));
            }
            if !(c.weight > 0.0) || !(c.var >= 0.0) {
                return Err(ScoreError::Config(
                    "weights must be > 0 and variances >= 0".into(),
                ));
            }
        }
        Ok(Self { shape, components })
    }

    pub fn gaussian(shape: [usize; 3], mean: Vec<f64>, var: f64) -> Result<Self, ScoreError> {
        Self::new(
            shape,
            vec![MixtureComponent {
                weight: 1.0,
                mean,
                var,
            }],
        )
    }

    fn log_terms(&self, x: &[f64], eps: f64) -> Result<Vec<(f64, f64)>, ScoreError> {
        let d = x.len() as f64;
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        self.components
            .iter()
            .map(|c| {
                let s = c.var + eps * eps;
                if !(s > 0.0) {
                    return Err(ScoreError::Config(
                        "degenerate covariance: var + eps^2 = 0".into(),
                    ));
                }
                let r2: f64 = x.iter().zip(&c.mean).map(|(a, m)| (a - m).powi(2)).sum();
                let log = (c.weight / total).ln()
                    - 0.5 * d * (2.0 * std::f64::consts::PI * s).ln()
                    - r2 / (2.0 * s);
                Ok((log, s))
            })
            .collect()
    }

    /// `log p_eps(x)` where `p_eps = pi * N(0, eps^2 I)`.
    pub fn log_density(&self, x: &[f64], eps: f64) -> Result<f64, ScoreError> {
        let terms = self.log_terms(x, eps)?;
        let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        Ok(m + terms.iter().map(|t| (t.0 - m).exp()).sum::<f64>().ln())
    }

    /// `grad log p_eps(x) = sum_k r_k(x) (mu_k - x) / (var_k + eps^2)` with
    /// responsibilities computed in log space.
    pub fn score_vec(&self, x: &[f64], eps: f64) -> Result<Vec<f64>, ScoreError> {
        let terms = self.log_terms(x, eps)?;
        let m = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = terms.iter().map(|t| (t.0 - m).exp()).sum();
        let mut out = vec![0.0; x.len()];
        for (c, (log, s)) in self.components.iter().zip(terms) {
            let r = (log - m).exp() / z;
            for ((o, xi), mi) in out.iter_mut().zip(x).zip(&c.mean) {
                *o += r * (mi - xi) / s;
            }
        }
        Ok(out)
    }
}

impl ScoreSource for GaussianMixture {
    fn channels(&self) -> usize {
        self.shape[0]
    }

    fn score(&self, x: &Tensor, _level: usize, sigma: f64) -> Result<Tensor, ScoreError> {
        if x.shape() != self.shape {
            return Err(ScoreError::Shape(format!(
                "state {:?} vs mixture {:?}",
                x.shape(),
                self.shape
            )));
        }
        Ok(Tensor::from_vec(
            x.channels,
            x.height,
            x.width,
            self.score_vec(&x.data, sigma)?,
        ))
    }
}
