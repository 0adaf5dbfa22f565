//! Spectral normalization by power iteration.
//!
//! Conv kernels `[out, in, 3, 3]` are viewed as `out x (in*9)` matrices.
//! A stride-`s` conv reuses each input pixel in up to `ceil(3/s)^2` patches,
//! so its operator norm is at most `ceil(3/s) * sigma(W)`; normalized conv
//! weights are scaled by `1/ceil(3/s)` to keep every layer 1-Lipschitz.
//! The left singular vector estimate `u` persists between calls, so one
//! iteration per training step tracks the slowly changing weights.

use super::network::weight_name;
use super::{LayerSpec, NetworkSpec, NnError, ParamSet};
use crate::numerics::SeededRng;

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Runs `iters` power iterations on the row-major `rows x cols` matrix `w`,
/// updating `u` in place. Returns `(sigma, v)` with `sigma = u^T W v`.
pub fn power_iteration(
    w: &[f64],
    rows: usize,
    cols: usize,
    u: &mut [f64],
    iters: usize,
) -> (f64, Vec<f64>) {
    assert_eq!(w.len(), rows * cols);
    assert_eq!(u.len(), rows);
    let mut v = vec![0.0; cols];
    for _ in 0..iters.max(1) {
        v.fill(0.0);
        for r in 0..rows {
            let ur = u[r];
            for (vc, wc) in v.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *vc += wc * ur;
            }
        }
        if normalize(&mut v) == 0.0 {
            return (0.0, v);
        }
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = w[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum();
        }
        if normalize(u) == 0.0 {
            return (0.0, v);
        }
    }
    let sigma = (0..rows)
        .map(|r| {
            u[r] * w[r * cols..(r + 1) * cols]
                .iter()
                .zip(&v)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .sum();
    (sigma, v)
}

/// `W / sigma_max(W)` with the estimate from `iters` power iterations.
/// A zero matrix is returned unchanged.
pub fn spectral_normalize(
    w: &[f64],
    rows: usize,
    cols: usize,
    iters: usize,
    u: &mut [f64],
) -> Vec<f64> {
    let (sigma, _) = power_iteration(w, rows, cols, u, iters);
    if sigma == 0.0 {
        return w.to_vec();
    }
    w.iter().map(|x| x / sigma).collect()
}

#[derive(Debug, Clone, PartialEq)]
struct Entry {
    name: String,
    rows: usize,
    cols: usize,
    gain: f64,
    u: Vec<f64>,
}

/// Per-weight power-iteration state for a whole network.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralNorm {
    entries: Vec<Entry>,
}

/// Values needed to differentiate through one normalization.
#[derive(Debug, Clone)]
pub struct SpectralCache {
    factors: Vec<(f64, Vec<f64>, Vec<f64>)>,
}

impl SpectralNorm {
    pub fn new(spec: &NetworkSpec, params: &ParamSet, rng: &mut SeededRng) -> Self {
        let entries = spec
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, layer)| {
                let gain = match *layer {
                    LayerSpec::Dense { .. } => 1.0,
                    LayerSpec::Conv3x3 { stride, .. } => 1.0 / 3usize.div_ceil(stride) as f64,
                    LayerSpec::Activation { .. } => return None,
                };
                let name = weight_name(i);
                let shape = &params.get(&name).expect("weight present").shape;
                let rows = shape[0];
                let cols = shape[1..].iter().product();
                let mut u = rng.normal_vec(rows);
                normalize(&mut u);
                Some(Entry {
                    name,
                    rows,
                    cols,
                    gain,
                    u,
                })
            })
            .collect();
        Self { entries }
    }

    /// Normalizes every weight, advancing each `u` by `iters` iterations.
    pub fn apply(&mut self, params: &ParamSet, iters: usize) -> (ParamSet, SpectralCache) {
        let mut eff = params.clone();
        let mut factors = Vec::with_capacity(self.entries.len());
        for e in &mut self.entries {
            let w = &params.get(&e.name).expect("weight present").data;
            let (sigma, v) = power_iteration(w, e.rows, e.cols, &mut e.u, iters);
            if sigma != 0.0 {
                let scale = e.gain / sigma;
                for x in &mut eff.get_mut(&e.name).unwrap().data {
                    *x *= scale;
                }
            }
            factors.push((sigma, e.u.clone(), v));
        }
        (eff, SpectralCache { factors })
    }

    /// Maps gradients with respect to the normalized weights back to the raw
    /// weights, treating `u` and `v` as constants:
    /// `dL/dW = g (G - <G, W/sigma> u v^T) / sigma` for gain `g`.
    pub fn backprop(
        &self,
        eff: &ParamSet,
        cache: &SpectralCache,
        eff_grads: &ParamSet,
    ) -> Result<ParamSet, NnError> {
        eff.check_aligned(eff_grads)?;
        let mut grads = eff_grads.clone();
        for (e, (sigma, u, v)) in self.entries.iter().zip(&cache.factors) {
            if *sigma == 0.0 {
                continue;
            }
            let w_sn = &eff.get(&e.name).unwrap().data;
            let g = &mut grads.get_mut(&e.name).unwrap().data;
            let inner: f64 = g.iter().zip(w_sn).map(|(a, b)| a * b).sum::<f64>() / e.gain;
            let scale = e.gain / sigma;
            for r in 0..e.rows {
                for c in 0..e.cols {
                    let k = r * e.cols + c;
                    g[k] = (g[k] - inner * u[r] * v[c]) * scale;
                }
            }
        }
        Ok(grads)
    }

    /// Normalized weights from the current `u` estimates, leaving them unchanged.
    pub fn normalized(&self, params: &ParamSet) -> ParamSet {
        self.clone().apply(params, 1).0
    }

    pub fn save_into(&self, ckpt: &mut super::Checkpoint, prefix: &str) {
        for e in &self.entries {
            ckpt.add(format!("{prefix}.{}.u", e.name), vec![e.rows], e.u.clone());
        }
    }

    pub fn load_from(&mut self, ckpt: &super::Checkpoint, prefix: &str) -> Result<(), NnError> {
        for e in &mut self.entries {
            let (_, shape, u) = ckpt.tensor(&format!("{prefix}.{}.u", e.name))?;
            if shape != &vec![e.rows] {
                return Err(NnError::Checkpoint(format!(
                    "spectral vector for {} has wrong shape",
                    e.name
                )));
            }
            e.u.clone_from(u);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec, Tensor};

    fn svd_sigma_max(w: &[f64], rows: usize, cols: usize) -> f64 {
        let m = nalgebra::DMatrix::from_row_slice(rows, cols, w);
        m.singular_values().max()
    }

    fn unit(rng: &mut SeededRng, n: usize) -> Vec<f64> {
        let mut u = rng.normal_vec(n);
        normalize(&mut u);
        u
    }

    #[test]
    fn diagonal_matrix_estimate() {
        let w = [3.0, 0.0, 0.0, 1.0];
        let mut u = vec![0.6, 0.8];
        let (sigma, _) = power_iteration(&w, 2, 2, &mut u, 50);
        assert!((sigma - 3.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_matrix_is_unchanged() {
        let (s, c) = (0.6f64, 0.8f64);
        let w = [c, -s, s, c];
        let mut u = vec![1.0, 0.0];
        let out = spectral_normalize(&w, 2, 2, 5, &mut u);
        for (a, b) in out.iter().zip(&w) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_matrix_returns_zero() {
        let mut u = vec![1.0, 0.0, 0.0];
        let out = spectral_normalize(&[0.0; 6], 3, 2, 3, &mut u);
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn estimate_increases_with_iterations() {
        let mut rng = SeededRng::new(5);
        let w = rng.normal_vec(8 * 5);
        let u0 = unit(&mut rng, 8);
        let mut last = 0.0;
        for iters in 1..20 {
            let mut u = u0.clone();
            let (sigma, _) = power_iteration(&w, 8, 5, &mut u, iters);
            assert!(sigma >= last - 1e-12);
            last = sigma;
        }
    }

    #[test]
    fn matches_svd_oracle_on_random_matrices() {
        let mut rng = SeededRng::new(6);
        for _ in 0..100 {
            let rows = 1 + rng.below(16);
            let cols = 1 + rng.below(16);
            let w = rng.normal_vec(rows * cols);
            let mut u = unit(&mut rng, rows);
            let (sigma, _) = power_iteration(&w, rows, cols, &mut u, 500);
            let oracle = svd_sigma_max(&w, rows, cols);
            assert!(
                (sigma - oracle).abs() / oracle < 1e-3,
                "{sigma} vs {oracle}"
            );

            let normalized = spectral_normalize(&w, rows, cols, 500, &mut unit(&mut rng, rows));
            let after = svd_sigma_max(&normalized, rows, cols);
            assert!((after - 1.0).abs() < 1e-3, "normalized sigma {after}");
        }
    }

    #[test]
    fn backprop_matches_finite_differences_with_frozen_vectors() {
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::conv_strided(1, 2, 2),
                LayerSpec::act(Activation::Lrelu),
                LayerSpec::dense(2 * 2 * 2, 1),
            ],
            1,
            1,
        );
        let mut rng = SeededRng::new(7);
        let params = spec.init_params(&mut rng);
        let x = Tensor::from_vec(1, 4, 4, rng.normal_vec(16));
        let mut sn = SpectralNorm::new(&spec, &params, &mut rng);
        sn.apply(&params, 3);
        let frozen = sn.clone();

        let mut state = frozen.clone();
        let (eff, cache) = state.apply(&params, 1);
        let (_, trace) = spec.forward_trace(&eff, &x).unwrap();
        let (eff_grads, _) = spec
            .backward(&eff, &trace, &Tensor::vector(vec![1.0]))
            .unwrap();
        let grads = frozen.backprop(&eff, &cache, &eff_grads).unwrap();

        // Differentiate the map with u, v held at the values used above.
        let factors = cache.factors.clone();
        let frozen_loss = |p: &ParamSet| {
            let mut eff = p.clone();
            for (e, (_, u, v)) in frozen.entries.iter().zip(&factors) {
                let w = &p.get(&e.name).unwrap().data;
                let sigma: f64 = (0..e.rows)
                    .map(|r| u[r] * (0..e.cols).map(|c| w[r * e.cols + c] * v[c]).sum::<f64>())
                    .sum();
                for val in &mut eff.get_mut(&e.name).unwrap().data {
                    *val *= e.gain / sigma;
                }
            }
            spec.forward(&eff, &x).unwrap().data[0]
        };
        let h = 1e-5;
        for p in params.iter() {
            for k in 0..p.data.len() {
                let mut plus = params.clone();
                plus.get_mut(&p.name).unwrap().data[k] += h;
                let mut minus = params.clone();
                minus.get_mut(&p.name).unwrap().data[k] -= h;
                let numeric = (frozen_loss(&plus) - frozen_loss(&minus)) / (2.0 * h);
                let analytic = grads.get(&p.name).unwrap().data[k];
                assert!(
                    (analytic - numeric).abs() / (analytic.abs() + 1e-8) < 1e-4
                        || (analytic.abs() < 1e-9 && numeric.abs() < 1e-9),
                    "{}[{k}]: {analytic} vs {numeric}",
                    p.name
                );
            }
        }
    }

    #[test]
    fn normalized_conv_stack_is_one_lipschitz() {
        let spec = NetworkSpec::new(
            vec![
                LayerSpec::conv(1, 4),
                LayerSpec::conv_strided(4, 4, 2),
                LayerSpec::conv_strided(4, 2, 2),
                LayerSpec::dense(2 * 2 * 2, 3),
            ],
            1,
            3,
        );
        let mut rng = SeededRng::new(8);
        let mut params = spec.init_params(&mut rng);
        for p in params.iter_mut() {
            if p.name.ends_with("bias") {
                p.data.fill(0.0);
            }
        }
        let mut sn = SpectralNorm::new(&spec, &params, &mut rng);
        let (eff, _) = sn.apply(&params, 300);
        // Largest singular value of the (linear) network by power iteration on J^T J.
        let mut x = Tensor::from_vec(1, 8, 8, rng.normal_vec(64));
        let mut norm = 0.0;
        for _ in 0..300 {
            x = x.scaled(1.0 / x.norm());
            let (y, trace) = spec.forward_trace(&eff, &x).unwrap();
            norm = y.norm();
            let (_, back) = spec.backward(&eff, &trace, &y).unwrap();
            x = back;
        }
        assert!(norm <= 1.0 + 1e-6, "operator norm {norm}");
        assert!(norm > 0.0, "operator norm {norm}");
    }
}
