//! Spectrally normalized critic for the Kantorovich dual
//! `max_phi E[phi(pushed)] - E[phi(target)]` over 1-Lipschitz `phi`.

use serde::{Deserialize, Serialize};

use super::OtError;
use crate::nn::{
    Activation, AdamConfig, AdamState, Checkpoint, LayerSpec, NetworkSpec, NnError, ParamSet,
    SpectralNorm, Tensor,
};
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticConfig {
    /// Channels after the first strided conv (doubled once, then held).
    pub hidden: usize,
    /// Number of stride-2 conv layers before the final dense layer.
    pub depth: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub power_iterations: usize,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: 16,
            depth: 4,
            lr: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            power_iterations: 1,
        }
    }
}

impl CriticConfig {
    /// Strided conv stack over `channels x size x size` inputs, leaky ReLU
    /// between layers, dense read-out of the flattened features.
    pub fn image_spec(&self, channels: usize, size: usize) -> Result<NetworkSpec, OtError> {
        if self.depth == 0 || size >> self.depth == 0 {
            return Err(OtError::Config(format!(
                "critic depth {} too deep for {size}x{size}",
                self.depth
            )));
        }
        let mut layers = Vec::new();
        let mut ch = channels;
        for i in 0..self.depth {
            let out = if i == 0 { self.hidden } else { 2 * self.hidden };
            layers.push(LayerSpec::conv_strided(ch, out, 2));
            layers.push(LayerSpec::act(Activation::Lrelu));
            ch = out;
        }
        let side = size >> self.depth;
        layers.push(LayerSpec::dense(ch * side * side, 1));
        Ok(NetworkSpec::new(layers, channels, 1))
    }

    /// Dense critic for vector atoms.
    pub fn vector_spec(&self, dim: usize) -> NetworkSpec {
        let mut layers = vec![
            LayerSpec::dense(dim, self.hidden),
            LayerSpec::act(Activation::Lrelu),
        ];
        for _ in 1..self.depth {
            layers.push(LayerSpec::dense(self.hidden, self.hidden));
            layers.push(LayerSpec::act(Activation::Lrelu));
        }
        layers.push(LayerSpec::dense(self.hidden, 1));
        NetworkSpec::new(layers, dim, 1)
    }
}

#[derive(Debug, Clone)]
pub struct Critic {
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub sn: SpectralNorm,
    pub adam: AdamState,
    pub power_iterations: usize,
}

impl Critic {
    pub fn new(
        spec: NetworkSpec,
        cfg: &CriticConfig,
        rng: &mut SeededRng,
    ) -> Result<Self, OtError> {
        spec.validate()?;
        let params = spec.init_params(rng);
        let sn = SpectralNorm::new(&spec, &params, rng);
        let adam = AdamState::new(&params, AdamConfig::new(cfg.lr, cfg.beta1, cfg.beta2));
        Ok(Self {
            spec,
            params,
            sn,
            adam,
            power_iterations: cfg.power_iterations,
        })
    }

    /// Weights as used in every evaluation: each divided by its current
    /// spectral-norm estimate.
    pub fn effective(&self) -> ParamSet {
        self.sn.normalized(&self.params)
    }

    pub fn value(&self, eff: &ParamSet, x: &Tensor) -> Result<f64, OtError> {
        Ok(self.spec.forward(eff, x)?.data[0])
    }

    /// `phi(x)` and `d phi / dx`.
    pub fn value_and_input_grad(
        &self,
        eff: &ParamSet,
        x: &Tensor,
    ) -> Result<(f64, Tensor), OtError> {
        let (out, trace) = self.spec.forward_trace(eff, x)?;
        let (_, gx) = self
            .spec
            .backward(eff, &trace, &Tensor::vector(vec![1.0]))?;
        Ok((out.data[0], gx))
    }

    /// `mean phi(pushed) - mean phi(target)` under the given weights.
    pub fn objective(
        &self,
        eff: &ParamSet,
        pushed: &[Tensor],
        target: &[Tensor],
    ) -> Result<f64, OtError> {
        let mean = |xs: &[Tensor]| -> Result<f64, OtError> {
            let mut s = 0.0;
            for x in xs {
                s += self.value(eff, x)?;
            }
            Ok(s / xs.len() as f64)
        };
        Ok(mean(pushed)? - mean(target)?)
    }

    /// One Adam ascent step on the dual objective. Advances the power
    /// iteration, then differentiates through the normalization. Returns the
    /// objective under the weights used for the step.
    pub fn ascent_step(&mut self, pushed: &[Tensor], target: &[Tensor]) -> Result<f64, OtError> {
        if pushed.is_empty() || target.is_empty() {
            return Err(OtError::Precondition(
                "critic step needs samples on both sides".into(),
            ));
        }
        let (eff, cache) = self.sn.apply(&self.params, self.power_iterations);
        let mut grads = eff.zeros_like();
        let mut objective = 0.0;
        // Descent on the negated objective.
        for (xs, sign) in [(pushed, -1.0), (target, 1.0)] {
            let w = sign / xs.len() as f64;
            for x in xs {
                let (out, trace) = self.spec.forward_trace(&eff, x)?;
                objective -= w * out.data[0];
                let (g, _) = self.spec.backward(&eff, &trace, &Tensor::vector(vec![w]))?;
                for (acc, gi) in grads.iter_mut().zip(g.iter()) {
                    for (a, b) in acc.data.iter_mut().zip(&gi.data) {
                        *a += b;
                    }
                }
            }
        }
        let raw = self.sn.backprop(&eff, &cache, &grads)?;
        self.adam.step(&mut self.params, &raw)?;
        if !objective.is_finite() {
            return Err(OtError::Nn(NnError::NonFinite("critic objective".into())));
        }
        Ok(objective)
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.add_params(prefix, &self.params);
        self.sn.save_into(ckpt, &format!("{prefix}.sn"));
        self.adam.save_into(ckpt, &format!("{prefix}.adam"));
    }

    pub fn load_from(&mut self, ckpt: &Checkpoint, prefix: &str) -> Result<(), OtError> {
        self.params = ckpt.params(prefix, &self.params)?;
        self.sn.load_from(ckpt, &format!("{prefix}.sn"))?;
        self.adam = AdamState::load_from(
            ckpt,
            &format!("{prefix}.adam"),
            &self.params,
            self.adam.config,
        )?;
        Ok(())
    }
}

/// Trains `critic` for `steps` full-batch ascent steps on `T(alpha)` against
/// `beta` and returns the final dual objective, a lower bound on `W1`
/// between the pushforward and `beta`.
pub fn kantorovich_dual_gap(
    map: &dyn Fn(&Tensor) -> Result<Tensor, OtError>,
    alpha: &[Tensor],
    beta: &[Tensor],
    critic: &mut Critic,
    steps: usize,
) -> Result<f64, OtError> {
    let pushed = alpha.iter().map(map).collect::<Result<Vec<_>, _>>()?;
    for _ in 0..steps {
        critic.ascent_step(&pushed, beta)?;
    }
    critic.objective(&critic.effective(), &pushed, beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{euclidean, make_theorem_instance};

    fn vectors(atoms: &[Vec<f64>]) -> Vec<Tensor> {
        atoms.iter().map(|a| Tensor::vector(a.clone())).collect()
    }

    fn vector_critic(dim: usize, seed: u64) -> Critic {
        let cfg = CriticConfig {
            hidden: 32,
            depth: 2,
            lr: 1e-2,
            ..CriticConfig::default()
        };
        Critic::new(cfg.vector_spec(dim), &cfg, &mut SeededRng::new(seed)).unwrap()
    }

    #[test]
    fn exact_map_has_zero_gap() {
        let mut rng = SeededRng::new(1);
        let inst = make_theorem_instance(6, false, &mut rng).unwrap();
        let alpha = vectors(&inst.alpha);
        let beta = vectors(&inst.beta);
        let table = inst.f_table.clone();
        let targets = beta.clone();
        let map = move |x: &Tensor| {
            let i = alpha.iter().position(|a| a == x).unwrap();
            Ok(targets[table[i]].clone())
        };
        let mut critic = vector_critic(4, 2);
        let gap =
            kantorovich_dual_gap(&map, &vectors(&inst.alpha), &beta, &mut critic, 300).unwrap();
        assert!(gap.abs() <= 1e-3, "gap {gap}");
    }

    #[test]
    fn identity_gap_beats_a_fixed_test_function() {
        let mut rng = SeededRng::new(3);
        let alpha: Vec<Vec<f64>> = (0..8).map(|_| rng.normal_vec(3)).collect();
        let beta: Vec<Vec<f64>> = alpha
            .iter()
            .map(|a| a.iter().map(|v| v + 1.5).collect())
            .collect();
        // phi0(x) = |x - x0| is 1-Lipschitz; its dual value lower-bounds W1.
        let x0 = vec![-3.0; 3];
        let mean =
            |s: &[Vec<f64>]| s.iter().map(|a| euclidean(a, &x0)).sum::<f64>() / s.len() as f64;
        let bound = mean(&alpha) - mean(&beta);
        assert!(bound.abs() > 0.5);
        let (pushed, target, bound) = if bound > 0.0 {
            (&alpha, &beta, bound)
        } else {
            (&beta, &alpha, -bound)
        };
        let mut critic = vector_critic(3, 4);
        let id = |x: &Tensor| Ok(x.clone());
        let gap = kantorovich_dual_gap(&id, &vectors(pushed), &vectors(target), &mut critic, 500)
            .unwrap();
        assert!(gap >= bound, "gap {gap} below fixed-function bound {bound}");
    }

    #[test]
    fn swapping_measures_negates_the_estimate() {
        let mut rng = SeededRng::new(5);
        let a: Vec<Tensor> = (0..5).map(|_| Tensor::vector(rng.normal_vec(3))).collect();
        let b: Vec<Tensor> = (0..5).map(|_| Tensor::vector(rng.normal_vec(3))).collect();
        let critic = vector_critic(3, 6);
        let eff = critic.effective();
        let ab = critic.objective(&eff, &a, &b).unwrap();
        let ba = critic.objective(&eff, &b, &a).unwrap();
        assert_eq!(ab, -ba);
        let id = |x: &Tensor| Ok(x.clone());
        let g1 = kantorovich_dual_gap(&id, &a, &b, &mut critic.clone(), 0).unwrap();
        let g2 = kantorovich_dual_gap(&id, &b, &a, &mut critic.clone(), 0).unwrap();
        assert_eq!(g1, -g2);
    }

    #[test]
    fn image_critic_is_lipschitz_on_random_pairs() {
        let cfg = CriticConfig::default();
        let mut rng = SeededRng::new(7);
        let mut critic = Critic::new(cfg.image_spec(1, 32).unwrap(), &cfg, &mut rng).unwrap();
        // Let training move the weights away from initialization first.
        let a: Vec<Tensor> = (0..4)
            .map(|_| Tensor::from_vec(1, 32, 32, rng.normal_vec(1024)))
            .collect();
        let b: Vec<Tensor> = (0..4)
            .map(|_| Tensor::from_vec(1, 32, 32, rng.normal_vec(1024)))
            .collect();
        for _ in 0..20 {
            critic.ascent_step(&a, &b).unwrap();
        }
        let eff = critic.effective();
        for _ in 0..1000 {
            let u = Tensor::from_vec(1, 32, 32, rng.normal_vec(1024));
            let scale = rng.uniform_range(0.01, 2.0);
            let v = Tensor::from_vec(
                1,
                32,
                32,
                rng.normal_vec(1024).iter().map(|x| x * scale).collect(),
            );
            let mut d = u.clone();
            d.axpy(-1.0, &v);
            let lhs = (critic.value(&eff, &u).unwrap() - critic.value(&eff, &v).unwrap()).abs();
            assert!(lhs <= 1.05 * d.norm());
        }
    }

    #[test]
    fn ascent_increases_the_objective() {
        let mut rng = SeededRng::new(9);
        let a: Vec<Tensor> = (0..6)
            .map(|_| Tensor::vector(rng.normal_vec(2).iter().map(|v| v + 2.0).collect()))
            .collect();
        let b: Vec<Tensor> = (0..6).map(|_| Tensor::vector(rng.normal_vec(2))).collect();
        let mut critic = vector_critic(2, 10);
        let before = critic.objective(&critic.effective(), &a, &b).unwrap();
        for _ in 0..100 {
            critic.ascent_step(&a, &b).unwrap();
        }
        let after = critic.objective(&critic.effective(), &a, &b).unwrap();
        assert!(after > before + 0.5, "{before} -> {after}");
    }

    #[test]
    fn checkpoint_round_trip_restores_state() {
        let mut rng = SeededRng::new(11);
        let a = vec![Tensor::vector(rng.normal_vec(2))];
        let b = vec![Tensor::vector(rng.normal_vec(2))];
        let mut critic = vector_critic(2, 12);
        critic.ascent_step(&a, &b).unwrap();
        let mut ckpt = Checkpoint::new(serde_json::Value::Null);
        critic.save_into(&mut ckpt, "critic");
        let mut restored = vector_critic(2, 99);
        restored.load_from(&ckpt, "critic").unwrap();
        let x = critic.ascent_step(&a, &b).unwrap();
        let y = restored.ascent_step(&a, &b).unwrap();
        assert_eq!(x.to_bits(), y.to_bits());
        assert!(critic.params.bits_equal(&restored.params));
    }
}
