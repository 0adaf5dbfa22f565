//! Adversarial teacher: learns `T` with `T(x15) ~ x05` in distribution from
//! unpaired sets, then turns reference images into pseudo-pairs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Critic, CriticConfig, OtError};
use crate::nn::{Activation, AdamConfig, AdamState, Checkpoint, NetworkSpec, ParamSet, Tensor};
use crate::numerics::{load_real, save_real, RealArray2D, RngState, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TeacherObjective {
    /// Critic compares `T(x15)` with `x05`; the map also pays
    /// `lambda * |T(x15) - x15|`.
    Transport,
    /// The dual form exactly as printed: `T` is applied to `x05` samples,
    /// compared against `x15`, and no transport cost is added.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherConfig {
    pub epochs: usize,
    pub critic_steps: usize,
    pub lambda: f64,
    pub lr: f64,
    /// Multiplicative learning-rate decay per epoch (map and critic).
    pub lr_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub map_hidden: usize,
    pub map_depth: usize,
    pub critic: CriticConfig,
    pub objective: TeacherObjective,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            critic_steps: 5,
            lambda: 0.01,
            lr: 1e-3,
            lr_decay: 0.95,
            beta1: 0.5,
            beta2: 0.999,
            map_hidden: 16,
            map_depth: 5,
            critic: CriticConfig::default(),
            objective: TeacherObjective::Transport,
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<(), OtError> {
        let bad = |m: &str| Err(OtError::Config(m.into()));
        if self.critic_steps == 0 {
            return bad("critic_steps must be >= 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.lr > 0.0 && self.critic.lr > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.map_depth == 0 || self.map_hidden == 0 {
            return bad("map network needs depth and width >= 1");
        }
        Ok(())
    }

    /// Residual conv map `x + net(x)`.
    pub fn map_spec(&self) -> NetworkSpec {
        NetworkSpec::conv_stack(1, self.map_hidden, self.map_depth, 1, Activation::Elu).with_skip()
    }
}

/// Initial parameters with the last layer zeroed, so `T` starts as the identity.
fn identity_init(spec: &NetworkSpec, rng: &mut SeededRng) -> ParamSet {
    let mut params = spec.init_params(rng);
    let last = spec.weight_names().pop().expect("map has layers");
    let bias = last.replace(".weight", ".bias");
    for p in params.iter_mut() {
        if p.name == last || p.name == bias {
            p.data.fill(0.0);
        }
    }
    params
}

fn to_tensor(img: &RealArray2D) -> Tensor {
    Tensor::from_vec(1, img.rows(), img.cols(), img.data().to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch: usize,
    pub step: usize,
    /// Critic objective of the last critic step before this map step.
    pub critic_objective: f64,
    /// `phi(T(x)) + lambda * |T(x) - x|` at the map step.
    pub map_loss: f64,
    pub transport_cost: f64,
}

/// Trained degradation map plus the critic that shaped it.
#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub size: usize,
    pub map_spec: NetworkSpec,
    pub map_params: ParamSet,
    pub critic: Critic,
}

impl TeacherModel {
    pub fn apply(&self, x: &RealArray2D) -> Result<RealArray2D, OtError> {
        let y = self.map_spec.forward(&self.map_params, &to_tensor(x))?;
        Ok(RealArray2D::from_vec(x.rows(), x.cols(), y.data)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": "teacher",
            "size": self.size,
            "config": self.config,
        }));
        ckpt.add_params("map", &self.map_params);
        self.critic.save_into(&mut ckpt, "critic");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, OtError> {
        if ckpt.meta["kind"] != "teacher" {
            return Err(OtError::Config("checkpoint does not hold a teacher".into()));
        }
        let config: TeacherConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let size: usize = serde_json::from_value(ckpt.meta["size"].clone())?;
        let map_spec = config.map_spec();
        let map_params = ckpt.params("map", &map_spec.zero_params())?;
        let mut critic = Critic::new(
            config.critic.image_spec(1, size)?,
            &config.critic,
            &mut SeededRng::new(0),
        )?;
        critic.load_from(ckpt, "critic")?;
        Ok(Self {
            config,
            size,
            map_spec,
            map_params,
            critic,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<String, OtError> {
        let ckpt = self.to_checkpoint();
        ckpt.save(dir)?;
        Ok(ckpt.digest())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, String), OtError> {
        let ckpt = Checkpoint::load(dir)?;
        Ok((Self::from_checkpoint(&ckpt)?, ckpt.digest()))
    }
}

/// Full training state; everything needed for a bit-exact resume.
pub struct TeacherTrainer {
    pub config: TeacherConfig,
    pub size: usize,
    map_spec: NetworkSpec,
    map_params: ParamSet,
    map_adam: AdamState,
    critic: Critic,
    rng: SeededRng,
    pub epoch: usize,
    pub log: Vec<TrainLog>,
}

impl TeacherTrainer {
    pub fn new(config: TeacherConfig, size: usize) -> Result<Self, OtError> {
        config.validate()?;
        let root = SeededRng::new(config.seed);
        let map_spec = config.map_spec();
        map_spec.validate()?;
        let map_params = identity_init(&map_spec, &mut root.fork(1));
        let critic = Critic::new(
            config.critic.image_spec(1, size)?,
            &config.critic,
            &mut root.fork(2),
        )?;
        let map_adam = AdamState::new(
            &map_params,
            AdamConfig::new(config.lr, config.beta1, config.beta2),
        );
        Ok(Self {
            map_spec,
            map_params,
            map_adam,
            critic,
            rng: root.fork(3),
            epoch: 0,
            log: Vec::new(),
            size,
            config,
        })
    }

    pub fn model(&self) -> TeacherModel {
        TeacherModel {
            config: self.config.clone(),
            size: self.size,
            map_spec: self.map_spec.clone(),
            map_params: self.map_params.clone(),
            critic: self.critic.clone(),
        }
    }

    /// One pass over the source set in shuffled order: per source image,
    /// `critic_steps` critic updates on random single samples, then one map
    /// update.
    pub fn run_epoch(&mut self, x15: &[Tensor], x05: &[Tensor]) -> Result<(), OtError> {
        let (source, target) = match self.config.objective {
            TeacherObjective::Transport => (x15, x05),
            TeacherObjective::Literal => (x05, x15),
        };
        if source.is_empty() || target.is_empty() {
            return Err(OtError::Precondition(
                "both image sets must be nonempty".into(),
            ));
        }
        let decay = self.config.lr_decay.powi(self.epoch as i32);
        self.map_adam.set_lr(self.config.lr * decay);
        self.critic.adam.set_lr(self.config.critic.lr * decay);
        let lambda = match self.config.objective {
            TeacherObjective::Transport => self.config.lambda,
            TeacherObjective::Literal => 0.0,
        };
        let order = self.rng.permutation(source.len());
        let epoch = self.epoch;
        for (step, &k) in order.iter().enumerate() {
            let fail = |detail: String| OtError::Diverged {
                epoch,
                step,
                detail,
            };
            let mut critic_objective = 0.0;
            for _ in 0..self.config.critic_steps {
                let a = &source[self.rng.below(source.len())];
                let b = &target[self.rng.below(target.len())];
                let pushed = self.map_spec.forward(&self.map_params, a)?;
                critic_objective = self
                    .critic
                    .ascent_step(&[pushed], std::slice::from_ref(b))
                    .map_err(|e| fail(e.to_string()))?;
            }

            let (map_loss, cost) = self
                .map_step(&source[k], lambda, true)
                .map_err(|e| fail(e.to_string()))?;
            self.log.push(TrainLog {
                epoch: self.epoch,
                step,
                critic_objective,
                map_loss,
                transport_cost: cost,
            });
        }
        self.epoch += 1;
        Ok(())
    }

    /// One Adam step on `phi(T(x)) + lambda |T(x) - x|` (the critic term only
    /// when `dual`). Returns the loss and the transport cost.
    fn map_step(&mut self, x: &Tensor, lambda: f64, dual: bool) -> Result<(f64, f64), OtError> {
        let (y, trace) = self.map_spec.forward_trace(&self.map_params, x)?;
        let (phi, mut grad) = if dual {
            self.critic
                .value_and_input_grad(&self.critic.effective(), &y)?
        } else {
            (0.0, Tensor::zeros(y.channels, y.height, y.width))
        };
        let mut diff = y.clone();
        diff.axpy(-1.0, x);
        let cost = diff.norm();
        if lambda > 0.0 && cost > 0.0 {
            grad.axpy(lambda / cost, &diff);
        }
        let loss = phi + lambda * cost;
        if !loss.is_finite() {
            return Err(OtError::Nn(crate::nn::NnError::NonFinite(
                "map loss".into(),
            )));
        }
        let (grads, _) = self.map_spec.backward(&self.map_params, &trace, &grad)?;
        self.map_adam.step(&mut self.map_params, &grads)?;
        Ok((loss, cost))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": "teacher-trainer",
            "size": self.size,
            "config": self.config,
            "epoch": self.epoch,
            "rng": self.rng.state(),
            "log": self.log,
        }));
        ckpt.add_params("map", &self.map_params);
        self.map_adam.save_into(&mut ckpt, "map.adam");
        self.critic.save_into(&mut ckpt, "critic");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, OtError> {
        if ckpt.meta["kind"] != "teacher-trainer" {
            return Err(OtError::Config(
                "checkpoint does not hold teacher training state".into(),
            ));
        }
        let config: TeacherConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let size: usize = serde_json::from_value(ckpt.meta["size"].clone())?;
        let mut t = Self::new(config, size)?;
        t.map_params = ckpt.params("map", &t.map_params)?;
        t.map_adam = AdamState::load_from(ckpt, "map.adam", &t.map_params, t.map_adam.config)?;
        t.critic.load_from(ckpt, "critic")?;
        let state: RngState = serde_json::from_value(ckpt.meta["rng"].clone())?;
        t.rng = SeededRng::from_state(state);
        t.epoch = serde_json::from_value(ckpt.meta["epoch"].clone())?;
        t.log = serde_json::from_value(ckpt.meta["log"].clone())?;
        Ok(t)
    }
}

/// Trains for `config.epochs` epochs, checkpointing after every epoch into
/// `checkpoint_dir` (when given). With `resume`, training continues from the
/// checkpoint found there. `on_epoch` sees the trainer after each epoch.
pub fn train_teacher(
    x15: &[RealArray2D],
    x05: &[RealArray2D],
    config: &TeacherConfig,
    checkpoint_dir: Option<&Path>,
    resume: bool,
    on_epoch: &mut dyn FnMut(&TeacherTrainer),
) -> Result<(TeacherModel, Vec<TrainLog>), OtError> {
    let Some(first) = x15.first() else {
        return Err(OtError::Precondition("empty 1.5T set".into()));
    };
    let size = first.rows();
    if x15.iter().chain(x05).any(|x| x.shape() != (size, size)) {
        return Err(OtError::Shape(
            "all images must share one square shape".into(),
        ));
    }
    let mut trainer = match checkpoint_dir {
        Some(dir) if resume && dir.join("manifest.json").exists() => {
            let t = TeacherTrainer::from_checkpoint(&Checkpoint::load(dir)?)?;
            let same = TeacherConfig {
                epochs: config.epochs,
                ..t.config.clone()
            } == *config;
            if !same || t.size != size {
                return Err(OtError::Config(
                    "checkpoint was written with a different configuration".into(),
                ));
            }
            TeacherTrainer {
                config: config.clone(),
                ..t
            }
        }
        _ => TeacherTrainer::new(config.clone(), size)?,
    };
    let a: Vec<Tensor> = x15.iter().map(to_tensor).collect();
    let b: Vec<Tensor> = x05.iter().map(to_tensor).collect();
    while trainer.epoch < config.epochs {
        trainer.run_epoch(&a, &b)?;
        if let Some(dir) = checkpoint_dir {
            trainer.to_checkpoint().save(dir)?;
        }
        on_epoch(&trainer);
    }
    Ok((trainer.model(), trainer.log))
}

pub const PAIRS_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsManifest {
    pub schema_version: u32,
    /// Digest of the teacher checkpoint that produced `x05`.
    pub teacher_digest: String,
    pub x15: Vec<String>,
    pub x05: Vec<String>,
}

impl PairsManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OtError> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema_version != PAIRS_SCHEMA || m.x15.len() != m.x05.len() {
            return Err(OtError::Config("malformed pairs manifest".into()));
        }
        Ok(m)
    }

    pub fn load_pairs(
        &self,
        dir: impl AsRef<Path>,
    ) -> Result<Vec<(RealArray2D, RealArray2D)>, OtError> {
        let dir = dir.as_ref();
        self.x05
            .iter()
            .zip(&self.x15)
            .map(|(a, b)| Ok((load_real(dir.join(a))?, load_real(dir.join(b))?)))
            .collect()
    }
}

/// Writes `(T(x), x)` for every reference image under `dir` and the
/// manifest last.
pub fn gen_pairs(
    teacher: &TeacherModel,
    teacher_digest: &str,
    x15: &[RealArray2D],
    dir: impl AsRef<Path>,
) -> Result<PairsManifest, OtError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("pairs"))?;
    let mut manifest = PairsManifest {
        schema_version: PAIRS_SCHEMA,
        teacher_digest: teacher_digest.to_string(),
        x15: Vec::with_capacity(x15.len()),
        x05: Vec::with_capacity(x15.len()),
    };
    for (i, x) in x15.iter().enumerate() {
        if x.shape() != (teacher.size, teacher.size) {
            return Err(OtError::Shape(format!(
                "image {i} is {:?}, teacher expects {}",
                x.shape(),
                teacher.size
            )));
        }
        let a = format!("pairs/x15_{i:04}.npy");
        let b = format!("pairs/x05_{i:04}.npy");
        save_real(dir.join(&a), x)?;
        save_real(dir.join(&b), &teacher.apply(x)?)?;
        manifest.x15.push(a);
        manifest.x05.push(b);
    }
    let tmp = dir.join("pairs.json.partial");
    fs::write(&tmp, serde_json::to_string_pretty(&manifest)?)?;
    fs::rename(tmp, dir.join("pairs.json"))?;
    Ok(manifest)
}
