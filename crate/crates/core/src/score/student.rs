//! Noise-conditional score network, denoising score matching and the
//! student training loop.
//!
//! The network sees `[c(eps) * x, log(eps)]` with `c(eps) = 1/sqrt(d^2 + eps^2)`
//! and `d` the data scale, and the score is read out as `net(..) / eps`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{make_schedule, NoiseSchedule, ScoreError, ScoreSource};
use crate::nn::{
    Activation, AdamConfig, AdamState, Checkpoint, EmaState, NetworkSpec, NnError, ParamSet, Tensor,
};
use crate::numerics::{RealArray2D, RngState, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossForm {
    /// `1/2 |eps s + z|^2`
    Standard,
    /// `1/2 |eps s + z / eps|^2`
    PaperLiteral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudentConfig {
    /// 2 for the joint `[x05, x15]` student, 1 for a single-image prior.
    pub channels: usize,
    pub hidden: usize,
    pub depth: usize,
    pub eps_min: f64,
    pub eps_max: f64,
    pub levels: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub ema_decay: f64,
    pub loss: LossForm,
    pub data_scale: f64,
    /// Checkpoint every this many steps (0: only at the end of each epoch).
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            channels: 2,
            hidden: 32,
            depth: 5,
            eps_min: 0.01,
            eps_max: 10.0,
            levels: 64,
            epochs: 30,
            batch_size: 1,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            ema_decay: 0.999,
            loss: LossForm::Standard,
            data_scale: 0.5,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |m: &str| Err(ScoreError::Config(m.into()));
        if self.channels == 0 || self.hidden == 0 || self.depth == 0 {
            return bad("channels, hidden and depth must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)");
        }
        if !(self.data_scale > 0.0) {
            return bad("data_scale must be > 0");
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule, ScoreError> {
        make_schedule(self.eps_min, self.eps_max, self.levels)
    }

    pub fn network_spec(&self) -> NetworkSpec {
        NetworkSpec::conv_stack(
            self.channels + 1,
            self.hidden,
            self.depth,
            self.channels,
            Activation::Elu,
        )
    }
}

/// One training pair, stacked as channels `[x05, x15]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSample {
    pub x05: RealArray2D,
    pub x15: RealArray2D,
}

impl JointSample {
    pub fn new(x05: RealArray2D, x15: RealArray2D) -> Result<Self, ScoreError> {
        if x05.shape() != x15.shape() {
            return Err(ScoreError::Shape(format!(
                "x05 {:?} vs x15 {:?}",
                x05.shape(),
                x15.shape()
            )));
        }
        Ok(Self { x05, x15 })
    }

    pub fn to_tensor(&self) -> Tensor {
        let (h, w) = self.x05.shape();
        let mut data = self.x05.data().to_vec();
        data.extend_from_slice(self.x15.data());
        Tensor::from_vec(2, h, w, data)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self, ScoreError> {
        if t.channels != 2 {
            return Err(ScoreError::Shape(format!(
                "joint state needs 2 channels, got {}",
                t.channels
            )));
        }
        let plane = |c| {
            RealArray2D::from_vec(t.height, t.width, t.plane(c).to_vec()).map_err(NnError::from)
        };
        Ok(Self {
            x05: plane(0)?,
            x15: plane(1)?,
        })
    }
}

fn net_input(x: &Tensor, sigma: f64, data_scale: f64) -> Tensor {
    let c = 1.0 / (data_scale * data_scale + sigma * sigma).sqrt();
    let mut data: Vec<f64> = x.data.iter().map(|v| c * v).collect();
    data.extend(std::iter::repeat_n(sigma.ln(), x.height * x.width));
    Tensor::from_vec(x.channels + 1, x.height, x.width, data)
}

/// Loss and its gradient with respect to the network output `f = eps * s`.
/// Both forms average over entries.
pub fn dsm_terms(f: &Tensor, z: &Tensor, sigma: f64, form: LossForm) -> (f64, Tensor) {
    let zs = match form {
        LossForm::Standard => 1.0,
        LossForm::PaperLiteral => 1.0 / sigma,
    };
    let n = f.len() as f64;
    let r: Vec<f64> = f
        .data
        .iter()
        .zip(&z.data)
        .map(|(a, b)| a + zs * b)
        .collect();
    let loss = 0.5 * r.iter().map(|v| v * v).sum::<f64>() / n;
    let grad = Tensor::from_vec(
        f.channels,
        f.height,
        f.width,
        r.into_iter().map(|v| v / n).collect(),
    );
    (loss, grad)
}

#[derive(Debug, Clone)]
pub struct DsmOutput {
    pub loss: f64,
    pub grads: ParamSet,
}

/// Batch-mean DSM loss at one level with gradients for `params`.
pub fn dsm_loss(
    model: &StudentModel,
    params: &ParamSet,
    batch: &[Tensor],
    level: usize,
    z: &[Tensor],
    form: LossForm,
) -> Result<DsmOutput, ScoreError> {
    if level == 0 || level > model.schedule.levels() {
        return Err(ScoreError::Config(format!(
            "level {level} outside 1..={}",
            model.schedule.levels()
        )));
    }
    if batch.len() != z.len() || batch.is_empty() {
        return Err(ScoreError::Shape(
            "batch and noise must be nonempty and equally long".into(),
        ));
    }
    let sigma = model.schedule.sigma(level);
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let b = batch.len() as f64;
    for (x0, z) in batch.iter().zip(z) {
        model.check_shape(x0)?;
        if z.shape() != x0.shape() {
            return Err(ScoreError::Shape(format!(
                "noise {:?} vs sample {:?}",
                z.shape(),
                x0.shape()
            )));
        }
        let mut noisy = x0.clone();
        noisy.axpy(sigma, z);
        let (f, trace) = model
            .spec
            .forward_trace(params, &net_input(&noisy, sigma, model.config.data_scale))?;
        let (l, g) = dsm_terms(&f, z, sigma, form);
        let (pg, _) = model.spec.backward(params, &trace, &g)?;
        for (acc, p) in grads.iter_mut().zip(pg.iter()) {
            for (a, v) in acc.data.iter_mut().zip(&p.data) {
                *a += v / b;
            }
        }
        loss += l / b;
    }
    Ok(DsmOutput { loss, grads })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRow {
    pub step: u64,
    pub level: usize,
    pub sigma: f64,
    pub loss: f64,
}

pub fn write_loss_csv(path: impl AsRef<Path>, rows: &[LossRow]) -> Result<(), ScoreError> {
    let path = path.as_ref();
    let tmp = path.with_extension("csv.partial");
    let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
    writeln!(f, "step,level,eps,loss")?;
    for r in rows {
        writeln!(f, "{},{},{:e},{:e}", r.step, r.level, r.sigma, r.loss)?;
    }
    f.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    fs::rename(tmp, path)?;
    Ok(())
}

/// Trained score network. Inference uses the EMA weights.
#[derive(Debug, Clone)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub size: [usize; 2],
    pub spec: NetworkSpec,
    pub params: ParamSet,
    pub ema: ParamSet,
    pub schedule: NoiseSchedule,
}

impl StudentModel {
    pub fn new(
        config: StudentConfig,
        size: [usize; 2],
        rng: &mut SeededRng,
    ) -> Result<Self, ScoreError> {
        config.validate()?;
        let spec = config.network_spec();
        spec.validate()?;
        let params = spec.init_params(rng);
        Ok(Self {
            schedule: config.schedule()?,
            ema: params.clone(),
            params,
            spec,
            size,
            config,
        })
    }

    fn check_shape(&self, x: &Tensor) -> Result<(), ScoreError> {
        if x.shape() != [self.config.channels, self.size[0], self.size[1]] {
            return Err(ScoreError::Shape(format!(
                "state {:?} vs model {:?}",
                x.shape(),
                [self.config.channels, self.size[0], self.size[1]]
            )));
        }
        Ok(())
    }

    /// `net(x, eps) / eps` under the given weights.
    pub fn score_with(
        &self,
        params: &ParamSet,
        x: &Tensor,
        sigma: f64,
    ) -> Result<Tensor, ScoreError> {
        self.check_shape(x)?;
        let f = self
            .spec
            .forward(params, &net_input(x, sigma, self.config.data_scale))?;
        Ok(f.scaled(1.0 / sigma))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": "student",
            "size": self.size,
            "config": self.config,
        }));
        ckpt.add_params("net", &self.params);
        ckpt.add_params("ema", &self.ema);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ScoreError> {
        if ckpt.meta["kind"] != "student" {
            return Err(ScoreError::Config(
                "checkpoint does not hold a student".into(),
            ));
        }
        let config: StudentConfig = serde_json::from_value(ckpt.meta["config"].clone())?;
        let size: [usize; 2] = serde_json::from_value(ckpt.meta["size"].clone())?;
        let mut m = Self::new(config, size, &mut SeededRng::new(0))?;
        m.params = ckpt.params("net", &m.params)?;
        m.ema = ckpt.params("ema", &m.params)?;
        Ok(m)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<String, ScoreError> {
        let ckpt = self.to_checkpoint();
        ckpt.save(dir)?;
        Ok(ckpt.digest())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<(Self, String), ScoreError> {
        let ckpt = Checkpoint::load(dir)?;
        Ok((Self::from_checkpoint(&ckpt)?, ckpt.digest()))
    }
}

impl ScoreSource for StudentModel {
    fn channels(&self) -> usize {
        self.config.channels
    }

    fn score(&self, x: &Tensor, _level: usize, sigma: f64) -> Result<Tensor, ScoreError> {
        self.score_with(&self.ema, x, sigma)
    }
}

/// Full training state; everything needed for a bit-exact resume.
pub struct StudentTrainer {
    pub model: StudentModel,
    adam: AdamState,
    ema: EmaState,
    rng: SeededRng,
    pub epoch: usize,
    pub step: u64,
    /// Position inside the current epoch's permutation.
    cursor: usize,
    order: Vec<usize>,
    pub log: Vec<LossRow>,
}

impl StudentTrainer {
    pub fn new(config: StudentConfig, size: [usize; 2]) -> Result<Self, ScoreError> {
        let root = SeededRng::new(config.seed);
        let model = StudentModel::new(config, size, &mut root.fork(1))?;
        let c = &model.config;
        let adam = AdamState::new(&model.params, AdamConfig::new(c.lr, c.beta1, c.beta2));
        let ema = EmaState::new(&model.params, c.ema_decay)?;
        Ok(Self {
            adam,
            ema,
            rng: root.fork(2),
            epoch: 0,
            step: 0,
            cursor: 0,
            order: Vec::new(),
            log: Vec::new(),
            model,
        })
    }

    /// Current live weights with the EMA shadow attached.
    pub fn snapshot(&self) -> StudentModel {
        StudentModel {
            ema: self.ema.shadow.clone(),
            ..self.model.clone()
        }
    }

    /// One optimizer step: a batch drawn from the epoch permutation, one
    /// level drawn uniformly, fresh noise per sample.
    pub fn train_step(&mut self, data: &[Tensor]) -> Result<f64, ScoreError> {
        if data.is_empty() {
            return Err(ScoreError::Config("no training samples".into()));
        }
        if self.order.is_empty() {
            self.order = self.rng.permutation(data.len());
            self.cursor = 0;
        }
        let b = self
            .model
            .config
            .batch_size
            .min(self.order.len() - self.cursor);
        let batch: Vec<Tensor> = self.order[self.cursor..self.cursor + b]
            .iter()
            .map(|&k| data[k].clone())
            .collect();
        let level = 1 + self.rng.below(self.model.schedule.levels());
        let z: Vec<Tensor> = batch
            .iter()
            .map(|x| Tensor::from_vec(x.channels, x.height, x.width, self.rng.normal_vec(x.len())))
            .collect();
        let out = dsm_loss(
            &self.model,
            &self.model.params,
            &batch,
            level,
            &z,
            self.model.config.loss,
        )?;
        if !out.loss.is_finite() || !out.grads.is_finite() {
            return Err(ScoreError::Diverged {
                step: self.step,
                detail: format!("loss {} at level {level}", out.loss),
            });
        }
        self.adam.step(&mut self.model.params, &out.grads)?;
        self.ema.update(&self.model.params)?;
        self.log.push(LossRow {
            step: self.step,
            level,
            sigma: self.model.schedule.sigma(level),
            loss: out.loss,
        });
        self.step += 1;
        self.cursor += b;
        if self.cursor == self.order.len() {
            self.order.clear();
            self.cursor = 0;
            self.epoch += 1;
        }
        Ok(out.loss)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new(serde_json::json!({
            "kind": "student-trainer",
            "size": self.model.size,
            "config": self.model.config,
            "epoch": self.epoch,
            "step": self.step,
            "cursor": self.cursor,
            "order": self.order,
            "rng": self.rng.state(),
            "log": self.log,
        }));
        ckpt.add_params("net", &self.model.params);
        ckpt.add_params("ema", &self.ema.shadow);
        self.adam.save_into(&mut ckpt, "adam");
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ScoreError> {
        if ckpt.meta["kind"] != "student-trainer" {
            return Err(ScoreError::Config(
                "checkpoint does not hold student training state".into(),
            ));
        }
        let get = |k: &str| ckpt.meta[k].clone();
        let config: StudentConfig = serde_json::from_value(get("config"))?;
        let size: [usize; 2] = serde_json::from_value(get("size"))?;
        let mut t = Self::new(config, size)?;
        t.model.params = ckpt.params("net", &t.model.params)?;
        t.ema = EmaState::with_shadow(
            ckpt.params("ema", &t.model.params)?,
            t.model.config.ema_decay,
        )?;
        t.adam = AdamState::load_from(ckpt, "adam", &t.model.params, t.adam.config)?;
        let state: RngState = serde_json::from_value(get("rng"))?;
        t.rng = SeededRng::from_state(state);
        t.epoch = serde_json::from_value(get("epoch"))?;
        t.step = serde_json::from_value(get("step"))?;
        t.cursor = serde_json::from_value(get("cursor"))?;
        t.order = serde_json::from_value(get("order"))?;
        t.log = serde_json::from_value(get("log"))?;
        Ok(t)
    }
}

/// Trains for `config.epochs` epochs. With a checkpoint directory, state is
/// saved every `checkpoint_every` steps and at each epoch end; a non-finite
/// loss saves the last good state there before returning the error. With
/// `resume`, training continues from that state.
pub fn train_student(
    data: &[Tensor],
    config: &StudentConfig,
    checkpoint_dir: Option<&Path>,
    resume: bool,
    on_epoch: &mut dyn FnMut(&StudentTrainer),
) -> Result<StudentTrainer, ScoreError> {
    let Some(first) = data.first() else {
        return Err(ScoreError::Config("no training samples".into()));
    };
    if first.channels != config.channels {
        return Err(ScoreError::Shape(format!(
            "samples have {} channels, config expects {}",
            first.channels, config.channels
        )));
    }
    let size = [first.height, first.width];
    if data.iter().any(|x| x.shape() != first.shape()) {
        return Err(ScoreError::Shape("all samples must share one shape".into()));
    }
    let mut trainer = match checkpoint_dir {
        Some(dir) if resume && dir.join("manifest.json").exists() => {
            let mut t = StudentTrainer::from_checkpoint(&Checkpoint::load(dir)?)?;
            let same = StudentConfig {
                epochs: config.epochs,
                checkpoint_every: config.checkpoint_every,
                ..t.model.config.clone()
            } == *config;
            if !same || t.model.size != size {
                return Err(ScoreError::Config(
                    "checkpoint was written with a different configuration".into(),
                ));
            }
            t.model.config = config.clone();
            t
        }
        _ => StudentTrainer::new(config.clone(), size)?,
    };
    while trainer.epoch < config.epochs {
        let epoch = trainer.epoch;
        if let Err(e) = trainer.train_step(data) {
            if let (Some(dir), ScoreError::Diverged { .. }) = (checkpoint_dir, &e) {
                trainer.to_checkpoint().save(dir)?;
            }
            return Err(e);
        }
        if let Some(dir) = checkpoint_dir {
            let every = config.checkpoint_every;
            if trainer.epoch != epoch || (every > 0 && trainer.step % every == 0) {
                trainer.to_checkpoint().save(dir)?;
            }
        }
        if trainer.epoch != epoch {
            on_epoch(&trainer);
        }
    }
    Ok(trainer)
}

/// Centered moving average with window `w`, used to judge loss curves.
pub fn smoothed(values: &[f64], w: usize) -> Vec<f64> {
    let w = w.max(1);
    values
        .windows(w.min(values.len()).max(1))
        .map(|s| s.iter().sum::<f64>() / s.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::GaussianMixture;

    fn zero_last_layer(m: &mut StudentModel) {
        let last = m.spec.weight_names().pop().unwrap();
        let bias = last.replace(".weight", ".bias");
        for p in m.params.iter_mut() {
            if p.name == last || p.name == bias {
                p.data.fill(0.0);
            }
        }
    }

    fn toy_config() -> StudentConfig {
        StudentConfig {
            channels: 1,
            hidden: 32,
            depth: 3,
            eps_min: 0.5,
            eps_max: 2.0,
            levels: 4,
            lr: 3e-3,
            data_scale: 1.0,
            ..StudentConfig::default()
        }
    }

    #[test]
    fn zero_network_gives_half_mean_square() {
        let mut m =
            StudentModel::new(StudentConfig::default(), [8, 8], &mut SeededRng::new(1)).unwrap();
        zero_last_layer(&mut m);
        let mut rng = SeededRng::new(2);
        let x = Tensor::from_vec(2, 8, 8, rng.normal_vec(128));
        let z = Tensor::from_vec(2, 8, 8, rng.normal_vec(128));
        let out = dsm_loss(
            &m,
            &m.params,
            &[x],
            10,
            std::slice::from_ref(&z),
            LossForm::Standard,
        )
        .unwrap();
        let half_ms = 0.5 * z.data.iter().map(|v| v * v).sum::<f64>() / 128.0;
        assert!((out.loss - half_ms).abs() < 1e-15);
    }

    #[test]
    fn perfect_denoiser_has_zero_standard_loss() {
        let mut rng = SeededRng::new(3);
        let z = Tensor::from_vec(1, 4, 4, rng.normal_vec(16));
        let sigma = 0.3;
        // s = -z / eps, so the network output eps * s is -z.
        let (loss, grad) = dsm_terms(&z.scaled(-1.0), &z, sigma, LossForm::Standard);
        assert_eq!(loss, 0.0);
        assert!(grad.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn literal_form_is_standard_form_with_rescaled_noise() {
        let mut rng = SeededRng::new(4);
        let f = Tensor::from_vec(2, 3, 3, rng.normal_vec(18));
        let z = Tensor::from_vec(2, 3, 3, rng.normal_vec(18));
        for sigma in [0.1, 0.7, 3.0] {
            let (a, _) = dsm_terms(&f, &z, sigma, LossForm::PaperLiteral);
            let (b, _) = dsm_terms(&f, &z.scaled(1.0 / sigma), sigma, LossForm::Standard);
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
        let (a, _) = dsm_terms(&f, &z, 1.0, LossForm::PaperLiteral);
        let (b, _) = dsm_terms(&f, &z, 1.0, LossForm::Standard);
        assert_eq!(a, b);
    }

    #[test]
    fn dsm_gradient_matches_finite_differences() {
        let cfg = StudentConfig {
            hidden: 3,
            depth: 2,
            ..StudentConfig::default()
        };
        let m = StudentModel::new(cfg, [4, 4], &mut SeededRng::new(5)).unwrap();
        let mut rng = SeededRng::new(6);
        let x = vec![Tensor::from_vec(2, 4, 4, rng.normal_vec(32))];
        let z = vec![Tensor::from_vec(2, 4, 4, rng.normal_vec(32))];
        let out = dsm_loss(&m, &m.params, &x, 30, &z, LossForm::Standard).unwrap();
        let flat = m.params.flatten();
        let g = out.grads.flatten();
        let h = 1e-6;
        for i in (0..flat.len()).step_by(7) {
            let mut p = m.params.clone();
            let mut v = flat.clone();
            v[i] += h;
            p.assign_flat(&v);
            let up = dsm_loss(&m, &p, &x, 30, &z, LossForm::Standard)
                .unwrap()
                .loss;
            v[i] -= 2.0 * h;
            p.assign_flat(&v);
            let down = dsm_loss(&m, &p, &x, 30, &z, LossForm::Standard)
                .unwrap()
                .loss;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                "param {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn ema_starts_equal_and_then_lags() {
        let data = vec![Tensor::from_vec(2, 4, 4, vec![0.5; 32])];
        let mut t = StudentTrainer::new(StudentConfig::default(), [4, 4]).unwrap();
        assert!(t.snapshot().ema.bits_equal(&t.model.params));
        t.train_step(&data).unwrap();
        assert!(!t.snapshot().ema.bits_equal(&t.model.params));
    }

    fn train_toy(atoms: &[f64], steps: usize, batch_size: usize, seed: u64) -> StudentModel {
        let data: Vec<Tensor> = atoms
            .iter()
            .cycle()
            .take(atoms.len() * batch_size)
            .map(|&a| Tensor::from_vec(1, 1, 1, vec![a]))
            .collect();
        let cfg = StudentConfig {
            seed,
            batch_size,
            ..toy_config()
        };
        let mut t = StudentTrainer::new(cfg, [1, 1]).unwrap();
        for _ in 0..steps {
            t.train_step(&data).unwrap();
        }
        t.snapshot()
    }

    // Errors are relative to |oracle|, floored at 0.5/eps so zero crossings of
    // the score do not blow up the ratio.
    fn max_rel_error(model: &StudentModel, oracle: &GaussianMixture, points: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for level in 1..=model.schedule.levels() {
            let sigma = model.schedule.sigma(level);
            for &p in points {
                let x = Tensor::from_vec(1, 1, 1, vec![p]);
                let s = model.score_with(&model.ema, &x, sigma).unwrap().data[0];
                let o = oracle.score_vec(&[p], sigma).unwrap()[0];
                worst = worst.max((s - o).abs() / o.abs().max(0.5 / sigma));
            }
        }
        worst
    }

    #[test]
    fn single_atom_student_learns_the_gaussian_score() {
        let x0 = 0.3;
        let m = train_toy(&[x0], 6000, 16, 7);
        let oracle = GaussianMixture::gaussian([1, 1, 1], vec![x0], 0.0).unwrap();
        let mut rng = SeededRng::new(70);
        let points: Vec<f64> = (0..10).map(|_| x0 + 0.8 * rng.standard_normal()).collect();
        let err = max_rel_error(&m, &oracle, &points);
        assert!(err < 0.1, "relative error {err}");
    }

    #[test]
    fn few_atom_student_approaches_the_mixture_score() {
        let atoms = [-0.8, 0.2, 1.0];
        let m = train_toy(&atoms, 24000, 64, 8);
        let oracle = GaussianMixture::new(
            [1, 1, 1],
            atoms
                .iter()
                .map(|&a| crate::score::MixtureComponent {
                    weight: 1.0,
                    mean: vec![a],
                    var: 0.0,
                })
                .collect(),
        )
        .unwrap();
        // Points drawn from the noised data distribution at the middle level.
        let mut rng = SeededRng::new(80);
        let points: Vec<f64> = (0..12)
            .map(|k| atoms[k % 3] + 0.8 * rng.standard_normal())
            .collect();
        let err = max_rel_error(&m, &oracle, &points);
        assert!(err < 0.15, "relative error {err}");
    }

    #[test]
    fn resume_matches_uninterrupted_training() {
        let mut rng = SeededRng::new(9);
        let data: Vec<Tensor> = (0..5)
            .map(|_| Tensor::from_vec(2, 4, 4, rng.normal_vec(32)))
            .collect();
        let cfg = StudentConfig {
            hidden: 4,
            depth: 2,
            epochs: 3,
            batch_size: 2,
            checkpoint_every: 2,
            ..StudentConfig::default()
        };
        let full = train_student(&data, &cfg, None, false, &mut |_| {}).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let one = StudentConfig {
            epochs: 1,
            ..cfg.clone()
        };
        train_student(&data, &one, Some(dir.path()), false, &mut |_| {}).unwrap();
        let resumed = train_student(&data, &cfg, Some(dir.path()), true, &mut |_| {}).unwrap();
        assert_eq!(resumed.log, full.log);
        assert!(resumed.model.params.bits_equal(&full.model.params));
        assert!(resumed.snapshot().ema.bits_equal(&full.snapshot().ema));
        let other = StudentConfig { lr: 0.5, ..cfg };
        assert!(train_student(&data, &other, Some(dir.path()), true, &mut |_| {}).is_err());
    }

    #[test]
    fn model_round_trips_through_a_checkpoint() {
        let m =
            StudentModel::new(StudentConfig::default(), [8, 8], &mut SeededRng::new(1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let digest = m.save(dir.path()).unwrap();
        let (back, d2) = StudentModel::load(dir.path()).unwrap();
        assert_eq!(digest, d2);
        assert!(back.ema.bits_equal(&m.ema));
        let x = Tensor::from_vec(1, 8, 8, vec![0.0; 64]);
        assert!(back.score(&x, 1, 0.1).is_err());
    }

    #[test]
    fn joint_sample_stacks_x05_first() {
        let a = RealArray2D::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        let b = RealArray2D::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        let s = JointSample::new(a, b).unwrap();
        assert_eq!(s.to_tensor().data, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(JointSample::from_tensor(&s.to_tensor()).unwrap(), s);
    }
}
