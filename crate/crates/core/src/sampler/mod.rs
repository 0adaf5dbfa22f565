//! Annealed Langevin sampling over the joint `[x05, x15]` state with a
//! k-space data-consistency term on the 0.5T channel, the single-image
//! baseline chain, and an unconditional prior sampler.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mri::{Encoding, KSpaceData, MriError};
use crate::nn::Tensor;
use crate::numerics::{save_real, write_pgm, NumericsError, RealArray2D, SeededRng};
use crate::score::{NoiseSchedule, ScoreError, ScoreSource};

#[derive(Debug, thiserror::Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite state at level {level}, step {step} ({} levels completed)", diagnostics.len())]
    NonFinite {
        level: usize,
        step: usize,
        diagnostics: Vec<LevelDiagnostics>,
    },
    #[error(transparent)]
    Score(#[from] ScoreError),
    #[error(transparent)]
    Mri(#[from] MriError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    /// Uniform on `[0, 1)` in every channel.
    Uniform,
    /// `A^H y` in the measured channel, uniform elsewhere.
    Adjoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Base step: `eta_i = step * eps_i^2 / eps_L^2`.
    pub step: f64,
    pub steps_per_level: usize,
    /// Measurement noise scale; `None` takes it from the acquisition.
    pub gamma: Option<f64>,
    pub init: InitMode,
    pub final_denoise: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            step: 50.0,
            steps_per_level: 10,
            gamma: None,
            init: InitMode::Uniform,
            final_denoise: false,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(SamplerError::Config(format!(
                "step must be > 0, got {}",
                self.step
            )));
        }
        if self.steps_per_level == 0 {
            return Err(SamplerError::Config("steps_per_level must be >= 1".into()));
        }
        if let Some(g) = self.gamma {
            if !(g >= 0.0 && g.is_finite()) {
                return Err(SamplerError::Config(format!("gamma must be >= 0, got {g}")));
            }
        }
        Ok(())
    }

    /// `eta_i` for level `i`.
    pub fn eta(&self, schedule: &NoiseSchedule, level: usize) -> f64 {
        self.step * (schedule.sigma(level) / schedule.max()).powi(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelDiagnostics {
    pub level: usize,
    pub sigma: f64,
    pub eta: f64,
    /// `|A x - y|` at the end of the level (0 without a data term).
    pub residual: f64,
    /// Root-mean-square score entry at the last inner step.
    pub score_rms: f64,
    /// Variance in the data-term denominator (0 without a data term).
    pub denominator: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    /// The 0.5T channel; absent for single-image chains.
    pub x05: Option<RealArray2D>,
    pub x15: RealArray2D,
    pub diagnostics: Vec<LevelDiagnostics>,
    pub config: SamplerConfig,
}

impl ReconResult {
    /// `x15.npy` (plus `x05.npy`), PGM previews, `diagnostics.csv` and
    /// `recon.json`, which is written last.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), SamplerError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        save_real(dir.join("x15.npy"), &self.x15)?;
        write_pgm(dir.join("x15.pgm"), &self.x15, 0.0, 1.0)?;
        if let Some(x05) = &self.x05 {
            save_real(dir.join("x05.npy"), x05)?;
            write_pgm(dir.join("x05.pgm"), x05, 0.0, 1.0)?;
        }
        let mut csv = fs::File::create(dir.join("diagnostics.csv"))?;
        writeln!(csv, "level,eps,eta,residual,score_rms,denominator")?;
        for d in &self.diagnostics {
            writeln!(
                csv,
                "{},{:e},{:e},{:e},{:e},{:e}",
                d.level, d.sigma, d.eta, d.residual, d.score_rms, d.denominator
            )?;
        }
        let json = serde_json::json!({
            "config": self.config,
            "has_x05": self.x05.is_some(),
            "diagnostics": self.diagnostics,
        });
        let tmp = dir.join("recon.json.partial");
        fs::write(&tmp, serde_json::to_string_pretty(&json)?)?;
        fs::rename(tmp, dir.join("recon.json"))?;
        Ok(())
    }
}

/// Data-consistency term acting on one channel of the state.
struct DataTerm<'a> {
    enc: &'a Encoding,
    y: &'a [crate::numerics::ComplexArray2D],
    channel: usize,
    /// Variance added to `eps_i^2` in the denominator.
    extra_var: f64,
}

fn plane(x: &Tensor, c: usize) -> RealArray2D {
    RealArray2D::from_vec(x.height, x.width, x.plane(c).to_vec()).expect("plane shape")
}

/// The shared annealing loop: levels `L..1`, `T` inner steps each,
/// `x <- x + eta/2 (s - dc) + sqrt(eta) z`.
fn anneal(
    state: &mut Tensor,
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    data: Option<&DataTerm>,
    rng: &mut SeededRng,
) -> Result<Vec<LevelDiagnostics>, SamplerError> {
    let mut diagnostics = Vec::with_capacity(schedule.levels());
    let hw = state.height * state.width;
    for level in (1..=schedule.levels()).rev() {
        let sigma = schedule.sigma(level);
        let eta = cfg.eta(schedule, level);
        let denominator = data.map_or(0.0, |d| d.extra_var + sigma * sigma);
        let mut score_rms = 0.0;
        for step in 0..cfg.steps_per_level {
            let s = score.score(state, level, sigma)?;
            if s.shape() != state.shape() {
                return Err(SamplerError::Shape(format!(
                    "score {:?} vs state {:?}",
                    s.shape(),
                    state.shape()
                )));
            }
            score_rms = (s.data.iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt();
            let mut drift = s;
            if let Some(d) = data {
                let (g, _) = d.enc.residual_gradient(&plane(state, d.channel), d.y)?;
                let off = d.channel * hw;
                for (a, b) in drift.data[off..off + hw].iter_mut().zip(g.data()) {
                    *a -= b / denominator;
                }
            }
            let h = 0.5 * eta;
            let sq = eta.sqrt();
            for (x, v) in state.data.iter_mut().zip(&drift.data) {
                *x += h * v + sq * rng.standard_normal();
            }
            if !state.is_finite() {
                return Err(SamplerError::NonFinite {
                    level,
                    step,
                    diagnostics,
                });
            }
        }
        let residual = match data {
            Some(d) => d.enc.residual_gradient(&plane(state, d.channel), d.y)?.1,
            None => 0.0,
        };
        diagnostics.push(LevelDiagnostics {
            level,
            sigma,
            eta,
            residual,
            score_rms,
            denominator,
        });
    }
    if cfg.final_denoise {
        let sigma = schedule.min();
        let s = score.score(state, 1, sigma)?;
        state.axpy(sigma * sigma, &s);
        if !state.is_finite() {
            return Err(SamplerError::NonFinite {
                level: 1,
                step: cfg.steps_per_level,
                diagnostics,
            });
        }
    }
    Ok(diagnostics)
}

fn initial_state(
    channels: usize,
    shape: (usize, usize),
    adjoint: Option<(usize, RealArray2D)>,
    rng: &mut SeededRng,
) -> Tensor {
    let (h, w) = shape;
    let mut x = Tensor::from_vec(
        channels,
        h,
        w,
        (0..channels * h * w).map(|_| rng.uniform()).collect(),
    );
    if let Some((c, img)) = adjoint {
        x.plane_mut(c).copy_from_slice(img.data());
    }
    x
}

fn check_inputs(y: &KSpaceData, enc: &Encoding) -> Result<(), SamplerError> {
    if y.coils.len() != enc.sense.num_coils() || y.coils.iter().any(|k| k.shape() != enc.shape()) {
        return Err(SamplerError::Shape(
            "k-space does not match the encoding operator".into(),
        ));
    }
    if y.mask != enc.mask {
        return Err(SamplerError::Shape(
            "k-space mask differs from the operator mask".into(),
        ));
    }
    Ok(())
}

/// Conditional sampling of `[x05, x15]` given 0.5T k-space `y`. The data
/// term `A^H(A x05 - y) / (gamma^2 + eps_i^2)` acts on the 0.5T channel only.
pub fn langevin_recon(
    y: &KSpaceData,
    enc: &Encoding,
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<ReconResult, SamplerError> {
    cfg.validate()?;
    check_inputs(y, enc)?;
    if score.channels() != 2 {
        return Err(SamplerError::Shape(format!(
            "joint sampling needs a 2-channel score, got {}",
            score.channels()
        )));
    }
    let gamma = cfg.gamma.unwrap_or(y.gamma);
    let mut rng = SeededRng::new(cfg.seed);
    let adjoint = match cfg.init {
        InitMode::Uniform => None,
        InitMode::Adjoint => Some((0, enc.adjoint(&y.coils)?)),
    };
    let mut state = initial_state(2, enc.shape(), adjoint, &mut rng);
    let data = DataTerm {
        enc,
        y: &y.coils,
        channel: 0,
        extra_var: gamma * gamma,
    };
    let diagnostics = anneal(&mut state, score, schedule, cfg, Some(&data), &mut rng)?;
    Ok(ReconResult {
        x05: Some(plane(&state, 0)),
        x15: plane(&state, 1),
        diagnostics,
        config: SamplerConfig {
            gamma: Some(gamma),
            ..cfg.clone()
        },
    })
}

/// Single-image chain on `x15` that treats the field-strength change as
/// additive noise of scale `gamma_f`: the data term is
/// `A^H(A x15 - y) / (gamma^2 + gamma_f^2 + eps_i^2)`.
pub fn score_mri_baseline(
    y: &KSpaceData,
    enc: &Encoding,
    score: &dyn ScoreSource,
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
    gamma_f: f64,
) -> Result<ReconResult, SamplerError> {
    cfg.validate()?;
    check_inputs(y, enc)?;
    if !(gamma_f >= 0.0 && gamma_f.is_finite()) {
        return Err(SamplerError::Config(format!(
            "gamma_f must be >= 0, got {gamma_f}"
        )));
    }
    if score.channels() != 1 {
        return Err(SamplerError::Shape(format!(
            "baseline needs a 1-channel score, got {}",
            score.channels()
        )));
    }
    let gamma = cfg.gamma.unwrap_or(y.gamma);
    let mut rng = SeededRng::new(cfg.seed);
    let adjoint = match cfg.init {
        InitMode::Uniform => None,
        InitMode::Adjoint => Some((0, enc.adjoint(&y.coils)?)),
    };
    let mut state = initial_state(1, enc.shape(), adjoint, &mut rng);
    let data = DataTerm {
        enc,
        y: &y.coils,
        channel: 0,
        extra_var: gamma * gamma + gamma_f * gamma_f,
    };
    let diagnostics = anneal(&mut state, score, schedule, cfg, Some(&data), &mut rng)?;
    Ok(ReconResult {
        x05: None,
        x15: plane(&state, 0),
        diagnostics,
        config: SamplerConfig {
            gamma: Some(gamma),
            ..cfg.clone()
        },
    })
}

/// Unconditional annealed Langevin sample of `score`'s distribution.
pub fn prior_sample(
    score: &dyn ScoreSource,
    shape: (usize, usize),
    schedule: &NoiseSchedule,
    cfg: &SamplerConfig,
) -> Result<(Tensor, Vec<LevelDiagnostics>), SamplerError> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let mut state = initial_state(score.channels(), shape, None, &mut rng);
    let diagnostics = anneal(&mut state, score, schedule, cfg, None, &mut rng)?;
    Ok((state, diagnostics))
}

/// `A^H y`, the zero-filled reconstruction.
pub fn zero_filled(y: &KSpaceData, enc: &Encoding) -> Result<RealArray2D, SamplerError> {
    check_inputs(y, enc)?;
    Ok(enc.adjoint(&y.coils)?)
}
