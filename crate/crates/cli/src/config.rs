//! Run configuration: one JSON document with a block per stage. Missing
//! keys take their defaults, unknown keys are rejected, and the fully
//! materialized result is snapshotted into the run directory.

use serde::{Deserialize, Serialize};

use fieldshift::numerics::SeededRng;
use fieldshift::ot::{TeacherConfig, VerifyConfig};
use fieldshift::phantom::{DegradationParams, PhantomSpec};
use fieldshift::sampler::SamplerConfig;
use fieldshift::score::StudentConfig;

use crate::CliError;

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub phantom: PhantomSpec,
    pub degradation: DegradationParams,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            phantom: PhantomSpec::default(),
            degradation: DegradationParams::default(),
            n_train: 200,
            n_test: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MriConfig {
    pub coils: usize,
    /// Acceleration factors reconstructed by default.
    pub accelerations: Vec<f64>,
    pub acs: usize,
    /// Standard deviation of the real and imaginary k-space noise.
    pub gamma: f64,
    pub sense_seed: u64,
    pub mask_seed: u64,
    pub noise_seed: u64,
}

impl Default for MriConfig {
    fn default() -> Self {
        Self {
            coils: 4,
            accelerations: vec![1.0, 3.0],
            acs: 8,
            gamma: 0.07,
            sense_seed: 0,
            mask_seed: 0,
            noise_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconConfig {
    pub sampler: SamplerConfig,
    /// Field-strength mismatch modeled as additive noise by the baseline.
    pub gamma_f: f64,
    /// Reconstruct only the first `n_images` test images (all when absent).
    pub n_images: Option<usize>,
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            gamma_f: 0.1,
            n_images: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TeacherEvalConfig {
    /// Full-batch ascent steps of the fresh critic that scores a map.
    pub critic_steps: usize,
}

impl Default for TeacherEvalConfig {
    fn default() -> Self {
        Self { critic_steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Every stage seed is derived from this value.
    pub seed: u64,
    pub data: DataConfig,
    pub mri: MriConfig,
    pub teacher: TeacherConfig,
    pub teacher_eval: TeacherEvalConfig,
    pub student: StudentConfig,
    pub baseline: StudentConfig,
    pub recon: ReconConfig,
    pub verify: VerifyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: CONFIG_SCHEMA,
            seed: 0,
            data: DataConfig::default(),
            mri: MriConfig::default(),
            teacher: TeacherConfig::default(),
            teacher_eval: TeacherEvalConfig::default(),
            student: StudentConfig::default(),
            baseline: StudentConfig {
                channels: 1,
                ..StudentConfig::default()
            },
            recon: ReconConfig::default(),
            verify: VerifyConfig::default(),
        }
    }
}

fn derived_seed(root: u64, key: u64) -> u64 {
    SeededRng::new(root).fork(key).next_u64()
}

impl RunConfig {
    /// Parses a config document. `schema_version` must be present.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Config(format!("malformed JSON: {e}")))?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_SCHEMA as u64 => {}
            Some(v) => return Err(CliError::Config(format!("unsupported schema_version {v}"))),
            None => return Err(CliError::Config("schema_version is required".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Derives stage seeds from `seed`, fixes the channel count of each score
    /// model, and validates every block.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        let s = self.seed;
        self.data.phantom.seed = derived_seed(s, 1);
        self.data.seed = derived_seed(s, 2);
        self.teacher.seed = derived_seed(s, 3);
        self.student.seed = derived_seed(s, 4);
        self.baseline.seed = derived_seed(s, 5);
        self.recon.sampler.seed = derived_seed(s, 6);
        self.verify.seed = derived_seed(s, 7);
        self.mri.sense_seed = derived_seed(s, 8);
        self.mri.mask_seed = derived_seed(s, 9);
        self.mri.noise_seed = derived_seed(s, 10);
        self.student.channels = 2;
        self.baseline.channels = 1;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.phantom.validate()?;
        self.data.degradation.validate()?;
        if self.data.n_train == 0 || self.data.n_test == 0 {
            return Err(CliError::Config(
                "data.n_train and data.n_test must be >= 1".into(),
            ));
        }
        if self.mri.coils == 0 {
            return Err(CliError::Config("mri.coils must be >= 1".into()));
        }
        if self.mri.accelerations.is_empty() || self.mri.accelerations.iter().any(|r| !(*r >= 1.0))
        {
            return Err(CliError::Config(
                "mri.accelerations must be a nonempty list of values >= 1".into(),
            ));
        }
        if !(self.mri.gamma >= 0.0 && self.mri.gamma.is_finite()) {
            return Err(CliError::Config("mri.gamma must be >= 0".into()));
        }
        if !(self.recon.gamma_f >= 0.0 && self.recon.gamma_f.is_finite()) {
            return Err(CliError::Config("recon.gamma_f must be >= 0".into()));
        }
        self.teacher.validate()?;
        self.teacher.critic.image_spec(1, self.data.phantom.size)?;
        self.student.validate()?;
        self.baseline.validate()?;
        self.recon.sampler.validate()?;
        if self.verify.exhaustive && self.verify.max_n_existence > fieldshift::ot::ENUMERATION_LIMIT
        {
            return Err(CliError::Config(format!(
                "exhaustive enumeration is limited to N <= {}, got verify.max_n_existence = {}",
                fieldshift::ot::ENUMERATION_LIMIT,
                self.verify.max_n_existence
            )));
        }
        Ok(())
    }
}
