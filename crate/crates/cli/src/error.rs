use fieldshift::eval::EvalError;
use fieldshift::mri::MriError;
use fieldshift::nn::NnError;
use fieldshift::numerics::NumericsError;
use fieldshift::ot::OtError;
use fieldshift::phantom::PhantomError;
use fieldshift::sampler::SamplerError;
use fieldshift::score::ScoreError;

/// Stage failure, classified by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Missing(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Missing(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Verification(_) => 5,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<NumericsError> for CliError {
    fn from(e: NumericsError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite(_) => CliError::Numerical(e.to_string()),
            NnError::Config(_) | NnError::Spec(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<PhantomError> for CliError {
    fn from(e: PhantomError) -> Self {
        match e {
            PhantomError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<MriError> for CliError {
    fn from(e: MriError) -> Self {
        match e {
            MriError::Invalid(_) | MriError::InfeasibleMask(_) | MriError::Shape(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<OtError> for CliError {
    fn from(e: OtError) -> Self {
        match e {
            OtError::Diverged { .. } => CliError::Numerical(e.to_string()),
            OtError::Config(_) | OtError::EnumerationBound(..) | OtError::Shape(_) => {
                CliError::Config(e.to_string())
            }
            OtError::Nn(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ScoreError> for CliError {
    fn from(e: ScoreError) -> Self {
        match e {
            ScoreError::Diverged { .. } => CliError::Numerical(e.to_string()),
            ScoreError::Config(_) | ScoreError::Schedule(_) | ScoreError::Shape(_) => {
                CliError::Config(e.to_string())
            }
            ScoreError::Nn(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::NonFinite { .. } => CliError::Numerical(e.to_string()),
            SamplerError::Config(_) | SamplerError::Shape(_) => CliError::Config(e.to_string()),
            SamplerError::Score(inner) => inner.into(),
            SamplerError::Mri(inner) => inner.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Shape(_) | EvalError::Invalid(_) => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
