//! Discrete optimal transport: exact Monge solver, pushforward existence
//! checks, a Lipschitz critic for the Kantorovich dual, and the adversarial
//! teacher that learns the degradation map from unpaired sets.

mod assignment;
mod critic;
mod pushforward;
mod teacher;
mod verify;

pub use assignment::{brute_force_assignment, exact_monge, solve_assignment};
pub use critic::{kantorovich_dual_gap, Critic, CriticConfig};
pub use pushforward::{
    enumerate_pushforwards, pushforward_exists, Enumeration, PushforwardCheck, ENUMERATION_LIMIT,
};
pub use teacher::{
    gen_pairs, train_teacher, PairsManifest, TeacherConfig, TeacherModel, TeacherObjective,
    TrainLog,
};
pub use verify::{verify_theorem, InstanceReport, TheoremReport, VerifyConfig};

use serde::{Deserialize, Serialize};

use crate::nn::NnError;
use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum OtError {
    #[error("atom counts differ: {0} vs {1}")]
    UnequalAtoms(usize, usize),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("exhaustive enumeration needs N <= {1}, got {0}")]
    EnumerationBound(usize, usize),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, step {step}: {detail}")]
    Diverged {
        epoch: usize,
        step: usize,
        detail: String,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniform measure over `atoms` (weights `1/N` implied).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub atoms: Vec<Vec<f64>>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Vec<f64>>) -> Result<Self, OtError> {
        if atoms.is_empty() {
            return Err(OtError::Precondition(
                "a measure needs at least one atom".into(),
            ));
        }
        let d = atoms[0].len();
        if atoms.iter().any(|a| a.len() != d) {
            return Err(OtError::Shape("atoms must share one dimension".into()));
        }
        if atoms.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OtError::Precondition("atoms must be finite".into()));
        }
        Ok(Self { atoms })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }
}

/// `assignment[i]` is the target atom index of source atom `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportMap {
    pub assignment: Vec<usize>,
}
