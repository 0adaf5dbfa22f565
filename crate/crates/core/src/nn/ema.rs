use super::{NnError, ParamSet};

/// Exponential moving average of parameters:
/// `shadow <- decay * shadow + (1 - decay) * params`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState {
    pub shadow: ParamSet,
    decay: f64,
}

impl EmaState {
    /// Shadow starts equal to `params`.
    pub fn new(params: &ParamSet, decay: f64) -> Result<Self, NnError> {
        Self::with_shadow(params.clone(), decay)
    }

    pub fn with_shadow(shadow: ParamSet, decay: f64) -> Result<Self, NnError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(NnError::Config(format!(
                "EMA decay must lie in (0, 1), got {decay}"
            )));
        }
        Ok(Self { shadow, decay })
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn update(&mut self, params: &ParamSet) -> Result<(), NnError> {
        self.shadow.check_aligned(params)?;
        let d = self.decay;
        for (s, p) in self.shadow.iter_mut().zip(params.iter()) {
            for (sv, pv) in s.data.iter_mut().zip(&p.data) {
                *sv = d * *sv + (1.0 - d) * pv;
            }
        }
        Ok(())
    }
}
