//! Computational check of the existence / uniqueness statements on random
//! discrete instances.

use serde::{Deserialize, Serialize};

use super::{
    brute_force_assignment, exact_monge, pushforward_exists, DiscreteMeasure, OtError,
    PushforwardCheck, ENUMERATION_LIMIT,
};
use crate::numerics::SeededRng;
use crate::phantom::{check_assumption2, euclidean, make_theorem_instance, TheoremInstance};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    /// Duplicate-atom instances for the non-existence check.
    pub duplicate_instances: usize,
    /// Distinct-atom controls for which a map must exist.
    pub distinct_instances: usize,
    /// Cost-separated instances for the uniqueness check.
    pub uniqueness_instances: usize,
    pub max_n_existence: usize,
    pub max_n_uniqueness: usize,
    /// Cross-check existence verdicts by enumerating all `N^N` maps.
    pub exhaustive: bool,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            duplicate_instances: 50,
            distinct_instances: 10,
            uniqueness_instances: 100,
            max_n_existence: 6,
            max_n_uniqueness: 8,
            exhaustive: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceReport {
    pub check: String,
    pub n: usize,
    pub with_duplicates: bool,
    pub instance: TheoremInstance,
    pub pushforward: Option<PushforwardCheck>,
    pub monge_assignment: Option<Vec<usize>>,
    pub monge_cost: Option<f64>,
    pub brute_force_assignment: Option<Vec<usize>>,
    pub brute_force_cost: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremReport {
    pub config: VerifyConfig,
    pub instances: Vec<InstanceReport>,
    pub existence_passed: usize,
    pub existence_total: usize,
    pub uniqueness_passed: usize,
    pub uniqueness_total: usize,
}

impl TheoremReport {
    pub fn all_passed(&self) -> bool {
        self.existence_passed == self.existence_total
            && self.uniqueness_passed == self.uniqueness_total
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "existence: {}/{} instances passed ({} with duplicated beta atoms, {} distinct controls)\n",
            self.existence_passed, self.existence_total, self.config.duplicate_instances, self.config.distinct_instances
        ));
        s.push_str(&format!(
            "uniqueness: {}/{} instances passed (exact Monge map equals f*, cost equals brute force)\n",
            self.uniqueness_passed, self.uniqueness_total
        ));
        for r in self.instances.iter().filter(|r| !r.passed) {
            s.push_str(&format!("FAILED {} instance, n = {}\n", r.check, r.n));
        }
        s.push_str(if self.all_passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        s
    }
}

fn existence_report(
    inst: TheoremInstance,
    with_duplicates: bool,
    exhaustive: bool,
) -> Result<InstanceReport, OtError> {
    let alpha = DiscreteMeasure::new(inst.alpha.clone())?;
    let beta = DiscreteMeasure::new(inst.beta.clone())?;
    let mut check = pushforward_exists(&beta, &alpha)?;
    if !exhaustive {
        check.enumeration = None;
    }
    let expected = !with_duplicates;
    let enumeration_ok = match &check.enumeration {
        Some(e) => (e.witnesses > 0) == expected,
        None => !exhaustive,
    };
    let passed = check.exists == expected && check.witness.is_some() == expected && enumeration_ok;
    Ok(InstanceReport {
        check: "existence".into(),
        n: inst.alpha.len(),
        with_duplicates,
        instance: inst,
        pushforward: Some(check),
        monge_assignment: None,
        monge_cost: None,
        brute_force_assignment: None,
        brute_force_cost: None,
        passed,
    })
}

fn uniqueness_report(
    inst: TheoremInstance,
    with_duplicates: bool,
) -> Result<InstanceReport, OtError> {
    let alpha = DiscreteMeasure::new(inst.alpha.clone())?;
    let beta = DiscreteMeasure::new(inst.beta.clone())?;
    let (map, cost) = exact_monge(&alpha, &beta, euclidean)?;
    let (bf_map, bf_cost) = brute_force_assignment(&inst.cost);
    let passed =
        check_assumption2(&inst).is_ok() && map.assignment == inst.f_table && cost == bf_cost;
    Ok(InstanceReport {
        check: "uniqueness".into(),
        n: inst.alpha.len(),
        with_duplicates,
        instance: inst,
        pushforward: None,
        monge_assignment: Some(map.assignment),
        monge_cost: Some(cost),
        brute_force_assignment: Some(bf_map),
        brute_force_cost: Some(bf_cost),
        passed,
    })
}

pub fn verify_theorem(config: &VerifyConfig) -> Result<TheoremReport, OtError> {
    if config.exhaustive && config.max_n_existence > ENUMERATION_LIMIT {
        return Err(OtError::EnumerationBound(
            config.max_n_existence,
            ENUMERATION_LIMIT,
        ));
    }
    if config.max_n_existence < 3 || config.max_n_uniqueness < 2 {
        return Err(OtError::Config(
            "existence needs N >= 3, uniqueness N >= 2".into(),
        ));
    }
    let root = SeededRng::new(config.seed);
    let mut instances = Vec::new();
    let mut rng = root.fork(1);
    let span = |rng: &mut SeededRng, lo: usize, hi: usize| lo + rng.below(hi - lo + 1);
    for _ in 0..config.duplicate_instances {
        let n = span(&mut rng, 3, config.max_n_existence);
        let inst = make_theorem_instance(n, true, &mut rng)
            .map_err(|e| OtError::Precondition(e.to_string()))?;
        instances.push(existence_report(inst, true, config.exhaustive)?);
    }
    for _ in 0..config.distinct_instances {
        let n = span(&mut rng, 2, config.max_n_existence);
        let inst = make_theorem_instance(n, false, &mut rng)
            .map_err(|e| OtError::Precondition(e.to_string()))?;
        instances.push(existence_report(inst, false, config.exhaustive)?);
    }
    let mut rng = root.fork(2);
    for k in 0..config.uniqueness_instances {
        let n = span(&mut rng, 2, config.max_n_uniqueness);
        let dup = k % 2 == 1;
        let inst = make_theorem_instance(n, dup, &mut rng)
            .map_err(|e| OtError::Precondition(e.to_string()))?;
        instances.push(uniqueness_report(inst, dup)?);
    }
    let count = |kind: &str, passed: bool| {
        instances
            .iter()
            .filter(|r| r.check == kind && (!passed || r.passed))
            .count()
    };
    Ok(TheoremReport {
        config: config.clone(),
        existence_passed: count("existence", true),
        existence_total: count("existence", false),
        uniqueness_passed: count("uniqueness", true),
        uniqueness_total: count("uniqueness", false),
        instances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configuration_passes() {
        let report = verify_theorem(&VerifyConfig::default()).unwrap();
        assert!(report.all_passed(), "{}", report.summary());
        assert_eq!(report.existence_total, 60);
        assert_eq!(report.uniqueness_total, 100);
        for r in &report.instances {
            if let Some(p) = &r.pushforward {
                assert_eq!(p.exists, p.witness.is_some());
            }
        }
    }

    #[test]
    fn exhaustive_mode_refuses_large_n() {
        let cfg = VerifyConfig {
            max_n_existence: 10,
            ..VerifyConfig::default()
        };
        assert!(matches!(
            verify_theorem(&cfg),
            Err(OtError::EnumerationBound(10, 6))
        ));
    }
}
