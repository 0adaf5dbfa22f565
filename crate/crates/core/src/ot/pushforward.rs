//! Does any function of the beta values push beta onto alpha?

use serde::{Deserialize, Serialize};

use super::{DiscreteMeasure, OtError, TransportMap};

/// Largest atom count accepted by the exhaustive enumeration (`N^N` maps).
pub const ENUMERATION_LIMIT: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Enumeration {
    /// All index maps `beta -> alpha` visited (`N^N`).
    pub maps_checked: u64,
    /// Maps that are constant on equal beta values, i.e. functions of the value.
    pub value_consistent: u64,
    /// Value-consistent maps whose pushforward is exactly alpha.
    pub witnesses: u64,
    pub first_witness: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushforwardCheck {
    /// Analytic rule: a map exists iff the beta atoms are pairwise distinct.
    pub exists: bool,
    /// `assignment[j]` is the alpha atom receiving beta atom `j`.
    pub witness: Option<TransportMap>,
    /// Exhaustive cross-check, run when `N <= ENUMERATION_LIMIT`.
    pub enumeration: Option<Enumeration>,
}

impl PushforwardCheck {
    /// True when the enumeration (if run) reaches the analytic verdict.
    pub fn consistent(&self) -> bool {
        self.enumeration
            .as_ref()
            .is_none_or(|e| (e.witnesses > 0) == self.exists)
    }
}

fn all_distinct(atoms: &[Vec<f64>]) -> bool {
    (0..atoms.len()).all(|i| (0..i).all(|j| atoms[i] != atoms[j]))
}

/// Pushforward of uniform `beta` under `T` equals uniform `alpha`. With
/// distinct alpha atoms, `T` is a bijection between atom indices and equal
/// beta values must map alike, so a map exists exactly when beta has no
/// repeated atom.
pub fn pushforward_exists(
    beta: &DiscreteMeasure,
    alpha: &DiscreteMeasure,
) -> Result<PushforwardCheck, OtError> {
    let n = alpha.len();
    if beta.len() != n {
        return Err(OtError::UnequalAtoms(beta.len(), n));
    }
    if !all_distinct(&alpha.atoms) {
        return Err(OtError::Precondition(
            "alpha atoms must be pairwise distinct".into(),
        ));
    }
    let exists = all_distinct(&beta.atoms);
    let witness = exists.then(|| TransportMap {
        assignment: (0..n).collect(),
    });
    let enumeration = if n <= ENUMERATION_LIMIT {
        Some(enumerate_pushforwards(beta, alpha)?)
    } else {
        None
    };
    Ok(PushforwardCheck {
        exists,
        witness,
        enumeration,
    })
}

/// Visits every index map `m: [N] -> [N]` and tests the two conditions
/// directly on the atom values: `m` must be a function of the beta value and
/// the multiset `{alpha[m(j)]}` must equal the multiset of alpha atoms.
pub fn enumerate_pushforwards(
    beta: &DiscreteMeasure,
    alpha: &DiscreteMeasure,
) -> Result<Enumeration, OtError> {
    let n = alpha.len();
    if beta.len() != n {
        return Err(OtError::UnequalAtoms(beta.len(), n));
    }
    if n > ENUMERATION_LIMIT {
        return Err(OtError::EnumerationBound(n, ENUMERATION_LIMIT));
    }
    let mut out = Enumeration {
        maps_checked: 0,
        value_consistent: 0,
        witnesses: 0,
        first_witness: None,
    };
    let mut m = vec![0usize; n];
    loop {
        out.maps_checked += 1;
        let consistent =
            (0..n).all(|i| (0..n).all(|j| beta.atoms[i] != beta.atoms[j] || m[i] == m[j]));
        if consistent {
            out.value_consistent += 1;
            if same_multiset(
                m.iter().map(|&k| &alpha.atoms[k]).collect(),
                alpha.atoms.iter().collect(),
            ) {
                out.witnesses += 1;
                if out.first_witness.is_none() {
                    out.first_witness = Some(m.clone());
                }
            }
        }
        // odometer increment
        let mut k = 0;
        while k < n && m[k] == n - 1 {
            m[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
        m[k] += 1;
    }
    Ok(out)
}

fn same_multiset(mut a: Vec<&Vec<f64>>, mut b: Vec<&Vec<f64>>) -> bool {
    let cmp = |x: &&Vec<f64>, y: &&Vec<f64>| x.partial_cmp(y).expect("finite atoms");
    a.sort_by(cmp);
    b.sort_by(cmp);
    a == b
}

#[cfg(test)]
mod tests {
    use super::*;

    fn measure(v: &[f64]) -> DiscreteMeasure {
        DiscreteMeasure::new(v.iter().map(|&x| vec![x]).collect()).unwrap()
    }

    #[test]
    fn duplicate_beta_has_no_pushforward() {
        let check =
            pushforward_exists(&measure(&[0.5, 0.5, 2.0]), &measure(&[0.0, 1.0, 2.0])).unwrap();
        assert!(!check.exists);
        assert!(check.witness.is_none());
        let e = check.enumeration.unwrap();
        assert_eq!(e.maps_checked, 27);
        // maps constant on the two copies: 3 choices for the pair x 3 for the rest
        assert_eq!(e.value_consistent, 9);
        assert_eq!(e.witnesses, 0);
    }

    #[test]
    fn distinct_beta_has_bijection_witness() {
        let check =
            pushforward_exists(&measure(&[3.0, 4.0, 5.0]), &measure(&[0.0, 1.0, 2.0])).unwrap();
        assert!(check.exists && check.consistent());
        let mut w = check.witness.unwrap().assignment;
        w.sort();
        assert_eq!(w, vec![0, 1, 2]);
        assert_eq!(check.enumeration.unwrap().witnesses, 6);
    }

    #[test]
    fn single_atom() {
        let check = pushforward_exists(&measure(&[7.0]), &measure(&[1.0])).unwrap();
        assert!(check.exists);
        assert_eq!(check.enumeration.unwrap().witnesses, 1);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(
            pushforward_exists(&measure(&[0.0, 1.0]), &measure(&[1.0, 1.0])),
            Err(OtError::Precondition(_))
        ));
        let big = measure(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(matches!(
            enumerate_pushforwards(&big, &big),
            Err(OtError::EnumerationBound(7, 6))
        ));
        assert!(pushforward_exists(&big, &big)
            .unwrap()
            .enumeration
            .is_none());
    }
}
