//! Small discrete instances for the existence / uniqueness checks.

use serde::{Deserialize, Serialize};

use super::PhantomError;
use crate::numerics::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremInstance {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    /// `beta[f_table[i]] = f*(alpha[i])`; a permutation of `0..n`.
    pub f_table: Vec<usize>,
    /// `cost[i][j] = |alpha[i] - beta[j]|`.
    pub cost: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoremConfig {
    pub n: usize,
    pub dim: usize,
    pub with_duplicates: bool,
    /// Scale of the random displacement `f*(x) - x`; 0 makes `f*` the identity.
    pub perturbation: f64,
    pub shuffle_beta: bool,
    pub max_attempts: usize,
}

impl TheoremConfig {
    pub fn new(n: usize, with_duplicates: bool) -> Self {
        Self {
            n,
            dim: 4,
            with_duplicates,
            perturbation: 0.1,
            shuffle_beta: true,
            max_attempts: 1000,
        }
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn make_theorem_instance(
    n: usize,
    with_duplicates: bool,
    rng: &mut SeededRng,
) -> Result<TheoremInstance, PhantomError> {
    make_theorem_instance_with(&TheoremConfig::new(n, with_duplicates), rng)
}

/// Draws instances until one satisfies the strict cost-separation condition
/// checked by [`check_assumption2`]. With duplicates, one pair of nearby
/// `alpha` atoms shares a single image under `f*`.
pub fn make_theorem_instance_with(
    cfg: &TheoremConfig,
    rng: &mut SeededRng,
) -> Result<TheoremInstance, PhantomError> {
    if cfg.n < 2 || cfg.dim == 0 {
        return Err(PhantomError::Invalid(
            "need n >= 2 atoms of dimension >= 1".into(),
        ));
    }
    for _ in 0..cfg.max_attempts {
        let inst = draw(cfg, rng);
        let distinct = (0..cfg.n).all(|i| (0..i).all(|j| inst.alpha[i] != inst.alpha[j]));
        if distinct && check_assumption2(&inst).is_ok() {
            return Ok(inst);
        }
    }
    Err(PhantomError::BudgetExceeded(cfg.max_attempts))
}

fn draw(cfg: &TheoremConfig, rng: &mut SeededRng) -> TheoremInstance {
    let n = cfg.n;
    let mut alpha: Vec<Vec<f64>> = (0..n).map(|_| rng.normal_vec(cfg.dim)).collect();
    let mut images: Vec<Vec<f64>> = alpha
        .iter()
        .map(|a| {
            a.iter()
                .map(|v| v + cfg.perturbation * rng.standard_normal())
                .collect()
        })
        .collect();
    let mut dup = None;
    if cfg.with_duplicates {
        let i = rng.below(n);
        let k = (i + 1 + rng.below(n - 1)) % n;
        alpha[k] = alpha[i]
            .iter()
            .map(|v| v + 0.1 * rng.standard_normal())
            .collect();
        let shared: Vec<f64> = alpha[i]
            .iter()
            .zip(&alpha[k])
            .map(|(a, b)| 0.5 * (a + b) + cfg.perturbation * rng.standard_normal())
            .collect();
        images[i] = shared.clone();
        images[k] = shared;
        dup = Some((i.min(k), i.max(k)));
    }
    let order = if cfg.shuffle_beta {
        rng.permutation(n)
    } else {
        (0..n).collect()
    };
    // beta position p holds the image of alpha atom order[p].
    let beta: Vec<Vec<f64>> = order.iter().map(|&i| images[i].clone()).collect();
    let mut f_table = vec![0; n];
    for (p, &i) in order.iter().enumerate() {
        f_table[i] = p;
    }
    if let Some((lo, hi)) = dup {
        // Equal-cost optima differ only in which copy each atom takes; the
        // lexicographically smallest assignment gives the lower index the
        // lower position.
        if f_table[lo] > f_table[hi] {
            f_table.swap(lo, hi);
        }
    }
    let cost = alpha
        .iter()
        .map(|a| beta.iter().map(|b| euclidean(a, b)).collect())
        .collect();
    TheoremInstance {
        alpha,
        beta,
        f_table,
        cost,
    }
}

/// Checks `c(f(x_i), x_i) < c(b, x_i)` for every atom `i` and every `beta`
/// value `b` different from `f(x_i)`. Copies of `f(x_i)` itself tie by
/// definition and are skipped. Returns the first violating `(i, j)`.
pub fn check_assumption2(inst: &TheoremInstance) -> Result<(), (usize, usize)> {
    for (i, row) in inst.cost.iter().enumerate() {
        let own = &inst.beta[inst.f_table[i]];
        for (j, b) in inst.beta.iter().enumerate() {
            if b != own && row[inst.f_table[i]] >= row[j] {
                return Err((i, j));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distinct_values(v: &[Vec<f64>]) -> usize {
        let mut seen: Vec<&Vec<f64>> = Vec::new();
        for x in v {
            if !seen.contains(&x) {
                seen.push(x);
            }
        }
        seen.len()
    }

    #[test]
    fn duplicates_collapse_beta() {
        let mut rng = SeededRng::new(1);
        for _ in 0..20 {
            let inst = make_theorem_instance(3, true, &mut rng).unwrap();
            assert!(distinct_values(&inst.beta) <= 2);
            assert_eq!(distinct_values(&inst.alpha), 3);
        }
    }

    #[test]
    fn emitted_instances_pass_exhaustive_check() {
        let mut rng = SeededRng::new(2);
        for n in 2..=8 {
            for dup in [false, true] {
                let inst = make_theorem_instance(n, dup, &mut rng).unwrap();
                // independent re-check straight from the atoms
                for i in 0..n {
                    let fi = &inst.beta[inst.f_table[i]];
                    let own = euclidean(fi, &inst.alpha[i]);
                    for j in 0..n {
                        if inst.beta[j] != *fi {
                            assert!(own < euclidean(&inst.beta[j], &inst.alpha[i]));
                        }
                    }
                }
                let mut sorted = inst.f_table.clone();
                sorted.sort();
                assert_eq!(sorted, (0..n).collect::<Vec<_>>());
            }
        }
    }

    #[test]
    fn identity_map_reproduces_alpha() {
        let cfg = TheoremConfig {
            perturbation: 0.0,
            ..TheoremConfig::new(5, false)
        };
        let inst = make_theorem_instance_with(&cfg, &mut SeededRng::new(3)).unwrap();
        let mut a = inst.alpha.clone();
        let mut b = inst.beta.clone();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, b);
        for i in 0..5 {
            assert_eq!(inst.beta[inst.f_table[i]], inst.alpha[i]);
        }
    }

    #[test]
    fn checker_flags_a_swapped_table() {
        let cfg = TheoremConfig {
            shuffle_beta: false,
            ..TheoremConfig::new(4, false)
        };
        let mut inst = make_theorem_instance_with(&cfg, &mut SeededRng::new(4)).unwrap();
        inst.f_table.swap(0, 1);
        assert!(check_assumption2(&inst).is_err());
    }

    #[test]
    fn rejects_single_atom() {
        assert!(make_theorem_instance(1, false, &mut SeededRng::new(0)).is_err());
    }
}
