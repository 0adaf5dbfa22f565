//! Exact discrete Monge problem between uniform measures with equal atom
//! counts, solved as a balanced assignment.

use super::{DiscreteMeasure, OtError, TransportMap};

/// Hungarian algorithm (shortest augmenting paths with potentials).
/// Returns the assignment `row -> col` and the dual potentials `(u, v)` with
/// `cost[i][j] - u[i] - v[j] >= 0`, zero on the assignment.
fn hungarian(cost: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.len();
    // 1-based internals; index 0 is the virtual root.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    (assignment, u[1..].to_vec(), v[1..].to_vec())
}

/// Kuhn's augmenting-path test: can rows `from..n` be matched into the free
/// columns using only allowed edges?
fn has_perfect_matching(allowed: &[Vec<bool>], from: usize, taken: &[bool]) -> bool {
    let n = allowed.len();
    let mut owner: Vec<Option<usize>> = vec![None; n];
    fn augment(
        r: usize,
        allowed: &[Vec<bool>],
        taken: &[bool],
        seen: &mut [bool],
        owner: &mut [Option<usize>],
    ) -> bool {
        for c in 0..allowed.len() {
            if allowed[r][c] && !taken[c] && !seen[c] {
                seen[c] = true;
                if owner[c].is_none_or(|o| augment(o, allowed, taken, seen, owner)) {
                    owner[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    (from..n).all(|r| augment(r, allowed, taken, &mut vec![false; n], &mut owner))
}

/// Minimum-cost assignment over a square table; among optimal assignments
/// the lexicographically smallest is returned. Every optimal assignment uses
/// only edges that are tight for an optimal dual, so the search fixes rows
/// in order to the smallest tight column that still admits a tight perfect
/// matching. The cost is summed in row order.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Result<(Vec<usize>, f64), OtError> {
    let n = cost.len();
    if cost.iter().any(|row| row.len() != n) {
        return Err(OtError::Shape("cost table must be square".into()));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(OtError::Shape("cost table must be finite".into()));
    }
    if n == 0 {
        return Ok((Vec::new(), 0.0));
    }
    let (_, u, v) = hungarian(cost);
    let scale = cost.iter().flatten().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-12 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| (0..n).map(|j| cost[i][j] - u[i] - v[j] <= tol).collect())
        .collect();
    let mut taken = vec![false; n];
    let mut assignment = vec![0; n];
    for i in 0..n {
        let mut fixed = tight.clone();
        let j = (0..n)
            .find(|&j| {
                if !tight[i][j] || taken[j] {
                    return false;
                }
                taken[j] = true;
                fixed[i] = vec![false; n];
                let ok = has_perfect_matching(&fixed, i + 1, &taken);
                taken[j] = false;
                ok
            })
            .expect("an optimal dual always admits a tight perfect matching");
        taken[j] = true;
        assignment[i] = j;
    }
    let total = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok((assignment, total))
}

/// Exact Monge map from `alpha` to `beta` under `cost(a, b)`: each alpha atom
/// is sent to one beta atom and every beta atom receives one alpha atom, which
/// carries any duplicated beta values their full multiplicity.
pub fn exact_monge(
    alpha: &DiscreteMeasure,
    beta: &DiscreteMeasure,
    cost: impl Fn(&[f64], &[f64]) -> f64,
) -> Result<(TransportMap, f64), OtError> {
    if alpha.len() != beta.len() {
        return Err(OtError::UnequalAtoms(alpha.len(), beta.len()));
    }
    let table: Vec<Vec<f64>> = alpha
        .atoms
        .iter()
        .map(|a| beta.atoms.iter().map(|b| cost(a, b)).collect())
        .collect();
    let (assignment, total) = solve_assignment(&table)?;
    Ok((TransportMap { assignment }, total))
}

/// Oracle: enumerates permutations in lexicographic order and keeps the first
/// strict minimum, which is the lexicographically smallest optimum.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>();
    let mut best = (perm.clone(), total(&perm));
    while next_permutation(&mut perm) {
        let c = total(&perm);
        if c < best.1 {
            best = (perm.clone(), c);
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else {
        return false;
    };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).unwrap();
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}
