//! Minimum-cost bipartite matching of ground-truth boxes to predictions.

use thiserror::Error;

use super::giou::giou_with_grad;
use crate::types::BBox;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("cannot match {gt} ground-truth boxes to {pred} predictions")]
    TooManyTargets { gt: usize, pred: usize },
    #[error("non-finite matching cost")]
    NonFinite,
}

/// Cost of pairing a target with a prediction: `‖b − b̂‖₁ + (1 − GIoU)`.
pub fn pair_cost(target: &BBox, pred: &BBox) -> f64 {
    target.l1(pred) + 1.0 - giou_with_grad(target, pred).0
}

/// Hungarian algorithm with row/column potentials for an `n × m` cost
/// matrix with `n ≤ m`. Returns the minimum cost and each row's column.
pub fn solve_assignment(cost: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let n = cost.len();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let m = cost[0].len();
    debug_assert!(n <= m);
    // 1-based, column 0 is the virtual start.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[col0] = true;
            let i0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = col0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    col1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            assignment[owner[j] - 1] = j - 1;
        }
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    (total, assignment)
}

/// Optimal injective assignment `σ` with `σ[i]` the prediction matched to
/// `gt[i]`. Among optimal assignments the lexicographically smallest wins.
pub fn hungarian_match(pred: &[BBox], gt: &[BBox]) -> Result<Vec<usize>, MatchError> {
    if gt.len() > pred.len() {
        return Err(MatchError::TooManyTargets {
            gt: gt.len(),
            pred: pred.len(),
        });
    }
    let cost: Vec<Vec<f64>> = gt
        .iter()
        .map(|g| pred.iter().map(|p| pair_cost(g, p)).collect())
        .collect();
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(MatchError::NonFinite);
    }
    Ok(lexicographic_optimum(&cost))
}

fn lexicographic_optimum(cost: &[Vec<f64>]) -> Vec<usize> {
    let (best, _) = solve_assignment(cost);
    let tol = 1e-9 * best.abs().max(1.0);
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    let mut fixed: Vec<usize> = Vec::with_capacity(n);
    let mut spent = 0.0;
    for row in 0..n {
        let chosen = (0..m)
            .filter(|j| !fixed.contains(j))
            .find(|&j| {
                let free: Vec<usize> = (0..m).filter(|c| *c != j && !fixed.contains(c)).collect();
                let rest: Vec<Vec<f64>> = cost[row + 1..]
                    .iter()
                    .map(|r| free.iter().map(|&c| r[c]).collect())
                    .collect();
                let (rest_cost, _) = solve_assignment(&rest);
                spent + cost[row][j] + rest_cost <= best + tol
            })
            .expect("an optimal completion always exists");
        spent += cost[row][chosen];
        fixed.push(chosen);
    }
    fixed
}

/// Total pair cost of an assignment.
pub fn assignment_cost(pred: &[BBox], gt: &[BBox], sigma: &[usize]) -> f64 {
    gt.iter().zip(sigma).map(|(g, &j)| pair_cost(g, &pred[j])).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(cx: f64, cy: f64, w: f64, h: f64) -> BBox {
        BBox::new(cx, cy, w, h).unwrap()
    }

    #[test]
    fn single_pair() {
        assert_eq!(hungarian_match(&[b(0.5, 0.5, 0.2, 0.2)], &[b(0.4, 0.4, 0.1, 0.1)]).unwrap(), vec![0]);
    }

    #[test]
    fn picks_the_nearer_prediction() {
        let pred = [b(0.8, 0.8, 0.2, 0.2), b(0.2, 0.2, 0.2, 0.2)];
        let gt = [b(0.21, 0.2, 0.2, 0.2), b(0.79, 0.8, 0.2, 0.2)];
        assert_eq!(hungarian_match(&pred, &gt).unwrap(), vec![1, 0]);
    }

    #[test]
    fn ties_resolve_to_identity() {
        let p = b(0.3, 0.3, 0.2, 0.2);
        let g = b(0.6, 0.5, 0.3, 0.2);
        assert_eq!(hungarian_match(&[p, p], &[g, g]).unwrap(), vec![0, 1]);
        assert_eq!(hungarian_match(&[p, p, p], &[g, g]).unwrap(), vec![0, 1]);
    }

    #[test]
    fn too_many_targets() {
        let p = b(0.3, 0.3, 0.2, 0.2);
        assert_eq!(
            hungarian_match(&[p], &[p, p]).unwrap_err(),
            MatchError::TooManyTargets { gt: 2, pred: 1 }
        );
    }

    #[test]
    fn empty_targets() {
        assert!(hungarian_match(&[b(0.3, 0.3, 0.2, 0.2)], &[]).unwrap().is_empty());
    }

    #[test]
    fn solver_on_known_matrix() {
        let cost = vec![vec![4.0, 1.0, 3.0], vec![2.0, 0.0, 5.0], vec![3.0, 2.0, 2.0]];
        let (total, asg) = solve_assignment(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(asg, vec![1, 0, 2]);
    }
}
