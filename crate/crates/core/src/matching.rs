//! Bipartite matching between predicted and ground-truth grasp sets.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hand::{HandModel, HandPose};
use crate::losses::param_components;

/// Weights of the translation, joint and rotation terms of the matching cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostWeights {
    pub omega1: f64,
    pub omega2: f64,
    pub omega3: f64,
    /// Smooth-L1 transition width in normalized units (shared with the losses).
    pub smooth_l1_beta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            omega1: 2.0,
            omega2: 1.0,
            omega3: 2.0,
            smooth_l1_beta: 0.1,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("omega1", self.omega1),
            ("omega2", self.omega2),
            ("omega3", self.omega3),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::parse(
                    name,
                    format!("weight must be finite and ≥ 0, got {v}"),
                ));
            }
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return Err(Error::parse("smooth_l1_beta", "must be > 0"));
        }
        Ok(())
    }
}

/// `C[i][j] = ω1·L_trans + ω2·L_joints + ω3·L_rotation` between prediction
/// `i` and ground truth `j`.
pub fn cost_matrix(
    model: &HandModel,
    preds: &[HandPose],
    gts: &[HandPose],
    w: &CostWeights,
) -> Result<DMatrix<f64>> {
    if preds.is_empty() || gts.is_empty() {
        return Err(Error::InvalidInput(
            "cost matrix needs nonempty prediction and ground-truth sets".into(),
        ));
    }
    w.validate()?;
    for g in preds.iter().chain(gts) {
        g.check_against(model)?;
    }
    Ok(DMatrix::from_fn(preds.len(), gts.len(), |i, j| {
        let (t, q, r) = param_components(model, &preds[i], &gts[j], w.smooth_l1_beta);
        w.omega1 * t + w.omega2 * q + w.omega3 * r
    }))
}

/// An optimal injective assignment of `K = min(N, M)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `(prediction, ground truth)` pairs, ascending by prediction.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_ground_truths: Vec<usize>,
    pub total_cost: f64,
}

impl Assignment {
    pub fn prediction_count(&self) -> usize {
        self.pairs.len() + self.unmatched_predictions.len()
    }

    pub fn ground_truth_count(&self) -> usize {
        self.pairs.len() + self.unmatched_ground_truths.len()
    }

    /// Matched prediction per ground truth.
    pub fn prediction_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.ground_truth_count()];
        for &(p, g) in &self.pairs {
            out[g] = Some(p);
        }
        out
    }

    /// Matched ground truth per prediction.
    pub fn ground_truth_of(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.prediction_count()];
        for &(p, g) in &self.pairs {
            out[p] = Some(g);
        }
        out
    }
}

/// Minimum-cost square assignment via shortest augmenting paths with
/// potentials. Returns the column of every row and the dual potentials.
fn solve_square(c: &DMatrix<f64>) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = c.nrows();
    // 1-based arrays with a virtual column 0
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
                    let cur = c[(i0 - 1, j - 1)] - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=n {
        row_to_col[p[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Kuhn's augmenting-path test: can every row in `rows` be matched to a
/// distinct free column using only allowed edges?
fn has_perfect_matching(allowed: &[Vec<bool>], rows: &[usize], free_cols: &[bool]) -> bool {
    let n = allowed.len();
    let mut match_col: Vec<Option<usize>> = vec![None; n];
    fn augment(
        r: usize,
        allowed: &[Vec<bool>],
        free_cols: &[bool],
        seen: &mut [bool],
        match_col: &mut [Option<usize>],
    ) -> bool {
        for c in 0..allowed[r].len() {
            if allowed[r][c] && free_cols[c] && !seen[c] {
                seen[c] = true;
                if match_col[c].is_none_or(|r2| augment(r2, allowed, free_cols, seen, match_col)) {
                    match_col[c] = Some(r);
                    return true;
                }
            }
        }
        false
    }
    rows.iter().all(|&r| {
        let mut seen = vec![false; n];
        augment(r, allowed, free_cols, &mut seen, &mut match_col)
    })
}

/// Optimal assignment between `N` predictions (rows) and `M` ground truths
/// (columns); `K = min(N, M)` pairs, the rest left unmatched.
///
/// Among optimal assignments the lexicographically smallest one (by the
/// column matched to row 0, then row 1, … with "unmatched" after every real
/// column) is returned, so the result is deterministic under ties.
pub fn hungarian(cost: &DMatrix<f64>) -> Result<Assignment> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::InvalidInput("empty cost matrix".into()));
    }
    if let Some(bad) = cost.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "cost matrix has a non-finite entry {bad}"
        )));
    }
    let n = rows.max(cols);
    let max_abs = cost.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    // padded pairs all carry the same cost, so they never change which real
    // pairs are optimal
    let sentinel = max_abs + 1.0;
    let square = DMatrix::from_fn(n, n, |i, j| {
        if i < rows && j < cols {
            cost[(i, j)]
        } else {
            sentinel
        }
    });
    let (_, u, v) = solve_square(&square);
    let tol = 1e-9 * (1.0 + max_abs);
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| square[(i, j)] - u[i] - v[j] <= tol)
                .collect()
        })
        .collect();

    let mut free = vec![true; n];
    let mut row_to_col = vec![usize::MAX; n];
    for i in 0..n {
        let rest: Vec<usize> = (i + 1..n).collect();
        let chosen = (0..n).find(|&j| {
            if !tight[i][j] || !free[j] {
                return false;
            }
            free[j] = false;
            let ok = has_perfect_matching(&tight, &rest, &free);
            free[j] = true;
            ok
        });
        let j = chosen.expect("optimal duals admit a tight perfect matching");
        free[j] = false;
        row_to_col[i] = j;
    }

    let mut pairs = Vec::new();
    let mut unmatched_predictions = Vec::new();
    let mut gt_used = vec![false; cols];
    let mut total_cost = 0.0;
    for (i, &j) in row_to_col.iter().enumerate().take(rows) {
        if j < cols {
            pairs.push((i, j));
            gt_used[j] = true;
            total_cost += cost[(i, j)];
        } else {
            unmatched_predictions.push(i);
        }
    }
    let unmatched_ground_truths = (0..cols).filter(|&j| !gt_used[j]).collect();
    Ok(Assignment {
        pairs,
        unmatched_predictions,
        unmatched_ground_truths,
        total_cost,
    })
}

/// Minimum matched cost over all injective assignments by enumeration;
/// feasible for `min(N, M) ≤ 8` or so. Used as a test oracle.
pub fn brute_force_min_cost(cost: &DMatrix<f64>) -> f64 {
    let (rows, cols) = cost.shape();
    let transpose = rows > cols;
    let c = if transpose {
        cost.transpose()
    } else {
        cost.clone()
    };
    let m = c.ncols();
    fn go(c: &DMatrix<f64>, row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64, m: usize) {
        if row == c.nrows() {
            *best = best.min(acc);
            return;
        }
        for j in 0..m {
            if !used[j] {
                used[j] = true;
                go(c, row + 1, used, acc + c[(row, j)], best, m);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(&c, 0, &mut vec![false; m], 0.0, &mut best, m);
    best
}

/// Fraction of ground truths whose matched prediction differs between two
/// assignments; an unmatched ground truth counts as its own distinct value.
pub fn matching_instability(prev: &Assignment, cur: &Assignment) -> Result<f64> {
    let m = prev.ground_truth_count();
    if m != cur.ground_truth_count() {
        return Err(Error::Dimension {
            what: "ground truths in assignment",
            expected: m,
            actual: cur.ground_truth_count(),
        });
    }
    if m == 0 {
        return Ok(0.0);
    }
    let changed = prev
        .prediction_of()
        .iter()
        .zip(cur.prediction_of())
        .filter(|(a, b)| **a != *b)
        .count();
    Ok(changed as f64 / m as f64)
}
