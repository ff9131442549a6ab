//! Exact minimum-cost bipartite matching by shortest augmenting paths with
//! dual potentials, for square and rectangular (rows <= cols) cost matrices.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major cost matrix with rows <= cols.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || rows > cols {
            return Err(Error::InvalidInput(format!(
                "cost matrix must have 1 <= rows <= cols, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                left: data.len(),
                right: rows * cols,
            });
        }
        if data.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidInput(
                "cost entries must be finite and nonnegative".into(),
            ));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Matrices up to this size get the exact lexicographic tie-break pass; the
/// pass re-solves subproblems and would dominate the per-iteration cost of
/// the large matching losses, whose subsampled float costs do not tie.
const LEXICOGRAPHIC_REFINE_LIMIT: usize = 4096;

/// Globally minimal injective row-to-column map and its cost.
///
/// Output is deterministic for a fixed input. When several assignments share
/// the minimal cost, the lexicographically smallest one (as the sequence
/// assignment[0], assignment[1], ...) is returned for matrices up to
/// [`LEXICOGRAPHIC_REFINE_LIMIT`] entries; larger ties keep the solver's
/// deterministic choice.
pub fn solve(c: &CostMatrix) -> (Vec<usize>, f64) {
    let row_active = vec![true; c.rows];
    let col_active = vec![true; c.cols];
    let state = jv_with_duals(c, &row_active, &col_active)
        .expect("finite costs with rows <= cols are always feasible");
    let mut cost = 0.0;
    for r in 0..c.rows {
        cost += c.at(r, state.col_at_row[r]);
    }
    if c.rows * c.cols <= LEXICOGRAPHIC_REFINE_LIMIT {
        if let Some(refined) = lexicographic_refine(c, &state, cost) {
            return (refined, cost);
        }
    }
    (state.col_at_row, cost)
}

struct JvState {
    col_at_row: Vec<usize>,
    u: Vec<f64>,
    v: Vec<f64>,
}

const UNMATCHED: usize = usize::MAX;

/// Shortest-augmenting-path solve over an optional subset of rows/columns;
/// masks select the active entries. Returns the per-active-row column choice
/// and total cost.
fn jv(c: &CostMatrix, masks: Option<(&[bool], &[bool])>) -> Option<(Vec<usize>, f64)> {
    let (row_active, col_active): (Vec<bool>, Vec<bool>) = match masks {
        Some((r, cl)) => (r.to_vec(), cl.to_vec()),
        None => (vec![true; c.rows], vec![true; c.cols]),
    };
    let state = jv_with_duals(c, &row_active, &col_active)?;
    let mut cost = 0.0;
    for r in 0..c.rows {
        if row_active[r] {
            cost += c.at(r, state.col_at_row[r]);
        }
    }
    Some((state.col_at_row, cost))
}

fn jv_with_duals(c: &CostMatrix, row_active: &[bool], col_active: &[bool]) -> Option<JvState> {
    let p = c.cols;
    let mut u = vec![0.0; c.rows];
    let mut v = vec![0.0; p];
    let mut col_at_row = vec![UNMATCHED; c.rows];
    let mut row_at_col = vec![UNMATCHED; p];

    let mut shortest = vec![f64::INFINITY; p];
    let mut path = vec![UNMATCHED; p];
    let mut scanned_rows = vec![false; c.rows];
    let mut scanned_cols = vec![false; p];
    let mut remaining: Vec<usize> = Vec::with_capacity(p);

    for cur_row in 0..c.rows {
        if !row_active[cur_row] {
            continue;
        }
        shortest.iter_mut().for_each(|s| *s = f64::INFINITY);
        scanned_rows.iter_mut().for_each(|s| *s = false);
        scanned_cols.iter_mut().for_each(|s| *s = false);
        remaining.clear();
        remaining.extend((0..p).filter(|&j| col_active[j]));

        let mut min_val = 0.0;
        let mut i = cur_row;
        let sink = loop {
            scanned_rows[i] = true;
            let mut lowest = f64::INFINITY;
            let mut index = UNMATCHED;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + c.at(i, j) - u[i] - v[j];
                if r < shortest[j] {
                    shortest[j] = r;
                    path[j] = i;
                }
                // Prefer an unmatched sink on ties, then the lower column,
                // which keeps the scan deterministic.
                if shortest[j] < lowest
                    || (shortest[j] == lowest
                        && index != UNMATCHED
                        && row_at_col[j] == UNMATCHED
                        && row_at_col[remaining[index]] != UNMATCHED)
                {
                    lowest = shortest[j];
                    index = it;
                }
            }
            if index == UNMATCHED || !lowest.is_finite() {
                return None;
            }
            min_val = lowest;
            let j = remaining[index];
            scanned_cols[j] = true;
            remaining.swap_remove(index);
            if row_at_col[j] == UNMATCHED {
                break j;
            }
            i = row_at_col[j];
        };

        u[cur_row] += min_val;
        for r in 0..c.rows {
            if scanned_rows[r] && r != cur_row {
                u[r] += min_val - shortest[col_at_row[r]];
            }
        }
        for j in 0..p {
            if scanned_cols[j] {
                v[j] -= min_val - shortest[j];
            }
        }

        let mut j = sink;
        loop {
            let r = path[j];
            row_at_col[j] = r;
            core::mem::swap(&mut col_at_row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }

    Some(JvState { col_at_row, u, v })
}

/// If the optimum is non-unique, walks rows in order and pins each to the
/// smallest column that still admits an optimal completion. Returns None
/// when the solver's assignment is already the unique optimum.
fn lexicographic_refine(c: &CostMatrix, duals: &JvState, best_cost: f64) -> Option<Vec<usize>> {
    let scale = c
        .data
        .iter()
        .fold(1.0f64, |acc, &x| acc.max(x.abs()));
    let eps = 1e-9 * scale;

    // With optimal duals, alternative optima can only use edges of zero
    // reduced cost; a single tight edge per row means the optimum is unique.
    let mut ambiguous = false;
    for r in 0..c.rows {
        let tight = (0..c.cols)
            .filter(|&j| (c.at(r, j) - duals.u[r] - duals.v[j]).abs() <= eps)
            .count();
        if tight > 1 {
            ambiguous = true;
            break;
        }
    }
    if !ambiguous {
        return None;
    }

    let cost_eps = 1e-9 * (1.0 + best_cost.abs());
    let mut result = duals.col_at_row.clone();
    let mut row_active = vec![true; c.rows];
    let mut col_active = vec![true; c.cols];
    let mut fixed_cost = 0.0;
    for r in 0..c.rows {
        row_active[r] = false;
        let mut chosen = UNMATCHED;
        for j in 0..c.cols {
            if !col_active[j] {
                continue;
            }
            if c.at(r, j) - duals.u[r] - duals.v[j] > eps {
                continue;
            }
            col_active[j] = false;
            let candidate_cost = fixed_cost + c.at(r, j);
            let feasible = if r + 1 == c.rows {
                candidate_cost <= best_cost + cost_eps
            } else {
                match jv(c, Some((&row_active, &col_active))) {
                    Some((_, sub)) => candidate_cost + sub <= best_cost + cost_eps,
                    None => false,
                }
            };
            if feasible {
                chosen = j;
                fixed_cost = candidate_cost;
                break;
            }
            col_active[j] = true;
        }
        if chosen == UNMATCHED {
            // Numerical corner: keep the solver's answer.
            return None;
        }
        result[r] = chosen;
    }
    Some(result)
}

/// Exhaustive minimum over all injective maps; test oracle for small sizes.
pub fn brute_force(c: &CostMatrix) -> (Vec<usize>, f64) {
    let mut best_cost = f64::INFINITY;
    let mut best: Vec<usize> = Vec::new();
    let mut current = vec![0usize; c.rows];
    let mut used = vec![false; c.cols];
    fn recurse(
        c: &CostMatrix,
        row: usize,
        cost: f64,
        current: &mut [usize],
        used: &mut [bool],
        best_cost: &mut f64,
        best: &mut Vec<usize>,
    ) {
        if row == c.rows() {
            // Strict improvement keeps the lexicographically smallest
            // tied assignment because columns are tried in order.
            if cost < *best_cost {
                *best_cost = cost;
                *best = current.to_vec();
            }
            return;
        }
        for j in 0..c.cols() {
            if used[j] {
                continue;
            }
            used[j] = true;
            current[row] = j;
            recurse(c, row + 1, cost + c.at(row, j), current, used, best_cost, best);
            used[j] = false;
        }
    }
    recurse(c, 0, 0.0, &mut current, &mut used, &mut best_cost, &mut best);
    (best, best_cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn matrix(rows: usize, cols: usize, data: &[f64]) -> CostMatrix {
        CostMatrix::new(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn identity_dominant() {
        let c = matrix(3, 3, &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        let (assign, cost) = solve(&c);
        assert_eq!(assign, vec![0, 1, 2]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn two_by_two() {
        let c = matrix(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (assign, cost) = solve(&c);
        assert_eq!(assign, vec![0, 1]);
        assert_eq!(cost, 2.0);
    }

    #[test]
    fn rectangular_matches_brute_force() {
        let mut rng = Rng::new(404);
        for _ in 0..50 {
            let data: Vec<f64> = (0..15).map(|_| (rng.index(20)) as f64).collect();
            let c = matrix(3, 5, &data);
            let (_, cost) = solve(&c);
            let (_, expected) = brute_force(&c);
            assert_eq!(cost, expected, "matrix {data:?}");
        }
    }

    #[test]
    fn ties_resolve_lexicographically() {
        // Every assignment costs 2; the smallest is the identity.
        let c = matrix(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let (assign, cost) = solve(&c);
        assert_eq!(cost, 2.0);
        assert_eq!(assign, vec![0, 1]);

        // Off-diagonal optimum with a tie inside it.
        let c = matrix(2, 2, &[5.0, 1.0, 1.0, 5.0]);
        let (assign, cost) = solve(&c);
        assert_eq!(cost, 2.0);
        assert_eq!(assign, vec![1, 0]);

        let c = matrix(3, 3, &[0.0, 0.0, 9.0, 0.0, 0.0, 9.0, 9.0, 9.0, 0.0]);
        let (assign, _) = solve(&c);
        assert_eq!(assign, vec![0, 1, 2]);
    }

    #[test]
    fn row_constant_shift_preserves_optimality() {
        let mut rng = Rng::new(7);
        for _ in 0..100 {
            let data: Vec<f64> = (0..20).map(|_| rng.index(50) as f64).collect();
            let c = matrix(4, 5, &data);
            let (_, cost) = solve(&c);
            let mut shifted = data.clone();
            for j in 0..5 {
                shifted[2 * 5 + j] += 7.0;
            }
            let cs = matrix(4, 5, &shifted);
            let (assign_s, cost_s) = solve(&cs);
            assert!((cost_s - cost - 7.0).abs() < 1e-9);
            let (_, brute) = brute_force(&cs);
            let total: f64 = assign_s
                .iter()
                .enumerate()
                .map(|(r, &j)| cs.at(r, j))
                .sum();
            assert!((total - brute).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_output() {
        let data: Vec<f64> = (0..30).map(|i| ((i * 7919) % 13) as f64).collect();
        let c = matrix(5, 6, &data);
        let first = solve(&c);
        for _ in 0..5 {
            assert_eq!(solve(&c), first);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(CostMatrix::new(3, 2, vec![0.0; 6]).is_err());
        assert!(CostMatrix::new(0, 2, vec![]).is_err());
        assert!(CostMatrix::new(2, 2, vec![0.0; 3]).is_err());
        assert!(CostMatrix::new(1, 1, vec![f64::NAN]).is_err());
        assert!(CostMatrix::new(1, 1, vec![-1.0]).is_err());
    }
}
