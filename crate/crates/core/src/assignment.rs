//! Minimum-cost rectangular linear assignment (Hungarian method with
//! shortest augmenting paths and potentials).

use nalgebra::DMatrix;

/// Optimal one-to-one assignment minimizing the total cost. Returns, for
/// every row, the assigned column; exactly `min(rows, cols)` entries are
/// `Some`.
pub fn solve(cost: &DMatrix<f64>) -> Vec<Option<usize>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows > cols {
        let by_col = solve(&cost.transpose());
        let mut out = vec![None; rows];
        for (c, r) in by_col.into_iter().enumerate() {
            if let Some(r) = r {
                out[r] = Some(c);
            }
        }
        return out;
    }
    // rows <= cols; 1-based arrays with a virtual column 0.
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
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
    let mut out = vec![None; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = Some(j - 1);
        }
    }
    out
}

pub fn total_cost(cost: &DMatrix<f64>, assignment: &[Option<usize>]) -> f64 {
    assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[(r, c)]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(cost: &DMatrix<f64>) -> f64 {
        let (r, c) = cost.shape();
        if r > c {
            return brute_force(&cost.transpose());
        }
        fn rec(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
            if row == cost.nrows() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..cost.ncols() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[(row, c)] + rec(cost, row + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; c])
    }

    #[test]
    fn square_example() {
        let c = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0]);
        let a = solve(&c);
        assert_eq!(total_cost(&c, &a), 5.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(solve(&DMatrix::zeros(0, 3)).is_empty());
        assert_eq!(solve(&DMatrix::zeros(2, 0)), vec![None, None]);
    }

    proptest! {
        #[test]
        fn matches_brute_force(r in 1usize..5, c in 1usize..5, vals in proptest::collection::vec(0.0f64..10.0, 25)) {
            let cost = DMatrix::from_fn(r, c, |i, j| vals[i * 5 + j]);
            let a = solve(&cost);
            prop_assert_eq!(a.iter().filter(|x| x.is_some()).count(), r.min(c));
            let mut cols: Vec<_> = a.iter().flatten().collect();
            cols.sort();
            cols.dedup();
            prop_assert_eq!(cols.len(), r.min(c));
            prop_assert!((total_cost(&cost, &a) - brute_force(&cost)).abs() < 1e-9);
        }
    }
}
