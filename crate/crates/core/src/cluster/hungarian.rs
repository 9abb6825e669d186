//! Minimum-cost rectangular assignment (Hungarian method with potentials, O(n²m)).

/// Result of [`solve_assignment`].
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column assigned to each row; `None` only when there are more rows than columns.
    pub row_to_col: Vec<Option<usize>>,
    pub total_cost: f64,
}

/// Solves `min Σ cost[i][σ(i)]` over injective row→column maps (or column→row maps
/// when rows outnumber columns). All rows must have equal length and finite costs.
pub fn solve_assignment(cost: &[Vec<f64>]) -> Assignment {
    let n = cost.len();
    let m = cost.first().map_or(0, Vec::len);
    if n == 0 || m == 0 {
        return Assignment {
            row_to_col: vec![None; n],
            total_cost: 0.0,
        };
    }
    debug_assert!(cost.iter().all(|r| r.len() == m));
    if n <= m {
        let cols = solve_rows_le_cols(n, m, |i, j| cost[i][j]);
        let row_to_col: Vec<Option<usize>> = cols.into_iter().map(Some).collect();
        let total_cost = row_to_col.iter().enumerate().map(|(i, c)| cost[i][c.unwrap()]).sum();
        Assignment { row_to_col, total_cost }
    } else {
        // transpose: assign each column to a row
        let rows_of_cols = solve_rows_le_cols(m, n, |j, i| cost[i][j]);
        let mut row_to_col = vec![None; n];
        for (j, i) in rows_of_cols.into_iter().enumerate() {
            row_to_col[i] = Some(j);
        }
        let total_cost = row_to_col
            .iter()
            .enumerate()
            .filter_map(|(i, c)| c.map(|c| cost[i][c]))
            .sum();
        Assignment { row_to_col, total_cost }
    }
}

/// Returns the column for each of the `n <= m` rows.
fn solve_rows_le_cols(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based potentials; column 0 is a virtual root
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
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

#[cfg(test)]
pub(crate) mod reference {
    /// Exhaustive minimum over all injective row→column maps (rows <= cols).
    pub fn brute_force_min(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == cost.len() {
                *best = best.min(acc);
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    rec(cost, row + 1, used, acc + cost[row][j], best);
                    used[j] = false;
                }
            }
        }
        let m = cost[0].len();
        let mut best = f64::INFINITY;
        rec(cost, 0, &mut vec![false; m], 0.0, &mut best);
        best
    }
}

#[cfg(test)]
mod tests {
    use super::reference::brute_force_min;
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn crossing_pair() {
        let cost = vec![vec![1.0, 4.0], vec![4.0, 1.0]];
        let a = solve_assignment(&cost);
        assert_eq!(a.row_to_col, vec![Some(0), Some(1)]);
        assert_eq!(a.total_cost, 2.0);
        assert_eq!(brute_force_min(&cost), 2.0);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = vec![vec![5.0, 1.0, 3.0], vec![2.0, 8.0, 1.5]];
        let a = solve_assignment(&wide);
        assert_eq!(a.total_cost, 2.5);
        let tall = vec![vec![5.0, 2.0], vec![1.0, 8.0], vec![3.0, 1.5]];
        let b = solve_assignment(&tall);
        assert_eq!(b.total_cost, 2.5);
        assert_eq!(b.row_to_col.iter().filter(|c| c.is_some()).count(), 2);
    }

    #[test]
    fn matches_brute_force_on_small_random_matrices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..300 {
            let n = rng.random_range(1..=5);
            let m = rng.random_range(n..=6);
            let cost: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.random_range(0..50) as f64).collect()).collect();
            assert_eq!(solve_assignment(&cost).total_cost, brute_force_min(&cost));
        }
    }
}
