//! Rectangular minimum-cost assignment (Hungarian method with potentials).

use crate::distance::DistanceMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row position, column position)` pairs, sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
    /// Rows left without a finite partner.
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

/// Shortest augmenting paths on an `n × m` cost table with `n ≤ m`.
/// Returns the column of each row.
fn hungarian(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) matched to column j; column 0 is the virtual root
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
    let mut col_of = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            col_of[p[j] - 1] = j - 1;
        }
    }
    col_of
}

/// Minimum-total-distance matching saturating the smaller side. `+∞`
/// entries are forbidden: the result first maximizes the number of finite
/// pairs, then minimizes their total distance.
pub fn min_distance_assignment(matrix: &DistanceMatrix) -> Assignment {
    let (r, c) = (matrix.n_rows(), matrix.n_cols());
    let finite_sum: f64 = matrix.entries().iter().filter(|v| v.is_finite()).map(|v| v.abs()).sum();
    let big = 2.0 * finite_sum + 1.0;
    let entry = |i: usize, j: usize| {
        let v = matrix.get(i, j);
        if v.is_finite() {
            v
        } else {
            big
        }
    };
    let raw: Vec<(usize, usize)> = if r <= c {
        hungarian(r, c, entry).into_iter().enumerate().collect()
    } else {
        hungarian(c, r, |i, j| entry(j, i))
            .into_iter()
            .enumerate()
            .map(|(j, i)| (i, j))
            .collect()
    };
    let mut pairs: Vec<(usize, usize)> = raw.into_iter().filter(|&(i, j)| matrix.get(i, j).is_finite()).collect();
    pairs.sort_unstable();
    let cost = pairs.iter().map(|&(i, j)| matrix.get(i, j)).fold(0.0, |a, d| a + d);
    let mut row_used = vec![false; r];
    let mut col_used = vec![false; c];
    for &(i, j) in &pairs {
        row_used[i] = true;
        col_used[j] = true;
    }
    let unmatched = |used: &[bool], cap: usize| -> Vec<usize> {
        if pairs.len() == cap {
            Vec::new()
        } else {
            (0..used.len()).filter(|&k| !used[k]).collect()
        }
    };
    Assignment {
        unmatched_rows: if r <= c { unmatched(&row_used, r) } else { Vec::new() },
        unmatched_cols: if c < r { unmatched(&col_used, c) } else { Vec::new() },
        pairs,
        cost,
    }
}
