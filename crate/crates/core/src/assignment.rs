//! Dense square assignment: shortest augmenting paths with dual potentials,
//! plus a bipartite feasibility check used by the bottleneck search.

/// Minimum-cost perfect assignment on a square matrix of finite costs.
///
/// Returns `row_to_col` and the total cost. Runs in O(n^3).
pub fn min_cost_assignment(cost: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let n = cost.len();
    if n == 0 {
        return (Vec::new(), 0.0);
    }
    debug_assert!(cost.iter().all(|r| r.len() == n));

    // 1-based arrays; column 0 is the virtual source of each augmentation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    let total = row_to_col
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    (row_to_col, total)
}

/// Whether a perfect matching exists using only edges with `allowed[i][j]`.
pub fn has_perfect_matching(allowed: &[Vec<bool>]) -> bool {
    let n = allowed.len();
    let mut col_owner: Vec<Option<usize>> = vec![None; n];
    for row in 0..n {
        let mut seen = vec![false; n];
        if !augment(row, allowed, &mut seen, &mut col_owner) {
            return false;
        }
    }
    true
}

fn augment(
    row: usize,
    allowed: &[Vec<bool>],
    seen: &mut [bool],
    col_owner: &mut [Option<usize>],
) -> bool {
    for col in 0..allowed.len() {
        if !allowed[row][col] || seen[col] {
            continue;
        }
        seen[col] = true;
        let free = match col_owner[col] {
            None => true,
            Some(other) => augment(other, allowed, seen, col_owner),
        };
        if free {
            col_owner[col] = Some(row);
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 1..=6 {
            let perms = permutations(n);
            for _ in 0..30 {
                let cost: Vec<Vec<f64>> = (0..n)
                    .map(|_| (0..n).map(|_| rng.random_range(0.0..10.0)).collect())
                    .collect();
                let best = perms
                    .iter()
                    .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i][j]).sum::<f64>())
                    .fold(f64::INFINITY, f64::min);
                let (assign, total) = min_cost_assignment(&cost);
                let mut cols = assign.clone();
                cols.sort_unstable();
                assert_eq!(cols, (0..n).collect::<Vec<_>>());
                assert!((total - best).abs() < 1e-9, "n={n}: {total} vs {best}");
            }
        }
    }

    #[test]
    fn classic_instance() {
        let cost = vec![
            vec![4.0, 1.0, 3.0],
            vec![2.0, 0.0, 5.0],
            vec![3.0, 2.0, 2.0],
        ];
        let (assign, total) = min_cost_assignment(&cost);
        assert_eq!(total, 5.0);
        assert_eq!(assign, vec![1, 0, 2]);
    }

    #[test]
    fn perfect_matching_feasibility() {
        let yes = vec![vec![true, true], vec![true, false]];
        assert!(has_perfect_matching(&yes));
        let no = vec![vec![true, false], vec![true, false]];
        assert!(!has_perfect_matching(&no));
        assert!(has_perfect_matching(&[]));
    }
}
