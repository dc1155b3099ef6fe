/// Minimum-cost perfect assignment on a square row-major cost matrix via
/// the shortest augmenting path method with dual potentials, O(n^3).
/// Returns `assignment[row] = column`. Entries must be finite.
pub fn solve_assignment(n: usize, cost: &[f64]) -> Vec<usize> {
    assert_eq!(cost.len(), n * n, "cost matrix must be n x n");
    if n == 0 {
        return Vec::new();
    }
    // 1-based arrays, column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    assignment
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn total(n: usize, c: &[f64], a: &[usize]) -> f64 {
        a.iter().enumerate().map(|(i, &j)| c[i * n + j]).sum()
    }

    fn brute(n: usize, c: &[f64]) -> f64 {
        fn rec(n: usize, c: &[f64], row: usize, used: &mut Vec<bool>, acc: f64, best: &mut f64) {
            if row == n {
                *best = best.min(acc);
                return;
            }
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    rec(n, c, row + 1, used, acc + c[row * n + j], best);
                    used[j] = false;
                }
            }
        }
        let mut best = f64::INFINITY;
        rec(n, c, 0, &mut vec![false; n], 0.0, &mut best);
        best
    }

    #[test]
    fn known_instance() {
        let c = [4.0, 1.0, 3.0, 2.0, 0.0, 5.0, 3.0, 2.0, 2.0];
        let a = solve_assignment(3, &c);
        assert_eq!(total(3, &c, &a), 5.0);
        assert_eq!(solve_assignment(0, &[]), Vec::<usize>::new());
    }

    proptest! {
        #[test]
        fn matches_brute_force(n in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let c: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..10.0)).collect();
            let a = solve_assignment(n, &c);
            let mut seen = a.clone();
            seen.sort();
            prop_assert_eq!(seen, (0..n).collect::<Vec<_>>());
            prop_assert!((total(n, &c, &a) - brute(n, &c)).abs() < 1e-9);
        }
    }
}
