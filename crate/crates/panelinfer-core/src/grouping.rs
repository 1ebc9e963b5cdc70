//! Latent group recovery over unit means: exact 1D K-means and
//! information-criterion selection of the group count.
//!
//! The K-means objective over scalars has contiguous optimal groups once the
//! means are sorted, so the global argmin is computed exactly by dynamic
//! programming in O(J N^2). The `restarts` and `seed` parameters are kept
//! for interface stability but ignored: the solver is deterministic and
//! needs no random initialization.

use crate::error::{Error, Result};
use crate::panel::Panel;
use serde::Serialize;

/// Grouping outcome: labels, centers, and the selection path.
#[derive(Clone, Debug, Serialize)]
pub struct GroupingResult {
    /// Group label per unit, 0-based, ordered by ascending center.
    pub assignments: Vec<usize>,
    /// Group centers (means of member unit means), ascending.
    pub centers: Vec<f64>,
    /// Number of groups.
    pub j: usize,
    /// Within-group sum of squares divided by N.
    pub objective: f64,
    /// (J, IC(J)) pairs when selection ran; empty for fixed-J fits.
    pub ic_path: Vec<(usize, f64)>,
}

/// Sorted view of the means with prefix sums for O(1) segment costs.
struct SortedMeans {
    order: Vec<usize>,
    values: Vec<f64>,
    prefix: Vec<f64>,
    prefix_sq: Vec<f64>,
}

impl SortedMeans {
    fn new(means: &[f64]) -> Result<Self> {
        if means.is_empty() {
            return Err(Error::input("at least one unit mean required"));
        }
        if means.iter().any(|m| !m.is_finite()) {
            return Err(Error::input("unit means must be finite"));
        }
        let mut order: Vec<usize> = (0..means.len()).collect();
        order.sort_by(|&a, &b| means[a].partial_cmp(&means[b]).unwrap().then(a.cmp(&b)));
        let values: Vec<f64> = order.iter().map(|&i| means[i]).collect();
        let mut prefix = vec![0.0; values.len() + 1];
        let mut prefix_sq = vec![0.0; values.len() + 1];
        for (k, &v) in values.iter().enumerate() {
            prefix[k + 1] = prefix[k] + v;
            prefix_sq[k + 1] = prefix_sq[k] + v * v;
        }
        Ok(SortedMeans {
            order,
            values,
            prefix,
            prefix_sq,
        })
    }

    fn len(&self) -> usize {
        self.values.len()
    }

    /// Within-segment sum of squares for sorted positions [a, b).
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = (b - a) as f64;
        let s = self.prefix[b] - self.prefix[a];
        let s2 = self.prefix_sq[b] - self.prefix_sq[a];
        (s2 - s * s / n).max(0.0)
    }

    fn segment_mean(&self, a: usize, b: usize) -> f64 {
        (self.prefix[b] - self.prefix[a]) / (b - a) as f64
    }
}

/// DP table of optimal prefix costs for every group count up to j_max.
struct KmeansPath {
    sorted: SortedMeans,
    // cost_table[j - 1][b] = optimal cost of the first b sorted points in j groups.
    cost_table: Vec<Vec<f64>>,
    // split_table[j - 1][b] = start of the last group in that optimum.
    split_table: Vec<Vec<usize>>,
}

impl KmeansPath {
    fn new(means: &[f64], j_max: usize) -> Result<Self> {
        let sorted = SortedMeans::new(means)?;
        let n = sorted.len();
        let j_cap = j_max.min(n);
        let mut cost_table = Vec::with_capacity(j_cap);
        let mut split_table = Vec::with_capacity(j_cap);
        let mut first = vec![0.0; n + 1];
        for b in 1..=n {
            first[b] = sorted.cost(0, b);
        }
        cost_table.push(first);
        split_table.push(vec![0; n + 1]);
        for j in 2..=j_cap {
            let prev = &cost_table[j - 2];
            let mut cur = vec![0.0; n + 1];
            let mut cut = vec![0; n + 1];
            for b in j..=n {
                let mut best = f64::INFINITY;
                let mut best_a = j - 1;
                // Last group [a, b) with a leaving room for j-1 groups before.
                for a in (j - 1)..b {
                    let c = prev[a] + sorted.cost(a, b);
                    if c < best {
                        best = c;
                        best_a = a;
                    }
                }
                cur[b] = best;
                cut[b] = best_a;
            }
            cost_table.push(cur);
            split_table.push(cut);
        }
        Ok(KmeansPath {
            sorted,
            cost_table,
            split_table,
        })
    }

    fn max_j(&self) -> usize {
        self.cost_table.len()
    }

    fn objective(&self, j: usize) -> f64 {
        let n = self.sorted.len();
        self.cost_table[j - 1][n] / n as f64
    }

    /// Reconstructs the optimal partition into exactly j groups.
    fn extract(&self, j: usize, ic_path: Vec<(usize, f64)>) -> GroupingResult {
        let n = self.sorted.len();
        let mut boundaries = vec![n];
        let mut b = n;
        for jj in (2..=j).rev() {
            b = self.split_table[jj - 1][b];
            boundaries.push(b);
        }
        boundaries.push(0);
        boundaries.reverse();
        let mut assignments = vec![0usize; n];
        let mut centers = Vec::with_capacity(j);
        for g in 0..j {
            let (a, b) = (boundaries[g], boundaries[g + 1]);
            centers.push(self.sorted.segment_mean(a, b));
            for pos in a..b {
                assignments[self.sorted.order[pos]] = g;
            }
        }
        GroupingResult {
            assignments,
            centers,
            j,
            objective: self.objective(j),
            ic_path,
        }
    }
}

/// Globally optimal grouping of the means into exactly `j` groups.
///
/// `restarts` and `seed` are accepted for interface stability and ignored;
/// the 1D solver is exact and deterministic.
pub fn group_fixed_j(
    means: &[f64],
    j: usize,
    _restarts: usize,
    _seed: u64,
) -> Result<GroupingResult> {
    if j == 0 {
        return Err(Error::input("group count must be at least 1"));
    }
    if j > means.len() {
        return Err(Error::input(format!(
            "group count {j} exceeds the number of units {}",
            means.len()
        )));
    }
    let path = KmeansPath::new(means, j)?;
    Ok(path.extract(j, Vec::new()))
}

/// Selects the group count by minimizing IC(J) = S(J) + rho_nt * J over
/// J = 1..=j_max (capped at N), breaking ties toward the smallest J.
pub fn select_j(
    means: &[f64],
    j_max: usize,
    rho_nt: f64,
    _restarts: usize,
    _seed: u64,
) -> Result<GroupingResult> {
    if j_max == 0 {
        return Err(Error::input("j_max must be at least 1"));
    }
    if !(rho_nt > 0.0) {
        return Err(Error::input(format!(
            "selection penalty must be positive, got {rho_nt}"
        )));
    }
    let path = KmeansPath::new(means, j_max)?;
    let mut ic_path = Vec::with_capacity(path.max_j());
    let mut best_j = 1;
    let mut best_ic = f64::INFINITY;
    for j in 1..=path.max_j() {
        let ic = path.objective(j) + rho_nt * j as f64;
        ic_path.push((j, ic));
        if ic < best_ic {
            best_ic = ic;
            best_j = j;
        }
    }
    Ok(path.extract(best_j, ic_path))
}

/// Default selection penalty 1 / log(N + T).
pub fn default_penalty(n: usize, t: usize) -> f64 {
    1.0 / ((n + t) as f64).ln()
}

/// Groups a panel by its unit means: mean extraction composed with
/// [`select_j`].
pub fn group_panel(
    p: &Panel,
    j_max: usize,
    rho_nt: f64,
    restarts: usize,
    seed: u64,
) -> Result<GroupingResult> {
    select_j(&p.unit_means(), j_max, rho_nt, restarts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn single_group_is_variance_of_means() {
        let means = [1.0, 2.0, 3.0, 6.0];
        let g = group_fixed_j(&means, 1, 1, 0).unwrap();
        let mean = 3.0;
        let var = means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 4.0;
        assert_relative_eq!(g.objective, var, epsilon = 1e-14);
        assert_eq!(g.centers, vec![3.0]);
        assert_eq!(g.assignments, vec![0, 0, 0, 0]);
    }

    #[test]
    fn n_groups_is_zero_objective() {
        let means = [0.3, -1.0, 2.0, 0.7];
        let g = group_fixed_j(&means, 4, 1, 0).unwrap();
        assert!(g.objective.abs() < 1e-12);
        let mut labels = g.assignments.clone();
        labels.sort_unstable();
        labels.dedup();
        assert_eq!(labels.len(), 4);
        // Labels ascend with the centers.
        assert_eq!(g.assignments, vec![1, 0, 3, 2]);
    }

    #[test]
    fn gap_bipartition_recovered_exactly() {
        let mut means = Vec::new();
        for k in 0..20 {
            means.push(0.0 + 0.002 * k as f64);
        }
        for k in 0..20 {
            means.push(1.0 + 0.002 * k as f64);
        }
        let g = group_fixed_j(&means, 2, 1, 0).unwrap();
        for i in 0..20 {
            assert_eq!(g.assignments[i], 0);
            assert_eq!(g.assignments[20 + i], 1);
        }
        assert!(g.centers[0] < 0.1 && g.centers[1] > 0.9);
    }

    #[test]
    fn matches_exhaustive_search_small_n() {
        let means = [0.11, -0.4, 0.9, 0.85, -0.35, 0.05, 1.7, 0.2];
        let n = means.len();
        for j in 1..=4usize {
            let dp = group_fixed_j(&means, j, 1, 0).unwrap();
            // Enumerate all label assignments; any with <= j effective
            // groups is feasible for the j-group problem.
            let mut best = f64::INFINITY;
            let total = j.pow(n as u32);
            for code in 0..total {
                let mut labels = vec![0usize; n];
                let mut c = code;
                for l in labels.iter_mut() {
                    *l = c % j;
                    c /= j;
                }
                let mut sums = vec![0.0; j];
                let mut counts = vec![0usize; j];
                for (i, &l) in labels.iter().enumerate() {
                    sums[l] += means[i];
                    counts[l] += 1;
                }
                let mut sse = 0.0;
                for (i, &l) in labels.iter().enumerate() {
                    let c = sums[l] / counts[l] as f64;
                    sse += (means[i] - c).powi(2);
                }
                best = best.min(sse / n as f64);
            }
            assert_relative_eq!(dp.objective, best, epsilon = 1e-12);
        }
    }

    #[test]
    fn equal_means_select_one_group() {
        let means = [2.0; 12];
        let g = select_j(&means, 5, 0.1, 1, 0).unwrap();
        assert_eq!(g.j, 1);
        assert_eq!(g.ic_path.len(), 5);
    }

    #[test]
    fn objective_path_nonincreasing() {
        let means = [0.0, 0.4, 1.1, 1.3, 2.2, 2.25, 3.0, -0.5];
        let mut prev = f64::INFINITY;
        for j in 1..=6 {
            let g = group_fixed_j(&means, j, 1, 0).unwrap();
            assert!(g.objective <= prev + 1e-15);
            prev = g.objective;
        }
    }

    #[test]
    fn jmax_one_forces_single_group() {
        let means = [0.0, 10.0, 20.0];
        let g = select_j(&means, 1, 0.01, 1, 0).unwrap();
        assert_eq!(g.j, 1);
    }

    #[test]
    fn two_groups_selected_with_gap() {
        let mut means = vec![0.0; 10];
        means.extend(vec![1.0; 10]);
        let g = select_j(&means, 6, default_penalty(20, 400), 1, 0).unwrap();
        assert_eq!(g.j, 2);
    }

    #[test]
    fn outlier_isolated_as_singleton() {
        let mut means = vec![0.0, 0.01, -0.02, 0.03, 0.0, 0.02, -0.01, 0.01, 0.0];
        means.push(100.0);
        let g = group_fixed_j(&means, 2, 1, 0).unwrap();
        for i in 0..9 {
            assert_eq!(g.assignments[i], 0);
        }
        assert_eq!(g.assignments[9], 1);
    }

    #[test]
    fn group_panel_composes_means_and_selection() {
        let mut rows = Vec::new();
        for i in 0..6 {
            let level = if i < 3 { 0.0 } else { 5.0 };
            for t in 0..50 {
                rows.push(level + 0.01 * ((t * (i + 1)) % 7) as f64);
            }
        }
        let p = Panel::from_rows(6, 50, &rows).unwrap();
        let g = group_panel(&p, 4, default_penalty(6, 50), 1, 0).unwrap();
        assert_eq!(g.j, 2);
        assert_eq!(&g.assignments[..3], &[0, 0, 0]);
        assert_eq!(&g.assignments[3..], &[1, 1, 1]);
    }

    #[test]
    fn invalid_arguments_rejected() {
        assert!(group_fixed_j(&[1.0, 2.0], 3, 1, 0).is_err());
        assert!(group_fixed_j(&[1.0, 2.0], 0, 1, 0).is_err());
        assert!(select_j(&[1.0, 2.0], 2, 0.0, 1, 0).is_err());
        assert!(select_j(&[1.0, f64::NAN], 2, 0.1, 1, 0).is_err());
    }
}
