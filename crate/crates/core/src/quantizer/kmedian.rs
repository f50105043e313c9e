//! Exact k-median clustering of integer labels on the line.
//!
//! Optimal 1-D k-median clusters are contiguous runs of the sorted distinct
//! labels, so a dynamic program over split points finds the global optimum.

use crate::error::{Error, Result};

use super::Codebook;

/// Clusters element indices by their integer `labels` into at most `k` cells
/// minimizing `Σ |label − median(cell)|`.
///
/// Cells are numbered in increasing label order. Equal labels always share a
/// cell; with `k` at least the number of distinct labels every cell holds
/// exactly one label and the objective is zero.
pub fn kmedian(labels: &[usize], k: usize) -> Result<Codebook> {
    let solution = solve(labels, k)?;
    let mut cells = vec![Vec::new(); solution.centroids.len()];
    for (element, &label) in labels.iter().enumerate() {
        let value = solution
            .values
            .binary_search(&label)
            .expect("every label is a distinct value");
        cells[solution.group_of_value[value]].push(element);
    }
    Codebook::new(cells, solution.centroids, k, (k as f64).log2())
}

/// `Σ |label − centroid|` of a partition.
pub fn objective(labels: &[usize], cells: &[Vec<usize>], centroids: &[usize]) -> u64 {
    cells
        .iter()
        .zip(centroids)
        .map(|(cell, &mu)| {
            cell.iter()
                .map(|&e| labels[e].abs_diff(mu) as u64)
                .sum::<u64>()
        })
        .sum()
}

struct Solution {
    /// Sorted distinct labels.
    values: Vec<usize>,
    group_of_value: Vec<usize>,
    centroids: Vec<usize>,
}

fn solve(labels: &[usize], k: usize) -> Result<Solution> {
    if k == 0 {
        return Err(Error::Clustering("k must be at least 1".into()));
    }
    if labels.is_empty() {
        return Err(Error::Clustering("no elements to cluster".into()));
    }
    if k > labels.len() {
        return Err(Error::Clustering(format!(
            "k = {k} exceeds the number of elements ({})",
            labels.len()
        )));
    }

    let mut values: Vec<usize> = labels.to_vec();
    values.sort_unstable();
    values.dedup();
    let m = values.len();
    let mut weights = vec![0u64; m];
    for &l in labels {
        weights[values.binary_search(&l).unwrap()] += 1;
    }
    let groups = k.min(m);

    // Prefix sums over weights and weight * value.
    let mut cum_w = vec![0u64; m + 1];
    let mut cum_wv = vec![0u128; m + 1];
    for j in 0..m {
        cum_w[j + 1] = cum_w[j] + weights[j];
        cum_wv[j + 1] = cum_wv[j] + weights[j] as u128 * values[j] as u128;
    }
    // Weighted lower median of values[a..=b] and the cost of that run.
    let median = |a: usize, b: usize| -> usize {
        let total = cum_w[b + 1] - cum_w[a];
        let half = total.div_ceil(2);
        // First j with cumulative weight >= half.
        let target = cum_w[a] + half;
        a + cum_w[a + 1..=b + 1].partition_point(|&c| c < target)
    };
    let run_cost = |a: usize, b: usize| -> u128 {
        let j = median(a, b);
        let mu = values[j] as u128;
        let left_w = (cum_w[j + 1] - cum_w[a]) as u128;
        let left_wv = cum_wv[j + 1] - cum_wv[a];
        let right_w = (cum_w[b + 1] - cum_w[j + 1]) as u128;
        let right_wv = cum_wv[b + 1] - cum_wv[j + 1];
        (mu * left_w - left_wv) + (right_wv - mu * right_w)
    };

    // best[g][j]: optimal cost of values[0..=j] in g+1 runs; split[g][j]: start of the last run.
    let mut best = vec![vec![u128::MAX; m]; groups];
    let mut split = vec![vec![0usize; m]; groups];
    for j in 0..m {
        best[0][j] = run_cost(0, j);
    }
    for g in 1..groups {
        for j in g..m {
            for start in g..=j {
                let prev = best[g - 1][start - 1];
                if prev == u128::MAX {
                    continue;
                }
                let cost = prev + run_cost(start, j);
                if cost < best[g][j] {
                    best[g][j] = cost;
                    split[g][j] = start;
                }
            }
        }
    }

    let mut group_of_value = vec![0; m];
    let mut centroids = vec![0; groups];
    let mut end = m - 1;
    for g in (0..groups).rev() {
        let start = if g == 0 { 0 } else { split[g][end] };
        for slot in &mut group_of_value[start..=end] {
            *slot = g;
        }
        centroids[g] = values[median(start, end)];
        if g > 0 {
            end = start - 1;
        }
    }
    Ok(Solution {
        values,
        group_of_value,
        centroids,
    })
}


#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::oracle::exhaustive_kmedian;
    use super::*;

    fn cost_of(labels: &[usize], cb: &Codebook) -> u64 {
        objective(labels, cb.cells(), cb.centroids())
    }

    #[test]
    fn distinct_labels_equal_k() {
        let labels = [3, 3, 7, 7];
        let cb = kmedian(&labels, 2).unwrap();
        assert_eq!(cb.cells(), &[vec![0, 1], vec![2, 3]]);
        assert_eq!(cost_of(&labels, &cb), 0);

        let labels = [0, 1, 2];
        let cb = kmedian(&labels, 3).unwrap();
        assert_eq!(cb.cells(), &[vec![0], vec![1], vec![2]]);
        assert_eq!(cost_of(&labels, &cb), 0);
    }

    #[test]
    fn two_clusters_of_three_points() {
        // Exhaustive 2-partitions of {0, 1, 5}: {0,1}{5} costs 1, {0}{1,5} costs 4,
        // {0,5}{1} costs 5.
        let labels = [0, 1, 5];
        assert_eq!(exhaustive_kmedian(&labels, 2), 1);
        let cb = kmedian(&labels, 2).unwrap();
        assert_eq!(cb.cells(), &[vec![0, 1], vec![2]]);
        assert_eq!(cost_of(&labels, &cb), 1);
        assert_eq!(cb.centroids()[1], 5);
        assert!(cb.centroids()[0] <= 1);
    }

    #[test]
    fn fewer_distinct_labels_than_k() {
        let labels = [4, 4, 4, 9];
        let cb = kmedian(&labels, 3).unwrap();
        assert_eq!(cb.num_cells(), 2);
        assert_eq!(cb.budget(), 3);
        assert_eq!(cost_of(&labels, &cb), 0);
    }

    #[test]
    fn errors() {
        assert!(kmedian(&[], 1).is_err());
        assert!(kmedian(&[1, 2], 0).is_err());
        assert!(kmedian(&[1, 2], 3).is_err());
    }

    #[test]
    fn single_cluster_uses_median() {
        let labels = [0, 0, 24, 1];
        let cb = kmedian(&labels, 1).unwrap();
        assert_eq!(cb.centroids(), &[0]);
        assert_eq!(cost_of(&labels, &cb), 25);
    }

    proptest! {
        #[test]
        fn matches_exhaustive_optimum(
            labels in prop::collection::vec(0usize..5, 1..=7),
            k in 1usize..=4,
        ) {
            prop_assume!(k <= labels.len());
            let cb = kmedian(&labels, k).unwrap();
            prop_assert_eq!(cost_of(&labels, &cb), exhaustive_kmedian(&labels, k));
        }

        #[test]
        fn partition_laws(labels in prop::collection::vec(0usize..30, 1..60), k in 1usize..8) {
            prop_assume!(k <= labels.len());
            let cb = kmedian(&labels, k).unwrap();
            let mut seen = vec![false; labels.len()];
            for cell in cb.cells() {
                prop_assert!(!cell.is_empty());
                for &e in cell {
                    prop_assert!(!seen[e]);
                    seen[e] = true;
                }
            }
            prop_assert!(seen.iter().all(|&s| s));
            prop_assert!(cb.num_cells() <= k);
        }
    }
}
