use rayon::prelude::*;

use crate::Matrix;

/// Exact Euclidean nearest neighbors of every query row among `reference`
/// rows, ascending by distance (ties broken by index).
///
/// With `exclude_self`, query `i` skips reference row `i`; only meaningful when
/// queries and reference are the same matrix.
pub fn exact_knn(reference: &Matrix, queries: &Matrix, k: usize, exclude_self: bool) -> Vec<Vec<(usize, f64)>> {
    let k = k.min(reference.rows() - usize::from(exclude_self));
    (0..queries.rows())
        .into_par_iter()
        .map(|i| {
            let q = queries.row(i);
            let mut best: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
            for j in 0..reference.rows() {
                if exclude_self && i == j {
                    continue;
                }
                let d2 = squared_distance(q, reference.row(j));
                if best.len() == k && d2 >= best[k - 1].1 {
                    continue;
                }
                let pos = best.partition_point(|&(_, b)| b <= d2);
                best.insert(pos, (j, d2));
                best.truncate(k);
            }
            best.into_iter().map(|(j, d2)| (j, d2.sqrt())).collect()
        })
        .collect()
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}
