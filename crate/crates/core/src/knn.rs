//! Exact brute-force k-nearest-neighbor search.
//!
//! Neighbors are ordered by (distance, row index), so equal distances resolve
//! to the lower row index and results never depend on scheduling.

use std::cmp::Ordering;

use crate::par::{map_indexed, Execution};
use crate::tensor_io::Tensor2D;

/// One search hit: row index and Euclidean distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` rows of `data` closest to `query`, skipping row `exclude`.
///
/// Returns fewer than `k` hits only when `data` has fewer candidate rows.
pub fn nearest(data: &Tensor2D, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<Neighbor> {
    let mut cand: Vec<(f64, usize)> = data
        .row_iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != exclude)
        .map(|(i, row)| (squared_distance(row, query), i))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance_then_index);
    cand.into_iter()
        .map(|(d2, index)| Neighbor {
            index,
            distance: d2.sqrt(),
        })
        .collect()
}

/// `k` nearest neighbors of each listed row, excluding the row itself.
pub fn nearest_for_rows(data: &Tensor2D, rows: &[usize], k: usize, exec: Execution) -> Vec<Vec<Neighbor>> {
    map_indexed(exec, rows.len(), |q| {
        let i = rows[q];
        nearest(data, data.row(i), k, Some(i))
    })
}
