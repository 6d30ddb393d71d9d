//! Greedy farthest-first selection, the coverage primitive behind every
//! k-center style constructor here.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

use super::{ConstructorKind, MemoryBank};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[inline]
pub(crate) fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let d = x - y;
        s += d * d;
    }
    s
}

/// Indices selected by farthest-first traversal, in selection order.
///
/// Seeds at index 0, repeatedly adds the point with the largest distance
/// to the selected set (lowest index on ties) and stops early once the
/// largest remaining distance is zero, which dedupes exact repeats.
pub(crate) fn farthest_first_indices(points: &ArrayView2<f64>, budget: usize) -> Vec<usize> {
    let n = points.nrows();
    if n == 0 || budget == 0 {
        return Vec::new();
    }
    let cap = budget.min(n);
    let mut selected = Vec::with_capacity(cap);
    selected.push(0usize);
    let mut min_sq: Vec<f64> = Vec::with_capacity(n);
    let seed = points.row(0);
    update_min(points, &mut min_sq, seed, true);

    while selected.len() < cap {
        let mut best = 0usize;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_sq.iter().enumerate() {
            if d > best_d {
                best_d = d;
                best = i;
            }
        }
        if best_d <= 0.0 {
            break;
        }
        selected.push(best);
        let center = points.row(best);
        update_min(points, &mut min_sq, center, false);
    }
    selected
}

/// Distance updates below this many multiply-adds run sequentially; the
/// dispatch overhead dominates smaller sweeps.
#[cfg(feature = "parallel")]
const PAR_MIN_WORK: usize = 1 << 19;

fn update_min(points: &ArrayView2<f64>, min_sq: &mut Vec<f64>, center: ArrayView1<f64>, init: bool) {
    if init {
        min_sq.clear();
        min_sq.resize(points.nrows(), f64::INFINITY);
    }
    #[cfg(feature = "parallel")]
    if points.nrows() * points.ncols() >= PAR_MIN_WORK {
        min_sq.par_iter_mut().enumerate().for_each(|(i, m)| {
            let d = sq_dist(points.row(i), center);
            if d < *m {
                *m = d;
            }
        });
        return;
    }
    for (i, m) in min_sq.iter_mut().enumerate() {
        let d = sq_dist(points.row(i), center);
        if d < *m {
            *m = d;
        }
    }
}

/// Materialise the selected rows of `points` in selection order.
pub(crate) fn select_rows(points: &ArrayView2<f64>, indices: &[usize]) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros((indices.len(), points.ncols()));
    for (dst, &src) in indices.iter().enumerate() {
        out.row_mut(dst).assign(&points.row(src));
    }
    out
}

/// Offline greedy coreset over a materialised point set.
pub fn greedy_coreset(points: &ArrayView2<f64>, budget: usize) -> Result<MemoryBank> {
    if points.nrows() == 0 {
        return Err(Error::EmptyInput);
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("bank budget must be >= 1"));
    }
    let idx = farthest_first_indices(points, budget);
    let vectors = select_rows(points, &idx);
    Ok(MemoryBank::new(
        vectors,
        ConstructorKind::GreedyCoreset,
        budget,
        None,
        true,
        false,
    ))
}
