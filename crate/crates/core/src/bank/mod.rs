//! Budgeted memory-bank construction in whitened space.
//!
//! Four constructors share the farthest-first coverage primitive: the
//! offline greedy coreset, the streaming merge-reduce k-center, streaming
//! mini-batch k-means, and the two-pass residual-informed variant. All
//! selection is deterministic: the seed is the first point in stream
//! order and ties break toward the lowest index.

mod farthest;
mod geores;
mod kmeans;
mod merge_reduce;

pub use farthest::greedy_coreset;
pub use geores::{default_candidate_pool, geores, GeoresOutcome};
pub use kmeans::MiniBatchKMeans;
pub use merge_reduce::{StreamingKCenter, DEFAULT_MAX_LEVELS};

pub(crate) use farthest::sq_dist;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which constructor produced a bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructorKind {
    GreedyCoreset,
    MergeReduceKCenter,
    MiniBatchKMeans,
    GeoRes,
}

/// Budgeted matrix of whitened representatives plus constructor metadata.
#[derive(Debug, Clone)]
pub struct MemoryBank {
    vectors: Array2<f64>,
    constructor: ConstructorKind,
    budget: usize,
    local_budget: Option<usize>,
    /// Every row is an observed input point (coverage constructors).
    provenance_observed: bool,
    /// Finalised before the budget could be met (k-means only).
    underfilled: bool,
}

impl MemoryBank {
    pub(crate) fn new(
        vectors: Array2<f64>,
        constructor: ConstructorKind,
        budget: usize,
        local_budget: Option<usize>,
        provenance_observed: bool,
        underfilled: bool,
    ) -> Self {
        Self {
            vectors,
            constructor,
            budget,
            local_budget,
            provenance_observed,
            underfilled,
        }
    }

    pub fn vectors(&self) -> &Array2<f64> {
        &self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn constructor(&self) -> ConstructorKind {
        self.constructor
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn local_budget(&self) -> Option<usize> {
        self.local_budget
    }

    pub fn provenance_observed(&self) -> bool {
        self.provenance_observed
    }

    pub fn underfilled(&self) -> bool {
        self.underfilled
    }
}

/// Logical counter of retained representative rows, sampled at operation
/// boundaries. Backs the bounded-memory assertions.
#[derive(Debug, Clone, Default)]
pub struct RowMeter {
    current: usize,
    peak: usize,
}

impl RowMeter {
    pub fn add(&mut self, rows: usize) {
        self.current += rows;
        self.peak = self.peak.max(self.current);
    }

    pub fn remove(&mut self, rows: usize) {
        self.current = self.current.saturating_sub(rows);
    }

    /// Record a peak that includes `extra` transient rows.
    pub fn observe_extra(&mut self, extra: usize) {
        self.peak = self.peak.max(self.current + extra);
    }

    pub fn current(&self) -> usize {
        self.current
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

/// Re-iterable stream of same-width row chunks; the contract behind the
/// two-pass constructor and multi-pass fitting.
pub trait ChunkSource {
    fn traverse(&self) -> Result<Box<dyn Iterator<Item = Result<Array2<f64>>> + '_>>;
}

impl ChunkSource for Vec<Array2<f64>> {
    fn traverse(&self) -> Result<Box<dyn Iterator<Item = Result<Array2<f64>>> + '_>> {
        Ok(Box::new(self.iter().map(|c| Ok(c.clone()))))
    }
}

/// Split budget `K` into a main coverage share and a residual-tail share,
/// keeping both positive.
pub fn budget_split(k: usize, alpha: f64) -> Result<(usize, usize)> {
    if k < 2 {
        return Err(Error::InvalidParameter("budget split requires K >= 2"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter("alpha must be in (0, 1)"));
    }
    let k0_raw = (alpha * k as f64).round() as usize;
    let k0 = k0_raw.max(1).min(k - 1);
    Ok((k0, k - k0))
}

/// Exact bit pattern of a row, used for duplicate detection.
pub(crate) fn row_key(row: ndarray::ArrayView1<f64>) -> Vec<u64> {
    row.iter().map(|x| x.to_bits()).collect()
}

/// Dedupe `candidates` (exact bitwise row equality, order preserved), fill
/// any remaining capacity from `pool` by farthest-first against the
/// current set, and truncate to `k`.
pub fn pi_k_complete(
    candidates: &Array2<f64>,
    pool: &Array2<f64>,
    k: usize,
) -> Array2<f64> {
    use std::collections::HashSet;
    let dim = if candidates.ncols() > 0 {
        candidates.ncols()
    } else {
        pool.ncols()
    };
    let mut seen: HashSet<Vec<u64>> = HashSet::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for row in candidates.rows() {
        if rows.len() >= k {
            break;
        }
        if seen.insert(row_key(row)) {
            rows.push(row.to_vec());
        }
    }
    while rows.len() < k {
        let mut best: Option<(usize, f64)> = None;
        for (i, row) in pool.rows().into_iter().enumerate() {
            if seen.contains(&row_key(row)) {
                continue;
            }
            let d = rows
                .iter()
                .map(|r| {
                    row.iter()
                        .zip(r.iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min);
            let better = match best {
                None => true,
                Some((_, bd)) => d > bd,
            };
            if better {
                best = Some((i, d));
            }
        }
        match best {
            Some((i, _)) => {
                seen.insert(row_key(pool.row(i)));
                rows.push(pool.row(i).to_vec());
            }
            None => break,
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Array2::from_shape_vec((rows.len(), dim), flat).expect("consistent row widths")
}
