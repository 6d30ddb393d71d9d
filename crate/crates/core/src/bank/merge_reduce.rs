//! Streaming k-center construction by hierarchical merge-reduce.
//!
//! Incoming chunks are reduced to local farthest-first summaries and
//! stored in a binary-counter level structure: two summaries on the same
//! level are merged (set union) and reduced, carrying upward. Levels above
//! `max_levels` saturate into the top slot, so the retained row count is a
//! fixed function of the budgets and level cap, independent of stream
//! length.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

use super::farthest::{farthest_first_indices, select_rows};
use super::{ConstructorKind, MemoryBank, RowMeter};

#[derive(Debug, Clone)]
pub struct StreamingKCenter {
    budget: usize,
    local_budget: usize,
    max_levels: usize,
    levels: Vec<Option<Array2<f64>>>,
    dim: Option<usize>,
    meter: RowMeter,
    chunks_absorbed: u64,
}

pub const DEFAULT_MAX_LEVELS: usize = 6;

impl StreamingKCenter {
    pub fn new(budget: usize, local_budget: usize) -> Result<Self> {
        Self::with_max_levels(budget, local_budget, DEFAULT_MAX_LEVELS)
    }

    pub fn with_max_levels(budget: usize, local_budget: usize, max_levels: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidParameter("bank budget must be >= 1"));
        }
        if local_budget == 0 {
            return Err(Error::InvalidParameter("local budget must be >= 1"));
        }
        if max_levels == 0 {
            return Err(Error::InvalidParameter("max_levels must be >= 1"));
        }
        Ok(Self {
            budget,
            local_budget,
            max_levels,
            levels: Vec::new(),
            dim: None,
            meter: RowMeter::default(),
            chunks_absorbed: 0,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn local_budget(&self) -> usize {
        self.local_budget
    }

    pub fn chunks_absorbed(&self) -> u64 {
        self.chunks_absorbed
    }

    /// Rows currently retained across all summaries.
    pub fn retained_rows(&self) -> usize {
        self.meter.current()
    }

    /// Largest retained-row count observed so far.
    pub fn peak_retained(&self) -> usize {
        self.meter.peak()
    }

    /// Merged summaries may not drop below the final budget, otherwise a
    /// long stream could never fill a bank larger than the local budget.
    fn merge_cap(&self) -> usize {
        self.local_budget.max(self.budget)
    }

    /// Reduce a chunk to its local summary and push it through the level
    /// structure.
    pub fn absorb(&mut self, chunk: &ArrayView2<f64>) -> Result<()> {
        if chunk.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        match self.dim {
            None => self.dim = Some(chunk.ncols()),
            Some(d) if d != chunk.ncols() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: chunk.ncols(),
                });
            }
            _ => {}
        }
        let idx = farthest_first_indices(chunk, self.local_budget);
        let mut carry = select_rows(chunk, &idx);
        self.meter.add(carry.nrows());
        self.chunks_absorbed += 1;

        let mut level = 0usize;
        loop {
            if level >= self.levels.len() {
                self.levels.resize(level + 1, None);
            }
            match self.levels[level].take() {
                None => {
                    self.levels[level] = Some(carry);
                    break;
                }
                Some(existing) => {
                    let removed = existing.nrows() + carry.nrows();
                    let merged = self.reduce_union(existing, carry);
                    self.meter.remove(removed);
                    self.meter.add(merged.nrows());
                    if level == self.max_levels {
                        self.levels[level] = Some(merged);
                        break;
                    }
                    carry = merged;
                    level += 1;
                }
            }
        }
        Ok(())
    }

    /// Union of two summaries, older rows first, reduced to the merge cap.
    fn reduce_union(&self, older: Array2<f64>, newer: Array2<f64>) -> Array2<f64> {
        let union = ndarray::concatenate(Axis(0), &[older.view(), newer.view()])
            .expect("summaries share a dimension");
        let idx = farthest_first_indices(&union.view(), self.merge_cap());
        select_rows(&union.view(), &idx)
    }

    /// Merge all outstanding summaries and reduce to the final budget.
    pub fn finalize(self) -> Result<MemoryBank> {
        if self.chunks_absorbed == 0 {
            return Err(Error::EmptyInput);
        }
        // oldest data lives on the highest level
        let views: Vec<ArrayView2<f64>> = self
            .levels
            .iter()
            .rev()
            .flatten()
            .map(|m| m.view())
            .collect();
        let union = ndarray::concatenate(Axis(0), &views).expect("same dimension");
        let idx = farthest_first_indices(&union.view(), self.budget);
        let vectors = select_rows(&union.view(), &idx);
        Ok(MemoryBank::new(
            vectors,
            ConstructorKind::MergeReduceKCenter,
            self.budget,
            Some(self.local_budget),
            true,
            false,
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::greedy_coreset;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn covering_radius(points: &Array2<f64>, bank: &Array2<f64>) -> f64 {
        points
            .rows()
            .into_iter()
            .map(|p| {
                bank.rows()
                    .into_iter()
                    .map(|b| super::super::sq_dist(p, b))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max)
            .sqrt()
    }

    #[test]
    fn rejects_degenerate_budgets() {
        assert!(StreamingKCenter::new(0, 256).is_err());
        assert!(StreamingKCenter::new(1000, 0).is_err());
        assert!(StreamingKCenter::new(1, 1).is_ok());
        let c = StreamingKCenter::new(1000, 256).unwrap();
        assert_eq!(c.budget(), 1000);
        assert_eq!(c.local_budget(), 256);
    }

    #[test]
    fn small_chunk_is_kept_verbatim() {
        let mut c = StreamingKCenter::new(8, 16).unwrap();
        let chunk = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        c.absorb(&chunk.view()).unwrap();
        assert_eq!(c.retained_rows(), 3);
        let bank = c.finalize().unwrap();
        assert_eq!(bank.vectors(), &chunk);
    }

    #[test]
    fn union_below_local_budget_survives_merge() {
        let mut c = StreamingKCenter::new(8, 16).unwrap();
        c.absorb(&array![[0.0], [1.0]].view()).unwrap();
        c.absorb(&array![[2.0], [3.0]].view()).unwrap();
        // both chunks merged into one level-1 summary holding the union
        assert_eq!(c.retained_rows(), 4);
        let bank = c.finalize().unwrap();
        let mut vals: Vec<f64> = bank.vectors().iter().copied().collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(vals, vec![0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn single_chunk_matches_offline_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pts = Array2::from_shape_fn((50, 3), |_| rng.gen_range(-1.0..1.0));
        let mut c = StreamingKCenter::new(7, 64).unwrap();
        c.absorb(&pts.view()).unwrap();
        let streamed = c.finalize().unwrap();
        let offline = greedy_coreset(&pts.view(), 7).unwrap();
        assert_eq!(streamed.vectors(), offline.vectors());
    }

    #[test]
    fn finalize_requires_data() {
        let c = StreamingKCenter::new(4, 4).unwrap();
        assert!(matches!(c.finalize(), Err(Error::EmptyInput)));
    }

    #[test]
    fn distinct_points_below_budget_all_kept() {
        let mut c = StreamingKCenter::new(100, 8).unwrap();
        let a = array![[0.0], [5.0]];
        let b = array![[9.0], [14.0]];
        c.absorb(&a.view()).unwrap();
        c.absorb(&b.view()).unwrap();
        let bank = c.finalize().unwrap();
        assert_eq!(bank.len(), 4);
    }

    #[test]
    fn peak_retained_respects_level_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m_c = 64usize;
        let chunk_rows = 100usize;
        let n_chunks = 100usize; // 10_000 points
        let mut c = StreamingKCenter::new(8, m_c).unwrap();
        for _ in 0..n_chunks {
            let chunk = Array2::from_shape_fn((chunk_rows, 2), |_| rng.gen_range(-10.0..10.0));
            c.absorb(&chunk.view()).unwrap();
        }
        let levels = (n_chunks as f64).log2().ceil() as usize;
        assert!(
            c.peak_retained() <= m_c * (levels + 2),
            "peak {} exceeds {}",
            c.peak_retained(),
            m_c * (levels + 2)
        );
    }

    #[test]
    fn peak_retained_is_stream_length_independent() {
        let run = |n_chunks: usize| -> usize {
            let mut rng = ChaCha8Rng::seed_from_u64(10);
            let mut c = StreamingKCenter::with_max_levels(16, 32, 3).unwrap();
            for _ in 0..n_chunks {
                let chunk = Array2::from_shape_fn((64, 2), |_| rng.gen_range(-1.0..1.0));
                c.absorb(&chunk.view()).unwrap();
            }
            c.peak_retained()
        };
        // both runs are deep enough to saturate the level structure
        assert_eq!(run(40), run(80));
    }

    #[test]
    fn streamed_radius_close_to_offline() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let all = Array2::from_shape_fn((4000, 2), |_| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let mut c = StreamingKCenter::new(8, 64).unwrap();
        for chunk in all.axis_chunks_iter(Axis(0), 200) {
            c.absorb(&chunk).unwrap();
        }
        let streamed = c.finalize().unwrap();
        let offline = greedy_coreset(&all.view(), 8).unwrap();
        let r_streamed = covering_radius(&all, streamed.vectors());
        let r_offline = covering_radius(&all, offline.vectors());
        assert!(
            r_streamed <= 2.0 * r_offline + 1e-9,
            "streamed {r_streamed} vs offline {r_offline}"
        );
    }

    #[test]
    fn deterministic_across_runs() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut c = StreamingKCenter::new(12, 16).unwrap();
            for _ in 0..9 {
                let chunk = Array2::from_shape_fn((40, 3), |_| rng.gen_range(-1.0..1.0));
                c.absorb(&chunk.view()).unwrap();
            }
            c.finalize().unwrap()
        };
        let a = build();
        let b = build();
        assert_eq!(a.vectors(), b.vectors());
    }

    #[test]
    fn bank_rows_are_observed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let all = Array2::from_shape_fn((500, 2), |_| rng.gen_range(-1.0..1.0));
        let mut c = StreamingKCenter::new(10, 8).unwrap();
        for chunk in all.axis_chunks_iter(Axis(0), 50) {
            c.absorb(&chunk).unwrap();
        }
        let bank = c.finalize().unwrap();
        for row in bank.vectors().rows() {
            let found = all
                .rows()
                .into_iter()
                .any(|r| r.iter().zip(row.iter()).all(|(a, b)| a == b));
            assert!(found);
        }
    }
}
