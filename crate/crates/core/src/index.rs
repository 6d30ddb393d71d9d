//! Exact flat nearest-neighbour search over the memory bank.
//!
//! Distances are squared Euclidean, computed as `|a|^2 + |b|^2 - 2ab`
//! with cached row norms and clamped at zero. Results are identical to a
//! naive scan; ties break toward the lower row index.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::bank::MemoryBank;
use crate::error::{Error, Result};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct FlatIndex {
    vectors: Array2<f64>,
    norms: Vec<f64>,
}

/// One query's neighbours: squared distances ascending with row ids.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchHits {
    pub distances: Vec<f64>,
    pub ids: Vec<usize>,
}

impl FlatIndex {
    pub fn build(bank: &MemoryBank) -> Result<Self> {
        Self::from_rows(bank.vectors().clone())
    }

    pub fn from_rows(vectors: Array2<f64>) -> Result<Self> {
        if vectors.nrows() == 0 {
            return Err(Error::EmptyBank);
        }
        let norms = vectors.rows().into_iter().map(|r| r.dot(&r)).collect();
        Ok(Self { vectors, norms })
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

    /// Exact top-`j` rows by squared distance, ascending.
    pub fn search(&self, query: &ArrayView1<f64>, j: usize) -> Result<SearchHits> {
        if query.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: query.len(),
            });
        }
        if j == 0 {
            return Err(Error::InvalidParameter("neighbour count must be >= 1"));
        }
        let qn = query.dot(query);
        let take = j.min(self.len());
        // (distance, id) ordered ascending with lower ids first on ties
        let mut hits: Vec<(f64, usize)> = Vec::with_capacity(take + 1);
        for (i, row) in self.vectors.rows().into_iter().enumerate() {
            let d = (qn + self.norms[i] - 2.0 * query.dot(&row)).max(0.0);
            let pos = hits.partition_point(|&(hd, hi)| hd < d || (hd == d && hi < i));
            if pos < take {
                hits.insert(pos, (d, i));
                hits.truncate(take);
            }
        }
        Ok(SearchHits {
            distances: hits.iter().map(|&(d, _)| d).collect(),
            ids: hits.iter().map(|&(_, i)| i).collect(),
        })
    }

    /// Row-wise search; each result is identical to a `search` call.
    pub fn search_batch(&self, queries: &ArrayView2<f64>, j: usize) -> Result<Vec<SearchHits>> {
        if queries.nrows() > 0 && queries.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: queries.ncols(),
            });
        }
        let run = |row: ArrayView1<f64>| self.search(&row, j);
        #[cfg(feature = "parallel")]
        {
            queries
                .axis_iter(Axis(0))
                .into_par_iter()
                .map(run)
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            queries.axis_iter(Axis(0)).map(run).collect()
        }
    }

    /// Nearest squared distance only, for scoring hot paths.
    pub fn nearest_sq(&self, query: &ArrayView1<f64>) -> Result<(f64, usize)> {
        let hits = self.search(query, 1)?;
        Ok((hits.distances[0], hits.ids[0]))
    }
}
