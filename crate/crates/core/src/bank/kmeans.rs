//! Streaming mini-batch k-means with count-based step sizes.
//!
//! Centroids initialise from the first `k` distinct points; every later
//! sample moves its nearest centroid by `1/count` of the gap. The bank
//! holds centroids, not observed points, which is the contrast this
//! constructor exists to provide.

use ndarray::{Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};

use super::{ConstructorKind, MemoryBank};

#[derive(Debug, Clone)]
pub struct MiniBatchKMeans {
    budget: usize,
    #[allow(dead_code)]
    seed: u64, // reserved for randomised restarts; initialisation is data-order driven
    centroids: Vec<Vec<f64>>,
    counts: Vec<u64>,
    dim: Option<usize>,
    moved: bool,
}

impl MiniBatchKMeans {
    pub fn new(budget: usize, seed: u64) -> Result<Self> {
        if budget == 0 {
            return Err(Error::InvalidParameter("bank budget must be >= 1"));
        }
        Ok(Self {
            budget,
            seed,
            centroids: Vec::new(),
            counts: Vec::new(),
            dim: None,
            moved: false,
        })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn centroid_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn retained_rows(&self) -> usize {
        self.centroids.len()
    }

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
        for row in chunk.rows() {
            self.absorb_point(row);
        }
        Ok(())
    }

    fn absorb_point(&mut self, z: ArrayView1<f64>) {
        if self.centroids.len() < self.budget {
            let duplicate = self
                .centroids
                .iter()
                .position(|c| c.iter().zip(z.iter()).all(|(a, b)| a == b));
            if duplicate.is_none() {
                self.centroids.push(z.to_vec());
                self.counts.push(1);
                return;
            }
        }
        // nearest centroid, lowest index on ties
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d = z
                .iter()
                .zip(c.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        self.counts[best] += 1;
        let step = 1.0 / self.counts[best] as f64;
        let centroid = &mut self.centroids[best];
        let mut any = false;
        for (c, &x) in centroid.iter_mut().zip(z.iter()) {
            let delta = x - *c;
            if delta != 0.0 {
                any = true;
            }
            *c += step * delta;
        }
        if any {
            self.moved = true;
        }
    }

    /// Centroid matrix. Finalising before `budget` distinct points have
    /// been seen yields the points seen so far with the underfilled flag.
    pub fn finalize(self) -> Result<MemoryBank> {
        if self.centroids.is_empty() {
            return Err(Error::EmptyInput);
        }
        let dim = self.dim.expect("dim set after first absorb");
        let rows = self.centroids.len();
        let flat: Vec<f64> = self.centroids.into_iter().flatten().collect();
        let vectors = Array2::from_shape_vec((rows, dim), flat).expect("rectangular centroids");
        let underfilled = rows < self.budget;
        Ok(MemoryBank::new(
            vectors,
            ConstructorKind::MiniBatchKMeans,
            self.budget,
            None,
            !self.moved,
            underfilled,
        ))
    }
}
