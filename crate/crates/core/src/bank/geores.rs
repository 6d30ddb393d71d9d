//! Two-pass residual-informed k-center construction.
//!
//! Pass one builds a provisional coverage bank. Pass two scores every
//! point by its residual distance to that bank, keeps the largest
//! residuals in a bounded heap, and builds the main bank under the split
//! budget. Tail representatives are then chosen greedily from the
//! residual candidates for diversity against the main bank, and the
//! result is deduplicated and completed from the coverage pool.

use std::collections::BinaryHeap;

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};

use super::farthest::sq_dist;
use super::{
    budget_split, pi_k_complete, ChunkSource, ConstructorKind, MemoryBank, StreamingKCenter,
};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Bank plus the instrumentation needed by bounded-memory assertions.
#[derive(Debug)]
pub struct GeoresOutcome {
    pub bank: MemoryBank,
    /// Peak retained rows across both passes (summaries, candidate heap,
    /// and the provisional bank held during pass two).
    pub peak_rows: usize,
}

/// Candidate ordered by residual, earlier arrival winning ties.
#[derive(Debug, Clone)]
struct Candidate {
    residual_sq: f64,
    arrival: u64,
    row: Vec<f64>,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.residual_sq == other.residual_sq && self.arrival == other.arrival
    }
}
impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // higher residual ranks higher; ties prefer the earlier arrival
        self.residual_sq
            .partial_cmp(&other.residual_sq)
            .expect("finite residuals")
            .then(other.arrival.cmp(&self.arrival))
    }
}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// Default candidate-pool size when the configuration leaves it unset.
pub fn default_candidate_pool(tail_budget: usize) -> usize {
    (16 * tail_budget).max(1024)
}

pub fn geores<S: ChunkSource + ?Sized>(
    stream: &S,
    budget: usize,
    alpha: f64,
    q: usize,
    local_budget: usize,
    max_levels: usize,
) -> Result<GeoresOutcome> {
    let (k0, kt) = budget_split(budget, alpha)?;
    if q < kt {
        return Err(Error::InvalidParameter(
            "candidate pool q must be at least the tail budget",
        ));
    }

    // pass 1: provisional coverage set
    let mut provisional = StreamingKCenter::with_max_levels(budget, local_budget, max_levels)?;
    for chunk in stream.traverse()? {
        provisional.absorb(&chunk?.view())?;
    }
    let pass1_peak = provisional.peak_retained();
    let provisional = provisional.finalize()?;
    let p_rows = provisional.vectors();

    // pass 2: residual candidates plus the main bank
    let mut main = StreamingKCenter::with_max_levels(k0, local_budget, max_levels)?;
    let mut heap: BinaryHeap<std::cmp::Reverse<Candidate>> = BinaryHeap::with_capacity(q + 1);
    let mut arrival = 0u64;
    for chunk in stream.traverse()? {
        let chunk = chunk?;
        let view = chunk.view();
        let residuals = residuals_to(&view, &p_rows.view());
        for (i, &r) in residuals.iter().enumerate() {
            let cand = Candidate {
                residual_sq: r,
                arrival,
                row: chunk.row(i).to_vec(),
            };
            arrival += 1;
            if heap.len() < q {
                heap.push(std::cmp::Reverse(cand));
            } else if let Some(worst) = heap.peek() {
                if cand > worst.0 {
                    heap.pop();
                    heap.push(std::cmp::Reverse(cand));
                }
            }
        }
        main.absorb(&view)?;
    }
    let pass2_peak = main.peak_retained() + heap.len() + p_rows.nrows();
    let main = main.finalize()?;

    // greedy tail selection from the residual candidates
    let mut candidates: Vec<Candidate> = heap.into_iter().map(|r| r.0).collect();
    candidates.sort_by(|a, b| b.cmp(a));
    let dim = p_rows.ncols();
    let mut tail: Vec<Vec<f64>> = Vec::with_capacity(kt);
    let mut taken = vec![false; candidates.len()];
    for _ in 0..kt {
        let mut best: Option<(usize, f64)> = None;
        for (i, cand) in candidates.iter().enumerate() {
            if taken[i] {
                continue;
            }
            let mut d = f64::INFINITY;
            for m in main.vectors().rows() {
                let dd: f64 = m
                    .iter()
                    .zip(cand.row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d = d.min(dd);
            }
            for t in &tail {
                let dd: f64 = t
                    .iter()
                    .zip(cand.row.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                d = d.min(dd);
            }
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
                taken[i] = true;
                tail.push(candidates[i].row.clone());
            }
            None => break,
        }
    }

    // dedupe and complete from the coverage pool
    let tail_rows = Array2::from_shape_vec(
        (tail.len(), dim),
        tail.into_iter().flatten().collect(),
    )
    .expect("rectangular tail");
    let selected = ndarray::concatenate(Axis(0), &[main.vectors().view(), tail_rows.view()])
        .expect("same dimension");
    let pool = ndarray::concatenate(Axis(0), &[p_rows.view(), main.vectors().view()])
        .expect("same dimension");
    let vectors = pi_k_complete(&selected, &pool, budget);

    Ok(GeoresOutcome {
        bank: MemoryBank::new(
            vectors,
            ConstructorKind::GeoRes,
            budget,
            Some(local_budget),
            true,
            false,
        ),
        peak_rows: pass1_peak.max(pass2_peak),
    })
}

/// Squared residual of every chunk row against the provisional bank.
fn residuals_to(chunk: &ArrayView2<f64>, bank: &ArrayView2<f64>) -> Vec<f64> {
    let one = |i: usize| -> f64 {
        bank.rows()
            .into_iter()
            .map(|b| sq_dist(chunk.row(i), b))
            .fold(f64::INFINITY, f64::min)
    };
    #[cfg(feature = "parallel")]
    {
        (0..chunk.nrows()).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..chunk.nrows()).map(one).collect()
    }
}
