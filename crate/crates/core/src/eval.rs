//! Image-level ranking metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// AUROC result with the class counts behind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub auroc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub per_image: Vec<ScoredImage>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoredImage {
    pub image_id: String,
    pub score: f64,
    pub label: u8,
}

/// Rank-based AUROC with average ranks for ties: the probability that a
/// random positive outranks a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuroc);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0usize;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks are 1-based; tied entries share the average rank
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Arithmetic mean over evaluation units.
pub fn macro_average(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn report(per_image: Vec<ScoredImage>) -> Result<EvalReport> {
    let scores: Vec<f64> = per_image.iter().map(|r| r.score).collect();
    let labels: Vec<u8> = per_image.iter().map(|r| r.label).collect();
    let value = auroc(&scores, &labels)?;
    Ok(EvalReport {
        auroc: value,
        n_pos: labels.iter().filter(|&&l| l == 1).count(),
        n_neg: labels.iter().filter(|&&l| l == 0).count(),
        per_image,
    })
}

/// Exhaustive pairwise oracle, O(P*N); identical to the rank formulation.
pub fn auroc_pairwise(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pos: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 1)
        .map(|(&s, _)| s)
        .collect();
    let neg: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == 0)
        .map(|(&s, _)| s)
        .collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::UndefinedAuroc);
    }
    let mut total = 0.0f64;
    for &p in &pos {
        for &n in &neg {
            if p > n {
                total += 1.0;
            } else if p == n {
                total += 0.5;
            }
        }
    }
    Ok(total / (pos.len() as f64 * neg.len() as f64))
}
