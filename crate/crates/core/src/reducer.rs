//! Incrementally fitted linear dimensionality reduction.
//!
//! The fit state follows the mean-corrected incremental SVD construction:
//! each mini-batch is centred at its own mean and stacked with the scaled
//! previous components and a mean-correction row, and the stack's thin SVD
//! yields the updated basis. Finalisation picks the retained dimension by
//! cumulative explained-variance fraction.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::jacobi_eigh;

/// Incremental fit state. Single-writer; finalize into a [`Reducer`].
#[derive(Debug, Clone)]
pub struct ReducerFit {
    d0: usize,
    k_max: usize,
    seen: u64,
    mean: Array1<f64>,
    // per-coordinate unnormalised second central moments; their sum tracks
    // the total variance used by the retained-dimension rule
    var_m2: Array1<f64>,
    components: Array2<f64>, // rows, k_max x d0 once seeded
    singular_values: Array1<f64>,
    seeded: bool,
}

/// Finalised projection `R(u) = W^T (u - u_bar)`.
#[derive(Debug, Clone)]
pub struct Reducer {
    w: Array2<f64>, // d0 x k, orthonormal columns
    u_bar: Array1<f64>,
    explained_variance: Array1<f64>,
}

impl ReducerFit {
    pub fn new(d0: usize, k_max: usize) -> Result<Self> {
        if d0 == 0 {
            return Err(Error::InvalidDimension);
        }
        let k_max = k_max.min(d0);
        if k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be >= 1"));
        }
        Ok(Self {
            d0,
            k_max,
            seen: 0,
            mean: Array1::zeros(d0),
            var_m2: Array1::zeros(d0),
            components: Array2::zeros((0, d0)),
            singular_values: Array1::zeros(0),
            seeded: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.d0
    }

    pub fn tracked_components(&self) -> usize {
        self.k_max
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mean
    }

    pub fn components(&self) -> &Array2<f64> {
        &self.components
    }

    pub fn singular_values(&self) -> &Array1<f64> {
        &self.singular_values
    }

    /// Fold one mini-batch of rows into the fit.
    pub fn partial_fit(&mut self, batch: &ArrayView2<f64>) -> Result<()> {
        let n_b = batch.nrows();
        if n_b == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch.ncols() != self.d0 {
            return Err(Error::DimensionMismatch {
                expected: self.d0,
                found: batch.ncols(),
            });
        }
        if !self.seeded && n_b < self.k_max {
            return Err(Error::RankDeficientSeed {
                needed: self.k_max,
                got: n_b,
            });
        }

        let n_a = self.seen as f64;
        let n_bf = n_b as f64;
        let n_total = n_a + n_bf;
        let batch_mean = batch.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = batch - &batch_mean;

        // diagonal moment combine for the total-variance denominator
        let batch_var_m2 = centered.map_axis(Axis(0), |col| col.iter().map(|x| x * x).sum());
        let delta = &batch_mean - &self.mean;
        if self.seen == 0 {
            self.var_m2 = batch_var_m2;
        } else {
            self.var_m2 = &self.var_m2
                + &batch_var_m2
                + &delta.mapv(|d| d * d * (n_a * n_bf / n_total));
        }

        let stack = if !self.seeded {
            centered
        } else {
            let corr_scale = (n_a * n_bf / n_total).sqrt();
            let correction = (&self.mean - &batch_mean).mapv(|d| d * corr_scale);
            let k = self.components.nrows();
            let mut stack = Array2::<f64>::zeros((k + n_b + 1, self.d0));
            for (i, row) in self.components.rows().into_iter().enumerate() {
                let s_i = self.singular_values[i];
                stack.row_mut(i).assign(&row.mapv(|x| x * s_i));
            }
            stack.slice_mut(s![k..k + n_b, ..]).assign(&centered);
            stack.row_mut(k + n_b).assign(&correction);
            stack
        };

        let (sing, vt) = thin_svd_rows(&stack, self.k_max)?;
        self.components = vt;
        self.singular_values = sing;
        orient_rows(&mut self.components);
        self.mean.scaled_add(n_bf / n_total, &delta);
        self.seen += n_b as u64;
        self.seeded = true;
        Ok(())
    }

    /// Explained variance per tracked component, `s_i^2 / (n - 1)`.
    pub fn explained_variance(&self) -> Array1<f64> {
        if self.seen < 2 {
            return Array1::zeros(self.singular_values.len());
        }
        let denom = self.seen as f64 - 1.0;
        self.singular_values.mapv(|s| s * s / denom)
    }

    /// Total variance (sum across all input coordinates).
    pub fn total_variance(&self) -> f64 {
        if self.seen < 2 {
            return 0.0;
        }
        self.var_m2.sum() / (self.seen as f64 - 1.0)
    }

    /// Pick the retained dimension and freeze the projection.
    pub fn finalize(&self, rho: f64) -> Result<Reducer> {
        if !self.seeded || self.seen < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                seen: self.seen as usize,
            });
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::InvalidParameter("rho must be in (0, 1]"));
        }
        let nu = self.explained_variance();
        let total = self.total_variance();
        let k = retained_dim(nu.as_slice().unwrap(), total, rho);
        let mut w = Array2::<f64>::zeros((self.d0, k));
        for j in 0..k {
            w.column_mut(j).assign(&self.components.row(j));
        }
        Ok(Reducer {
            w,
            u_bar: self.mean.clone(),
            explained_variance: nu.slice(s![..k]).to_owned(),
        })
    }
}

/// Smallest prefix of `nu` whose share of `total` reaches `rho`; falls back
/// to the count of nonzero components when the target is unreachable.
pub fn retained_dim(nu: &[f64], total: f64, rho: f64) -> usize {
    if nu.is_empty() {
        return 0;
    }
    if total <= 0.0 {
        return 1;
    }
    let mut cum = 0.0;
    for (q, v) in nu.iter().enumerate() {
        cum += v;
        if cum / total >= rho {
            return q + 1;
        }
    }
    let top = nu[0];
    let nonzero = nu.iter().filter(|&&v| v > top * 1e-12).count();
    nonzero.max(1)
}

impl Reducer {
    pub fn from_parts(
        w: Array2<f64>,
        u_bar: Array1<f64>,
        explained_variance: Array1<f64>,
    ) -> Result<Self> {
        if w.nrows() != u_bar.len() || w.ncols() != explained_variance.len() || w.ncols() == 0 {
            return Err(Error::MalformedContainer("reducer shape mismatch"));
        }
        Ok(Self {
            w,
            u_bar,
            explained_variance,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn projection(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.u_bar
    }

    pub fn explained_variance(&self) -> &Array1<f64> {
        &self.explained_variance
    }

    pub fn transform(&self, u: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if u.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: u.len(),
            });
        }
        Ok((u - &self.u_bar).dot(&self.w))
    }

    pub fn transform_batch(&self, batch: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.input_dim() && batch.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: batch.ncols(),
            });
        }
        Ok((batch - &self.u_bar).dot(&self.w))
    }
}

/// Largest-magnitude entry of each row made non-negative, for stable
/// serialization across runs.
fn orient_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > best_abs {
                best_abs = v.abs();
                best = j;
            }
        }
        if row[best] < 0.0 {
            row.mapv_inplace(|x| -x);
        }
    }
}

/// Thin SVD of `a`, returning the top `k_keep` singular values and right
/// singular vectors (as rows), via the Gram matrix on the smaller side.
fn thin_svd_rows(a: &Array2<f64>, k_keep: usize) -> Result<(Array1<f64>, Array2<f64>)> {
    let (r, c) = a.dim();
    let k_keep = k_keep.min(c);
    // Gram eigenvalues below this relative level are squared round-off of
    // an exactly rank-deficient stack, not signal
    let floor = |vals: &Array1<f64>| vals[0].max(0.0) * 1e-12;
    if r >= c {
        let gram = a.t().dot(a);
        let (vals, vecs) = jacobi_eigh(&gram.view())?;
        let cut = floor(&vals);
        let sing = Array1::from_iter(
            vals.iter()
                .take(k_keep)
                .map(|&v| if v > cut { v.sqrt() } else { 0.0 }),
        );
        let mut vt = Array2::<f64>::zeros((k_keep, c));
        for i in 0..k_keep {
            vt.row_mut(i).assign(&vecs.column(i));
        }
        Ok((sing, vt))
    } else {
        let gram = a.dot(&a.t());
        let (vals, vecs) = jacobi_eigh(&gram.view())?;
        let cut = floor(&vals);
        let take = k_keep.min(r);
        let mut sing = Array1::<f64>::zeros(k_keep);
        let mut vt = Array2::<f64>::zeros((k_keep, c));
        for i in 0..take {
            if vals[i] > cut {
                let s_i = vals[i].sqrt();
                sing[i] = s_i;
                let row = vecs.column(i).dot(a).mapv(|x| x / s_i);
                vt.row_mut(i).assign(&row);
            }
        }
        orthonormalize_rows(&mut vt);
        Ok((sing, vt))
    }
}

/// Modified Gram-Schmidt over rows, completing null rows from the first
/// canonical basis vector with a usable residual.
fn orthonormalize_rows(m: &mut Array2<f64>) {
    let (rows, cols) = m.dim();
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let prev = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &prev);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm > 1e-6 {
            m.row_mut(i).mapv_inplace(|x| x / norm);
            continue;
        }
        // degenerate row: complete the basis deterministically
        'candidates: for e in 0..cols {
            let mut v = Array1::<f64>::zeros(cols);
            v[e] = 1.0;
            for j in 0..i {
                let proj = v.dot(&m.row(j));
                v.scaled_add(-proj, &m.row(j).to_owned());
            }
            let vn = v.dot(&v).sqrt();
            if vn > 1e-3 {
                m.row_mut(i).assign(&v.mapv(|x| x / vn));
                break 'candidates;
            }
        }
    }
}
