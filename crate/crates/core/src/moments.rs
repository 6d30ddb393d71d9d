//! Streaming accumulation of mean and covariance over mini-batches.
//!
//! State is the classic `(n, mean, M2)` triple where `M2` is the
//! unnormalised second central moment. Batches are summarised with a
//! two-pass scheme (they fit in memory by construction) and folded in with
//! the parallel combination rule, which also serves as the `merge`
//! contract for worker-local accumulation. All accumulation is in f64.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Running count / mean / second-central-moment triple.
#[derive(Debug, Clone)]
pub struct MomentState {
    n: u64,
    mu: Array1<f64>,
    m2: Array2<f64>,
}

impl MomentState {
    /// Zero state for dimension `k`.
    pub fn init(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDimension);
        }
        Ok(Self {
            n: 0,
            mu: Array1::zeros(k),
            m2: Array2::zeros((k, k)),
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn second_moment(&self) -> &Array2<f64> {
        &self.m2
    }

    /// Fold one mini-batch (rows = samples) into the state.
    pub fn update_batch(&mut self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.nrows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: batch.ncols(),
            });
        }
        let summary = Self::from_batch(batch);
        self.merge_in_place(&summary);
        Ok(())
    }

    /// Two-pass summary of a single batch.
    fn from_batch(batch: &ArrayView2<f64>) -> Self {
        let n = batch.nrows() as u64;
        let mu = batch.mean_axis(Axis(0)).expect("non-empty batch");
        let centered = batch - &mu;
        let m2 = centered.t().dot(&centered);
        Self {
            n,
            mu,
            m2: symmetrize(&m2.view()),
        }
    }

    /// Combine two independently accumulated states.
    pub fn merge(mut a: Self, b: &Self) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch {
                expected: a.dim(),
                found: b.dim(),
            });
        }
        a.merge_in_place(b);
        Ok(a)
    }

    fn merge_in_place(&mut self, other: &Self) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            self.mu.assign(&other.mu);
            self.m2.assign(&other.m2);
            self.n = other.n;
            return;
        }
        let n_a = self.n as f64;
        let n_b = other.n as f64;
        let total = n_a + n_b;
        let delta = &other.mu - &self.mu;
        self.mu.scaled_add(n_b / total, &delta);
        let outer = delta
            .view()
            .insert_axis(Axis(1))
            .dot(&delta.view().insert_axis(Axis(0)));
        self.m2 += &other.m2;
        self.m2.scaled_add(n_a * n_b / total, &outer);
        self.m2 = symmetrize(&self.m2.view());
        self.n += other.n;
    }

    /// Unbiased covariance `M2 / (n - 1)`.
    pub fn finalize_covariance(&self) -> Result<Array2<f64>> {
        if self.n < 2 {
            return Err(Error::InsufficientSamples {
                needed: 2,
                seen: self.n as usize,
            });
        }
        Ok(&self.m2 / (self.n as f64 - 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent two-pass oracle over a materialised sample.
    fn two_pass(data: &ArrayView2<f64>) -> (u64, Array1<f64>, Array2<f64>) {
        let n = data.nrows();
        let k = data.ncols();
        let mut mu = vec![0.0; k];
        for row in data.rows() {
            for (j, x) in row.iter().enumerate() {
                mu[j] += x;
            }
        }
        for m in mu.iter_mut() {
            *m /= n as f64;
        }
        let mut m2 = Array2::<f64>::zeros((k, k));
        for row in data.rows() {
            for i in 0..k {
                for j in 0..k {
                    m2[[i, j]] += (row[i] - mu[i]) * (row[j] - mu[j]);
                }
            }
        }
        (n as u64, Array1::from_vec(mu), m2)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, k: usize, scale: f64) -> Array2<f64> {
        Array2::from_shape_fn((n, k), |_| rng.gen_range(-1.0..1.0) * scale)
    }

    #[test]
    fn init_is_zero_state() {
        let s = MomentState::init(3).unwrap();
        assert_eq!(s.count(), 0);
        assert!(s.mean().iter().all(|&x| x == 0.0));
        assert!(s.second_moment().iter().all(|&x| x == 0.0));
        let s1 = MomentState::init(1).unwrap();
        assert_eq!(s1.dim(), 1);
        assert!(matches!(
            MomentState::init(0),
            Err(Error::InvalidDimension)
        ));
    }

    #[test]
    fn single_point_has_zero_scatter() {
        let mut s = MomentState::init(2).unwrap();
        s.update_batch(&array![[1.0, 2.0]].view()).unwrap();
        assert_eq!(s.count(), 1);
        assert_abs_diff_eq!(s.mean()[0], 1.0);
        assert_abs_diff_eq!(s.mean()[1], 2.0);
        assert!(s.second_moment().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn two_batches_match_concatenated_oracle() {
        let mut s = MomentState::init(2).unwrap();
        s.update_batch(&array![[0.0, 0.0], [2.0, 0.0]].view()).unwrap();
        s.update_batch(&array![[0.0, 2.0], [2.0, 2.0]].view()).unwrap();
        assert_eq!(s.count(), 4);
        assert_abs_diff_eq!(s.mean()[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.mean()[1], 1.0, epsilon = 1e-15);
        let m2 = s.second_moment();
        // oracle: direct two-pass covariance over the four points
        assert_abs_diff_eq!(m2[[0, 0]], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m2[[1, 1]], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m2[[0, 1]], 0.0, epsilon = 1e-12);

        let cov = s.finalize_covariance().unwrap();
        assert_abs_diff_eq!(cov[[0, 0]], 4.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(cov[[1, 1]], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn any_split_matches_single_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let data = random_matrix(&mut rng, 100, 8, 3.0);
        let (_, mu_o, m2_o) = two_pass(&data.view());

        for splits in [
            vec![0usize, 33, 66, 100],
            vec![0, 1, 50, 100],
            vec![0, 99, 100, 100],
        ] {
            let mut s = MomentState::init(8).unwrap();
            for w in splits.windows(2) {
                if w[1] > w[0] {
                    s.update_batch(&data.slice(ndarray::s![w[0]..w[1], ..]))
                        .unwrap();
                }
            }
            assert_eq!(s.count(), 100);
            for j in 0..8 {
                assert_abs_diff_eq!(s.mean()[j], mu_o[j], epsilon = 1e-9);
            }
            for i in 0..8 {
                for j in 0..8 {
                    assert_abs_diff_eq!(s.second_moment()[[i, j]], m2_o[[i, j]], epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn merge_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a_data = random_matrix(&mut rng, 17, 4, 1.0);
        let b_data = random_matrix(&mut rng, 29, 4, 2.0);
        let mut a = MomentState::init(4).unwrap();
        a.update_batch(&a_data.view()).unwrap();
        let mut b = MomentState::init(4).unwrap();
        b.update_batch(&b_data.view()).unwrap();

        // identity element
        let id = MomentState::merge(a.clone(), &MomentState::init(4).unwrap()).unwrap();
        assert_eq!(id.count(), a.count());
        assert_eq!(id.mean(), a.mean());
        assert_eq!(id.second_moment(), a.second_moment());

        // commutativity within tolerance
        let ab = MomentState::merge(a.clone(), &b).unwrap();
        let ba = MomentState::merge(b.clone(), &a).unwrap();
        for (x, y) in ab.mean().iter().zip(ba.mean().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
        for (x, y) in ab.second_moment().iter().zip(ba.second_moment().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }

        // merge of single-batch states equals the concatenation oracle
        let mut all: Vec<f64> = a_data.iter().copied().collect();
        all.extend(b_data.iter().copied());
        let cat = Array2::from_shape_vec((46, 4), all).unwrap();
        let (_, mu_o, m2_o) = two_pass(&cat.view());
        for j in 0..4 {
            assert_abs_diff_eq!(ab.mean()[j], mu_o[j], epsilon = 1e-9);
        }
        for i in 0..4 {
            for j in 0..4 {
                assert_abs_diff_eq!(ab.second_moment()[[i, j]], m2_o[[i, j]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn merge_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut states = Vec::new();
        for _ in 0..3 {
            let d = random_matrix(&mut rng, 11, 5, 1.5);
            let mut s = MomentState::init(5).unwrap();
            s.update_batch(&d.view()).unwrap();
            states.push(s);
        }
        let left = MomentState::merge(
            MomentState::merge(states[0].clone(), &states[1]).unwrap(),
            &states[2],
        )
        .unwrap();
        let right = MomentState::merge(
            states[0].clone(),
            &MomentState::merge(states[1].clone(), &states[2]).unwrap(),
        )
        .unwrap();
        for (x, y) in left.second_moment().iter().zip(right.second_moment().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-9);
        }
    }

    #[test]
    fn finalize_guards_small_counts() {
        let mut s = MomentState::init(2).unwrap();
        assert!(matches!(
            s.finalize_covariance(),
            Err(Error::InsufficientSamples { .. })
        ));
        s.update_batch(&array![[1.0, 1.0]].view()).unwrap();
        assert!(matches!(
            s.finalize_covariance(),
            Err(Error::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn long_stream_matches_two_pass() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let data = random_matrix(&mut rng, 1000, 16, 2.0);
        let mut s = MomentState::init(16).unwrap();
        for chunk in data.axis_chunks_iter(Axis(0), 64) {
            s.update_batch(&chunk).unwrap();
        }
        let cov = s.finalize_covariance().unwrap();
        let (_, _, m2_o) = two_pass(&data.view());
        let cov_o = m2_o / 999.0;
        for i in 0..16 {
            for j in 0..16 {
                assert_abs_diff_eq!(cov[[i, j]], cov_o[[i, j]], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn large_offset_does_not_cancel() {
        // mean magnitude 1e6, unit variance: diagonal must stay accurate
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let k = 4;
        let n = 10_000;
        let data = Array2::from_shape_fn((n, k), |_| {
            1.0e6 + rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        let mut s = MomentState::init(k).unwrap();
        for chunk in data.axis_chunks_iter(Axis(0), 128) {
            s.update_batch(&chunk).unwrap();
        }
        let cov = s.finalize_covariance().unwrap();
        let (_, _, m2_o) = two_pass(&data.view());
        let cov_o = m2_o / (n as f64 - 1.0);
        for j in 0..k {
            let rel = (cov[[j, j]] - cov_o[[j, j]]).abs() / cov_o[[j, j]].abs();
            assert!(rel < 1e-4, "relative diagonal error {rel}");
        }
    }

    #[test]
    fn reachable_states_are_positive_semidefinite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = MomentState::init(4).unwrap();
        for _ in 0..10 {
            let n = rng.gen_range(1..20);
            let d = random_matrix(&mut rng, n, 4, 4.0);
            s.update_batch(&d.view()).unwrap();
            let (vals, _) = crate::linalg::jacobi_eigh(&s.second_moment().view()).unwrap();
            assert!(vals.iter().all(|&v| v > -1e-8));
        }
    }
}
