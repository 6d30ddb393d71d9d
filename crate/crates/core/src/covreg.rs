//! Covariance regularisation and the whitening operator.
//!
//! An empirical covariance becomes a whitening map in three steps:
//! shrinkage toward the scaled identity, an optional eigenvalue floor, and
//! an adaptively jittered Cholesky factorisation. Whitening itself is a
//! forward triangular solve; no inverse is ever formed, so squared
//! Euclidean distances between whitened vectors equal Mahalanobis squared
//! distances under the factored matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, cholesky_lower, jacobi_eigh, solve_lower_into, symmetrize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

const SYMMETRY_TOL: f64 = 1e-8;

/// How the empirical covariance is pulled toward the scaled identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum ShrinkagePolicy {
    /// User-chosen weight in [0, 1].
    Fixed { lambda: f64 },
    /// Oracle-approximating analytic weight.
    Oas,
    /// Rao-Blackwellised Ledoit-Wolf weight; usable when the raw sample
    /// matrix is never retained.
    Rblw,
    /// No shrinkage; positive definiteness comes from jitter alone.
    JitterOnly,
}

impl ShrinkagePolicy {
    fn validate(&self) -> Result<()> {
        if let ShrinkagePolicy::Fixed { lambda } = self {
            if !(0.0..=1.0).contains(lambda) || !lambda.is_finite() {
                return Err(Error::InvalidShrinkage(*lambda));
            }
        }
        Ok(())
    }
}

/// Geometric jitter schedule for the factorisation retry loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JitterSchedule {
    pub delta_min: f64,
    pub factor: f64,
    pub delta_max: f64,
}

impl Default for JitterSchedule {
    fn default() -> Self {
        Self {
            delta_min: 1e-12,
            factor: 10.0,
            delta_max: 1.0,
        }
    }
}

/// Record of the regularisation actually applied, kept with the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRecord {
    pub shrinkage: ShrinkagePolicy,
    pub eps_rel: f64,
}

/// The whitening operator: mean, regularised covariance and its factor.
#[derive(Debug, Clone)]
pub struct CovarianceModel {
    mu: Array1<f64>,
    sigma_reg: Array2<f64>,
    factor: Array2<f64>,
    delta: f64,
    policy_record: PolicyRecord,
}

/// Convex combination with the scaled identity, `(1-l)S + l*sbar*I`.
pub fn shrink(sigma_hat: &ArrayView2<f64>, policy: ShrinkagePolicy, n: u64) -> Result<Array2<f64>> {
    policy.validate()?;
    let d = sigma_hat.nrows();
    if d != sigma_hat.ncols() {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: sigma_hat.ncols(),
        });
    }
    if asymmetry(sigma_hat) > SYMMETRY_TOL {
        return Err(Error::AsymmetricInput);
    }
    if matches!(policy, ShrinkagePolicy::JitterOnly) {
        return Ok(sigma_hat.to_owned());
    }
    let df = d as f64;
    let trace: f64 = sigma_hat.diag().sum();
    let sbar = trace / df;
    let lambda = match policy {
        ShrinkagePolicy::Fixed { lambda } => lambda,
        ShrinkagePolicy::JitterOnly => unreachable!(),
        ShrinkagePolicy::Oas | ShrinkagePolicy::Rblw => {
            if n < 2 {
                return Err(Error::InsufficientSamples {
                    needed: 2,
                    seen: n as usize,
                });
            }
            let nf = n as f64;
            let tr_s2: f64 = sigma_hat.dot(sigma_hat).diag().sum();
            let tr2 = trace * trace;
            let denom_core = tr_s2 - tr2 / df;
            let (num, den) = match policy {
                ShrinkagePolicy::Oas => (
                    (1.0 - 2.0 / df) * tr_s2 + tr2,
                    (nf + 1.0 - 2.0 / df) * denom_core,
                ),
                ShrinkagePolicy::Rblw => {
                    (((nf - 2.0) / nf) * tr_s2 + tr2, (nf + 2.0) * denom_core)
                }
                _ => unreachable!(),
            };
            // S proportional to I makes the denominator vanish; the clip
            // target in that limit is full shrinkage.
            if den <= 0.0 {
                1.0
            } else {
                (num / den).clamp(0.0, 1.0)
            }
        }
    };
    let mut out = sigma_hat.mapv(|x| (1.0 - lambda) * x);
    for i in 0..d {
        out[[i, i]] += lambda * sbar;
    }
    Ok(out)
}

/// Clamp eigenvalues from below at `eps_rel * max(|sbar|, 1e-12)`.
///
/// `sbar` is the mean diagonal of the matrix passed in. When no eigenvalue
/// falls under the floor the input is returned unchanged, so the inactive
/// path is exact.
pub fn eigenvalue_floor(sigma_shr: &ArrayView2<f64>, eps_rel: f64) -> Result<Array2<f64>> {
    if eps_rel < 0.0 || !eps_rel.is_finite() {
        return Err(Error::InvalidParameter("eps_rel must be >= 0"));
    }
    if asymmetry(sigma_shr) > SYMMETRY_TOL {
        return Err(Error::AsymmetricInput);
    }
    if eps_rel == 0.0 {
        return Ok(sigma_shr.to_owned());
    }
    let d = sigma_shr.nrows() as f64;
    let sbar = sigma_shr.diag().sum() / d;
    let eps = eps_rel * sbar.abs().max(1e-12);
    let (vals, vecs) = jacobi_eigh(sigma_shr)?;
    if vals.iter().all(|&v| v >= eps) {
        return Ok(sigma_shr.to_owned());
    }
    let floored = vals.mapv(|v| v.max(eps));
    let scaled = &vecs * &floored.view().insert_axis(Axis(0));
    let rebuilt = scaled.dot(&vecs.t());
    Ok(symmetrize(&rebuilt.view()))
}

/// Factor `sigma + delta*I = L L^T`, escalating `delta` geometrically from
/// zero until the factorisation succeeds.
pub fn jittered_cholesky(
    sigma_reg: &ArrayView2<f64>,
    schedule: &JitterSchedule,
) -> Result<(Array2<f64>, f64)> {
    if !(schedule.delta_min > 0.0
        && schedule.delta_min < schedule.delta_max
        && schedule.factor > 1.0)
    {
        return Err(Error::InvalidParameter(
            "jitter schedule requires 0 < delta_min < delta_max and factor > 1",
        ));
    }
    if asymmetry(sigma_reg) > SYMMETRY_TOL {
        return Err(Error::AsymmetricInput);
    }
    let d = sigma_reg.nrows();
    let mut delta = 0.0f64;
    loop {
        let mut candidate = sigma_reg.to_owned();
        if delta > 0.0 {
            for i in 0..d {
                candidate[[i, i]] += delta;
            }
        }
        if let Some(l) = cholesky_lower(&candidate.view()) {
            return Ok((l, delta));
        }
        delta = if delta == 0.0 {
            schedule.delta_min
        } else {
            delta * schedule.factor
        };
        if delta > schedule.delta_max {
            return Err(Error::NotFactorizable {
                delta_max: schedule.delta_max,
            });
        }
    }
}

impl CovarianceModel {
    /// Regularise an empirical covariance into a whitening operator.
    pub fn from_empirical(
        mu: Array1<f64>,
        sigma_hat: &ArrayView2<f64>,
        n: u64,
        shrinkage: ShrinkagePolicy,
        eps_rel: f64,
        schedule: &JitterSchedule,
    ) -> Result<Self> {
        if mu.len() != sigma_hat.nrows() {
            return Err(Error::DimensionMismatch {
                expected: sigma_hat.nrows(),
                found: mu.len(),
            });
        }
        let shr = shrink(sigma_hat, shrinkage, n)?;
        let reg = eigenvalue_floor(&shr.view(), eps_rel)?;
        let (factor, delta) = jittered_cholesky(&reg.view(), schedule)?;
        Ok(Self {
            mu,
            sigma_reg: reg,
            factor,
            delta,
            policy_record: PolicyRecord {
                shrinkage,
                eps_rel,
            },
        })
    }

    /// Identity operator: whitening is a no-op shift by a zero mean. Used
    /// by the plain-Euclidean control so both geometries share one path.
    pub fn identity(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidDimension);
        }
        Ok(Self {
            mu: Array1::zeros(k),
            sigma_reg: Array2::eye(k),
            factor: Array2::eye(k),
            delta: 0.0,
            policy_record: PolicyRecord {
                shrinkage: ShrinkagePolicy::JitterOnly,
                eps_rel: 0.0,
            },
        })
    }

    /// Rebuild from persisted parts, revalidating the factor.
    pub(crate) fn from_parts(
        mu: Array1<f64>,
        sigma_reg: Array2<f64>,
        factor: Array2<f64>,
        delta: f64,
        policy_record: PolicyRecord,
    ) -> Result<Self> {
        let k = mu.len();
        if sigma_reg.nrows() != k || factor.nrows() != k || factor.ncols() != k {
            return Err(Error::MalformedContainer("covariance shape mismatch"));
        }
        if factor.diag().iter().any(|&x| !x.is_finite() || x <= 0.0) {
            return Err(Error::MalformedContainer("factor diagonal not positive"));
        }
        Ok(Self {
            mu,
            sigma_reg,
            factor,
            delta,
            policy_record,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &Array1<f64> {
        &self.mu
    }

    pub fn sigma_reg(&self) -> &Array2<f64> {
        &self.sigma_reg
    }

    /// Lower-triangular factor of `sigma_reg + delta*I`.
    pub fn factor(&self) -> &Array2<f64> {
        &self.factor
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn policy_record(&self) -> &PolicyRecord {
        &self.policy_record
    }

    /// Forward triangular solve `L z = x - mu`.
    pub fn whiten(&self, x: &ArrayView1<f64>) -> Result<Array1<f64>> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        let centered = x - &self.mu;
        let mut out = vec![0.0; self.dim()];
        solve_lower_into(&self.factor.view(), &centered.view(), &mut out);
        Ok(Array1::from_vec(out))
    }

    /// Row-wise whitening into a fresh matrix; each row is bit-identical
    /// to the corresponding `whiten` call.
    pub fn whiten_batch(&self, batch: &ArrayView2<f64>) -> Result<Array2<f64>> {
        if batch.ncols() != self.dim() && batch.nrows() > 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: batch.ncols(),
            });
        }
        let mut out = Array2::<f64>::zeros((batch.nrows(), self.dim()));
        let solve_row = |(mut out_row, in_row): (ndarray::ArrayViewMut1<f64>, ArrayView1<f64>)| {
            let centered = &in_row - &self.mu;
            let buf = out_row.as_slice_mut().expect("contiguous row");
            solve_lower_into(&self.factor.view(), &centered.view(), buf);
        };
        #[cfg(feature = "parallel")]
        {
            out.axis_iter_mut(Axis(0))
                .into_par_iter()
                .zip(batch.axis_iter(Axis(0)).into_par_iter())
                .for_each(solve_row);
        }
        #[cfg(not(feature = "parallel"))]
        {
            out.axis_iter_mut(Axis(0))
                .zip(batch.axis_iter(Axis(0)))
                .for_each(solve_row);
        }
        Ok(out)
    }
}
