//! Synthetic anisotropic descriptor datasets.
//!
//! Normal patches are drawn from a Gaussian with a configurable
//! eigenvalue spectrum and optional random rotation. Anomalous test
//! images displace a contiguous patch sub-grid along one eigendirection,
//! measured in that direction's standard deviations, which makes the
//! separation between whitened and plain retrieval controllable.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::detector::{DescriptorBlock, Label};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub d0: usize,
    /// Ambient mean; empty means the origin.
    pub mean: Vec<f64>,
    /// Strictly positive variances along the eigendirections.
    pub eigenvalues: Vec<f64>,
    /// Random rotation of the eigenbasis; `None` keeps canonical axes.
    pub rotation_seed: Option<u64>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub n_train: usize,
    pub n_test_normal: usize,
    pub n_test_anomalous: usize,
    /// Index into `eigenvalues` of the displaced direction.
    pub anomaly_direction: usize,
    /// Displacement in standard deviations of that direction.
    pub anomaly_magnitude: f64,
    /// Displaced sub-grid size; zero means half the grid (rounded up).
    pub anomaly_sub_h: usize,
    pub anomaly_sub_w: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            d0: 16,
            mean: Vec::new(),
            eigenvalues: Vec::new(),
            rotation_seed: None,
            grid_h: 8,
            grid_w: 8,
            n_train: 100,
            n_test_normal: 50,
            n_test_anomalous: 50,
            anomaly_direction: 0,
            anomaly_magnitude: 6.0,
            anomaly_sub_h: 0,
            anomaly_sub_w: 0,
            seed: 0,
        }
    }
}

#[derive(Debug)]
pub struct SynthDataset {
    pub train: Vec<DescriptorBlock>,
    pub test: Vec<DescriptorBlock>,
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d0 == 0 {
            return Err(Error::InvalidDimension);
        }
        if self.eigenvalues.len() != self.d0 {
            return Err(Error::InvalidParameter(
                "eigenvalue list must have one entry per dimension",
            ));
        }
        if self.eigenvalues.iter().any(|&v| !v.is_finite() || v <= 0.0) {
            return Err(Error::InvalidParameter("eigenvalues must be positive"));
        }
        if !self.mean.is_empty() && self.mean.len() != self.d0 {
            return Err(Error::InvalidParameter("mean length must equal d0"));
        }
        if self.anomaly_direction >= self.d0 {
            return Err(Error::InvalidParameter(
                "anomaly direction index must be below d0",
            ));
        }
        if self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::InvalidParameter("grid dimensions must be >= 1"));
        }
        if self.n_train == 0 {
            return Err(Error::InvalidParameter("n_train must be >= 1"));
        }
        if !self.anomaly_magnitude.is_finite() || self.anomaly_magnitude < 0.0 {
            return Err(Error::InvalidParameter("anomaly magnitude must be >= 0"));
        }
        if self.sub_h() > self.grid_h || self.sub_w() > self.grid_w {
            return Err(Error::InvalidParameter(
                "anomalous sub-grid exceeds the patch grid",
            ));
        }
        Ok(())
    }

    fn sub_h(&self) -> usize {
        if self.anomaly_sub_h == 0 {
            self.grid_h.div_ceil(2)
        } else {
            self.anomaly_sub_h
        }
    }

    fn sub_w(&self) -> usize {
        if self.anomaly_sub_w == 0 {
            self.grid_w.div_ceil(2)
        } else {
            self.anomaly_sub_w
        }
    }
}

/// Orthonormal basis from a seeded Gaussian draw (Gram-Schmidt columns).
fn rotation_matrix(d: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        let mut col: Array1<f64> =
            Array1::from_shape_fn(d, |_| rng.sample::<f64, _>(StandardNormal));
        for prev in 0..j {
            let p = q.column(prev);
            let proj = col.dot(&p);
            col.scaled_add(-proj, &p.to_owned());
        }
        let norm = col.dot(&col).sqrt();
        q.column_mut(j).assign(&col.mapv(|x| x / norm));
    }
    q
}

pub fn generate(spec: &SynthSpec) -> Result<SynthDataset> {
    spec.validate()?;
    let d = spec.d0;
    let rotation = spec.rotation_seed.map(|s| rotation_matrix(d, s));
    let sdevs = Array1::from_iter(spec.eigenvalues.iter().map(|&v| v.sqrt()));
    let mean = if spec.mean.is_empty() {
        Array1::zeros(d)
    } else {
        Array1::from_vec(spec.mean.clone())
    };
    // displacement along the chosen eigendirection, in ambient coordinates
    let j = spec.anomaly_direction;
    let mut displacement = Array1::<f64>::zeros(d);
    let amount = spec.anomaly_magnitude * sdevs[j];
    match &rotation {
        Some(q) => displacement.assign(&q.column(j).mapv(|x| x * amount)),
        None => displacement[j] = amount,
    }

    let patches = spec.grid_h * spec.grid_w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let draw_block = |rng: &mut ChaCha8Rng| -> Array2<f64> {
        let g = Array2::from_shape_fn((patches, d), |_| rng.sample::<f64, _>(StandardNormal));
        let scaled = &g * &sdevs;
        let ambient = match &rotation {
            Some(q) => scaled.dot(&q.t()),
            None => scaled,
        };
        ambient + &mean
    };

    let mut train = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        let data = draw_block(&mut rng);
        train.push(DescriptorBlock::new(
            format!("train_{i:05}"),
            spec.grid_h,
            spec.grid_w,
            data,
            Some(Label::Normal),
        )?);
    }

    let mut test = Vec::with_capacity(spec.n_test_normal + spec.n_test_anomalous);
    for i in 0..spec.n_test_normal {
        let data = draw_block(&mut rng);
        test.push(DescriptorBlock::new(
            format!("test_normal_{i:05}"),
            spec.grid_h,
            spec.grid_w,
            data,
            Some(Label::Normal),
        )?);
    }
    let (sub_h, sub_w) = (spec.sub_h(), spec.sub_w());
    for i in 0..spec.n_test_anomalous {
        let mut data = draw_block(&mut rng);
        let r0 = rng.gen_range(0..=spec.grid_h - sub_h);
        let c0 = rng.gen_range(0..=spec.grid_w - sub_w);
        for r in r0..r0 + sub_h {
            for c in c0..c0 + sub_w {
                let p = r * spec.grid_w + c;
                let mut row = data.row_mut(p);
                row += &displacement;
            }
        }
        test.push(DescriptorBlock::new(
            format!("test_anom_{i:05}"),
            spec.grid_h,
            spec.grid_w,
            data,
            Some(Label::Anomalous),
        )?);
    }

    Ok(SynthDataset { train, test })
}

/// Spectrum used by the geometry-separation scenario: a handful of
/// dominant directions over a gently sloped unit tail, spanning three
/// orders of magnitude, with the weakest direction last.
pub fn separation_spectrum(d0: usize) -> Vec<f64> {
    assert!(d0 >= 8, "spectrum needs at least 8 dimensions");
    let mut eigs = vec![1000.0; 4];
    let tail = d0 - 4;
    for i in 0..tail {
        // linear slope from 3.0 down to 1.0
        let t = if tail == 1 { 1.0 } else { i as f64 / (tail - 1) as f64 };
        eigs.push(3.0 - 2.0 * t);
    }
    eigs
}
