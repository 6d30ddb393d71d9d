//! Detector orchestration: configuration, fitting, scoring, persistence.

mod fit;
mod persist;

pub use fit::{fit, DescriptorSource, FitOutcome, FitStats};
pub use persist::FORMAT_VERSION;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::bank::{ConstructorKind, MemoryBank};
use crate::covreg::{CovarianceModel, JitterSchedule, ShrinkagePolicy};
use crate::error::{Error, Result};
use crate::index::FlatIndex;
use crate::reducer::Reducer;

/// Image-level label carried by evaluation datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

/// A grid of patch descriptors for one image; the unit of ingestion.
#[derive(Debug, Clone)]
pub struct DescriptorBlock {
    pub image_id: String,
    pub grid_h: usize,
    pub grid_w: usize,
    pub data: Array2<f64>,
    pub label: Option<Label>,
}

impl DescriptorBlock {
    pub fn new(
        image_id: impl Into<String>,
        grid_h: usize,
        grid_w: usize,
        data: Array2<f64>,
        label: Option<Label>,
    ) -> Result<Self> {
        let image_id = image_id.into();
        if grid_h == 0 || grid_w == 0 {
            return Err(Error::InvalidParameter("grid dimensions must be >= 1"));
        }
        if data.nrows() != grid_h * grid_w {
            return Err(Error::DimensionMismatch {
                expected: grid_h * grid_w,
                found: data.nrows(),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteData { image_id });
        }
        Ok(Self {
            image_id,
            grid_h,
            grid_w,
            data,
            label,
        })
    }

    pub fn descriptor_dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn patches(&self) -> usize {
        self.data.nrows()
    }
}

/// Retrieval geometry: full whitening or the plain-Euclidean control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Whitening {
    Mahalanobis,
    Identity,
}

/// Image score reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    Max,
    Reweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    /// Retained-variance fraction for the reducer.
    pub rho: f64,
    /// Components tracked while fitting the reducer (capped at d0).
    pub k_max: usize,
    /// Patch rows per mini-batch during fitting.
    pub batch_size: usize,
    pub whitening: Whitening,
    pub shrinkage: ShrinkagePolicy,
    /// Eigenvalue floor ratio.
    pub eps_rel: f64,
    pub jitter: JitterSchedule,
    pub constructor: ConstructorKind,
    /// Final bank budget K.
    pub bank_budget: usize,
    /// Local coreset size m_c for streaming construction.
    pub local_budget: usize,
    /// Merge-reduce level cap; the retained-row bound is
    /// `(max_levels + 2) * max(local_budget, bank_budget)`.
    pub max_levels: usize,
    /// Main-budget fraction for the two-pass constructor.
    pub geores_alpha: f64,
    /// Residual candidate pool; `None` selects `max(16 * K_t, 1024)`.
    pub geores_q: Option<usize>,
    /// Neighbourhood size b for reweighted scoring.
    pub neighbors: usize,
    pub scoring: ScoringMode,
    /// Reserved for constructors with randomised initialisation; the
    /// shipped constructors are data-order deterministic.
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            rho: 0.99,
            k_max: 512,
            batch_size: 1024,
            whitening: Whitening::Mahalanobis,
            shrinkage: ShrinkagePolicy::Fixed { lambda: 0.07 },
            eps_rel: 1e-8,
            jitter: JitterSchedule::default(),
            constructor: ConstructorKind::MergeReduceKCenter,
            bank_budget: 1000,
            local_budget: 256,
            max_levels: crate::bank::DEFAULT_MAX_LEVELS,
            geores_alpha: 0.95,
            geores_q: None,
            neighbors: 9,
            scoring: ScoringMode::Reweighted,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::InvalidParameter("rho must be in (0, 1]"));
        }
        if self.k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1"));
        }
        if self.bank_budget == 0 {
            return Err(Error::InvalidParameter("bank budget must be >= 1"));
        }
        if self.local_budget == 0 {
            return Err(Error::InvalidParameter("local budget must be >= 1"));
        }
        if self.neighbors == 0 {
            return Err(Error::InvalidParameter("neighbors must be >= 1"));
        }
        // b = 1 short-circuits the softmax to w = 0, so it is rejected in
        // reweighted mode rather than silently zeroing every score
        if matches!(self.scoring, ScoringMode::Reweighted) && self.neighbors < 2 {
            return Err(Error::InvalidParameter(
                "reweighted scoring requires neighbors >= 2",
            ));
        }
        if matches!(self.constructor, ConstructorKind::GeoRes) {
            if self.bank_budget < 2 {
                return Err(Error::InvalidParameter(
                    "two-pass constructor requires bank budget >= 2",
                ));
            }
            if !(self.geores_alpha > 0.0 && self.geores_alpha < 1.0) {
                return Err(Error::InvalidParameter("alpha must be in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Everything needed at inference plus the configuration that built it.
#[derive(Debug, Clone)]
pub struct DetectorState {
    reducer: Reducer,
    model: CovarianceModel,
    bank: MemoryBank,
    index: FlatIndex,
    config: DetectorConfig,
}

/// Per-image scoring result.
#[derive(Debug, Clone)]
pub struct ImageScore {
    pub image_id: String,
    /// Image score under the configured scoring mode.
    pub s: f64,
    /// Max patch score, always reported as the unreweighted control.
    pub s_max: f64,
    /// Neighbourhood actually used (clamped to the bank size).
    pub b_used: usize,
    pub patch_scores: Array2<f64>,
}

impl DetectorState {
    pub(crate) fn assemble(
        reducer: Reducer,
        model: CovarianceModel,
        bank: MemoryBank,
        config: DetectorConfig,
    ) -> Result<Self> {
        if reducer.output_dim() != model.dim() || model.dim() != bank.dim() {
            return Err(Error::DimensionMismatch {
                expected: reducer.output_dim(),
                found: bank.dim(),
            });
        }
        let index = FlatIndex::build(&bank)?;
        Ok(Self {
            reducer,
            model,
            bank,
            index,
            config,
        })
    }

    pub fn reducer(&self) -> &Reducer {
        &self.reducer
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn index(&self) -> &FlatIndex {
        &self.index
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn descriptor_dim(&self) -> usize {
        self.reducer.input_dim()
    }

    fn whiten_block(&self, block: &DescriptorBlock) -> Result<Array2<f64>> {
        if block.descriptor_dim() != self.descriptor_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.descriptor_dim(),
                found: block.descriptor_dim(),
            });
        }
        let reduced = self.reducer.transform_batch(&block.data.view())?;
        self.model.whiten_batch(&reduced.view())
    }

    /// Per-patch squared whitened nearest-neighbour distances on the grid.
    pub fn score_patches(&self, block: &DescriptorBlock) -> Result<Array2<f64>> {
        let whitened = self.whiten_block(block)?;
        let hits = self.index.search_batch(&whitened.view(), 1)?;
        let scores: Vec<f64> = hits.iter().map(|h| h.distances[0]).collect();
        Ok(Array2::from_shape_vec((block.grid_h, block.grid_w), scores)
            .expect("grid shape matches patch count"))
    }

    /// Image-level score: the maximal patch distance, reweighted by the
    /// local support structure around its nearest bank element.
    pub fn score_image(&self, block: &DescriptorBlock) -> Result<ImageScore> {
        let whitened = self.whiten_block(block)?;
        let hits = self.index.search_batch(&whitened.view(), 1)?;

        // argmax patch, lowest flat index on ties
        let mut star = 0usize;
        let mut a_star = f64::NEG_INFINITY;
        for (i, h) in hits.iter().enumerate() {
            if h.distances[0] > a_star {
                a_star = h.distances[0];
                star = i;
            }
        }
        let m_star = hits[star].ids[0];
        let scores: Vec<f64> = hits.iter().map(|h| h.distances[0]).collect();
        let patch_scores = Array2::from_shape_vec((block.grid_h, block.grid_w), scores)
            .expect("grid shape matches patch count");

        let (s, b_used) = match self.config.scoring {
            ScoringMode::Max => (a_star, 0),
            ScoringMode::Reweighted => {
                let b_used = self.config.neighbors.min(self.bank.len());
                let anchor = self.bank.vectors().row(m_star);
                let neighborhood = self.index.search(&anchor, b_used)?;
                let z_star = whitened.row(star);
                let dists: Vec<f64> = neighborhood
                    .ids
                    .iter()
                    .map(|&id| crate::bank::sq_dist(z_star, self.bank.vectors().row(id)))
                    .collect();
                let anchor_sq = crate::bank::sq_dist(z_star, self.bank.vectors().row(m_star));
                let tau = dists.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let w = stabilized_weight(anchor_sq, &dists, tau);
                (w * a_star, b_used)
            }
        };

        Ok(ImageScore {
            image_id: block.image_id.clone(),
            s,
            s_max: a_star,
            b_used,
            patch_scores,
        })
    }
}

/// `1 - exp(a - tau) / sum_m exp(d_m - tau)`: the stabilised softmax
/// weight. Shift-invariant in `tau` up to round-off.
pub fn stabilized_weight(anchor_sq: f64, neighbor_sq: &[f64], tau: f64) -> f64 {
    let denom: f64 = neighbor_sq.iter().map(|&d| (d - tau).exp()).sum();
    1.0 - (anchor_sq - tau).exp() / denom
}

/// Bilinear upsampling of a patch-score grid with corner alignment.
pub fn anomaly_map(patch_scores: &ArrayView2<f64>, out_h: usize, out_w: usize) -> Result<Array2<f64>> {
    let (gh, gw) = patch_scores.dim();
    if gh == 0 || gw == 0 {
        return Err(Error::EmptyInput);
    }
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidParameter("output dimensions must be >= 1"));
    }
    let scale = |out_i: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n == 1 || in_n == 1 {
            0.0
        } else {
            out_i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
        }
    };
    let mut out = Array2::<f64>::zeros((out_h, out_w));
    for i in 0..out_h {
        let y = scale(i, out_h, gh);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(gh - 1);
        let fy = y - y0 as f64;
        for j in 0..out_w {
            let x = scale(j, out_w, gw);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(gw - 1);
            let fx = x - x0 as f64;
            let top = patch_scores[[y0, x0]] * (1.0 - fx) + patch_scores[[y0, x1]] * fx;
            let bottom = patch_scores[[y1, x0]] * (1.0 - fx) + patch_scores[[y1, x1]] * fx;
            out[[i, j]] = top * (1.0 - fy) + bottom * fy;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    fn tiny_state(bank_rows: Array2<f64>, scoring: ScoringMode, neighbors: usize) -> DetectorState {
        let k = bank_rows.ncols();
        let reducer = Reducer::from_parts(
            Array2::eye(k),
            Array1::zeros(k),
            Array1::from_elem(k, 1.0),
        )
        .unwrap();
        let model = CovarianceModel::identity(k).unwrap();
        let bank = MemoryBank::new(
            bank_rows,
            ConstructorKind::GreedyCoreset,
            8,
            None,
            true,
            false,
        );
        let config = DetectorConfig {
            scoring,
            neighbors,
            whitening: Whitening::Identity,
            ..DetectorConfig::default()
        };
        DetectorState::assemble(reducer, model, bank, config).unwrap()
    }

    fn block_1d(values: &[f64]) -> DescriptorBlock {
        let data = Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap();
        DescriptorBlock::new("img", values.len(), 1, data, None).unwrap()
    }

    #[test]
    fn block_validation() {
        let bad = Array2::<f64>::zeros((3, 2));
        assert!(DescriptorBlock::new("x", 2, 2, bad, None).is_err());
        let nan = array![[f64::NAN, 0.0]];
        assert!(matches!(
            DescriptorBlock::new("x", 1, 1, nan, None),
            Err(Error::NonFiniteData { .. })
        ));
    }

    #[test]
    fn config_guards() {
        let mut c = DetectorConfig::default();
        assert!(c.validate().is_ok());
        c.neighbors = 1;
        assert!(c.validate().is_err());
        c.scoring = ScoringMode::Max;
        assert!(c.validate().is_ok());
        c.rho = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn exact_training_patch_scores_zero() {
        let state = tiny_state(array![[0.0], [10.0]], ScoringMode::Reweighted, 2);
        let block = block_1d(&[0.0, 10.0]);
        let grid = state.score_patches(&block).unwrap();
        assert!(grid.iter().all(|&v| v == 0.0));
        let score = state.score_image(&block).unwrap();
        assert_eq!(score.s, 0.0);
        assert_eq!(score.s_max, 0.0);
    }

    #[test]
    fn one_dimensional_score_trace() {
        // bank {0, 10}, patch at 1, b = 2
        let state = tiny_state(array![[0.0], [10.0]], ScoringMode::Reweighted, 2);
        let block = block_1d(&[1.0]);
        let score = state.score_image(&block).unwrap();
        assert_abs_diff_eq!(score.s_max, 1.0, epsilon = 1e-12);
        let want_w = 1.0 - (1.0f64 - 81.0).exp() / ((1.0f64 - 81.0).exp() + 1.0);
        assert_abs_diff_eq!(score.s, want_w * 1.0, epsilon = 1e-12);
        assert_eq!(score.b_used, 2);
    }

    #[test]
    fn patch_distance_oracle() {
        let state = tiny_state(array![[0.0]], ScoringMode::Max, 1);
        let block = block_1d(&[3.0]);
        let grid = state.score_patches(&block).unwrap();
        assert_abs_diff_eq!(grid[[0, 0]], 9.0, epsilon = 1e-12);
    }

    #[test]
    fn weight_stays_in_softmax_band() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let b = rng.gen_range(2..=9usize);
            let anchor: f64 = rng.gen_range(0.0..10.0);
            let mut neigh: Vec<f64> = vec![anchor];
            for _ in 1..b {
                neigh.push(anchor + rng.gen_range(0.0..20.0));
            }
            let tau = neigh.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let w = stabilized_weight(anchor, &neigh, tau);
            assert!(w >= 1.0 - 1.0 / b as f64 - 1e-12, "w = {w}, b = {b}");
            assert!(w < 1.0);
            // shift invariance of the stabilised form
            let w_shift = stabilized_weight(anchor, &neigh, tau + 123.456);
            assert!((w - w_shift).abs() < 1e-12);
        }
    }

    #[test]
    fn reweighted_score_never_exceeds_max_control() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let bank = Array2::from_shape_fn((12, 3), |_| rng.gen_range(-2.0..2.0));
        let state = tiny_state(bank, ScoringMode::Reweighted, 5);
        for _ in 0..50 {
            let data = Array2::from_shape_fn((6, 3), |_| rng.gen_range(-3.0..3.0));
            let block = DescriptorBlock::new("r", 2, 3, data, None).unwrap();
            let score = state.score_image(&block).unwrap();
            assert!(score.s <= score.s_max + 1e-12);
            assert!(score.s >= 0.0);
        }
    }

    #[test]
    fn small_bank_clamps_neighbourhood() {
        let state = tiny_state(array![[0.0], [5.0]], ScoringMode::Reweighted, 9);
        let block = block_1d(&[1.0]);
        let score = state.score_image(&block).unwrap();
        assert_eq!(score.b_used, 2);
    }

    #[test]
    fn map_identity_and_constant() {
        let grid = array![[1.0, 2.0], [3.0, 4.0]];
        let same = anomaly_map(&grid.view(), 2, 2).unwrap();
        assert_eq!(same, grid);

        let flat = Array2::from_elem((3, 3), 7.5);
        let up = anomaly_map(&flat.view(), 5, 9).unwrap();
        assert!(up.iter().all(|&v| (v - 7.5).abs() < 1e-12));
    }

    #[test]
    fn map_interpolates_middle_column() {
        let grid = array![[0.0, 1.0], [0.0, 1.0]];
        let up = anomaly_map(&grid.view(), 2, 3).unwrap();
        assert_abs_diff_eq!(up[[0, 1]], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(up[[1, 1]], 0.5, epsilon = 1e-12);
        // output bounded by input range
        assert!(up.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn map_rejects_empty_grid() {
        let empty = Array2::<f64>::zeros((0, 0));
        assert!(matches!(
            anomaly_map(&empty.view(), 2, 2),
            Err(Error::EmptyInput)
        ));
    }
}
