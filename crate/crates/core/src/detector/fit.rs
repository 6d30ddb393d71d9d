//! Multi-pass bounded-memory fitting over a re-iterable dataset.
//!
//! Pass one fits the reducer, pass two accumulates reduced moments for the
//! whitening model, pass three streams whitened patches into the bank
//! constructor (the two-pass constructor consumes two bank passes). Block
//! ids are hashed per traversal and compared, so a dataset that changes
//! between passes fails loudly. The full patch pool is never materialised
//! except by the offline-greedy reference constructor.

use std::cell::RefCell;

use ndarray::{Array2, ArrayView2};
use sha2::{Digest, Sha256};

use crate::bank::{
    default_candidate_pool, geores, greedy_coreset, ChunkSource, ConstructorKind, MemoryBank,
    MiniBatchKMeans, StreamingKCenter,
};
use crate::covreg::CovarianceModel;
use crate::error::{Error, Result};
use crate::moments::MomentState;
use crate::reducer::{Reducer, ReducerFit};

use super::{DescriptorBlock, DetectorConfig, DetectorState, Whitening};

/// Re-iterable sequence of descriptor blocks yielding identical content on
/// each traversal.
pub trait DescriptorSource {
    fn traverse(&self) -> Result<Box<dyn Iterator<Item = Result<DescriptorBlock>> + '_>>;
}

impl DescriptorSource for Vec<DescriptorBlock> {
    fn traverse(&self) -> Result<Box<dyn Iterator<Item = Result<DescriptorBlock>> + '_>> {
        Ok(Box::new(self.iter().map(|b| Ok(b.clone()))))
    }
}

/// Instrumentation recorded while fitting.
#[derive(Debug, Clone, Default, serde::Serialize)]
pub struct FitStats {
    /// Dataset traversals consumed.
    pub traversals: u32,
    /// Peak of the logical retained-row counter: rows buffered by the fit
    /// pipeline plus rows retained by the constructor, sampled per batch.
    pub peak_rows: usize,
    pub patches_seen: u64,
    pub reduced_dim: usize,
    pub bank_rows: usize,
}

#[derive(Debug)]
pub struct FitOutcome {
    pub state: DetectorState,
    pub stats: FitStats,
}

/// Batches blocks into row chunks of `batch` rows (the first chunk may be
/// larger to satisfy the reducer's seed-rank requirement) and hashes block
/// ids so traversals can be compared.
struct BatchStream<'a> {
    blocks: Box<dyn Iterator<Item = Result<DescriptorBlock>> + 'a>,
    d0: usize,
    batch: usize,
    first_min: usize,
    emitted_first: bool,
    buf: Vec<f64>,
    buf_rows: usize,
    hasher: Sha256,
    done: bool,
}

impl<'a> BatchStream<'a> {
    fn new(
        blocks: Box<dyn Iterator<Item = Result<DescriptorBlock>> + 'a>,
        d0: usize,
        batch: usize,
        first_min: usize,
    ) -> Self {
        Self {
            blocks,
            d0,
            batch,
            first_min,
            emitted_first: false,
            buf: Vec::new(),
            buf_rows: 0,
            hasher: Sha256::new(),
            done: false,
        }
    }

    fn target(&self) -> usize {
        if self.emitted_first {
            self.batch
        } else {
            self.batch.max(self.first_min)
        }
    }

    fn flush(&mut self) -> Array2<f64> {
        let rows = self.buf_rows;
        let data = std::mem::take(&mut self.buf);
        self.buf_rows = 0;
        self.emitted_first = true;
        Array2::from_shape_vec((rows, self.d0), data).expect("row-major buffer")
    }

    fn digest(self) -> [u8; 32] {
        self.hasher.finalize().into()
    }
}

impl Iterator for BatchStream<'_> {
    type Item = Result<Array2<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        loop {
            match self.blocks.next() {
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Some(Ok(block)) => {
                    if block.descriptor_dim() != self.d0 {
                        self.done = true;
                        return Some(Err(Error::DimensionMismatch {
                            expected: self.d0,
                            found: block.descriptor_dim(),
                        }));
                    }
                    self.hasher.update(block.image_id.as_bytes());
                    self.hasher.update([0x1f]);
                    self.buf.extend(block.data.iter().copied());
                    self.buf_rows += block.patches();
                    if self.buf_rows >= self.target() {
                        return Some(Ok(self.flush()));
                    }
                }
                None => {
                    self.done = true;
                    if self.buf_rows > 0 {
                        return Some(Ok(self.flush()));
                    }
                    return None;
                }
            }
        }
    }
}

fn probe_dims(source: &dyn DescriptorSource) -> Result<usize> {
    let mut it = source.traverse()?;
    match it.next() {
        Some(Ok(block)) => Ok(block.descriptor_dim()),
        Some(Err(e)) => Err(e),
        None => Err(Error::EmptyInput),
    }
}

/// Whitened chunk view of the dataset for the two-pass constructor; each
/// traversal is one dataset pass whose id digest is recorded.
struct WhitenedChunks<'a> {
    source: &'a dyn DescriptorSource,
    reducer: &'a Reducer,
    model: &'a CovarianceModel,
    d0: usize,
    batch: usize,
    first_min: usize,
    digests: RefCell<Vec<[u8; 32]>>,
    peak_chunk_rows: RefCell<usize>,
}

impl ChunkSource for WhitenedChunks<'_> {
    fn traverse(&self) -> Result<Box<dyn Iterator<Item = Result<Array2<f64>>> + '_>> {
        let stream = BatchStream::new(
            self.source.traverse()?,
            self.d0,
            self.batch,
            self.first_min,
        );
        Ok(Box::new(WhitenedIter {
            inner: Some(stream),
            owner: self,
        }))
    }
}

struct WhitenedIter<'a> {
    inner: Option<BatchStream<'a>>,
    owner: &'a WhitenedChunks<'a>,
}

impl Iterator for WhitenedIter<'_> {
    type Item = Result<Array2<f64>>;

    fn next(&mut self) -> Option<Self::Item> {
        let stream = self.inner.as_mut()?;
        match stream.next() {
            Some(Ok(raw)) => {
                let rows = raw.nrows();
                let mut peak = self.owner.peak_chunk_rows.borrow_mut();
                *peak = (*peak).max(rows);
                let whitened = self
                    .owner
                    .reducer
                    .transform_batch(&raw.view())
                    .and_then(|reduced| self.owner.model.whiten_batch(&reduced.view()));
                Some(whitened)
            }
            Some(Err(e)) => Some(Err(e)),
            None => {
                let stream = self.inner.take().expect("stream still present");
                self.owner.digests.borrow_mut().push(stream.digest());
                None
            }
        }
    }
}

/// Run the full training pipeline.
pub fn fit(source: &dyn DescriptorSource, config: &DetectorConfig) -> Result<FitOutcome> {
    config.validate()?;
    let d0 = probe_dims(source)?;
    let k_max = config.k_max.min(d0);
    let first_min = config.batch_size.max(k_max);
    let mut stats = FitStats::default();
    let mut peak_rows = 0usize;

    // pass 1: reducer
    let mut reducer_fit = ReducerFit::new(d0, k_max)?;
    let mut stream = BatchStream::new(source.traverse()?, d0, config.batch_size, first_min);
    let mut patches = 0u64;
    for chunk in stream.by_ref() {
        let chunk = chunk?;
        patches += chunk.nrows() as u64;
        peak_rows = peak_rows.max(chunk.nrows() + k_max);
        reducer_fit.partial_fit(&chunk.view())?;
    }
    let digest0 = stream.digest();
    stats.traversals += 1;
    stats.patches_seen = patches;
    let reducer = reducer_fit.finalize(config.rho)?;
    let k = reducer.output_dim();
    stats.reduced_dim = k;

    // pass 2: moments for the whitening model (skipped by the identity
    // control, which shares the remaining path)
    let model = match config.whitening {
        Whitening::Identity => CovarianceModel::identity(k)?,
        Whitening::Mahalanobis => {
            let mut moments = MomentState::init(k)?;
            let mut stream =
                BatchStream::new(source.traverse()?, d0, config.batch_size, first_min);
            for chunk in stream.by_ref() {
                let chunk = chunk?;
                let reduced = reducer.transform_batch(&chunk.view())?;
                peak_rows = peak_rows.max(chunk.nrows() + reduced.nrows());
                moments.update_batch(&reduced.view())?;
            }
            check_traversal(&digest0, stream.digest(), 2)?;
            stats.traversals += 1;
            let sigma_hat = moments.finalize_covariance()?;
            CovarianceModel::from_empirical(
                moments.mean().clone(),
                &sigma_hat.view(),
                moments.count(),
                config.shrinkage,
                config.eps_rel,
                &config.jitter,
            )?
        }
    };

    // pass 3 (and 4 for the two-pass constructor): the bank
    let bank = match config.constructor {
        ConstructorKind::GeoRes => {
            let chunks = WhitenedChunks {
                source,
                reducer: &reducer,
                model: &model,
                d0,
                batch: config.batch_size,
                first_min,
                digests: RefCell::new(Vec::new()),
                peak_chunk_rows: RefCell::new(0),
            };
            let (_, tail_budget) = crate::bank::budget_split(config.bank_budget, config.geores_alpha)?;
            let q = config
                .geores_q
                .unwrap_or_else(|| default_candidate_pool(tail_budget));
            let outcome = geores(
                &chunks,
                config.bank_budget,
                config.geores_alpha,
                q,
                config.local_budget,
                config.max_levels,
            )?;
            for d in chunks.digests.borrow().iter() {
                check_traversal(&digest0, *d, stats.traversals + 1)?;
                stats.traversals += 1;
            }
            // raw, reduced and whitened copies of a chunk coexist briefly
            peak_rows = peak_rows.max(outcome.peak_rows + 3 * *chunks.peak_chunk_rows.borrow());
            outcome.bank
        }
        kind => {
            let mut builder = SinglePassBuilder::new(kind, config)?;
            let mut stream =
                BatchStream::new(source.traverse()?, d0, config.batch_size, first_min);
            for chunk in stream.by_ref() {
                let chunk = chunk?;
                let reduced = reducer.transform_batch(&chunk.view())?;
                let whitened = model.whiten_batch(&reduced.view())?;
                builder.absorb(&whitened.view())?;
                peak_rows =
                    peak_rows.max(2 * chunk.nrows() + whitened.nrows() + builder.peak_retained());
            }
            check_traversal(&digest0, stream.digest(), stats.traversals + 1)?;
            stats.traversals += 1;
            builder.finalize()?
        }
    };

    stats.peak_rows = peak_rows;
    stats.bank_rows = bank.len();
    let state = DetectorState::assemble(reducer, model, bank, config.clone())?;
    Ok(FitOutcome { state, stats })
}

fn check_traversal(expected: &[u8; 32], got: [u8; 32], pass: u32) -> Result<()> {
    if expected != &got {
        return Err(Error::NonReiterableDataset { pass });
    }
    Ok(())
}

enum SinglePassBuilder {
    MergeReduce(StreamingKCenter),
    KMeans(MiniBatchKMeans),
    Greedy { rows: Vec<f64>, dim: usize, budget: usize },
}

impl SinglePassBuilder {
    fn new(kind: ConstructorKind, config: &DetectorConfig) -> Result<Self> {
        match kind {
            ConstructorKind::MergeReduceKCenter => Ok(Self::MergeReduce(
                StreamingKCenter::with_max_levels(
                    config.bank_budget,
                    config.local_budget,
                    config.max_levels,
                )?,
            )),
            ConstructorKind::MiniBatchKMeans => {
                Ok(Self::KMeans(MiniBatchKMeans::new(config.bank_budget, config.seed)?))
            }
            ConstructorKind::GreedyCoreset => Ok(Self::Greedy {
                rows: Vec::new(),
                dim: 0,
                budget: config.bank_budget,
            }),
            ConstructorKind::GeoRes => unreachable!("two-pass constructor handled separately"),
        }
    }

    fn absorb(&mut self, chunk: &ArrayView2<f64>) -> Result<()> {
        match self {
            Self::MergeReduce(c) => c.absorb(chunk),
            Self::KMeans(c) => c.absorb(chunk),
            Self::Greedy { rows, dim, .. } => {
                *dim = chunk.ncols();
                rows.extend(chunk.iter().copied());
                Ok(())
            }
        }
    }

    fn peak_retained(&self) -> usize {
        match self {
            Self::MergeReduce(c) => c.peak_retained(),
            Self::KMeans(c) => c.retained_rows(),
            Self::Greedy { rows, dim, .. } => rows.len().checked_div(*dim).unwrap_or(0),
        }
    }

    fn finalize(self) -> Result<MemoryBank> {
        match self {
            Self::MergeReduce(c) => c.finalize(),
            Self::KMeans(c) => c.finalize(),
            Self::Greedy { rows, dim, budget } => {
                if rows.is_empty() {
                    return Err(Error::EmptyInput);
                }
                let n = rows.len() / dim;
                let points = Array2::from_shape_vec((n, dim), rows).expect("row-major pool");
                greedy_coreset(&points.view(), budget)
            }
        }
    }
}
