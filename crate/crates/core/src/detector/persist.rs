//! Detector state container: a JSON header describing shapes and
//! configuration, followed by raw little-endian f64 matrix segments in
//! declared order, closed by a SHA-256 digest of all preceding bytes.
//! Round-trips are bit-exact; the search index is rebuilt on load.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bank::{ConstructorKind, MemoryBank};
use crate::covreg::{CovarianceModel, PolicyRecord};
use crate::error::{Error, Result};
use crate::reducer::Reducer;

use super::{DetectorConfig, DetectorState};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"MHST";

#[derive(Debug, Serialize, Deserialize)]
struct SegmentMeta {
    name: String,
    rows: u64,
    cols: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct BankMeta {
    constructor: ConstructorKind,
    budget: usize,
    local_budget: Option<usize>,
    provenance_observed: bool,
    underfilled: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: DetectorConfig,
    d0: usize,
    k: usize,
    delta: f64,
    policy_record: PolicyRecord,
    bank: BankMeta,
    segments: Vec<SegmentMeta>,
}

fn matrix_bytes(m: &Array2<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.len() * 8);
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn row_matrix(v: &Array1<f64>) -> Array2<f64> {
    Array2::from_shape_vec((1, v.len()), v.to_vec()).expect("row vector")
}

impl DetectorState {
    pub fn save<W: Write>(&self, mut dst: W) -> Result<()> {
        let segments: Vec<(&str, Array2<f64>)> = vec![
            ("reducer_w", self.reducer().projection().clone()),
            ("reducer_mean", row_matrix(self.reducer().mean())),
            ("explained_variance", row_matrix(self.reducer().explained_variance())),
            ("model_mean", row_matrix(self.model().mean())),
            ("sigma_reg", self.model().sigma_reg().clone()),
            ("factor", self.model().factor().clone()),
            ("bank", self.bank().vectors().clone()),
        ];
        let header = Header {
            format_version: FORMAT_VERSION,
            config: self.config().clone(),
            d0: self.descriptor_dim(),
            k: self.reducer().output_dim(),
            delta: self.model().delta(),
            policy_record: self.model().policy_record().clone(),
            bank: BankMeta {
                constructor: self.bank().constructor(),
                budget: self.bank().budget(),
                local_budget: self.bank().local_budget(),
                provenance_observed: self.bank().provenance_observed(),
                underfilled: self.bank().underfilled(),
            },
            segments: segments
                .iter()
                .map(|(name, m)| SegmentMeta {
                    name: (*name).to_string(),
                    rows: m.nrows() as u64,
                    cols: m.ncols() as u64,
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)?;

        let mut payload = Vec::new();
        payload.extend_from_slice(MAGIC);
        payload.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        payload.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        payload.extend_from_slice(&header_bytes);
        for (_, m) in &segments {
            payload.extend_from_slice(&matrix_bytes(m));
        }
        let checksum: [u8; 32] = Sha256::digest(&payload).into();
        dst.write_all(&payload)?;
        dst.write_all(&checksum)?;
        Ok(())
    }

    pub fn save_to_path<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut buf = std::io::BufWriter::new(file);
        self.save(&mut buf)?;
        buf.flush()?;
        Ok(())
    }

    pub fn load<R: Read>(mut src: R) -> Result<Self> {
        let mut bytes = Vec::new();
        src.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load_from_path<P: AsRef<Path>>(path: P) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 8 + 32 {
            return Err(Error::MalformedContainer("file too small"));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::MalformedContainer("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: version,
            });
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .ok_or(Error::MalformedContainer("header length overflow"))?;
        if bytes.len() < header_end + 32 {
            return Err(Error::MalformedContainer("truncated header"));
        }
        let header: Header = serde_json::from_slice(&bytes[16..header_end])?;
        if header.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                expected: FORMAT_VERSION,
                found: header.format_version,
            });
        }
        let payload_len: usize = header
            .segments
            .iter()
            .map(|s| (s.rows * s.cols * 8) as usize)
            .sum();
        if bytes.len() != header_end + payload_len + 32 {
            return Err(Error::MalformedContainer("truncated payload"));
        }
        let body_end = header_end + payload_len;
        let expected: [u8; 32] = Sha256::digest(&bytes[..body_end]).into();
        if expected[..] != bytes[body_end..body_end + 32] {
            return Err(Error::ChecksumMismatch);
        }

        let mut offset = header_end;
        let mut read_segment = |meta: &SegmentMeta| -> Array2<f64> {
            let rows = meta.rows as usize;
            let cols = meta.cols as usize;
            let n = rows * cols;
            let mut data = Vec::with_capacity(n);
            for i in 0..n {
                let start = offset + i * 8;
                data.push(f64::from_le_bytes(
                    bytes[start..start + 8].try_into().unwrap(),
                ));
            }
            offset += n * 8;
            Array2::from_shape_vec((rows, cols), data).expect("declared shape")
        };

        let mut segs = std::collections::BTreeMap::new();
        for meta in &header.segments {
            segs.insert(meta.name.clone(), read_segment(meta));
        }
        let take = |name: &str, segs: &mut std::collections::BTreeMap<String, Array2<f64>>| {
            segs.remove(name)
                .ok_or(Error::MalformedContainer("missing segment"))
        };

        let w = take("reducer_w", &mut segs)?;
        let reducer_mean = take("reducer_mean", &mut segs)?.row(0).to_owned();
        let explained = take("explained_variance", &mut segs)?.row(0).to_owned();
        let model_mean = take("model_mean", &mut segs)?.row(0).to_owned();
        let sigma_reg = take("sigma_reg", &mut segs)?;
        let factor = take("factor", &mut segs)?;
        let bank_rows = take("bank", &mut segs)?;

        if w.nrows() != header.d0 || w.ncols() != header.k {
            return Err(Error::MalformedContainer("projection shape mismatch"));
        }
        let reducer = Reducer::from_parts(w, reducer_mean, explained)?;
        let model = CovarianceModel::from_parts(
            model_mean,
            sigma_reg,
            factor,
            header.delta,
            header.policy_record,
        )?;
        let bank = MemoryBank::new(
            bank_rows,
            header.bank.constructor,
            header.bank.budget,
            header.bank.local_budget,
            header.bank.provenance_observed,
            header.bank.underfilled,
        );
        DetectorState::assemble(reducer, model, bank, header.config)
    }
}
