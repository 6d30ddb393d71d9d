//! Dataset manifests: JSON listings of descriptor files with grid shapes
//! and labels. A manifest plus its directory is a re-iterable descriptor
//! source; files are read lazily on every traversal so fitting never
//! holds the dataset in memory.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use mhpc_core::detector::{DescriptorBlock, DescriptorSource, Label};
use mhpc_core::error::Error as CoreError;

use crate::descfile;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub image_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    pub grid_h: usize,
    pub grid_w: usize,
    pub d0: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub split: Split,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(split: Split, entries: Vec<ManifestEntry>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            split,
            entries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            bail!("unsupported manifest version {}", self.version);
        }
        if self.split == Split::Train {
            // one-class contract: training data carries no anomalies
            for e in &self.entries {
                if e.label == Some(Label::Anomalous) {
                    bail!(
                        "train manifest entry '{}' is labelled anomalous",
                        e.image_id
                    );
                }
            }
        }
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)
            .with_context(|| format!("cannot write manifest '{}'", path.display()))?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("missing manifest '{}'", path.display()))?;
        let manifest: Self = serde_json::from_str(&text)
            .with_context(|| format!("malformed manifest '{}'", path.display()))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

/// Manifest-backed descriptor source; paths resolve against `base`.
pub struct ManifestSource {
    manifest: DatasetManifest,
    base: PathBuf,
}

impl ManifestSource {
    pub fn open<P: AsRef<Path>>(manifest_path: P) -> Result<Self> {
        let manifest_path = manifest_path.as_ref();
        let manifest = DatasetManifest::load(manifest_path)?;
        let base = manifest_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .to_path_buf();
        Ok(Self { manifest, base })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.entries.len()
    }

    pub fn load_block(&self, entry: &ManifestEntry) -> Result<DescriptorBlock> {
        let path = self.base.join(&entry.path);
        let data = descfile::read_matrix_file(&path)?;
        if data.ncols() != entry.d0 {
            bail!(
                "descriptor file '{}': expected d0 {} but found {}",
                path.display(),
                entry.d0,
                data.ncols()
            );
        }
        DescriptorBlock::new(
            entry.image_id.clone(),
            entry.grid_h,
            entry.grid_w,
            data,
            entry.label,
        )
        .with_context(|| format!("invalid descriptor block '{}'", entry.image_id))
    }
}

impl DescriptorSource for ManifestSource {
    fn traverse(
        &self,
    ) -> mhpc_core::Result<Box<dyn Iterator<Item = mhpc_core::Result<DescriptorBlock>> + '_>> {
        Ok(Box::new(self.manifest.entries.iter().map(move |entry| {
            self.load_block(entry).map_err(|e| {
                CoreError::Io(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("{e:#}"),
                ))
            })
        })))
    }
}
