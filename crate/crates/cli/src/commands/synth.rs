use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use mhpc_core::detector::DescriptorBlock;
use mhpc_core::synth::{generate, SynthSpec};

use crate::descfile::{self, DTYPE_F64};
use crate::manifest::{DatasetManifest, ManifestEntry, Split};

fn entry_for(block: &DescriptorBlock, rel_path: String) -> ManifestEntry {
    ManifestEntry {
        path: rel_path,
        image_id: block.image_id.clone(),
        label: block.label,
        grid_h: block.grid_h,
        grid_w: block.grid_w,
        d0: block.descriptor_dim(),
    }
}

pub fn run(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)
        .with_context(|| format!("missing synth spec '{}'", spec_path.display()))?;
    let mut spec: SynthSpec = serde_json::from_str(&text)
        .with_context(|| format!("malformed synth spec '{}'", spec_path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let dataset = generate(&spec)?;

    let desc_dir = out_dir.join("desc");
    std::fs::create_dir_all(&desc_dir)
        .with_context(|| format!("cannot create output directory '{}'", desc_dir.display()))?;

    let write_split = |blocks: &[DescriptorBlock]| -> Result<Vec<ManifestEntry>> {
        let mut entries = Vec::with_capacity(blocks.len());
        for block in blocks {
            let rel = format!("desc/{}.mhpc", block.image_id);
            descfile::write_matrix_file(out_dir.join(&rel), &block.data, DTYPE_F64)?;
            entries.push(entry_for(block, rel));
        }
        Ok(entries)
    };

    let train_entries = write_split(&dataset.train)?;
    let test_entries = write_split(&dataset.test)?;
    let train_manifest = DatasetManifest::new(Split::Train, train_entries);
    let test_manifest = DatasetManifest::new(Split::Test, test_entries);
    train_manifest.validate()?;
    train_manifest.save(out_dir.join("train_manifest.json"))?;
    test_manifest.save(out_dir.join("test_manifest.json"))?;

    println!(
        "{}",
        json!({
            "command": "synth",
            "out": out_dir.display().to_string(),
            "train_images": dataset.train.len(),
            "test_images": dataset.test.len(),
            "d0": spec.d0,
            "grid": [spec.grid_h, spec.grid_w],
            "seed": spec.seed,
        })
    );
    Ok(())
}
