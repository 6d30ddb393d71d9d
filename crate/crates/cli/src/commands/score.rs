use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;

use mhpc_core::detector::{DetectorState, Label};
use mhpc_core::telemetry::{infer_latency_ms, measure};

use crate::descfile::{self, DTYPE_F64};
use crate::manifest::ManifestSource;

/// One line of the JSONL score output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub image_id: String,
    pub score: f64,
    pub score_max: f64,
    pub b_used: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
}

pub fn run(
    state_path: &Path,
    manifest_path: &Path,
    out: Option<&Path>,
    maps: Option<&Path>,
) -> Result<()> {
    let state = DetectorState::load_from_path(state_path)
        .with_context(|| format!("cannot load state '{}'", state_path.display()))?;
    let source = ManifestSource::open(manifest_path)?;

    for entry in &source.manifest().entries {
        if entry.d0 != state.descriptor_dim() {
            bail!(
                "descriptor dimension mismatch for '{}': state expects d0 {} but manifest declares {}",
                entry.image_id,
                state.descriptor_dim(),
                entry.d0
            );
        }
    }
    if let Some(dir) = maps {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("cannot create map directory '{}'", dir.display()))?;
    }

    let measured = measure(|| -> Result<Vec<ScoreRecord>> {
        let mut records = Vec::with_capacity(source.len());
        for entry in &source.manifest().entries {
            let block = source.load_block(entry)?;
            let scored = state.score_image(&block)?;
            if let Some(dir) = maps {
                let path = dir.join(format!("{}.mhpc", block.image_id));
                descfile::write_matrix_file(path, &scored.patch_scores, DTYPE_F64)?;
            }
            records.push(ScoreRecord {
                image_id: scored.image_id,
                score: scored.s,
                score_max: scored.s_max,
                b_used: scored.b_used,
                label: block.label,
            });
        }
        Ok(records)
    });
    let records = measured.value?;

    let mut lines = String::new();
    for r in &records {
        lines.push_str(&serde_json::to_string(r)?);
        lines.push('\n');
    }
    match out {
        Some(path) => {
            let mut file = std::fs::File::create(path)
                .with_context(|| format!("cannot write scores '{}'", path.display()))?;
            file.write_all(lines.as_bytes())?;
        }
        None => print!("{lines}"),
    }

    eprintln!(
        "{}",
        json!({
            "command": "score",
            "n_test": records.len(),
            "t_infer_s": measured.seconds,
            "l_infer_ms": infer_latency_ms(measured.seconds, records.len()),
        })
    );
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<ScoreRecord>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("missing score records '{}'", path.display()))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: ScoreRecord = serde_json::from_str(line)
            .with_context(|| format!("malformed score record on line {}", i + 1))?;
        records.push(r);
    }
    Ok(records)
}
