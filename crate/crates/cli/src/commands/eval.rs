use std::path::Path;

use anyhow::{bail, Context, Result};

use mhpc_core::detector::Label;
use mhpc_core::eval::{report, ScoredImage};

use super::score::read_records;

pub fn run(scores_path: &Path, out: Option<&Path>) -> Result<()> {
    let records = read_records(scores_path)?;
    let mut per_image = Vec::with_capacity(records.len());
    for r in &records {
        let label = match r.label {
            Some(Label::Anomalous) => 1,
            Some(Label::Normal) => 0,
            None => bail!(
                "AUROC undefined: record '{}' carries no label",
                r.image_id
            ),
        };
        per_image.push(ScoredImage {
            image_id: r.image_id.clone(),
            score: r.score,
            label,
        });
    }
    let report = report(per_image).context("AUROC undefined")?;
    let json = serde_json::to_string(&serde_json::json!({
        "command": "eval",
        "auroc": report.auroc,
        "n_pos": report.n_pos,
        "n_neg": report.n_neg,
    }))?;
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("cannot write report '{}'", path.display()))?;
    }
    println!("{json}");
    Ok(())
}
