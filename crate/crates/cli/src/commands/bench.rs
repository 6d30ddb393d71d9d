use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use mhpc_core::detector::{fit, DetectorConfig, Label};
use mhpc_core::eval::auroc;
use mhpc_core::telemetry::{infer_latency_ms, measure};

use crate::manifest::ManifestSource;

#[derive(Debug, Deserialize)]
struct SweepFile {
    /// Labelled evaluation manifest, resolved relative to the sweep file.
    test_manifest: String,
    #[serde(default)]
    configs: Vec<SweepEntry>,
}

#[derive(Debug, Deserialize)]
struct SweepEntry {
    name: String,
    #[serde(default = "default_config_value")]
    config: serde_json::Value,
}

fn default_config_value() -> serde_json::Value {
    serde_json::json!({})
}

/// One sweep row; failures are recorded instead of aborting the sweep.
#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auroc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bank_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduced_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub traversals: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub peak_rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ram_max_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_fit_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_infer_ms: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn run_one(
    name: &str,
    config: DetectorConfig,
    train: &ManifestSource,
    test: &ManifestSource,
) -> Result<BenchRow> {
    let fitted = measure(|| fit(train, &config));
    let outcome = fitted.value?;

    let scored = measure(|| -> Result<(Vec<f64>, Vec<u8>)> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for entry in &test.manifest().entries {
            let block = test.load_block(entry)?;
            let s = outcome.state.score_image(&block)?;
            scores.push(s.s);
            if let Some(label) = block.label {
                labels.push(if label == Label::Anomalous { 1 } else { 0 });
            }
        }
        Ok((scores, labels))
    });
    let (scores, labels) = scored.value?;
    let quality = if labels.len() == scores.len() && !scores.is_empty() {
        auroc(&scores, &labels).ok()
    } else {
        None
    };

    Ok(BenchRow {
        name: name.to_string(),
        auroc: quality,
        bank_rows: Some(outcome.stats.bank_rows),
        reduced_dim: Some(outcome.stats.reduced_dim),
        traversals: Some(outcome.stats.traversals),
        peak_rows: Some(outcome.stats.peak_rows),
        ram_max_bytes: fitted.ram_max_bytes,
        t_fit_s: Some(fitted.seconds),
        l_infer_ms: infer_latency_ms(scored.seconds, test.len()),
        error: None,
    })
}

pub fn run(manifest_path: &Path, sweep_path: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(sweep_path)
        .with_context(|| format!("missing sweep file '{}'", sweep_path.display()))?;
    let sweep: SweepFile = serde_json::from_str(&text)
        .with_context(|| format!("malformed sweep file '{}'", sweep_path.display()))?;
    let sweep_dir = sweep_path.parent().unwrap_or_else(|| Path::new("."));

    let train = ManifestSource::open(manifest_path)?;
    let test = ManifestSource::open(sweep_dir.join(&sweep.test_manifest))?;

    let mut rows: Vec<BenchRow> = Vec::with_capacity(sweep.configs.len());
    for entry in &sweep.configs {
        let row = serde_json::from_value::<DetectorConfig>(entry.config.clone())
            .map_err(anyhow::Error::from)
            .and_then(|config| run_one(&entry.name, config, &train, &test));
        rows.push(match row {
            Ok(row) => row,
            Err(e) => BenchRow {
                name: entry.name.clone(),
                auroc: None,
                bank_rows: None,
                reduced_dim: None,
                traversals: None,
                peak_rows: None,
                ram_max_bytes: None,
                t_fit_s: None,
                l_infer_ms: None,
                error: Some(format!("{e:#}")),
            },
        });
    }

    print_table(&rows);
    if let Some(path) = out {
        std::fs::write(path, serde_json::to_string_pretty(&rows)?)
            .with_context(|| format!("cannot write results '{}'", path.display()))?;
    }
    Ok(())
}

fn fmt_opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    match v {
        Some(x) => x.to_string(),
        None => "-".to_string(),
    }
}

fn print_table(rows: &[BenchRow]) {
    println!(
        "{:<28} {:>8} {:>10} {:>10} {:>12} {:>11} {:>6}",
        "config", "auroc", "bank", "t_fit_s", "l_infer_ms", "ram_mib", "passes"
    );
    for r in rows {
        if let Some(err) = &r.error {
            println!("{:<28} failed: {err}", r.name);
            continue;
        }
        println!(
            "{:<28} {:>8} {:>10} {:>10} {:>12} {:>11} {:>6}",
            r.name,
            r.auroc.map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
            fmt_opt(&r.bank_rows),
            r.t_fit_s.map(|t| format!("{t:.2}")).unwrap_or_else(|| "-".into()),
            r.l_infer_ms.map(|l| format!("{l:.2}")).unwrap_or_else(|| "-".into()),
            r.ram_max_bytes
                .map(|b| format!("{:.1}", b as f64 / (1024.0 * 1024.0)))
                .unwrap_or_else(|| "-".into()),
            fmt_opt(&r.traversals),
        );
    }
}
