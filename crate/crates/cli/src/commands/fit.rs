use std::path::Path;

use anyhow::{Context, Result};
use serde_json::json;

use mhpc_core::detector::{fit, DetectorConfig};
use mhpc_core::telemetry::{measure, Telemetry};

use crate::manifest::ManifestSource;

pub fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<DetectorConfig> {
    let mut config = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("missing config '{}'", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("malformed config '{}'", p.display()))?
        }
        None => DetectorConfig::default(),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(
    manifest_path: &Path,
    config_path: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<()> {
    let source = ManifestSource::open(manifest_path)?;
    let config = load_config(config_path, seed)?;

    let measured = measure(|| fit(&source, &config));
    let outcome = measured.value.context("fit failed")?;

    outcome.state.save_to_path(out)?;
    let telemetry = Telemetry {
        ram_max_bytes: measured.ram_max_bytes,
        t_fit_s: Some(measured.seconds),
        traversals: Some(outcome.stats.traversals),
        peak_rows: Some(outcome.stats.peak_rows),
        ..Telemetry::default()
    };
    let record = json!({
        "command": "fit",
        "state": out.display().to_string(),
        "config": config,
        "reduced_dim": outcome.stats.reduced_dim,
        "bank_rows": outcome.stats.bank_rows,
        "patches_seen": outcome.stats.patches_seen,
        "telemetry": telemetry,
    });
    let telemetry_path = out.with_extension("telemetry.json");
    std::fs::write(&telemetry_path, serde_json::to_string_pretty(&record)?)
        .with_context(|| format!("cannot write '{}'", telemetry_path.display()))?;
    println!("{record}");
    Ok(())
}
