//! Command-line driver for the knife-cutting simulator: config loading,
//! experiment runners and run manifests.

pub mod config;
pub mod experiments;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde_json::json;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use experiments::Artifacts;

/// Summary of a finished run.
pub struct RunReport {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

/// Runs `cfg` and writes its artifacts plus `manifest.json` into `out_dir`.
/// Relative paths inside the config resolve against `base`.
pub fn run_config(cfg: &ExperimentConfig, base: &Path, out_dir: &Path) -> Result<RunReport> {
    let start = Instant::now();
    let mut out = Artifacts::new(out_dir)?;
    let effective = serde_json::to_value(cfg)?;
    out.write_json("config.json", &effective)?;
    log::info!("running {} experiment into {}", cfg.experiment.kind(), out_dir.display());
    let summary = experiments::run(cfg, base, &mut out)
        .with_context(|| format!("{} experiment failed", cfg.experiment.kind()))?;
    let canonical = serde_json::to_string(&effective)?;
    let digest = Sha256::digest(canonical.as_bytes());
    let hash: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest = json!({
        "experiment": cfg.experiment.kind(),
        "config_sha256": hash,
        "seed": cfg.seed,
        "schema_version": config::SCHEMA_VERSION,
        "slicesim_version": slicesim::VERSION,
        "cli_version": env!("CARGO_PKG_VERSION"),
        "wall_time_s": start.elapsed().as_secs_f64(),
        "files": out.files,
        "config": effective,
    });
    out.write_json("manifest.json", &manifest)?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        files: out.files,
        summary,
    })
}
