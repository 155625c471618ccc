//! Executes an experiment: one training run per seed, metrics, checkpoints, manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::ExperimentConfig;
use super::metrics::{flush_marker, MetricsRow, MetricsWriter, SCHEMA_VERSION};
use crate::agent::run_training;
use crate::error::{Error, Result};
use crate::model::save_params;

/// Overrides `output_dir` of every config when set.
pub const OUTPUT_ROOT_ENV: &str = "MIRO_OUTPUT_ROOT";
pub const MANIFEST: &str = "manifest.toml";
pub const FAILED_MARKER: &str = "FAILED";

/// Directory holding the artifacts of `cfg`.
pub fn run_dir(cfg: &ExperimentConfig) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.output_dir.clone());
    root.join(&cfg.name)
}

pub fn metrics_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("metrics-seed{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("params-seed{seed}.ckpt"))
}

/// Trains one seed, streaming its metrics file and saving the final parameters.
/// On error the partial file stays on disk next to a `FAILED` marker.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<()> {
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let result = train_seed(cfg, seed, &dir);
    if let Err(e) = &result {
        flush_marker(&dir.join(FAILED_MARKER), &format!("seed {seed}: {e}\n"))?;
    }
    result
}

fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path) -> Result<()> {
    let setup = cfg.training_setup(seed)?;
    let run_id = cfg.run_id(seed);
    let mut writer = MetricsWriter::create(&metrics_path(dir, seed))?;
    let start = Instant::now();
    let params = run_training(&setup, &mut |event| {
        let wall = cfg.log_wall_clock.then(|| start.elapsed().as_millis() as u64);
        writer.write(&MetricsRow::from_event(&run_id, seed, cfg.variant, cfg.env.distractors, event, wall))
    })?;
    writer.finish()?;
    save_params(&params, &checkpoint_path(dir, seed))
}

#[derive(Serialize)]
struct Artifact {
    path: String,
    sha256: String,
    bytes: u64,
}

#[derive(Serialize)]
struct Manifest<'a> {
    status: &'a str,
    metrics_schema: u32,
    config_sha256: String,
    artifacts: Vec<Artifact>,
    config: &'a ExperimentConfig,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Writes `manifest.toml`: status, the canonical config and the hash of every
/// per-seed artifact that exists.
pub fn write_manifest(cfg: &ExperimentConfig, ok: bool) -> Result<PathBuf> {
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut artifacts = Vec::new();
    for &seed in &cfg.seeds {
        for path in [metrics_path(&dir, seed), checkpoint_path(&dir, seed)] {
            if let Some(meta) = std::fs::metadata(&path).ok().filter(|m| m.is_file()) {
                artifacts.push(Artifact {
                    path: path.file_name().expect("file path").to_string_lossy().into_owned(),
                    sha256: sha256_file(&path)?,
                    bytes: meta.len(),
                });
            }
        }
    }
    let canonical = cfg.to_toml();
    let manifest = Manifest {
        status: if ok { "complete" } else { "failed" },
        metrics_schema: SCHEMA_VERSION,
        config_sha256: hex::encode(Sha256::digest(canonical.as_bytes())),
        artifacts,
        config: cfg,
    };
    let path = dir.join(MANIFEST);
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Clears a stale `FAILED` marker before a fresh run.
pub fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let dir = run_dir(cfg);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let marker = dir.join(FAILED_MARKER);
    if marker.exists() {
        std::fs::remove_file(&marker).map_err(|e| Error::io(&marker, e))?;
    }
    Ok(dir)
}

/// All seeds in order in this process, then the manifest. Stops at the first
/// failing seed; the manifest is written either way.
pub fn run_experiment(cfg: &ExperimentConfig, mut progress: impl FnMut(u64)) -> Result<PathBuf> {
    prepare_run_dir(cfg)?;
    for &seed in &cfg.seeds {
        progress(seed);
        if let Err(e) = run_seed(cfg, seed) {
            write_manifest(cfg, false)?;
            return Err(e);
        }
    }
    write_manifest(cfg, true)
}
