//! Experiment front end: TOML configs, multi-seed runs, metrics CSV files,
//! learning-curve plots and summary reports.
//!
//! The config grammar is documented in `docs/config.md` and the metrics
//! columns in `docs/metrics-csv.md`.

mod config;
mod metrics;
mod plot;
mod report;
mod run;

use std::path::PathBuf;

pub use config::{ExperimentConfig, ModelSection};
pub use metrics::{
    episode_returns, read_metrics, write_metrics, EventKind, MetricsRow, MetricsWriter, HEADER, SCHEMA_VERSION,
};
pub use plot::{learning_curves, mean_std, plot, render_svg, Curve};
pub use report::{build_report, tail_mean, GroupSummary, Ratio, Report, FINAL_WINDOW};
pub use run::{
    checkpoint_path, metrics_path, prepare_run_dir, run_dir, run_experiment, run_seed, sha256_file, write_manifest,
    FAILED_MARKER, MANIFEST, OUTPUT_ROOT_ENV,
};

use crate::error::{Error, Result};

/// Files matching `pattern`, sorted by path.
pub fn expand_glob(pattern: &str) -> Result<Vec<PathBuf>> {
    let paths = glob::glob(pattern).map_err(|e| Error::Config(format!("bad glob {pattern:?}: {e}")))?;
    let mut out: Vec<PathBuf> = paths
        .filter_map(|p| p.ok())
        .filter(|p| p.is_file())
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::Data(format!("no files match {pattern:?}")));
    }
    Ok(out)
}
