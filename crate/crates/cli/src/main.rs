use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Parser, Subcommand};
use miro::expcli::{self, ExperimentConfig};

#[derive(Parser)]
#[command(name = "miro", version, about = "Train, plot and summarise latent world-model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of an experiment config.
    Run {
        config: PathBuf,
        /// Run only this seed and skip the manifest (used by `parallel = true`).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learning curves (mean ± 1 std over seeds) as SVG.
    Plot {
        /// Glob over metrics CSV files, e.g. 'runs/*/metrics-*.csv'.
        pattern: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Final-performance table and distractor-robustness ratios.
    Report { pattern: String },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> miro::Result<()> {
    match cmd {
        Cmd::Run { config, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            match seed {
                Some(s) if !cfg.seeds.contains(&s) => {
                    Err(miro::Error::Config(format!("seed {s} is not listed in {}", config.display())))
                }
                Some(s) => expcli::run_seed(&cfg, s),
                None if cfg.parallel => run_parallel(&cfg, &config),
                None => {
                    let manifest = expcli::run_experiment(&cfg, |s| eprintln!("{}: seed {s}", cfg.name))?;
                    println!("{}", manifest.display());
                    Ok(())
                }
            }
        }
        Cmd::Plot { pattern, out } => {
            let paths = expcli::expand_glob(&pattern)?;
            expcli::plot(&paths, &out)?;
            println!("{}", out.display());
            Ok(())
        }
        Cmd::Report { pattern } => {
            let paths = expcli::expand_glob(&pattern)?;
            print!("{}", expcli::build_report(&paths)?.render());
            Ok(())
        }
    }
}

/// One child process per seed; the manifest is written once all have exited.
fn run_parallel(cfg: &ExperimentConfig, config: &Path) -> miro::Result<()> {
    expcli::prepare_run_dir(cfg)?;
    let exe = std::env::current_exe().map_err(|e| miro::Error::io("current executable", e))?;
    let mut children = Vec::new();
    for &seed in &cfg.seeds {
        let child = Command::new(&exe)
            .arg("run")
            .arg(config)
            .arg("--seed")
            .arg(seed.to_string())
            .spawn()
            .map_err(|e| miro::Error::io(&exe, e))?;
        children.push((seed, child));
    }
    let mut failed = Vec::new();
    for (seed, mut child) in children {
        let status = child.wait().map_err(|e| miro::Error::io(&exe, e))?;
        if !status.success() {
            failed.push(seed);
        }
    }
    let manifest = expcli::write_manifest(cfg, failed.is_empty())?;
    println!("{}", manifest.display());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(miro::Error::Data(format!("seeds {failed:?} failed; see {}", expcli::FAILED_MARKER)))
    }
}
