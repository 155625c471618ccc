//! Final-performance table and distractor-robustness ratios.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use super::metrics::{episode_returns, read_metrics};
use super::plot::{file_group, group_key, mean_std};
use crate::agent::Variant;
use crate::error::{Error, Result};

/// Episodes averaged per seed for the final-performance statistic.
pub const FINAL_WINDOW: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub variant: Variant,
    pub distractors: usize,
    /// Per-seed tail means, sorted ascending.
    pub per_seed: Vec<f64>,
    /// Mean over seeds of the per-seed tail means.
    pub final_perf: f64,
    pub std: f64,
    /// Smallest number of episodes any seed contributed to its tail mean.
    pub window: usize,
}

/// `final(with) / final(without)` for one variant and one distractor count.
#[derive(Clone, Debug, PartialEq)]
pub struct Ratio {
    pub variant: Variant,
    pub distractors: usize,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub groups: Vec<GroupSummary>,
    pub ratios: Vec<Ratio>,
    pub warnings: Vec<String>,
}

/// Mean of the last `FINAL_WINDOW` values (all of them if fewer) and the count used.
pub fn tail_mean(returns: &[f64]) -> (f64, usize) {
    let k = returns.len().min(FINAL_WINDOW);
    let tail = &returns[returns.len() - k..];
    (tail.iter().sum::<f64>() / k as f64, k)
}

pub fn build_report(paths: &[PathBuf]) -> Result<Report> {
    if paths.is_empty() {
        return Err(Error::Data("no metrics files given".into()));
    }
    let mut warnings = Vec::new();
    let mut groups: BTreeMap<(&'static str, usize), (Variant, usize, Vec<f64>, usize)> = BTreeMap::new();
    for path in paths {
        let rows = read_metrics(path)?;
        let (variant, distractors) = file_group(&rows, path)?;
        let mut eps = episode_returns(&rows);
        eps.sort_by_key(|&(i, _)| i);
        let returns: Vec<f64> = eps.iter().map(|&(_, r)| r).collect();
        if returns.is_empty() {
            return Err(Error::Data(format!("{}: no episode rows", path.display())));
        }
        let (m, k) = tail_mean(&returns);
        if k < FINAL_WINDOW {
            warnings.push(format!(
                "warning: {} has {k} episodes (< {FINAL_WINDOW}); final performance uses all of them",
                path.display()
            ));
        }
        let g = groups
            .entry(group_key(variant, distractors))
            .or_insert((variant, distractors, Vec::new(), usize::MAX));
        g.2.push(m);
        g.3 = g.3.min(k);
    }
    let groups: Vec<GroupSummary> = groups
        .into_values()
        .map(|(variant, distractors, mut per_seed, window)| {
            per_seed.sort_by(f64::total_cmp);
            let (final_perf, std) = mean_std(&per_seed);
            GroupSummary {
                variant,
                distractors,
                per_seed,
                final_perf,
                std,
                window,
            }
        })
        .collect();
    let mut ratios = Vec::new();
    for base in groups.iter().filter(|g| g.distractors == 0) {
        for with in groups.iter().filter(|g| g.variant == base.variant && g.distractors > 0) {
            ratios.push(Ratio {
                variant: base.variant,
                distractors: with.distractors,
                ratio: with.final_perf / base.final_perf,
            });
        }
    }
    Ok(Report {
        groups,
        ratios,
        warnings,
    })
}

impl Report {
    pub fn ratio(&self, variant: Variant) -> Option<f64> {
        self.ratios.iter().find(|r| r.variant == variant).map(|r| r.ratio)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for w in &self.warnings {
            let _ = writeln!(out, "{w}");
        }
        let _ = writeln!(
            out,
            "{:<8} {:>11} {:>6} {:>12} {:>10}",
            "variant", "distractors", "seeds", "final", "std"
        );
        for g in &self.groups {
            let _ = writeln!(
                out,
                "{:<8} {:>11} {:>6} {:>12.4} {:>10.4}",
                g.variant.name(),
                g.distractors,
                g.per_seed.len(),
                g.final_perf,
                g.std
            );
        }
        if !self.ratios.is_empty() {
            let _ = writeln!(out);
            let _ = writeln!(out, "robustness ratio final(with) / final(without)");
            for r in &self.ratios {
                let _ = writeln!(
                    out,
                    "{:<8} distractors {:>2}: {:.4}",
                    r.variant.name(),
                    r.distractors,
                    r.ratio
                );
            }
        }
        out
    }
}
