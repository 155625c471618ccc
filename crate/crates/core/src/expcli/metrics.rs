//! Metrics CSV: one row per training step or collected episode.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::agent::{Event, Variant};
use crate::error::{Error, Result};

/// Version of [`HEADER`]; bumped whenever a column changes.
pub const SCHEMA_VERSION: u32 = 1;

pub const HEADER: [&str; 16] = [
    "run_id",
    "seed",
    "variant",
    "distractors",
    "event",
    "step",
    "episode_idx",
    "total",
    "nce",
    "kl_filter",
    "reward_nll",
    "recon",
    "return",
    "wall_ms",
    "nce_bound",
    "grad_norm",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Train,
    Episode,
}

/// One parsed row. Inapplicable fields are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub seed: u64,
    pub variant: Variant,
    pub distractors: usize,
    pub event: EventKind,
    pub step: u64,
    pub episode_idx: Option<usize>,
    pub total: Option<f64>,
    pub nce: Option<f64>,
    pub kl_filter: Option<f64>,
    pub reward_nll: Option<f64>,
    pub recon: Option<f64>,
    pub ret: Option<f64>,
    pub wall_ms: Option<u64>,
    pub nce_bound: Option<f64>,
    pub grad_norm: Option<f64>,
}

impl MetricsRow {
    pub fn from_event(run_id: &str, seed: u64, variant: Variant, distractors: usize, event: &Event, wall_ms: Option<u64>) -> Self {
        let mut row = Self {
            run_id: run_id.to_string(),
            seed,
            variant,
            distractors,
            event: EventKind::Train,
            step: 0,
            episode_idx: None,
            total: None,
            nce: None,
            kl_filter: None,
            reward_nll: None,
            recon: None,
            ret: None,
            wall_ms,
            nce_bound: None,
            grad_norm: None,
        };
        match event {
            Event::Train(rec) => {
                let b = &rec.breakdown;
                let has_nce = !b.nce.is_empty();
                row.step = rec.step;
                row.total = Some(b.total);
                row.nce = has_nce.then(|| b.nce_sum());
                row.kl_filter = Some(b.kl_filter);
                row.reward_nll = Some(b.reward_nll);
                row.recon = b.recon;
                row.nce_bound = has_nce.then(|| b.nce_bound());
                row.grad_norm = Some(rec.update.grad_norm);
            }
            &Event::Episode { index, step, ret, .. } => {
                row.event = EventKind::Episode;
                row.step = step;
                row.episode_idx = Some(index);
                row.ret = Some(ret);
            }
        }
        row
    }

    fn fields(&self) -> [String; 16] {
        fn opt<T: ToString>(v: Option<T>) -> String {
            v.map(|x| x.to_string()).unwrap_or_default()
        }
        [
            self.run_id.clone(),
            self.seed.to_string(),
            self.variant.name().to_string(),
            self.distractors.to_string(),
            match self.event {
                EventKind::Train => "train",
                EventKind::Episode => "episode",
            }
            .to_string(),
            self.step.to_string(),
            opt(self.episode_idx),
            opt(self.total),
            opt(self.nce),
            opt(self.kl_filter),
            opt(self.reward_nll),
            opt(self.recon),
            opt(self.ret),
            opt(self.wall_ms),
            opt(self.nce_bound),
            opt(self.grad_norm),
        ]
    }

    fn parse(rec: &csv::StringRecord, path: &Path, line: u64) -> Result<Self> {
        let bad = |col: usize, why: &str| {
            Error::Schema(format!("{}:{line}: column `{}` {why}", path.display(), HEADER[col]))
        };
        if rec.len() != HEADER.len() {
            return Err(Error::Schema(format!(
                "{}:{line}: expected {} fields, found {}",
                path.display(),
                HEADER.len(),
                rec.len()
            )));
        }
        let get = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| -> Result<u64> { get(i).parse().map_err(|_| bad(i, "is not an unsigned integer")) };
        let opt_int = |i: usize| -> Result<Option<u64>> {
            if get(i).is_empty() {
                Ok(None)
            } else {
                int(i).map(Some)
            }
        };
        let opt_f = |i: usize| -> Result<Option<f64>> {
            if get(i).is_empty() {
                return Ok(None);
            }
            match get(i).parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Some(v)),
                _ => Err(bad(i, "is not a finite number")),
            }
        };
        let variant = match get(2) {
            "miro" => Variant::Miro,
            "recon" => Variant::Recon,
            _ => return Err(bad(2, "must be miro or recon")),
        };
        let event = match get(4) {
            "train" => EventKind::Train,
            "episode" => EventKind::Episode,
            _ => return Err(bad(4, "must be train or episode")),
        };
        let row = Self {
            run_id: get(0).to_string(),
            seed: int(1)?,
            variant,
            distractors: int(3)? as usize,
            event,
            step: int(5)?,
            episode_idx: opt_int(6)?.map(|v| v as usize),
            total: opt_f(7)?,
            nce: opt_f(8)?,
            kl_filter: opt_f(9)?,
            reward_nll: opt_f(10)?,
            recon: opt_f(11)?,
            ret: opt_f(12)?,
            wall_ms: opt_int(13)?,
            nce_bound: opt_f(14)?,
            grad_norm: opt_f(15)?,
        };
        if row.event == EventKind::Episode && (row.episode_idx.is_none() || row.ret.is_none()) {
            return Err(bad(12, "must be set on episode rows"));
        }
        Ok(row)
    }
}

/// Append-only writer; every row is flushed so an aborted run keeps its prefix.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut inner = csv::Writer::from_writer(file);
        inner.write_record(HEADER)?;
        inner.flush().map_err(|e| Error::io(path, e))?;
        Ok(Self {
            inner,
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields())?;
        self.inner.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush().map_err(|e| Error::io(&self.path, e))?;
        let file = self.inner.into_inner().map_err(|e| Error::io(&self.path, e.into_error()))?;
        file.sync_all().map_err(|e| Error::io(&self.path, e))
    }
}

/// Rows of one metrics file, after checking the header column by column.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Schema(format!("{}: {other:?}", path.display())),
        })?;
    let mut records = rdr.records();
    let header = records
        .next()
        .ok_or_else(|| Error::Schema(format!("{}: empty file, no header", path.display())))??;
    check_header(&header, path)?;
    let mut rows = Vec::new();
    for (i, rec) in records.enumerate() {
        rows.push(MetricsRow::parse(&rec?, path, i as u64 + 2)?);
    }
    Ok(rows)
}

fn check_header(header: &csv::StringRecord, path: &Path) -> Result<()> {
    for (i, want) in HEADER.iter().enumerate() {
        match header.get(i) {
            Some(got) if got == *want => {}
            Some(got) => {
                return Err(Error::Schema(format!(
                    "{}: column {} is `{got}`, expected `{want}`",
                    path.display(),
                    i + 1
                )))
            }
            None => return Err(Error::Schema(format!("{}: missing column `{want}`", path.display()))),
        }
    }
    if let Some(extra) = header.get(HEADER.len()) {
        return Err(Error::Schema(format!("{}: unexpected column `{extra}`", path.display())));
    }
    Ok(())
}

/// Writes `rows` as a complete metrics file (used by tests and fixtures).
pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for r in rows {
        w.write(r)?;
    }
    w.finish()
}

/// `(episode_idx, return)` pairs of the episode rows, in file order.
pub fn episode_returns(rows: &[MetricsRow]) -> Vec<(usize, f64)> {
    rows.iter()
        .filter(|r| r.event == EventKind::Episode)
        .filter_map(|r| Some((r.episode_idx?, r.ret?)))
        .collect()
}

pub(crate) fn flush_marker(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
