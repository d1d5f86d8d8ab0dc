//! CSV outputs. All files are UTF-8, comma-delimited, with a header row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fedaccess_core::sim::{MetricsRow, WinnerRow};

use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 6] = ["round", "strategy", "accuracy", "loss", "merged_count", "collisions"];
pub const WINNERS_HEADER: [&str; 5] = ["round", "user_id", "rank", "T_backoff", "collisions"];
pub const SUMMARY_HEADER: [&str; 6] = ["axis", "value", "strategy", "replicates", "final_accuracy", "best_accuracy"];
pub const FAIRNESS_HEADER: [&str; 3] = ["user_id", "selections", "fraction"];

fn write_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Write { path: path.to_path_buf(), source }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}

pub fn metrics_record(m: &MetricsRow) -> [String; 6] {
    [
        m.round.to_string(),
        m.strategy.clone(),
        m.accuracy.to_string(),
        m.loss.to_string(),
        m.merged_count.to_string(),
        m.collisions.to_string(),
    ]
}

pub fn winner_record(w: &WinnerRow) -> [String; 5] {
    [
        w.round.to_string(),
        w.user_id.to_string(),
        w.rank.to_string(),
        w.backoff_slots.map(|t| t.to_string()).unwrap_or_default(),
        w.collisions.to_string(),
    ]
}

fn render<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(&r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn metrics_csv(rows: &[MetricsRow]) -> Vec<u8> {
    render(METRICS_HEADER, rows.iter().map(metrics_record))
}

pub fn winners_csv(rows: &[WinnerRow]) -> Vec<u8> {
    render(WINNERS_HEADER, rows.iter().map(winner_record))
}

pub fn write_csv(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic(path, bytes).map_err(write_err(path))
}

/// Appends metrics rows to a `.partial` file as they are produced, flushing
/// after every row.
pub struct PartialMetrics {
    path: PathBuf,
    writer: csv::Writer<BufWriter<File>>,
}

impl PartialMetrics {
    pub fn create(final_path: &Path) -> Result<Self> {
        let mut p = final_path.as_os_str().to_owned();
        p.push(".partial");
        let path = PathBuf::from(p);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(write_err(&path))?;
        }
        let file = File::create(&path).map_err(write_err(&path))?;
        let mut writer = csv::Writer::from_writer(BufWriter::new(file));
        writer.write_record(METRICS_HEADER).map_err(|e| Error::Write { path: path.clone(), source: e.into() })?;
        Ok(PartialMetrics { path, writer })
    }

    pub fn push(&mut self, row: &MetricsRow) -> Result<()> {
        let path = &self.path;
        self.writer.write_record(metrics_record(row)).map_err(|e| Error::Write { path: path.clone(), source: e.into() })?;
        self.writer.flush().map_err(write_err(path))
    }

    pub fn finish(self) -> Result<()> {
        drop(self.writer);
        std::fs::remove_file(&self.path).map_err(write_err(&self.path))
    }
}

/// Reads a winners log back.
pub fn read_winners(path: &Path) -> Result<Vec<WinnerRow>> {
    let malformed = |message: String| Error::Log { path: path.to_path_buf(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != WINNERS_HEADER {
        return Err(malformed(format!("expected header {}", WINNERS_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or_default().trim();
        let bad = |what: &str| malformed(format!("row {}: bad {what}", line + 1));
        rows.push(WinnerRow {
            round: field(0).parse().map_err(|_| bad("round"))?,
            user_id: field(1).parse().map_err(|_| bad("user_id"))?,
            rank: field(2).parse().map_err(|_| bad("rank"))?,
            backoff_slots: match field(3) {
                "" => None,
                t => Some(t.parse().map_err(|_| bad("T_backoff"))?),
            },
            collisions: field(4).parse().map_err(|_| bad("collisions"))?,
        });
    }
    Ok(rows)
}
