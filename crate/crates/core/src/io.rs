//! CSV readers for score and snapshot files.

use std::io::Read;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::score::{Score2, Snapshot2, SnapshotBatch};

#[derive(Deserialize)]
struct ScoreRow {
    m: f64,
    sigma2: f64,
}

#[derive(Deserialize)]
struct SnapshotRow {
    m: f64,
    sigma2: f64,
    y1: u8,
    y2: u8,
}

fn malformed(k: usize, msg: impl ToString) -> Error {
    Error::MalformedRow {
        row: k + 2,
        msg: msg.to_string(),
    }
}

/// Headered CSV with columns `m,sigma2`.
pub fn read_scores<R: Read>(r: R) -> Result<Vec<Score2>> {
    let mut out = Vec::new();
    for (k, row) in csv::Reader::from_reader(r).deserialize::<ScoreRow>().enumerate() {
        let row = row.map_err(|e| malformed(k, e))?;
        out.push(Score2::new(row.m, row.sigma2)?);
    }
    Ok(out)
}

/// Headered CSV with columns `m,sigma2,y1,y2`; labels must be 0 or 1.
pub fn read_snapshots<R: Read>(r: R, seed: u64) -> Result<SnapshotBatch> {
    let mut out = Vec::new();
    for (k, row) in csv::Reader::from_reader(r).deserialize::<SnapshotRow>().enumerate() {
        let row = row.map_err(|e| malformed(k, e))?;
        if row.y1 > 1 || row.y2 > 1 {
            return Err(malformed(k, "labels must be 0 or 1"));
        }
        out.push(Snapshot2::new(Score2::new(row.m, row.sigma2)?, row.y1, row.y2));
    }
    Ok(SnapshotBatch::new(out, seed))
}

pub fn scores_csv(scores: &[Score2]) -> String {
    let mut s = String::from("m,sigma2\n");
    for x in scores {
        s.push_str(&format!("{},{}\n", x.m, x.sigma2));
    }
    s
}

pub fn snapshots_csv(batch: &SnapshotBatch) -> String {
    let mut s = String::from("m,sigma2,y1,y2\n");
    for r in &batch.records {
        s.push_str(&format!("{},{},{},{}\n", r.score.m, r.score.sigma2, r.y1, r.y2));
    }
    s
}
