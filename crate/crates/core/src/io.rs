//! CSV and JSON import/export.

use std::io::{Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::RunManifest;
use crate::env::Site;
use crate::walk::{Checkpoint, RangeSeries};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct PointRow {
    t: u64,
    x: i64,
    y: i64,
}

/// A result together with the manifest that reproduces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub manifest: RunManifest,
    pub result: T,
}

/// Writes any flat serializable rows as CSV with a header.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<(), IoError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_rows<T: DeserializeOwned, R: Read>(r: R) -> Result<Vec<T>, IoError> {
    let mut rd = csv::Reader::from_reader(r);
    rd.deserialize().map(|row| row.map_err(IoError::from)).collect()
}

/// Columns `t,x,y`.
pub fn write_trajectory<W: Write>(points: &[(u64, Site)], w: W) -> Result<(), IoError> {
    let rows: Vec<PointRow> = points.iter().map(|&(t, s)| PointRow { t, x: s.x, y: s.y }).collect();
    write_rows(&rows, w)
}

pub fn read_trajectory<R: Read>(r: R) -> Result<Vec<(u64, Site)>, IoError> {
    Ok(read_rows::<PointRow, _>(r)?.into_iter().map(|p| (p.t, Site::new(p.x, p.y))).collect())
}

pub fn write_series<W: Write>(series: &RangeSeries, w: W) -> Result<(), IoError> {
    write_rows(&series.checkpoints, w)
}

pub fn read_series<R: Read>(r: R) -> Result<RangeSeries, IoError> {
    Ok(RangeSeries { checkpoints: read_rows::<Checkpoint, _>(r)? })
}

pub fn write_json<T: Serialize, W: Write>(value: &T, mut w: W) -> Result<(), IoError> {
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned, R: Read>(r: R) -> Result<T, IoError> {
    Ok(serde_json::from_reader(r)?)
}
