//! Retrieval results as newline-delimited JSON, and two-column plot series.
//!
//! The first line of a results file is a `{"record": "meta", ...}` object
//! describing the run; each further line is one query.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// How query rotations were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RotationMode {
    /// Images rotated before featurization.
    Pixel,
    /// Feature maps rotated directly.
    Feature,
    /// No rotation sweep.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub record: String,
    pub scheme: String,
    pub stride: usize,
    pub rot_min: f64,
    pub rot_max: f64,
    pub rot_stride: f64,
    pub min_overlap: f64,
    pub epsilon: f64,
    pub rotation_mode: RotationMode,
    pub db_size: usize,
    pub queries: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub id: String,
    pub score: f64,
    pub dy: i64,
    pub dx: i64,
    pub angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    /// 1-based rank of the first same-group database item.
    pub rank: usize,
    pub db_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best: Option<BestMatch>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub area_ratio: Option<f64>,
}

pub fn encode_results(meta: &RunMeta, records: &[QueryRecord]) -> Result<String> {
    let mut out = serde_json::to_string(meta)?;
    out.push('\n');
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_results(path: impl AsRef<Path>, meta: &RunMeta, records: &[QueryRecord]) -> Result<()> {
    fs::write(path, encode_results(meta, records)?)?;
    Ok(())
}

/// Parses a results file; the meta line is optional so hand-written files work.
pub fn parse_results(text: &str) -> Result<(Option<RunMeta>, Vec<QueryRecord>)> {
    let mut meta = None;
    let mut records = vec![];
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let body = line.trim();
        let at = offset;
        offset += line.len() as u64;
        if body.is_empty() {
            continue;
        }
        let fail = |e: serde_json::Error| Error::Format {
            offset: at,
            message: format!("results record: {e}"),
        };
        let v: Value = serde_json::from_str(body).map_err(fail)?;
        if v.get("record").and_then(Value::as_str) == Some("meta") {
            meta = Some(serde_json::from_value(v).map_err(fail)?);
        } else {
            records.push(serde_json::from_value(v).map_err(fail)?);
        }
    }
    Ok((meta, records))
}

pub fn read_results(path: impl AsRef<Path>) -> Result<(Option<RunMeta>, Vec<QueryRecord>)> {
    parse_results(&fs::read_to_string(path)?)
}

/// `x y` per line.
pub fn encode_series(points: &[(f64, f64)]) -> String {
    let mut out = String::new();
    for (x, y) in points {
        writeln!(out, "{x} {y}").expect("writing to a String");
    }
    out
}

pub fn write_series(path: impl AsRef<Path>, points: &[(f64, f64)]) -> Result<()> {
    fs::write(path, encode_series(points))?;
    Ok(())
}
