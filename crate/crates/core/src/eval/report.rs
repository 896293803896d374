//! CSV exports.
//!
//! * `relative_performance.csv`: `clip_id,split,condition,relative_performance`,
//!   one row per clip and condition, sorted by condition then clip.
//! * `<name>.points.csv`: one projected point per line, comma-separated
//!   coordinates with a `c0,c1,...` header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::imitation::Split;
use crate::error::{Error, Result};
use crate::io::write_text;

/// Clips scoring below this fraction of their expert count as failures.
pub const FAILURE_THRESHOLD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub clip_id: String,
    pub split: Split,
    pub condition: String,
    pub relative_performance: f64,
}

pub fn write_points(path: &Path, points: &[Vec<f64>]) -> Result<()> {
    let dim = points.first().map_or(0, Vec::len);
    let mut out = (0..dim).map(|i| format!("c{i}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for p in points {
        let line: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    write_text(path, &out)
}

/// Writes the relative-performance table and any point sets into `dir`.
pub fn export_report(rows: &[ReportRow], point_sets: &[(String, Vec<Vec<f64>>)], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Argument("no results to export".into()));
    }
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.condition.cmp(&b.condition).then(a.clip_id.cmp(&b.clip_id)));
    let mut csv = String::from("clip_id,split,condition,relative_performance\n");
    for r in sorted {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            r.clip_id,
            r.split.name(),
            r.condition,
            r.relative_performance
        );
    }
    let table = dir.join("relative_performance.csv");
    write_text(&table, &csv)?;
    let mut written = vec![table];
    for (name, points) in point_sets {
        let path = dir.join(format!("{name}.points.csv"));
        write_points(&path, points)?;
        written.push(path);
    }
    Ok(written)
}
