//! Report files: `metrics.json`, matrix CSVs and PPM heatmaps.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ConfusionMatrix, Evaluation, MetricSummary, TransitionMatrix};
use crate::error::{Result, ScdError};

/// Side length in pixels of one heatmap cell.
pub const HEATMAP_CELL: usize = 16;

fn pct(v: f64) -> f64 {
    (v * 10000.0).round() / 100.0
}

/// `metrics.json` contents; scores are percentages with two decimals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsJson {
    pub oa: f64,
    pub miou: f64,
    pub sek: f64,
    pub fscd: f64,
    pub precision_scd: f64,
    pub recall_scd: f64,
    pub sek_t1: f64,
    pub sek_t2: f64,
    pub bcd_miou: f64,
    pub changed_semantic_accuracy: f64,
    pub pixels: u64,
    pub sek_flags: Vec<String>,
}

impl From<&MetricSummary> for MetricsJson {
    fn from(s: &MetricSummary) -> Self {
        Self {
            oa: pct(s.oa),
            miou: pct(s.miou),
            sek: pct(s.sek),
            fscd: pct(s.fscd),
            precision_scd: pct(s.precision_scd),
            recall_scd: pct(s.recall_scd),
            sek_t1: pct(s.sek_t1),
            sek_t2: pct(s.sek_t2),
            bcd_miou: pct(s.bcd_miou),
            changed_semantic_accuracy: pct(s.changed_accuracy),
            pixels: s.pixels,
            sek_flags: s.sek_flags.clone(),
        }
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| ScdError::io(path, e))
}

/// Square count matrix as CSV with a header row and a label column.
pub fn matrix_csv(n: usize, counts: &[u64], first_id: usize) -> String {
    let mut s = String::from("pred\\gt");
    for j in 0..n {
        let _ = write!(s, ",{}", j + first_id);
    }
    s.push('\n');
    for i in 0..n {
        let _ = write!(s, "{}", i + first_id);
        for j in 0..n {
            let _ = write!(s, ",{}", counts[i * n + j]);
        }
        s.push('\n');
    }
    s
}

/// Parses [`matrix_csv`] output back into `(n, counts)`.
pub fn parse_matrix_csv(text: &str) -> Result<(usize, Vec<u64>)> {
    let bad = |m: String| ScdError::data("matrix csv", m);
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let n = header.split(',').count() - 1;
    let mut counts = Vec::with_capacity(n * n);
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != n + 1 {
            return Err(bad(format!("row {row} has {} cells", cells.len())));
        }
        for c in &cells[1..] {
            counts.push(c.parse::<u64>().map_err(|e| bad(format!("row {row}: {e}")))?);
        }
    }
    if counts.len() != n * n {
        return Err(bad(format!("expected {n} rows")));
    }
    Ok((n, counts))
}

/// Binary PPM heatmap, `n * HEATMAP_CELL` pixels square, white (0) to dark blue (max).
pub fn heatmap_ppm(n: usize, counts: &[u64]) -> Vec<u8> {
    let side = n * HEATMAP_CELL;
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let mut out = format!("P6\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = counts[(y / HEATMAP_CELL) * n + x / HEATMAP_CELL] as f64 / max;
            let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
            out.extend_from_slice(&[lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)]);
        }
    }
    out
}

fn write_matrix(dir: &Path, stem: &str, n: usize, counts: &[u64], first_id: usize) -> Result<()> {
    write(&dir.join(format!("{stem}.csv")), matrix_csv(n, counts, first_id).as_bytes())?;
    write(&dir.join(format!("{stem}.ppm")), &heatmap_ppm(n, counts))
}

fn write_confusion(dir: &Path, stem: &str, cm: &ConfusionMatrix) -> Result<()> {
    write_matrix(dir, stem, cm.n(), cm.counts(), 0)
}

/// Writes the transition table: counts CSV, percentage CSV and heatmap.
pub fn write_transitions(dir: &Path, stem: &str, t: &TransitionMatrix) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| ScdError::io(dir, e))?;
    write_matrix(dir, stem, t.k(), t.counts(), 1)?;
    let mut s = String::from("from,to,count,percent\n");
    let pct = t.percentages();
    for a in 0..t.k() {
        for b in 0..t.k() {
            let i = a * t.k() + b;
            let _ = writeln!(s, "{},{},{},{:.4}", a + 1, b + 1, t.counts()[i], pct[i]);
        }
    }
    write(&dir.join(format!("{stem}_percent.csv")), s.as_bytes())
}

/// Writes `metrics.json`, per-timestamp and binary confusions, and optionally transitions.
pub fn emit_report(dir: &Path, ev: &Evaluation, transitions: Option<&TransitionMatrix>) -> Result<MetricsJson> {
    std::fs::create_dir_all(dir).map_err(|e| ScdError::io(dir, e))?;
    let json = MetricsJson::from(&ev.summary());
    let text = serde_json::to_string_pretty(&json).expect("metrics serialise");
    write(&dir.join("metrics.json"), text.as_bytes())?;
    write_confusion(dir, "confusion_t1", &ev.t1)?;
    write_confusion(dir, "confusion_t2", &ev.t2)?;
    write_confusion(dir, "confusion_bcd", &ev.bcd)?;
    if let Some(t) = transitions {
        write_transitions(dir, "transitions", t)?;
    }
    Ok(json)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip_and_heatmap_layout() {
        let counts = vec![1, 2, 3, 4, 5, 6, 7, 8, 9];
        let text = matrix_csv(3, &counts, 0);
        assert_eq!(parse_matrix_csv(&text).unwrap(), (3, counts.clone()));
        let ppm = heatmap_ppm(3, &counts);
        let header = b"P6\n48 48\n255\n";
        assert_eq!(&ppm[..header.len()], header);
        assert_eq!(ppm.len(), header.len() + 48 * 48 * 3);
    }

    #[test]
    fn empty_run_writes_zeroed_json() {
        let dir = tempfile::tempdir().unwrap();
        let json = emit_report(dir.path(), &Evaluation::new(4), None).unwrap();
        assert_eq!(json.oa, 0.0);
        let back: MetricsJson =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
        assert_eq!(back, json);
    }
}
