//! CSV and JSON tables: decision records, κ matrices and per-condition
//! results.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use synchrony_core::metrics::{binomial_ci95, DecisionRecord};

pub const DECISIONS_HEADER: [&str; 4] = ["observer", "video", "pred", "label"];

#[derive(Debug, Serialize, Deserialize)]
struct DecisionRow {
    observer: String,
    video: u64,
    pred: u8,
    label: u8,
}

pub fn decisions_to_csv(records: &[DecisionRecord]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if records.is_empty() {
        w.write_record(DECISIONS_HEADER)?;
    }
    for r in records {
        w.serialize(DecisionRow { observer: r.observer.clone(), video: r.video, pred: r.pred, label: r.label })?;
    }
    Ok(w.into_inner()?)
}

pub fn decisions_from_csv(bytes: &[u8]) -> Result<Vec<DecisionRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != DECISIONS_HEADER {
        bail!("decision file header must be {}, found {}", DECISIONS_HEADER.join(","), header.join(","));
    }
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<DecisionRow>().enumerate() {
        let row = row.with_context(|| format!("decision row {}", i + 1))?;
        if row.pred > 1 || row.label > 1 {
            bail!("decision row {}: pred and label must be 0 or 1", i + 1);
        }
        out.push(DecisionRecord { observer: row.observer, video: row.video, pred: row.pred, label: row.label });
    }
    Ok(out)
}

pub fn write_decisions(path: &Path, records: &[DecisionRecord]) -> Result<()> {
    write_file(path, &decisions_to_csv(records)?)
}

pub fn read_decisions(path: &Path) -> Result<Vec<DecisionRecord>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    decisions_from_csv(&bytes).with_context(|| format!("parsing {}", path.display()))
}

/// Square κ matrix with its observer labels. Undefined entries are `None`
/// and written as empty cells.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaTable {
    pub observers: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl KappaTable {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head = vec!["observer".to_string()];
        head.extend(self.observers.iter().cloned());
        w.write_record(&head)?;
        for (name, row) in self.observers.iter().zip(&self.values) {
            let mut rec = vec![name.clone()];
            // `{:?}` prints the shortest representation that parses back exactly
            rec.extend(row.iter().map(|v| v.map(|x| format!("{x:?}")).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        Ok(w.into_inner()?)
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(bytes);
        let mut rows = r.records();
        let head = rows.next().context("empty kappa table")??;
        if head.get(0) != Some("observer") {
            bail!("kappa table must start with an observer column");
        }
        let observers: Vec<String> = head.iter().skip(1).map(str::to_string).collect();
        let mut values = Vec::new();
        for (i, rec) in rows.enumerate() {
            let rec = rec?;
            if rec.len() != observers.len() + 1 || rec.get(0) != observers.get(i).map(String::as_str) {
                bail!("kappa table row {} does not match the header", i + 1);
            }
            let row = rec
                .iter()
                .skip(1)
                .map(|c| if c.is_empty() { Ok(None) } else { c.parse::<f64>().map(Some) })
                .collect::<std::result::Result<Vec<_>, _>>()
                .with_context(|| format!("kappa table row {}", i + 1))?;
            values.push(row);
        }
        if values.len() != observers.len() {
            bail!("kappa table has {} rows for {} observers", values.len(), observers.len());
        }
        Ok(Self { observers, values })
    }
}

/// Splits records by observer, keeping first-appearance order.
pub fn group_by_observer(records: Vec<DecisionRecord>) -> Vec<(String, Vec<DecisionRecord>)> {
    let mut out: Vec<(String, Vec<DecisionRecord>)> = Vec::new();
    for r in records {
        match out.iter_mut().find(|(o, _)| *o == r.observer) {
            Some((_, v)) => v.push(r),
            None => out.push((r.observer.clone(), vec![r])),
        }
    }
    out
}

/// Accuracy of one condition with its binomial interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: String,
    pub n: usize,
    pub accuracy: f64,
    pub ci95: f64,
    /// Mean binary cross-entropy over the evaluated videos.
    pub loss: f64,
}

impl ResultRow {
    pub fn new(condition: &str, correct: usize, n: usize, loss: f64) -> Self {
        let accuracy = if n == 0 { 0.0 } else { correct as f64 / n as f64 };
        Self { condition: condition.into(), n, accuracy, ci95: binomial_ci95(accuracy, n), loss }
    }
}

pub const RESULTS_HEADER: [&str; 5] = ["condition", "n", "accuracy", "ci95", "loss"];

pub fn results_to_csv(rows: &[ResultRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn results_from_csv(bytes: &[u8]) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|x| x.map_err(Into::into)).collect()
}

pub fn results_to_json(rows: &[ResultRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("results serialize");
    s.push('\n');
    s
}

pub fn results_from_json(s: &str) -> Result<Vec<ResultRow>> {
    Ok(serde_json::from_str(s)?)
}

/// Writes `results.csv` and `results.json` into `dir`.
pub fn write_results(dir: &Path, rows: &[ResultRow]) -> Result<()> {
    write_file(&dir.join("results.csv"), &results_to_csv(rows)?)?;
    write_file(&dir.join("results.json"), results_to_json(rows).as_bytes())
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    crate::formats::write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
}
