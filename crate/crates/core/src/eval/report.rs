use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::{FoldRow, MetricRecord, StudyRow, SweepRow};
use crate::error::{Error, Result};

/// Rows that render as an aligned text table.
pub trait Tabular {
    fn headers() -> Vec<&'static str>;
    fn cells(&self) -> Vec<String>;
}

pub fn write_jsonl<W: Write, R: Serialize>(mut w: W, rows: &[R]) -> Result<()> {
    for row in rows {
        serde_json::to_writer(&mut w, row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str(&line).map_err(|e| Error::format("JSON-lines record", format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(rows)
}

pub fn write_csv<W: Write, R: Serialize>(w: W, rows: &[R]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in rows {
        out.serialize(row).map_err(|e| Error::format("CSV row", e.to_string()))?;
    }
    out.flush()?;
    Ok(())
}

pub fn text_table<R: Tabular>(rows: &[R]) -> String {
    let headers = R::headers();
    let body: Vec<Vec<String>> = rows.iter().map(Tabular::cells).collect();
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in &body {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, &w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_owned()
    };
    let mut out = line(headers.clone());
    out.push('\n');
    let rules: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(rules.iter().map(String::as_str).collect()));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

impl Tabular for MetricRecord {
    fn headers() -> Vec<&'static str> {
        vec!["train", "test", "variant", "model", "attack", "precision", "recall", "accuracy", "f1", "auprc"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.train_set.clone(),
            self.test_set.clone(),
            self.variant.clone(),
            self.model_kind.clone(),
            self.attack.clone(),
            num(self.precision),
            num(self.recall),
            num(self.accuracy),
            num(self.f1),
            self.auprc.map(num).unwrap_or_else(|| "-".into()),
        ]
    }
}

impl Tabular for SweepRow {
    fn headers() -> Vec<&'static str> {
        vec!["estimator", "spoof_points", "precision", "recall", "f1", "auprc"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.estimator.clone(),
            self.spoof_points.to_string(),
            num(self.precision),
            num(self.recall),
            num(self.f1),
            self.auprc.map(num).unwrap_or_else(|| "-".into()),
        ]
    }
}

impl Tabular for StudyRow {
    fn headers() -> Vec<&'static str> {
        vec!["width", "depth", "resolution", "params", "precision", "f1", "median_ms", "status"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.width.to_string(),
            self.depth.to_string(),
            self.resolution.to_string(),
            self.params.to_string(),
            self.precision.map(num).unwrap_or_else(|| "-".into()),
            self.f1.map(num).unwrap_or_else(|| "-".into()),
            self.median_ms.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
            self.status.clone(),
        ]
    }
}

impl Tabular for FoldRow {
    fn headers() -> Vec<&'static str> {
        vec!["base_channels", "dropout", "lr", "fold", "val_loss"]
    }

    fn cells(&self) -> Vec<String> {
        vec![
            self.base_channels.to_string(),
            self.dropout_rate.to_string(),
            self.learning_rate.to_string(),
            self.fold.to_string(),
            format!("{:.6}", self.val_loss),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::Metrics;

    #[test]
    fn formats_round_trip() {
        let m = Metrics { precision: 0.5, recall: 0.25, accuracy: 0.75, f1: 1.0 / 3.0 };
        let rows = vec![
            MetricRecord::new(["a", "b", "benign", "mle", "none"], m, Some(0.125)),
            MetricRecord::new(["a", "c", "attacked", "rayq", "uniform-150"], m, None),
        ];
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &rows).unwrap();
        let back: Vec<MetricRecord> = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let mut csv = Vec::new();
        write_csv(&mut csv, &rows).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("train_set,test_set,variant,model_kind,attack,precision"));
        assert!(text.lines().nth(2).unwrap().ends_with(','));
        let table = text_table(&rows);
        assert_eq!(table.lines().count(), 4);
        assert!(table.lines().next().unwrap().starts_with("train  test"));
    }
}
