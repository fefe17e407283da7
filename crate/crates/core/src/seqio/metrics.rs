//! Metric files: CSV with a JSON-lines mirror beside it.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// One metric row as ordered `(name, value)` pairs.
pub type MetricRecord = Vec<(String, f64)>;

/// Shortest text that parses back to the same double. Integral values print
/// without a fractional part.
pub fn format_value(x: f64) -> String {
    if x.is_finite() && x.fract() == 0.0 && x.abs() < 9.007_199_254_740_992e15 {
        if x == 0.0 && x.is_sign_negative() {
            return "-0".to_string();
        }
        format!("{}", x as i64)
    } else {
        format!("{x:?}")
    }
}

/// Path of the JSON-lines mirror for a CSV path.
pub fn jsonl_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("jsonl")
}

fn json_value(x: f64) -> serde_json::Value {
    if x.is_finite() {
        // Number::from_f64 keeps the exact double; integral values print as ints.
        if x.fract() == 0.0 && x.abs() < 9.007_199_254_740_992e15 && !(x == 0.0 && x.is_sign_negative()) {
            serde_json::Value::from(x as i64)
        } else {
            serde_json::Value::from(x)
        }
    } else {
        serde_json::Value::String(format!("{x:?}"))
    }
}

/// Streaming writer with a fixed column set.
pub struct MetricsWriter {
    columns: Vec<String>,
    csv: BufWriter<File>,
    json: BufWriter<File>,
    csv_path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path, columns: Vec<String>) -> Result<Self> {
        let csv = File::create(path).map_err(|e| Error::io(path, e))?;
        let jpath = jsonl_path(path);
        let json = File::create(&jpath).map_err(|e| Error::io(&jpath, e))?;
        let mut w = MetricsWriter {
            columns,
            csv: BufWriter::new(csv),
            json: BufWriter::new(json),
            csv_path: path.to_path_buf(),
        };
        let header = w.columns.join(",");
        writeln!(w.csv, "{header}").map_err(|e| Error::io(path, e))?;
        Ok(w)
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn write_row(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.columns.len() {
            return Err(Error::Schema(format!(
                "row has {} values for {} columns",
                values.len(),
                self.columns.len()
            )));
        }
        let line: Vec<String> = values.iter().map(|&v| format_value(v)).collect();
        writeln!(self.csv, "{}", line.join(",")).map_err(|e| Error::io(&self.csv_path, e))?;
        // Built by hand to keep column order.
        let fields: Vec<String> = self
            .columns
            .iter()
            .zip(values)
            .map(|(k, &v)| format!("{}:{}", serde_json::Value::from(k.as_str()), json_value(v)))
            .collect();
        writeln!(self.json, "{{{}}}", fields.join(",")).map_err(|e| Error::io(&self.csv_path, e))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.csv.flush().map_err(|e| Error::io(&self.csv_path, e))?;
        self.json.flush().map_err(|e| Error::io(&self.csv_path, e))
    }
}

impl Drop for MetricsWriter {
    fn drop(&mut self) {
        let _ = self.csv.flush();
        let _ = self.json.flush();
    }
}

/// Writes `rows` to `path` as CSV plus a `.jsonl` mirror. Column order follows
/// the first row and every row must carry the same keys. An empty slice
/// produces empty files.
pub fn write_metrics(rows: &[MetricRecord], path: &Path) -> Result<()> {
    let Some(first) = rows.first() else {
        File::create(path).map_err(|e| Error::io(path, e))?;
        let jpath = jsonl_path(path);
        File::create(&jpath).map_err(|e| Error::io(&jpath, e))?;
        return Ok(());
    };
    let columns: Vec<String> = first.iter().map(|(k, _)| k.clone()).collect();
    let mut ordered = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != columns.len() {
            return Err(Error::Schema(format!("row {i} has {} keys, expected {}", row.len(), columns.len())));
        }
        let mut vals = Vec::with_capacity(columns.len());
        for c in &columns {
            let v = row
                .iter()
                .find(|(k, _)| k == c)
                .map(|&(_, v)| v)
                .ok_or_else(|| Error::Schema(format!("row {i} lacks column `{c}`")))?;
            vals.push(v);
        }
        ordered.push(vals);
    }
    let mut w = MetricsWriter::create(path, columns)?;
    for vals in &ordered {
        w.write_row(vals)?;
    }
    w.flush()
}

/// Reads a metric CSV back into column names and rows.
pub fn read_metrics(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let columns: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let vals = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad metric value `{s}`"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(vals);
    }
    Ok((columns, rows))
}
