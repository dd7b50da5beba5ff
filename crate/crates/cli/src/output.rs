//! Report tables written as CSV (with a provenance comment line) or JSON.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::config::Format;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Text(String),
    Bool(bool),
    Empty,
}

impl Cell {
    fn to_csv(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => format!("{v:?}"),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Cell::Int(v) => json!(v),
            Cell::Float(v) if v.is_finite() => json!(v),
            Cell::Float(v) => json!(format!("{v:?}")),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, header: &[&'static str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len(), "{}", self.name);
        self.rows.push(row);
    }
}

#[macro_export]
macro_rules! row {
    ($($v:expr),* $(,)?) => {
        vec![$($crate::output::Cell::from($v)),*]
    };
}

pub struct Reporter {
    dir: PathBuf,
    format: Format,
    config_hash: String,
}

impl Reporter {
    pub fn new(dir: &Path, format: Format, config_hash: String) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            config_hash,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn provenance(&self) -> String {
        format!(
            "config_hash={} version={}",
            self.config_hash,
            env!("CARGO_PKG_VERSION")
        )
    }

    pub fn write(&self, table: &Table) -> std::io::Result<PathBuf> {
        match self.format {
            Format::Csv => self.write_csv(table),
            Format::Json => self.write_json(table),
        }
    }

    fn write_csv(&self, table: &Table) -> std::io::Result<PathBuf> {
        let path = self.dir.join(format!("{}.csv", table.name));
        let mut buf = format!("# {}\n", self.provenance()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&table.header)?;
            for row in &table.rows {
                w.write_record(row.iter().map(Cell::to_csv))?;
            }
            w.flush()?;
        }
        fs::write(&path, buf)?;
        Ok(path)
    }

    fn write_json(&self, table: &Table) -> std::io::Result<PathBuf> {
        let path = self.dir.join(format!("{}.json", table.name));
        let rows: Vec<Value> = table
            .rows
            .iter()
            .map(|row| {
                let obj: Map<String, Value> = table
                    .header
                    .iter()
                    .zip(row)
                    .map(|(k, v)| (k.to_string(), v.to_json()))
                    .collect();
                Value::Object(obj)
            })
            .collect();
        let doc = json!({
            "config_hash": self.config_hash,
            "version": env!("CARGO_PKG_VERSION"),
            "columns": table.header,
            "rows": rows,
        });
        let text = serde_json::to_string_pretty(&doc).map_err(std::io::Error::other)?;
        fs::write(&path, text + "\n")?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_comment_then_header() {
        let dir = tempfile::tempdir().unwrap();
        let rep = Reporter::new(dir.path(), Format::Csv, "abcd".into()).unwrap();
        let mut t = Table::new("t", &["a", "b"]);
        t.push(row![1usize, 0.5]);
        t.push(row!["x", None::<f64>]);
        let text = fs::read_to_string(rep.write(&t).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config_hash=abcd version="));
        assert_eq!(&lines[1..], ["a,b", "1,0.5", "x,"]);
    }

    #[test]
    fn json_rows_are_keyed() {
        let dir = tempfile::tempdir().unwrap();
        let rep = Reporter::new(dir.path(), Format::Json, "abcd".into()).unwrap();
        let mut t = Table::new("t", &["a", "b"]);
        t.push(row![2usize, f64::INFINITY]);
        let v: Value =
            serde_json::from_str(&fs::read_to_string(rep.write(&t).unwrap()).unwrap()).unwrap();
        assert_eq!(v["rows"][0]["a"], json!(2));
        assert_eq!(v["rows"][0]["b"], json!("inf"));
    }
}
