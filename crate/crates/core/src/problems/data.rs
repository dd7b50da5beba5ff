use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ProblemError;
use crate::numerics::{Point, SeededRng};

/// Global value range inputs must respect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBounds {
    pub lo: f64,
    pub hi: f64,
}

impl Default for ValueBounds {
    fn default() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Point>,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Point::len)
    }
}

/// Gaussian clusters with random centres in the middle 60% of `[0, 1]^dim`.
///
/// The per-cluster standard deviation is the smallest centre distance
/// divided by `separation`; samples are clamped into `[0, 1]`.
pub fn make_blobs(
    rng: &mut SeededRng,
    n_per_class: usize,
    n_classes: usize,
    dim: usize,
    separation: f64,
) -> Result<Dataset, ProblemError> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(ProblemError::InvalidParameter(format!(
            "separation must be positive, got {separation}"
        )));
    }
    if n_classes == 0 || dim == 0 {
        return Err(ProblemError::InvalidParameter(
            "need at least one class and one dimension".into(),
        ));
    }
    let centers: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| (0..dim).map(|_| rng.uniform(0.2, 0.8)).collect())
        .collect();
    let mut min_dist = f64::INFINITY;
    for a in 0..n_classes {
        for b in a + 1..n_classes {
            let d = centers[a]
                .iter()
                .zip(&centers[b])
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt();
            min_dist = min_dist.min(d);
        }
    }
    if !min_dist.is_finite() {
        min_dist = 0.6;
    }
    let sigma = min_dist / separation;
    let mut inputs = Vec::with_capacity(n_per_class * n_classes);
    let mut labels = Vec::with_capacity(n_per_class * n_classes);
    for _ in 0..n_per_class {
        for (label, center) in centers.iter().enumerate() {
            let x = center
                .iter()
                .map(|&c| (c + sigma * rng.standard_normal()).clamp(0.0, 1.0))
                .collect();
            inputs.push(Point::new(x));
            labels.push(label);
        }
    }
    Ok(Dataset {
        inputs,
        labels,
        n_classes,
    })
}

/// Writes features then the label per row, with a `f0,…,label` header.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<(), ProblemError> {
    let io_err = |source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let header: Vec<String> = (0..dataset.dim())
        .map(|i| format!("f{i}"))
        .chain(std::iter::once("label".to_string()))
        .collect();
    writeln!(out, "{}", header.join(",")).map_err(io_err)?;
    for (x, y) in dataset.inputs.iter().zip(&dataset.labels) {
        let row: Vec<String> = x
            .iter()
            .map(|v| format!("{v:?}"))
            .chain(std::iter::once(y.to_string()))
            .collect();
        writeln!(out, "{}", row.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads a dataset: comma-separated feature columns followed by an integer
/// label. A first row that does not parse as numbers is treated as a header.
pub fn load_csv(path: &Path, bounds: ValueBounds) -> Result<Dataset, ProblemError> {
    if !path.exists() {
        return Err(ProblemError::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(row_idx as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if row_idx == 0 && record.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() < 2 {
            return Err(ProblemError::Parse {
                line,
                message: "need at least one feature and a label".into(),
            });
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(ProblemError::Parse {
                    line,
                    message: format!("expected {w} fields, found {}", record.len()),
                })
            }
            _ => {}
        }
        let n_features = record.len() - 1;
        let mut x = Vec::with_capacity(n_features);
        for (column, field) in record.iter().take(n_features).enumerate() {
            let value: f64 = field.parse().map_err(|_| ProblemError::Parse {
                line,
                message: format!("column {column}: '{field}' is not a number"),
            })?;
            if !value.is_finite() || value < bounds.lo || value > bounds.hi {
                return Err(ProblemError::OutOfBounds {
                    line,
                    column,
                    value,
                    lo: bounds.lo,
                    hi: bounds.hi,
                });
            }
            x.push(value);
        }
        let label_field = &record[n_features];
        let label: usize = label_field.parse().map_err(|_| ProblemError::Parse {
            line,
            message: format!("label '{label_field}' is not a non-negative integer"),
        })?;
        inputs.push(Point::new(x));
        labels.push(label);
    }
    if inputs.is_empty() {
        return Err(ProblemError::EmptyDataset);
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    Ok(Dataset {
        inputs,
        labels,
        n_classes,
    })
}

fn csv_error(path: &Path, e: csv::Error) -> ProblemError {
    let line = e.position().map_or(0, |p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(source) => ProblemError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => ProblemError::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_bounded() {
        let a = make_blobs(&mut SeededRng::new(11, 0), 20, 3, 5, 10.0).unwrap();
        let b = make_blobs(&mut SeededRng::new(11, 0), 20, 3, 5, 10.0).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 60);
        assert!(a
            .inputs
            .iter()
            .all(|x| x.iter().all(|&v| (0.0..=1.0).contains(&v))));
        assert!(make_blobs(&mut SeededRng::new(0, 0), 2, 2, 2, 0.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let data = make_blobs(&mut SeededRng::new(2, 0), 5, 3, 4, 6.0).unwrap();
        save_csv(&data, &path).unwrap();
        let back = load_csv(&path, ValueBounds::default()).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "0.1,0.2,1\n0.3,0.4,0\n").unwrap();
        let d = load_csv(&path, ValueBounds::default()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![1, 0]);
        assert_eq!(d.n_classes, 2);
    }

    #[test]
    fn csv_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.csv");
        assert!(matches!(
            load_csv(&missing, ValueBounds::default()),
            Err(ProblemError::MissingFile(_))
        ));

        let empty = dir.path().join("empty.csv");
        std::fs::write(&empty, "").unwrap();
        assert!(matches!(
            load_csv(&empty, ValueBounds::default()),
            Err(ProblemError::EmptyDataset)
        ));

        let bad = dir.path().join("bad.csv");
        std::fs::write(&bad, "a,b,label\n0.1,0.2,1\n0.1,oops,0\n").unwrap();
        match load_csv(&bad, ValueBounds::default()) {
            Err(ProblemError::Parse { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("oops"));
            }
            other => panic!("unexpected {other:?}"),
        }

        let oob = dir.path().join("oob.csv");
        std::fs::write(&oob, "0.1,1.5,1\n").unwrap();
        assert!(matches!(
            load_csv(&oob, ValueBounds::default()),
            Err(ProblemError::OutOfBounds { line: 1, column: 1, .. })
        ));
    }
}
