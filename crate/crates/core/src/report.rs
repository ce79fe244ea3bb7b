//! Benchmark result rows and their CSV form.
//!
//! Metric columns are printed in Rust's shortest round-trip float notation
//! (or `undefined`), so reading a file back yields bit-identical values.

use std::fs::OpenOptions;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::metrics::{report, ConfusionMatrix, Metric};

pub const CSV_HEADER: [&str; 11] = [
    "classifier",
    "seed",
    "params",
    "tp",
    "tn",
    "fp",
    "fn",
    "accuracy",
    "sensitivity",
    "precision",
    "wall_time_ms",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("line {line}: {reason}")]
    BadRow { line: u64, reason: String },
    #[error("unexpected CSV header `{0}`")]
    BadHeader(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub classifier: String,
    pub seed: u64,
    /// Semicolon-separated `name=value` pairs; never contains a comma.
    pub params: String,
    pub confusion: ConfusionMatrix,
    pub accuracy: Metric,
    pub sensitivity: Metric,
    pub precision: Metric,
    pub wall_time_ms: u64,
}

impl ResultRow {
    pub fn new(
        classifier: &str,
        seed: u64,
        params: String,
        confusion: ConfusionMatrix,
        wall_time_ms: u64,
    ) -> Self {
        debug_assert!(
            !params.contains(','),
            "params must not contain commas: {params}"
        );
        let r = report(&confusion);
        ResultRow {
            classifier: classifier.to_string(),
            seed,
            params,
            confusion,
            accuracy: r.accuracy,
            sensitivity: r.sensitivity,
            precision: r.precision,
            wall_time_ms,
        }
    }

    pub fn fields(&self) -> [String; 11] {
        let cm = &self.confusion;
        [
            self.classifier.clone(),
            self.seed.to_string(),
            self.params.clone(),
            cm.tp.to_string(),
            cm.tn.to_string(),
            cm.fp.to_string(),
            cm.fn_.to_string(),
            self.accuracy.to_string(),
            self.sensitivity.to_string(),
            self.precision.to_string(),
            self.wall_time_ms.to_string(),
        ]
    }

    /// The row without its timing column, for reproducibility comparisons.
    pub fn without_timing(&self) -> ResultRow {
        ResultRow {
            wall_time_ms: 0,
            ..self.clone()
        }
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self, ReportError> {
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |reason: String| ReportError::BadRow { line, reason };
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(format!(
                "{} fields, expected {}",
                rec.len(),
                CSV_HEADER.len()
            )));
        }
        let int = |i: usize| {
            rec[i]
                .parse::<u64>()
                .map_err(|_| bad(format!("{} `{}` is not an integer", CSV_HEADER[i], &rec[i])))
        };
        let metric = |i: usize| {
            Metric::parse(&rec[i])
                .ok_or_else(|| bad(format!("{} `{}` is not a metric", CSV_HEADER[i], &rec[i])))
        };
        Ok(ResultRow {
            classifier: rec[0].to_string(),
            seed: int(1)?,
            params: rec[2].to_string(),
            confusion: ConfusionMatrix {
                tp: int(3)?,
                tn: int(4)?,
                fp: int(5)?,
                fn_: int(6)?,
            },
            accuracy: metric(7)?,
            sensitivity: metric(8)?,
            precision: metric(9)?,
            wall_time_ms: int(10)?,
        })
    }
}

/// Serializes `rows` (with header) to a CSV string.
pub fn to_csv_string(rows: &[ResultRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in rows {
        w.write_record(r.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are UTF-8")
}

/// Appends `rows`, writing the header first when the file is new or empty.
pub fn append_csv(path: &Path, rows: &[ResultRow]) -> Result<(), ReportError> {
    let io_err = |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err)?;
    let fresh = file.metadata().map_err(io_err)?.len() == 0;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

pub fn parse_csv(reader: impl io::Read) -> Result<Vec<ResultRow>, ReportError> {
    let mut r = csv::Reader::from_reader(reader);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(ReportError::BadHeader(
            header.iter().collect::<Vec<_>>().join(","),
        ));
    }
    r.records()
        .map(|rec| ResultRow::from_record(&rec?))
        .collect()
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>, ReportError> {
    let file = std::fs::File::open(path).map_err(|source| ReportError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv(file)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, cm: ConfusionMatrix) -> ResultRow {
        ResultRow::new(
            "SVM",
            seed,
            "lambda=0.001;epochs=200;lr0=10".into(),
            cm,
            1234,
        )
    }

    #[test]
    fn header_line() {
        let s = to_csv_string(&[]);
        assert_eq!(
            s,
            "classifier,seed,params,tp,tn,fp,fn,accuracy,sensitivity,precision,wall_time_ms\n"
        );
    }

    #[test]
    fn string_round_trip_is_exact() {
        let rows = vec![
            row(
                7,
                ConfusionMatrix {
                    tp: 33,
                    tn: 41,
                    fp: 9,
                    fn_: 17,
                },
            ),
            row(
                8,
                ConfusionMatrix {
                    tp: 0,
                    tn: 50,
                    fp: 0,
                    fn_: 50,
                },
            ),
        ];
        assert_eq!(rows[1].precision, Metric::Undefined);
        let text = to_csv_string(&rows);
        assert!(text.contains(",undefined,"));
        assert_eq!(parse_csv(text.as_bytes()).unwrap(), rows);
    }

    #[test]
    fn rejects_wrong_header() {
        assert!(matches!(
            parse_csv("a,b\n1,2\n".as_bytes()),
            Err(ReportError::BadHeader(_))
        ));
    }

    #[test]
    fn append_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let a = row(
            1,
            ConfusionMatrix {
                tp: 1,
                tn: 2,
                fp: 3,
                fn_: 4,
            },
        );
        append_csv(&path, std::slice::from_ref(&a)).unwrap();
        append_csv(&path, std::slice::from_ref(&a)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("classifier,").count(), 1);
        assert_eq!(read_csv(&path).unwrap(), vec![a.clone(), a]);
    }
}
