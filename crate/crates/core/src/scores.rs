//! Classifier score files and the softmax kernel.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

pub const SCORES_VERSION: &str = "v1";
/// Tolerance on the row sum of a probability table.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum ScoresError {
    #[error("softmax input contains a non-finite value at position {0}")]
    NonFinite(usize),
    #[error("softmax of an empty vector")]
    Empty,
    #[error("score file header: {0}")]
    Header(String),
    #[error("unsupported score file version {0:?}")]
    Version(String),
    #[error("score file line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScoreKind {
    #[default]
    Logits,
    Probabilities,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::Logits => "logits",
            ScoreKind::Probabilities => "probabilities",
        }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScoreKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logits" => Ok(ScoreKind::Logits),
            "probabilities" => Ok(ScoreKind::Probabilities),
            other => Err(format!("unknown score kind {other:?}")),
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>, ScoresError> {
    if z.is_empty() {
        return Err(ScoresError::Empty);
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(ScoresError::NonFinite(i));
    }
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: String,
    /// 1..=K for known samples, 0 for negatives, -1 for unknowns.
    pub label: i64,
    pub values: Vec<f64>,
}

/// Per-sample classifier outputs.
///
/// `c` is either `k` or `k + 1`; the extra output of a background-class model
/// is stored but never read by any metric.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub k: usize,
    pub c: usize,
    pub kind: ScoreKind,
    pub rows: Vec<ScoreRow>,
}

impl ScoreTable {
    /// Builds a table, checking every row. Errors report 1-based row numbers.
    pub fn new(
        k: usize,
        c: usize,
        kind: ScoreKind,
        rows: Vec<ScoreRow>,
    ) -> Result<Self, ScoresError> {
        check_shape(k, c)?;
        for (i, row) in rows.iter().enumerate() {
            check_row(k, c, kind, row).map_err(|message| ScoresError::Row {
                line: i + 1,
                message,
            })?;
        }
        Ok(Self { k, c, kind, rows })
    }

    pub fn has_background(&self) -> bool {
        self.c == self.k + 1
    }

    /// Softmax applied per row; a probability table is returned unchanged.
    pub fn to_probabilities(&self) -> Result<ScoreTable, ScoresError> {
        if self.kind == ScoreKind::Probabilities {
            return Ok(self.clone());
        }
        let rows = self
            .rows
            .iter()
            .map(|r| {
                Ok(ScoreRow {
                    sample_id: r.sample_id.clone(),
                    label: r.label,
                    values: softmax(&r.values)?,
                })
            })
            .collect::<Result<Vec<_>, ScoresError>>()?;
        Ok(ScoreTable {
            k: self.k,
            c: self.c,
            kind: ScoreKind::Probabilities,
            rows,
        })
    }

    pub fn header_line(&self) -> String {
        format!(
            "# osr-scores {SCORES_VERSION} K={} C={} kind={}",
            self.k, self.c, self.kind
        )
    }

    /// Values are written with 17 significant digits, which round-trips f64.
    pub fn write_to<W: Write>(&self, out: W) -> Result<(), std::io::Error> {
        let mut out = out;
        writeln!(out, "{}", self.header_line())?;
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header = vec!["sample_id".to_string(), "label".to_string()];
        header.extend((1..=self.c).map(|i| format!("v{i}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(self.c + 2);
        for row in &self.rows {
            record.clear();
            record.push(row.sample_id.clone());
            record.push(row.label.to_string());
            record.extend(row.values.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&record)?;
        }
        w.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("scores are UTF-8")
    }

    pub fn write(&self, path: &Path) -> Result<(), ScoresError> {
        let io = |source| ScoresError::Io {
            path: path.to_path_buf(),
            source,
        };
        let file = fs::File::create(path).map_err(io)?;
        let mut buf = std::io::BufWriter::new(file);
        self.write_to(&mut buf).map_err(io)?;
        buf.flush().map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self, ScoresError> {
        let text = fs::read_to_string(path).map_err(|source| ScoresError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parses score file text. Errors carry the file line number.
    pub fn parse(text: &str) -> Result<Self, ScoresError> {
        let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
        let mut fields = first.trim_end().split(' ');
        if fields.next() != Some("#") || fields.next() != Some("osr-scores") {
            return Err(ScoresError::Header("missing '# osr-scores' line".into()));
        }
        match fields.next() {
            Some(SCORES_VERSION) => {}
            Some(other) => return Err(ScoresError::Version(other.to_string())),
            None => return Err(ScoresError::Header("missing version".into())),
        }
        let (mut k, mut c, mut kind) = (None, None, None);
        for kv in fields {
            let bad = || ScoresError::Header(format!("bad field {kv:?}"));
            match kv.split_once('=') {
                Some(("K", v)) => k = Some(v.parse::<usize>().map_err(|_| bad())?),
                Some(("C", v)) => c = Some(v.parse::<usize>().map_err(|_| bad())?),
                Some(("kind", v)) => {
                    kind = Some(v.parse::<ScoreKind>().map_err(ScoresError::Header)?)
                }
                _ => return Err(bad()),
            }
        }
        let (Some(k), Some(c), Some(kind)) = (k, c, kind) else {
            return Err(ScoresError::Header("header needs K=, C= and kind=".into()));
        };
        check_shape(k, c)?;

        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(rest.as_bytes());
        let headers = reader
            .headers()
            .map_err(|e| ScoresError::Header(e.to_string()))?
            .clone();
        let expected: Vec<String> = ["sample_id".to_string(), "label".to_string()]
            .into_iter()
            .chain((1..=c).map(|i| format!("v{i}")))
            .collect();
        if headers.iter().ne(expected.iter().map(String::as_str)) {
            return Err(ScoresError::Header(format!(
                "expected columns {}",
                expected.join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record.map_err(|e| ScoresError::Row {
                line: e.position().map_or(0, |p| p.line() as usize + 1),
                message: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line() as usize) + 1;
            let err = |message: String| ScoresError::Row { line, message };
            if record.len() != c + 2 {
                return Err(err(format!(
                    "expected {c} values, found {}",
                    record.len().saturating_sub(2)
                )));
            }
            let label = record[1]
                .parse::<i64>()
                .map_err(|_| err(format!("bad label {:?}", &record[1])))?;
            let values = record
                .iter()
                .skip(2)
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| err(format!("bad value {v:?}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let row = ScoreRow {
                sample_id: record[0].to_string(),
                label,
                values,
            };
            check_row(k, c, kind, &row).map_err(err)?;
            rows.push(row);
        }
        Ok(ScoreTable { k, c, kind, rows })
    }
}

fn check_shape(k: usize, c: usize) -> Result<(), ScoresError> {
    if k == 0 {
        return Err(ScoresError::Header("K must be at least 1".into()));
    }
    if c != k && c != k + 1 {
        return Err(ScoresError::Header(format!("C={c} must be K={k} or K+1")));
    }
    Ok(())
}

fn check_row(k: usize, c: usize, kind: ScoreKind, row: &ScoreRow) -> Result<(), String> {
    if row.values.len() != c {
        return Err(format!("expected {c} values, found {}", row.values.len()));
    }
    if row.label < -1 || row.label > k as i64 {
        return Err(format!("label {} outside -1..={k}", row.label));
    }
    if let Some(i) = row.values.iter().position(|v| !v.is_finite()) {
        return Err(format!("value v{} is not finite", i + 1));
    }
    if kind == ScoreKind::Probabilities {
        if let Some(i) = row.values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(format!("probability v{} outside [0, 1]", i + 1));
        }
        let sum: f64 = row.values.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(format!("probabilities sum to {sum}, not 1"));
        }
    }
    Ok(())
}
