//! CSV and JSON writers.
//!
//! Numbers are written with `{:.16e}` (17 significant digits) so every `f64`
//! survives a text round trip bit-for-bit.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{DelayFieldSpec, ParamVec};
use crate::trainer::{SweepRow, SweepTable};

pub fn fmt_num(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_num(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("line {line}: cannot parse number {s:?}")))
}

/// Samples of a trajectory: one time column and `d` state columns.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryCsv {
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl TrajectoryCsv {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: times.len(),
                got: values.len(),
            });
        }
        let d = values.first().map_or(0, Vec::len);
        for v in &values {
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 0..self.dim() {
            let _ = write!(out, ",z{j}");
        }
        out.push('\n');
        for (t, v) in self.times.iter().zip(&self.values) {
            out.push_str(&fmt_num(*t));
            for x in v {
                out.push(',');
                out.push_str(&fmt_num(*x));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let table = Table::parse(text)?;
        if table.header.first().map(String::as_str) != Some("t") {
            return Err(Error::InvalidConfig("trajectory CSV must start with a `t` column".into()));
        }
        let times = table.rows.iter().map(|r| r[0]).collect();
        let values = table.rows.iter().map(|r| r[1..].to_vec()).collect();
        Self::new(times, values)
    }
}

/// Generic numeric CSV with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let header: Vec<String> = match lines.next() {
            Some((_, l)) => l.split(',').map(|s| s.trim().to_string()).collect(),
            None => return Err(Error::InvalidConfig("empty CSV".into())),
        };
        let rows = lines
            .map(|(i, l)| {
                let row = l.split(',').map(|s| parse_num(s, i + 1)).collect::<Result<Vec<_>>>()?;
                if row.len() != header.len() {
                    return Err(Error::InvalidConfig(format!(
                        "line {}: expected {} fields, found {}",
                        i + 1,
                        header.len(),
                        row.len()
                    )));
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = String::from("tau,val_mse,test_mse\n");
    for r in &table.rows {
        let _ = writeln!(out, "{},{},{}", fmt_num(r.tau), fmt_num(r.val_mse), fmt_num(r.test_mse));
    }
    out
}

pub fn sweep_from_csv(text: &str) -> Result<SweepTable> {
    let table = Table::parse(text)?;
    if table.header != ["tau", "val_mse", "test_mse"] {
        return Err(Error::InvalidConfig(format!("unexpected sweep header {:?}", table.header)));
    }
    let rows = table
        .rows
        .iter()
        .map(|r| SweepRow {
            tau: r[0],
            val_mse: r[1],
            test_mse: r[2],
        })
        .collect();
    Ok(SweepTable::from_rows(rows))
}

/// A trained field as stored on disk. Classifier models carry the readout
/// parameters after the field parameters in `theta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub spec: DelayFieldSpec,
    pub theta: ParamVec,
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("plain data serialises");
    s.push('\n');
    s
}
