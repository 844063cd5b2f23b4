//! Tabular time series on disk: CSV with a `time_index` column, or JSON.
//!
//! Values are written with Rust's shortest round-trip float formatting, so
//! reading a file back reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

/// A named multi-column series indexed by time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub time_index: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    pub dims: Vec<String>,
}

impl Series {
    pub fn new(dims: Vec<String>) -> Self {
        Series { time_index: Vec::new(), values: Vec::new(), dims }
    }

    /// Column names `dim_1..dim_m`.
    pub fn numbered_dims(m: usize) -> Vec<String> {
        (1..=m).map(|d| format!("dim_{d}")).collect()
    }

    pub fn push(&mut self, t: usize, row: Vec<f64>) {
        self.time_index.push(t);
        self.values.push(row);
    }

    pub fn len(&self) -> usize {
        self.time_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_index.is_empty()
    }

    pub fn width(&self) -> usize {
        self.dims.len()
    }

    /// Values of one column in time order.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[d]).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptySeries);
        }
        if self.dims.is_empty() {
            return Err(Error::Schema("series has no value columns".into()));
        }
        if self.values.len() != self.time_index.len() {
            return Err(Error::Schema(format!(
                "{} time points but {} value rows",
                self.time_index.len(),
                self.values.len()
            )));
        }
        if let Some((i, row)) = self.values.iter().enumerate().find(|(_, r)| r.len() != self.dims.len()) {
            return Err(Error::Schema(format!(
                "row {i} has {} values, expected {}",
                row.len(),
                self.dims.len()
            )));
        }
        Ok(())
    }
}

pub fn write_series(series: &Series, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    series.validate()?;
    let text = match format {
        Format::Csv => to_csv(series),
        Format::Json => {
            if series.values.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("JSON cannot represent NaN or infinity".into()));
            }
            serde_json::to_string(series)?
        }
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_series(path: impl AsRef<Path>, format: Format) -> Result<Series> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let series = match format {
        Format::Csv => from_csv(&text, &path.display().to_string())?,
        Format::Json => serde_json::from_str(&text)?,
    };
    series.validate()?;
    Ok(series)
}

pub fn to_csv(series: &Series) -> String {
    let mut out = String::from("time_index");
    for d in &series.dims {
        out.push(',');
        out.push_str(d);
    }
    out.push('\n');
    for (t, row) in series.time_index.iter().zip(&series.values) {
        let _ = write!(out, "{t}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn from_csv(text: &str, context: &str) -> Result<Series> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(Error::EmptySeries)?;
    let mut cols = header.split(',').map(str::trim);
    if cols.next() != Some("time_index") {
        return Err(Error::Schema("first column must be time_index".into()));
    }
    let dims: Vec<String> = cols.map(str::to_string).collect();
    let mut series = Series::new(dims);
    for (n, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != series.dims.len() + 1 {
            return Err(Error::Schema(format!(
                "{context} line {}: expected {} columns, found {}",
                n + 1,
                series.dims.len() + 1,
                cells.len()
            )));
        }
        let parse_err = |cell: &str| Error::Parse {
            context: context.to_string(),
            line: n + 1,
            message: format!("non-numeric cell {cell:?}"),
        };
        let t: usize = cells[0].parse().map_err(|_| parse_err(cells[0]))?;
        let row = cells[1..]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| parse_err(c)))
            .collect::<Result<Vec<_>>>()?;
        series.push(t, row);
    }
    Ok(series)
}
