//! Run-to-failure vibration datasets in the per-record CSV layout.
//!
//! A bearing run lives in one directory. Each record is a CSV file whose name
//! ends in a zero-padded counter (`acc_00001.csv`, `acc_00002.csv`, ...).
//! Rows are `hour, minute, second, microsecond, horizontal[, vertical]`,
//! separated by commas or semicolons. An optional `metadata.txt` sidecar
//! holds `key=value` lines overriding the acquisition defaults.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Default acquisition rate of the benchmark accelerometers.
pub const DEFAULT_SAMPLING_RATE_HZ: f64 = 25_600.0;
/// Default spacing between two consecutive records.
pub const DEFAULT_RECORD_INTERVAL_S: f64 = 10.0;
/// Name of the optional metadata file inside a run directory.
pub const METADATA_FILE: &str = "metadata.txt";

const MIN_COLUMNS: usize = 5;

/// Which acceleration channels to keep when loading.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Channel {
    #[default]
    Horizontal,
    Both,
}

impl std::str::FromStr for Channel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal" => Ok(Channel::Horizontal),
            "both" => Ok(Channel::Both),
            other => Err(Error::Config(format!("unknown channel {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Timestamp {
    pub hour: u32,
    pub minute: u32,
    pub second: u32,
    pub microsecond: f64,
}

/// One acquisition burst.
#[derive(Debug, Clone, PartialEq)]
pub struct VibrationRecord {
    pub record_index: usize,
    /// Timestamp of the first sample in the burst.
    pub timestamp: Timestamp,
    /// Horizontal acceleration in g.
    pub horizontal: Vec<f64>,
    pub vertical: Option<Vec<f64>>,
}

/// Ordered run-to-failure records of one bearing.
#[derive(Debug, Clone, PartialEq)]
pub struct BearingRun {
    pub bearing_id: String,
    pub condition_id: u32,
    pub sampling_rate: f64,
    pub samples_per_record: usize,
    pub record_interval: f64,
    pub records: Vec<VibrationRecord>,
}

impl BearingRun {
    /// Checks the structural invariants: contiguous record indices, positive
    /// rates, consistent lengths and finite samples.
    pub fn validate(&self) -> Result<()> {
        if !(self.sampling_rate > 0.0) {
            return Err(Error::OutOfRange(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        if self.samples_per_record == 0 {
            return Err(Error::OutOfRange("samples_per_record must be positive".into()));
        }
        for (i, rec) in self.records.iter().enumerate() {
            if rec.record_index != i {
                return Err(Error::Schema(format!(
                    "record indices must be contiguous from 0: position {i} holds index {}",
                    rec.record_index
                )));
            }
            let channels = std::iter::once(&rec.horizontal).chain(rec.vertical.as_ref());
            for channel in channels {
                if channel.len() != self.samples_per_record {
                    return Err(Error::Schema(format!(
                        "record {i} has {} samples, expected {}",
                        channel.len(),
                        self.samples_per_record
                    )));
                }
                if channel.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFinite(format!("record {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Copy of the run restricted to its first `n` records.
    pub fn truncated(&self, n: usize) -> BearingRun {
        BearingRun {
            records: self.records.iter().take(n).cloned().collect(),
            ..self.clone()
        }
    }
}

/// Training and test runs of one operating condition.
#[derive(Debug, Clone, Default)]
pub struct DatasetManifest {
    pub condition_id: u32,
    pub training_runs: Vec<BearingRun>,
    pub test_runs: Vec<BearingRun>,
}

impl DatasetManifest {
    pub fn require_training(&self) -> Result<&[BearingRun]> {
        if self.training_runs.is_empty() {
            return Err(Error::Config("at least one training run is required".into()));
        }
        Ok(&self.training_runs)
    }
}

#[derive(Debug, Default)]
struct Metadata {
    sampling_rate_hz: Option<f64>,
    samples_per_record: Option<usize>,
    record_interval_s: Option<f64>,
    bearing_id: Option<String>,
    condition_id: Option<u32>,
}

fn read_metadata(path: &Path) -> Result<Metadata> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut meta = Metadata::default();
    let ctx = path.display().to_string();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            context: ctx.clone(),
            line: n + 1,
            message: "expected key=value".into(),
        })?;
        let value = value.trim();
        let bad = |what: &str| Error::Parse {
            context: ctx.clone(),
            line: n + 1,
            message: format!("invalid {what}: {value:?}"),
        };
        match key.trim() {
            "sampling_rate_hz" => meta.sampling_rate_hz = Some(value.parse().map_err(|_| bad("rate"))?),
            "samples_per_record" => {
                meta.samples_per_record = Some(value.parse().map_err(|_| bad("count"))?)
            }
            "record_interval_s" => {
                meta.record_interval_s = Some(value.parse().map_err(|_| bad("interval"))?)
            }
            "bearing_id" => meta.bearing_id = Some(value.to_string()),
            "condition_id" => meta.condition_id = Some(value.parse().map_err(|_| bad("condition"))?),
            // Unknown keys are tolerated so sidecars can carry provenance notes.
            _ => {}
        }
    }
    Ok(meta)
}

/// True for `stem_000123.csv`-style names; temperature logs are skipped.
fn is_record_file(path: &Path) -> bool {
    let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
        return false;
    };
    let Some(stem) = name.strip_suffix(".csv") else {
        return false;
    };
    if stem.starts_with("temp") {
        return false;
    }
    stem.chars().last().is_some_and(|c| c.is_ascii_digit())
}

/// Derives `"1-2"` from a `Bearing1_2` directory name.
fn bearing_id_from_dir(dir: &Path) -> String {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("unknown")
        .to_string();
    match name.strip_prefix("Bearing") {
        Some(rest) => rest.replace('_', "-"),
        None => name,
    }
}

fn parse_cell(cell: &str, ctx: &str, line: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| Error::Parse {
        context: ctx.to_string(),
        line,
        message: format!("non-numeric cell {:?}", cell.trim()),
    })
}

struct ParsedRecord {
    timestamp: Timestamp,
    horizontal: Vec<f64>,
    vertical: Option<Vec<f64>>,
}

fn parse_record(path: &Path, channel: Channel) -> Result<ParsedRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut horizontal = Vec::new();
    let mut vertical = Vec::new();
    let mut timestamp = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split([',', ';']).collect();
        let wanted = if channel == Channel::Both { MIN_COLUMNS + 1 } else { MIN_COLUMNS };
        if cells.len() < wanted {
            return Err(Error::Parse {
                context: ctx.clone(),
                line: n + 1,
                message: format!("expected at least {wanted} columns, found {}", cells.len()),
            });
        }
        let mut values = [0.0; MIN_COLUMNS + 1];
        for (slot, cell) in values.iter_mut().zip(&cells).take(wanted) {
            *slot = parse_cell(cell, &ctx, n + 1)?;
        }
        if values.iter().take(wanted).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{ctx} line {}", n + 1)));
        }
        if timestamp.is_none() {
            timestamp = Some(Timestamp {
                hour: values[0] as u32,
                minute: values[1] as u32,
                second: values[2] as u32,
                microsecond: values[3],
            });
        }
        horizontal.push(values[4]);
        if channel == Channel::Both {
            vertical.push(values[5]);
        }
    }
    Ok(ParsedRecord {
        timestamp: timestamp.unwrap_or_default(),
        horizontal,
        vertical: (channel == Channel::Both).then_some(vertical),
    })
}

/// Loads one bearing run from a directory of per-record CSV files.
pub fn load_run(dir: impl AsRef<Path>, channel: Channel) -> Result<BearingRun> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingDirectory(dir.to_path_buf()));
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_record_file(p))
        .collect();
    if files.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    files.sort();

    let meta_path = dir.join(METADATA_FILE);
    let meta = if meta_path.is_file() {
        read_metadata(&meta_path)?
    } else {
        Metadata::default()
    };

    let mut records = Vec::with_capacity(files.len());
    let mut samples_per_record = 0;
    for (index, file) in files.iter().enumerate() {
        let parsed = parse_record(file, channel)?;
        if index == 0 {
            samples_per_record = parsed.horizontal.len();
            if samples_per_record == 0 {
                return Err(Error::Schema(format!("{} has no rows", file.display())));
            }
        } else if parsed.horizontal.len() != samples_per_record {
            return Err(Error::InconsistentRecordLength {
                file: file.clone(),
                expected: samples_per_record,
                found: parsed.horizontal.len(),
            });
        }
        records.push(VibrationRecord {
            record_index: index,
            timestamp: parsed.timestamp,
            horizontal: parsed.horizontal,
            vertical: parsed.vertical,
        });
    }

    if let Some(declared) = meta.samples_per_record {
        if declared != samples_per_record {
            return Err(Error::InconsistentRecordLength {
                file: meta_path,
                expected: declared,
                found: samples_per_record,
            });
        }
    }

    let bearing_id = meta.bearing_id.unwrap_or_else(|| bearing_id_from_dir(dir));
    let condition_id = meta.condition_id.unwrap_or_else(|| {
        bearing_id
            .split('-')
            .next()
            .and_then(|c| c.parse().ok())
            .unwrap_or(0)
    });
    let run = BearingRun {
        bearing_id,
        condition_id,
        sampling_rate: meta.sampling_rate_hz.unwrap_or(DEFAULT_SAMPLING_RATE_HZ),
        samples_per_record,
        record_interval: meta.record_interval_s.unwrap_or(DEFAULT_RECORD_INTERVAL_S),
        records,
    };
    run.validate()?;
    Ok(run)
}

/// Writes a run in the same layout [`load_run`] reads, including the sidecar.
pub fn write_run(run: &BearingRun, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    run.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = run.records.len().to_string().len().max(5);
    for rec in &run.records {
        let path = dir.join(format!("acc_{:0width$}.csv", rec.record_index + 1));
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        let ts = rec.timestamp;
        for (j, h) in rec.horizontal.iter().enumerate() {
            let micro = ts.microsecond + j as f64 * 1e6 / run.sampling_rate;
            let res = match &rec.vertical {
                Some(v) => writeln!(out, "{},{},{},{},{},{}", ts.hour, ts.minute, ts.second, micro, h, v[j]),
                None => writeln!(out, "{},{},{},{},{}", ts.hour, ts.minute, ts.second, micro, h),
            };
            res.map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
    }
    let meta_path = dir.join(METADATA_FILE);
    let meta = format!(
        "bearing_id={}\ncondition_id={}\nsampling_rate_hz={}\nsamples_per_record={}\nrecord_interval_s={}\n",
        run.bearing_id, run.condition_id, run.sampling_rate, run.samples_per_record, run.record_interval
    );
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}
