//! SDHT², VSDHT² and NVSDHT² as time series over a bearing's life.
//!
//! Every value at time `t` is computed from the score rows `0..=t` only.
//! VSDHT² runs a fresh bottom-up segmentation on each evaluated prefix.

use nalgebra::DMatrixView;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BearingRun;
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::hotelling::{RefMode, ReferenceStats};
use crate::segmentation::{bottom_up_with, CostModel, MergeTrace, Segment, Segmentation};
use crate::series::Series;

pub const DEFAULT_K: usize = 100;
pub const DEFAULT_M: usize = 5;
pub const DEFAULT_P: usize = 2;

/// Smallest allowed first evaluated index: enough records to estimate a
/// non-singular covariance of the feature space.
pub const MIN_INT_START: usize = FEATURE_DIM + 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorConfig {
    pub p: usize,
    pub k: usize,
    pub m: usize,
    pub ref_mode: RefMode,
    pub stride: usize,
    pub int_start: usize,
}

impl Default for IndicatorConfig {
    fn default() -> Self {
        IndicatorConfig {
            p: DEFAULT_P,
            k: DEFAULT_K,
            m: DEFAULT_M,
            ref_mode: RefMode::Baseline,
            stride: 1,
            int_start: MIN_INT_START,
        }
    }
}

impl IndicatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.int_start == 0 {
            return Err(Error::Config("int_start must be at least 1".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be at least 1".into()));
        }
        if !(self.k > self.m && self.m >= 1) {
            return Err(Error::ParameterOrder(format!("need k > m >= 1, got k = {}, m = {}", self.k, self.m)));
        }
        Ok(())
    }

    /// Evaluated time points for a run of `l` records.
    pub fn times(&self, l: usize) -> Vec<usize> {
        (self.int_start..l).step_by(self.stride.max(1)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Sdht2,
    Vsdht2,
    Nvsdht2,
}

impl IndicatorKind {
    pub fn name(self) -> &'static str {
        match self {
            IndicatorKind::Sdht2 => "sdht2",
            IndicatorKind::Vsdht2 => "vsdht2",
            IndicatorKind::Nvsdht2 => "nvsdht2",
        }
    }

    pub fn is_vector(self) -> bool {
        self != IndicatorKind::Sdht2
    }
}

impl std::str::FromStr for IndicatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sdht2" => Ok(IndicatorKind::Sdht2),
            "vsdht2" => Ok(IndicatorKind::Vsdht2),
            "nvsdht2" => Ok(IndicatorKind::Nvsdht2),
            other => Err(Error::Config(format!("unknown indicator kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorSeries {
    pub kind: IndicatorKind,
    pub time_index: Vec<usize>,
    /// One row per time point: width 1 for SDHT², `m` otherwise.
    pub values: Vec<Vec<f64>>,
    pub config: IndicatorConfig,
}

impl IndicatorSeries {
    pub fn len(&self) -> usize {
        self.time_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_index.is_empty()
    }

    pub fn width(&self) -> usize {
        if self.kind.is_vector() {
            self.config.m
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_index.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Schema("time index is not strictly increasing".into()));
        }
        if self.time_index.first().is_some_and(|&t| t != self.config.int_start) {
            return Err(Error::Schema(format!("series does not start at int_start = {}", self.config.int_start)));
        }
        let width = self.width();
        if self.values.len() != self.time_index.len() || self.values.iter().any(|r| r.len() != width) {
            return Err(Error::Schema(format!("{} series rows must have width {width}", self.kind)));
        }
        Ok(())
    }

    /// Values of dimension `d` in time order.
    pub fn column(&self, d: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[d]).collect()
    }

    /// Mean over the vector entries at every time point.
    pub fn row_means(&self) -> Vec<f64> {
        self.values.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect()
    }

    pub fn to_series(&self) -> Series {
        let dims = if self.kind.is_vector() {
            Series::numbered_dims(self.width())
        } else {
            vec![self.kind.name().to_string()]
        };
        Series { time_index: self.time_index.clone(), values: self.values.clone(), dims }
    }

    /// Two-column `(time_index, value)` series for one dimension.
    pub fn dimension_series(&self, d: usize) -> Series {
        let name = if self.kind.is_vector() { format!("dim_{}", d + 1) } else { self.kind.name().to_string() };
        Series {
            time_index: self.time_index.clone(),
            values: self.values.iter().map(|r| vec![r[d]]).collect(),
            dims: vec![name],
        }
    }

    pub fn from_series(kind: IndicatorKind, series: &Series, config: IndicatorConfig) -> Result<Self> {
        series.validate()?;
        let out = IndicatorSeries {
            kind,
            time_index: series.time_index.clone(),
            values: series.values.clone(),
            config,
        };
        out.validate()?;
        Ok(out)
    }
}

/// `ceil(5% of the mean record count)`, without the lower clamp.
pub fn int_start_rule(record_counts: &[usize]) -> Result<usize> {
    if record_counts.is_empty() {
        return Err(Error::Config("int_start needs at least one training run".into()));
    }
    // 0.05 * sum / n == sum / (20 n), computed exactly in integers.
    let total: usize = record_counts.iter().sum();
    Ok(total.div_ceil(20 * record_counts.len()))
}

pub fn int_start_from_counts(record_counts: &[usize]) -> Result<usize> {
    Ok(int_start_rule(record_counts)?.max(MIN_INT_START))
}

/// First evaluated record index for runs under the training condition.
pub fn compute_int_start(training_runs: &[BearingRun]) -> Result<usize> {
    let counts: Vec<usize> = training_runs.iter().map(BearingRun::len).collect();
    int_start_from_counts(&counts)
}

fn prepare<'a>(
    scores_full: DMatrixView<'a, f64>,
    cfg: &IndicatorConfig,
    reference: &ReferenceStats,
) -> Result<(CostModel<'a>, Vec<usize>)> {
    cfg.validate()?;
    if reference.mode() != cfg.ref_mode {
        return Err(Error::Config(format!(
            "config asks for {} statistics but the reference is {}",
            cfg.ref_mode,
            reference.mode()
        )));
    }
    let l = scores_full.nrows();
    if l <= cfg.int_start {
        return Err(Error::TooFewRows { rows: l, min: cfg.int_start + 1 });
    }
    let costs = CostModel::new(scores_full, cfg.p, reference)?;
    Ok((costs, cfg.times(l)))
}

/// Scalar indicator: discarded T² averaged over the whole history `[0, t]`.
pub fn sdht2(scores_full: DMatrixView<'_, f64>, cfg: &IndicatorConfig, reference: &ReferenceStats) -> Result<IndicatorSeries> {
    let (costs, times) = prepare(scores_full, cfg, reference)?;
    let values = times
        .par_iter()
        .map(|&t| costs.cost(Segment::new(0, t)).map(|v| vec![v]))
        .collect::<Result<Vec<_>>>()?;
    Ok(IndicatorSeries { kind: IndicatorKind::Sdht2, time_index: times, values, config: *cfg })
}

/// Segmentation and merge trace behind one VSDHT² value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub t: usize,
    pub segmentation: Segmentation,
    pub trace: MergeTrace,
}

fn vector_at(costs: &CostModel<'_>, t: usize, cfg: &IndicatorConfig) -> Result<(Vec<f64>, TracePoint)> {
    let prefix = costs.prefix(t + 1);
    let (segmentation, trace) = bottom_up_with(&prefix, cfg.k, cfg.m)?;
    let values = prefix.characteristic_values(&segmentation)?;
    Ok((values, TracePoint { t, segmentation, trace }))
}

/// VSDHT² together with the segmentation found at every evaluated time.
pub fn vsdht2_traced(
    scores_full: DMatrixView<'_, f64>,
    cfg: &IndicatorConfig,
    reference: &ReferenceStats,
) -> Result<(IndicatorSeries, Vec<TracePoint>)> {
    let (costs, times) = prepare(scores_full, cfg, reference)?;
    // Surface a bad (k, m) for the first prefix before fanning out.
    let first = vector_at(&costs, times[0], cfg)?;
    let rest = times[1..].par_iter().map(|&t| vector_at(&costs, t, cfg)).collect::<Result<Vec<_>>>()?;
    let (values, traces) = std::iter::once(first).chain(rest).unzip();
    Ok((IndicatorSeries { kind: IndicatorKind::Vsdht2, time_index: times, values, config: *cfg }, traces))
}

/// Vector indicator: per-segment discarded T² of a bottom-up segmentation of
/// the history `[0, t]`.
pub fn vsdht2(scores_full: DMatrixView<'_, f64>, cfg: &IndicatorConfig, reference: &ReferenceStats) -> Result<IndicatorSeries> {
    vsdht2_traced(scores_full, cfg, reference).map(|(s, _)| s)
}

/// VSDHT² divided by the number of discarded components.
pub fn nvsdht2(vs: &IndicatorSeries, e: usize, p: usize) -> Result<IndicatorSeries> {
    if vs.kind != IndicatorKind::Vsdht2 {
        return Err(Error::Config(format!("normalization needs a vsdht2 series, got {}", vs.kind)));
    }
    if p == 0 || p >= e {
        return Err(Error::OutOfRange(format!("retained count p must be in 1..{e}, got {p}")));
    }
    let divisor = (e - p) as f64;
    Ok(IndicatorSeries {
        kind: IndicatorKind::Nvsdht2,
        time_index: vs.time_index.clone(),
        values: vs.values.iter().map(|r| r.iter().map(|v| v / divisor).collect()).collect(),
        config: vs.config,
    })
}
