//! Spearman rank correlation, the ASDS criterion and the (k, m) grid search.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotelling::ReferenceStats;
use crate::indicators::{vsdht2, IndicatorConfig, IndicatorKind, IndicatorSeries};

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("cannot rank NaN".into()));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = rank;
        }
        i = j;
    }
    Ok(ranks)
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation coefficient.
pub fn srcc(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch { left: x.len(), right: y.len() });
    }
    if x.len() < 3 {
        return Err(Error::TooFewRows { rows: x.len(), min: 3 });
    }
    let constant = |v: &[f64]| v.iter().all(|a| *a == v[0]);
    if constant(x) || constant(y) {
        return Err(Error::ConstantInput);
    }
    Ok(pearson(&average_ranks(x)?, &average_ranks(y)?))
}

/// SRCC of `values` against the time index.
pub fn srcc_with_time(time_index: &[usize], values: &[f64]) -> Result<f64> {
    let t: Vec<f64> = time_index.iter().map(|&t| t as f64).collect();
    srcc(&t, values)
}

/// SRCC of every dimension of a series with time.
pub fn dimension_srcc(series: &IndicatorSeries) -> Result<Vec<f64>> {
    (0..series.width()).map(|d| srcc_with_time(&series.time_index, &series.column(d))).collect()
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Average over runs of the spread of per-dimension SRCCs.
pub fn asds(vsdht2_per_training_run: &[IndicatorSeries]) -> Result<f64> {
    let runs = vsdht2_per_training_run;
    if runs.is_empty() {
        return Err(Error::Config("ASDS needs at least one run".into()));
    }
    let m = runs[0].width();
    let mut stds = Vec::with_capacity(runs.len());
    for run in runs {
        if run.kind != IndicatorKind::Vsdht2 {
            return Err(Error::Config(format!("ASDS needs vsdht2 series, got {}", run.kind)));
        }
        if run.width() != m {
            return Err(Error::DimensionMismatch(format!("runs have m = {m} and m = {}", run.width())));
        }
        if m < 2 {
            return Err(Error::Config("ASDS needs m >= 2".into()));
        }
        stds.push(sample_std(&dimension_srcc(run)?));
    }
    // Summing in sorted order makes the mean independent of run order.
    stds.sort_by(f64::total_cmp);
    Ok(stds.iter().sum::<f64>() / stds.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { k_values: vec![200, 100, 50], m_values: vec![20, 10, 5] }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k_values.is_empty() || self.m_values.is_empty() {
            return Err(Error::Config("grid needs at least one k and one m".into()));
        }
        for (k, m) in self.cells() {
            if !(k > m && m >= 1) {
                return Err(Error::ParameterOrder(format!("grid cell {k}~{m} violates k > m >= 1")));
            }
        }
        Ok(())
    }

    /// Cells in declaration order, k outermost.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.k_values.iter().flat_map(|&k| self.m_values.iter().map(move |&m| (k, m))).collect()
    }
}

/// Parses `K1,K2,...:M1,M2,...`.
impl std::str::FromStr for GridSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (ks, ms) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("grid {s:?} is not of the form K1,K2:M1,M2")))?;
        let list = |part: &str| {
            part.split(',')
                .map(|v| v.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad grid value {v:?}"))))
                .collect::<Result<Vec<_>>>()
        };
        let grid = GridSpec { k_values: list(ks)?, m_values: list(ms)? };
        grid.validate()?;
        Ok(grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCell {
    pub k: usize,
    pub m: usize,
    /// `None` when some run could not be evaluated with this cell.
    pub asds: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningReport {
    pub cells: Vec<TuningCell>,
    pub best: Option<(usize, usize)>,
}

impl TuningReport {
    fn new(cells: Vec<TuningCell>) -> Self {
        let mut best: Option<&TuningCell> = None;
        for c in &cells {
            let Some(v) = c.asds else { continue };
            let better = match best {
                None => true,
                Some(b) => {
                    let bv = b.asds.unwrap_or(f64::NEG_INFINITY);
                    v > bv || (v == bv && (c.k, c.m) < (b.k, b.m))
                }
            };
            if better {
                best = Some(c);
            }
        }
        let best = best.map(|c| (c.k, c.m));
        TuningReport { cells, best }
    }

    /// Two columns, `k~m` and `ASDS`, then a `best` line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k~m,ASDS\n");
        for c in &self.cells {
            match c.asds {
                Some(v) => writeln!(out, "{}~{},{v}", c.k, c.m),
                None => writeln!(out, "{}~{},invalid", c.k, c.m),
            }
            .expect("writing to a String");
        }
        match self.best {
            Some((k, m)) => writeln!(out, "best,{k}~{m}"),
            None => writeln!(out, "best,none"),
        }
        .expect("writing to a String");
        out
    }
}

/// A training run's scores with the reference its indicators use.
#[derive(Debug, Clone)]
pub struct PreparedRun {
    pub id: String,
    pub scores: DMatrix<f64>,
    pub reference: ReferenceStats,
}

fn evaluate_cell(runs: &[PreparedRun], cfg: &IndicatorConfig) -> Result<f64> {
    let series = runs
        .iter()
        .map(|r| vsdht2(r.scores.as_view(), cfg, &r.reference))
        .collect::<Result<Vec<_>>>()?;
    asds(&series)
}

/// ASDS of every grid cell over the training runs, and the best cell.
///
/// A cell that fails on some run (typically `l > k` violated) is reported as
/// invalid and excluded from the argmax. The first evaluated time is raised
/// to `k` so that every prefix can host the initial partition.
pub fn grid_search(runs: &[PreparedRun], grid: &GridSpec, template: &IndicatorConfig) -> Result<TuningReport> {
    grid.validate()?;
    if runs.is_empty() {
        return Err(Error::Config("grid search needs at least one training run".into()));
    }
    let cells = grid
        .cells()
        .into_par_iter()
        .map(|(k, m)| {
            let cfg = IndicatorConfig { k, m, int_start: template.int_start.max(k), ..*template };
            match evaluate_cell(runs, &cfg) {
                Ok(v) => TuningCell { k, m, asds: Some(v), error: None },
                Err(e) => TuningCell { k, m, asds: None, error: Some(e.to_string()) },
            }
        })
        .collect();
    Ok(TuningReport::new(cells))
}
