//! End-to-end glue: training runs to a saved model, and a run plus model to
//! indicator series.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::BearingRun;
use crate::error::{Error, Result};
use crate::features::{build_feature_series, standardize, FeatureSeries, StandardizationStats, FEATURE_DIM};
use crate::hotelling::{RefMode, ReferenceStats};
use crate::indicators::{
    compute_int_start, nvsdht2, sdht2, vsdht2_traced, IndicatorConfig, IndicatorKind, IndicatorSeries, TracePoint,
};
use crate::projection::{fit_projection, project, select_retained, ProjectionModel, RetainedCount};
use crate::tuning::PreparedRun;

/// Everything needed to score a run under one operating condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    #[serde(flatten)]
    pub model: ProjectionModel,
    pub standardization_stats: StandardizationStats,
    pub retained: RetainedCount,
    /// First evaluated record, also the length of the healthy baseline window.
    pub int_start: usize,
}

/// Result of fitting on the training runs.
#[derive(Debug, Clone)]
pub struct Training {
    pub file: ModelFile,
    /// One model per training run, used only to choose `p`.
    pub run_models: Vec<ProjectionModel>,
}

/// Fits standardization and a global projection on the concatenated training
/// runs. `p` is the CPV choice over per-run models unless overridden.
pub fn fit_training(runs: &[BearingRun], cpv_threshold: f64, p_override: Option<usize>) -> Result<Training> {
    if runs.is_empty() {
        return Err(Error::Config("fitting needs at least one training run".into()));
    }
    let raw = runs.iter().map(build_feature_series).collect::<Result<Vec<_>>>()?;
    let stats = StandardizationStats::fit(&raw.iter().collect::<Vec<_>>())?;
    let standardized = raw.iter().map(|s| standardize(s, &stats)).collect::<Result<Vec<_>>>()?;

    let matrices: Vec<DMatrix<f64>> = standardized.iter().map(FeatureSeries::to_matrix).collect();
    let total: usize = matrices.iter().map(DMatrix::nrows).sum();
    let mut all = DMatrix::zeros(total, FEATURE_DIM);
    let mut row = 0;
    for m in &matrices {
        all.rows_mut(row, m.nrows()).copy_from(m);
        row += m.nrows();
    }
    let ids: Vec<String> = runs.iter().map(|r| r.bearing_id.clone()).collect();
    let model = fit_projection(&all, ids.clone())?;
    let run_models = matrices
        .iter()
        .zip(&ids)
        .map(|(m, id)| fit_projection(m, vec![id.clone()]))
        .collect::<Result<Vec<_>>>()?;

    let mut retained = select_retained(&run_models, cpv_threshold)?;
    if let Some(p) = p_override {
        if p == 0 || p >= FEATURE_DIM {
            return Err(Error::OutOfRange(format!("p must be in 1..{FEATURE_DIM}, got {p}")));
        }
        retained = RetainedCount { p, threshold: cpv_threshold, capped: false };
    }
    let int_start = compute_int_start(runs)?;
    Ok(Training {
        file: ModelFile { model, standardization_stats: stats, retained, int_start },
        run_models,
    })
}

impl ModelFile {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: ModelFile = serde_json::from_str(&text)?;
        if file.model.dim() != FEATURE_DIM {
            return Err(Error::DimensionMismatch(format!("model has dimension {}", file.model.dim())));
        }
        Ok(file)
    }

    pub fn p(&self) -> usize {
        self.retained.p
    }

    /// Full `l × E` score matrix of a feature series.
    pub fn scores_from_features(&self, features: &FeatureSeries) -> Result<DMatrix<f64>> {
        let z = standardize(features, &self.standardization_stats)?;
        project(&self.model, &z.to_matrix(), FEATURE_DIM)
    }

    pub fn scores(&self, run: &BearingRun) -> Result<DMatrix<f64>> {
        self.scores_from_features(&build_feature_series(run)?)
    }

    /// Reference statistics for one run's scores. The baseline is the run's
    /// own first `int_start` records.
    pub fn reference(&self, scores: &DMatrix<f64>, mode: RefMode, source: &str) -> Result<ReferenceStats> {
        match mode {
            RefMode::Segment => Ok(ReferenceStats::Segment),
            RefMode::Baseline => {
                if scores.nrows() < self.int_start {
                    return Err(Error::TooFewRows { rows: scores.nrows(), min: self.int_start });
                }
                ReferenceStats::from_window(scores.rows(0, self.int_start), format!("{source}[0..{})", self.int_start))
            }
        }
    }

    /// Indicator configuration whose first evaluated time is the later of
    /// `int_start` and the first prefix long enough for `(k, m)`.
    pub fn config(&self, kind: IndicatorKind, ref_mode: RefMode, k: usize, m: usize, stride: usize) -> IndicatorConfig {
        let feasible = match (kind.is_vector(), ref_mode) {
            (false, _) => 0,
            (true, RefMode::Baseline) => k,
            (true, RefMode::Segment) => (FEATURE_DIM + 1) * k,
        };
        IndicatorConfig { p: self.p(), k, m, ref_mode, stride, int_start: self.int_start.max(feasible) }
    }

    pub fn prepare(&self, run: &BearingRun, mode: RefMode) -> Result<PreparedRun> {
        let scores = self.scores(run)?;
        let reference = self.reference(&scores, mode, &run.bearing_id)?;
        Ok(PreparedRun { id: run.bearing_id.clone(), scores, reference })
    }
}

/// One indicator on a prepared run. Merge traces are returned for the
/// vector kinds.
pub fn compute_indicator(
    run: &PreparedRun,
    kind: IndicatorKind,
    cfg: &IndicatorConfig,
) -> Result<(IndicatorSeries, Vec<TracePoint>)> {
    let scores = run.scores.as_view();
    match kind {
        IndicatorKind::Sdht2 => Ok((sdht2(scores, cfg, &run.reference)?, Vec::new())),
        IndicatorKind::Vsdht2 => vsdht2_traced(scores, cfg, &run.reference),
        IndicatorKind::Nvsdht2 => {
            let (vs, traces) = vsdht2_traced(scores, cfg, &run.reference)?;
            Ok((nvsdht2(&vs, run.scores.ncols(), cfg.p)?, traces))
        }
    }
}
