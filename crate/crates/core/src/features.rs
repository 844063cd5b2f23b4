//! Time-domain features of one vibration burst and the feature time series
//! built from a whole run.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::BearingRun;
use crate::error::{Error, Result};
use crate::series::Series;

/// Dimension of the feature vector.
pub const FEATURE_DIM: usize = 6;

/// Column names, in feature-vector order.
pub const FEATURE_NAMES: [&str; FEATURE_DIM] = ["rms", "mean", "std", "pmr", "kurtosis", "skewness"];

const MIN_WINDOW: usize = 4;

/// Smallest standard deviation kept after regularization.
const STD_FLOOR: f64 = 1e-12;

/// The six statistics of one record.
///
/// `std` uses the N−1 denominator, `skewness` and `kurtosis` use central
/// moments with denominator N, and kurtosis is non-excess (Gaussian ≈ 3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub rms: f64,
    pub mean: f64,
    pub std: f64,
    pub pmr: f64,
    pub kurtosis: f64,
    pub skewness: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [self.rms, self.mean, self.std, self.pmr, self.kurtosis, self.skewness]
    }

    pub fn from_array(a: [f64; FEATURE_DIM]) -> Self {
        FeatureVector { rms: a[0], mean: a[1], std: a[2], pmr: a[3], kurtosis: a[4], skewness: a[5] }
    }
}

pub fn extract_features(window: &[f64]) -> Result<FeatureVector> {
    let n = window.len();
    if n < MIN_WINDOW {
        return Err(Error::WindowTooShort { len: n, min: MIN_WINDOW });
    }
    if window.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("window sample".into()));
    }
    let nf = n as f64;
    let mean = window.iter().sum::<f64>() / nf;
    let (mut m2, mut m3, mut m4, mut sq, mut peak) = (0.0, 0.0, 0.0, 0.0, 0.0_f64);
    for &x in window {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
        sq += x * x;
        peak = peak.max(x.abs());
    }
    let sum_sq_dev = m2;
    m2 /= nf;
    m3 /= nf;
    m4 /= nf;
    if m2 <= (f64::EPSILON * mean.abs()).powi(2) {
        return Err(Error::ZeroVariance);
    }
    let rms = (sq / nf).sqrt();
    if rms == 0.0 {
        return Err(Error::ZeroRms);
    }
    Ok(FeatureVector {
        rms,
        mean,
        std: (sum_sq_dev / (nf - 1.0)).sqrt(),
        pmr: peak / rms,
        kurtosis: m4 / (m2 * m2),
        skewness: m3 / m2.powf(1.5),
    })
}

/// Per-feature location and scale used to standardize before projection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: [f64; FEATURE_DIM],
    pub std: [f64; FEATURE_DIM],
}

impl StandardizationStats {
    pub fn identity() -> Self {
        StandardizationStats { mean: [0.0; FEATURE_DIM], std: [1.0; FEATURE_DIM] }
    }

    /// Column means and sample standard deviations over the concatenation of
    /// the given series. Standard deviations are floored at a tiny positive
    /// value so constant columns cannot produce a division by zero.
    pub fn fit(series: &[&FeatureSeries]) -> Result<Self> {
        let rows: Vec<[f64; FEATURE_DIM]> =
            series.iter().flat_map(|s| s.values.iter().map(FeatureVector::to_array)).collect();
        if rows.len() < 2 {
            return Err(Error::TooFewRows { rows: rows.len(), min: 2 });
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; FEATURE_DIM];
        for row in &rows {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut std = [0.0; FEATURE_DIM];
        for row in &rows {
            for g in 0..FEATURE_DIM {
                std[g] += (row[g] - mean[g]).powi(2);
            }
        }
        std.iter_mut().for_each(|s| *s = (*s / (n - 1.0)).sqrt().max(STD_FLOOR));
        Ok(StandardizationStats { mean, std })
    }
}

/// Feature vectors of one run, one per record.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSeries {
    pub bearing_id: String,
    pub values: Vec<FeatureVector>,
    /// Set once the series has been standardized.
    pub standardization: Option<StandardizationStats>,
}

impl FeatureSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `len × 6` matrix, one row per record.
    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.values.len(), FEATURE_DIM, |i, g| self.values[i].to_array()[g])
    }

    pub fn to_series(&self) -> Series {
        let mut s = Series::new(FEATURE_NAMES.iter().map(|n| n.to_string()).collect());
        for (i, fv) in self.values.iter().enumerate() {
            s.push(i, fv.to_array().to_vec());
        }
        s
    }

    /// Rebuilds a series from a table whose columns are the feature names.
    pub fn from_series(bearing_id: impl Into<String>, series: &Series) -> Result<Self> {
        if series.dims.iter().map(String::as_str).ne(FEATURE_NAMES) {
            return Err(Error::Schema(format!("expected columns {FEATURE_NAMES:?}, got {:?}", series.dims)));
        }
        let values = series
            .values
            .iter()
            .map(|row| {
                let arr: [f64; FEATURE_DIM] = row
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Schema("feature row width".into()))?;
                Ok(FeatureVector::from_array(arr))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureSeries { bearing_id: bearing_id.into(), values, standardization: None })
    }
}

/// Features of every record's horizontal channel, in record order.
pub fn build_feature_series(run: &BearingRun) -> Result<FeatureSeries> {
    if run.records.is_empty() {
        return Err(Error::EmptySeries);
    }
    let values = run
        .records
        .par_iter()
        .map(|rec| extract_features(&rec.horizontal).map_err(|e| e.at_record(rec.record_index)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FeatureSeries { bearing_id: run.bearing_id.clone(), values, standardization: None })
}

pub fn standardize(series: &FeatureSeries, stats: &StandardizationStats) -> Result<FeatureSeries> {
    if let Some(g) = stats.std.iter().position(|s| !(*s > 0.0)) {
        return Err(Error::OutOfRange(format!("standard deviation of {} must be positive", FEATURE_NAMES[g])));
    }
    let values = series
        .values
        .iter()
        .map(|fv| {
            let mut a = fv.to_array();
            for (g, v) in a.iter_mut().enumerate() {
                *v = (*v - stats.mean[g]) / stats.std[g];
            }
            FeatureVector::from_array(a)
        })
        .collect();
    Ok(FeatureSeries {
        bearing_id: series.bearing_id.clone(),
        values,
        standardization: Some(stats.clone()),
    })
}
