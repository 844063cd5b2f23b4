//! Principal component projection of the feature space.

use nalgebra::{DMatrix, DVector, Dyn, Matrix, Storage, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cumulative-percent-variance threshold for choosing `p`.
pub const DEFAULT_CPV_THRESHOLD: f64 = 0.95;

/// Orthogonal transformation from the original feature space to the full
/// projected space. Columns of `loadings` are the principal directions,
/// ordered by descending eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ModelRepr", try_from = "ModelRepr")]
pub struct ProjectionModel {
    pub mean: DVector<f64>,
    pub loadings: DMatrix<f64>,
    pub eigenvalues: DVector<f64>,
    pub trained_on: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    mean: Vec<f64>,
    /// Row-major `E × E`.
    loadings: Vec<f64>,
    eigenvalues: Vec<f64>,
    trained_on: Vec<String>,
}

impl From<ProjectionModel> for ModelRepr {
    fn from(m: ProjectionModel) -> Self {
        let e = m.dim();
        ModelRepr {
            mean: m.mean.iter().copied().collect(),
            loadings: (0..e).flat_map(|i| (0..e).map(move |j| (i, j))).map(|(i, j)| m.loadings[(i, j)]).collect(),
            eigenvalues: m.eigenvalues.iter().copied().collect(),
            trained_on: m.trained_on,
        }
    }
}

impl TryFrom<ModelRepr> for ProjectionModel {
    type Error = String;

    fn try_from(r: ModelRepr) -> std::result::Result<Self, String> {
        let e = r.mean.len();
        if r.eigenvalues.len() != e || r.loadings.len() != e * e {
            return Err(format!(
                "model dimensions disagree: mean {e}, eigenvalues {}, loadings {}",
                r.eigenvalues.len(),
                r.loadings.len()
            ));
        }
        Ok(ProjectionModel {
            mean: DVector::from_vec(r.mean),
            loadings: DMatrix::from_row_slice(e, e, &r.loadings),
            eigenvalues: DVector::from_vec(r.eigenvalues),
            trained_on: r.trained_on,
        })
    }
}

impl ProjectionModel {
    /// Dimension `E` of the original space.
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Number of retained components chosen by the CPV rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetainedCount {
    pub p: usize,
    pub threshold: f64,
    /// Set when even `E − 1` components miss the threshold for some model.
    pub capped: bool,
}

/// Sample covariance (denominator `rows − 1`), exactly symmetric.
pub(crate) fn sample_covariance<S: Storage<f64, Dyn, Dyn>>(
    data: &Matrix<f64, Dyn, Dyn, S>,
) -> (DVector<f64>, DMatrix<f64>) {
    let (rows, cols) = data.shape();
    let mean = DVector::from_fn(cols, |g, _| data.column(g).sum() / rows as f64);
    let centered = DMatrix::from_fn(rows, cols, |i, g| data[(i, g)] - mean[g]);
    let mut cov = DMatrix::zeros(cols, cols);
    for a in 0..cols {
        for b in a..cols {
            let v = centered.column(a).dot(&centered.column(b)) / (rows as f64 - 1.0);
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (mean, cov)
}

/// Fits the projection on an `l × E` matrix of observations.
pub fn fit_projection(data: &DMatrix<f64>, trained_on: Vec<String>) -> Result<ProjectionModel> {
    let (rows, e) = data.shape();
    if e == 0 {
        return Err(Error::DimensionMismatch("feature matrix has no columns".into()));
    }
    if rows < e + 1 {
        return Err(Error::TooFewRows { rows, min: e + 1 });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature matrix".into()));
    }
    let (mean, cov) = sample_covariance(data);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..e).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let eigenvalues = DVector::from_fn(e, |g, _| eig.eigenvalues[order[g]].max(0.0));
    let mut loadings = DMatrix::from_fn(e, e, |i, g| eig.eigenvectors[(i, order[g])]);
    for g in 0..e {
        // Largest-magnitude entry positive; the first such row wins ties.
        let mut pivot = 0;
        for i in 1..e {
            if loadings[(i, g)].abs() > loadings[(pivot, g)].abs() {
                pivot = i;
            }
        }
        if loadings[(pivot, g)] < 0.0 {
            loadings.column_mut(g).neg_mut();
        }
    }
    Ok(ProjectionModel { mean, loadings, eigenvalues, trained_on })
}

/// Scores of each row of `data` on the first `beta` components.
pub fn project(model: &ProjectionModel, data: &DMatrix<f64>, beta: usize) -> Result<DMatrix<f64>> {
    let e = model.dim();
    if beta == 0 || beta > e {
        return Err(Error::OutOfRange(format!("beta must be in 1..={e}, got {beta}")));
    }
    if data.ncols() != e {
        return Err(Error::DimensionMismatch(format!("expected {e} columns, got {}", data.ncols())));
    }
    let centered = DMatrix::from_fn(data.nrows(), e, |i, g| data[(i, g)] - model.mean[g]);
    Ok(centered * model.loadings.columns(0, beta))
}

/// Scores of a single observation.
pub fn project_vector(model: &ProjectionModel, x: &[f64], beta: usize) -> Result<DVector<f64>> {
    let m = project(model, &DMatrix::from_row_slice(1, x.len(), x), beta)?;
    Ok(m.row(0).transpose())
}

/// Cumulative percent variance carried by the leading `p` eigenvalues.
pub fn cpv(eigenvalues: &[f64], p: usize) -> Result<f64> {
    let e = eigenvalues.len();
    if p == 0 || p > e {
        return Err(Error::OutOfRange(format!("p must be in 1..={e}, got {p}")));
    }
    let total: f64 = eigenvalues.iter().sum();
    if !(total > 0.0) {
        return Err(Error::OutOfRange("eigenvalues are all zero".into()));
    }
    Ok(100.0 * eigenvalues[..p].iter().sum::<f64>() / total)
}

/// Smallest `p` reaching `threshold` (a fraction) for every model.
pub fn select_retained(models: &[ProjectionModel], threshold: f64) -> Result<RetainedCount> {
    let first = models.first().ok_or_else(|| Error::Config("no projection models to select from".into()))?;
    let e = first.dim();
    if e < 2 {
        return Err(Error::OutOfRange("need at least two dimensions to discard any".into()));
    }
    if models.iter().any(|m| m.dim() != e) {
        return Err(Error::DimensionMismatch("models have different dimensions".into()));
    }
    let target = 100.0 * threshold;
    for p in 1..e {
        let mut all = true;
        for m in models {
            if cpv(m.eigenvalues.as_slice(), p)? < target {
                all = false;
                break;
            }
        }
        if all {
            return Ok(RetainedCount { p, threshold, capped: false });
        }
    }
    Ok(RetainedCount { p: e - 1, threshold, capped: true })
}
