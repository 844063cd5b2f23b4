//! Hotelling T² in the full, reduced and discarded projected spaces.
//!
//! `TF` is the T² of the first `E` scores, `TR` of the first `p` scores and
//! `TD = TF − TR` measures what the discarded components add. Averaging `TD`
//! over a segment gives the segmented discarded T² used as both segment
//! characteristic and merge cost.
//!
//! Two reference modes exist. In [`RefMode::Segment`] the mean and covariance
//! come from the evaluated scores themselves; then `Σ_v TF_v = (B − 1)·E`
//! for any full-rank segment, which pins the segmented value at
//! `(E − p)(B − 1)/B` independently of the data. [`RefMode::Baseline`] takes
//! them from a designated healthy window, which keeps the statistic sensitive
//! to change.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projection::sample_covariance;

/// Relative ridge added to an ill-conditioned covariance before inversion.
pub const RIDGE_EPSILON: f64 = 1e-8;
/// Condition number above which a covariance counts as numerically singular.
pub const MAX_CONDITION: f64 = 1e12;

const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefMode {
    Segment,
    #[default]
    Baseline,
}

impl std::str::FromStr for RefMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(RefMode::Segment),
            "baseline" => Ok(RefMode::Baseline),
            other => Err(Error::Config(format!("unknown reference mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for RefMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RefMode::Segment => "segment",
            RefMode::Baseline => "baseline",
        })
    }
}

/// Where the T² centre and covariance come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceStats {
    /// Use the evaluated segment's own mean and covariance.
    Segment,
    /// Use fixed statistics of the full score space; leading blocks serve
    /// the reduced space.
    Baseline {
        mean: DVector<f64>,
        cov: DMatrix<f64>,
        source: String,
    },
}

impl ReferenceStats {
    pub fn mode(&self) -> RefMode {
        match self {
            ReferenceStats::Segment => RefMode::Segment,
            ReferenceStats::Baseline { .. } => RefMode::Baseline,
        }
    }

    pub fn baseline(mean: DVector<f64>, cov: DMatrix<f64>, source: impl Into<String>) -> Result<Self> {
        let n = mean.len();
        if cov.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!(
                "reference mean has {n} entries but covariance is {:?}",
                cov.shape()
            )));
        }
        let scale = cov.abs().max().max(f64::MIN_POSITIVE);
        if (&cov - cov.transpose()).abs().max() > SYMMETRY_TOL * scale {
            return Err(Error::Config("reference covariance is not symmetric".into()));
        }
        let smallest = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if smallest < -SYMMETRY_TOL * scale {
            return Err(Error::Config(format!("reference covariance has negative eigenvalue {smallest:e}")));
        }
        Ok(ReferenceStats::Baseline { mean, cov, source: source.into() })
    }

    /// Baseline statistics estimated from the rows of `window`.
    pub fn from_window(window: DMatrixView<'_, f64>, source: impl Into<String>) -> Result<Self> {
        if window.nrows() < 2 {
            return Err(Error::TooFewRows { rows: window.nrows(), min: 2 });
        }
        let (mean, cov) = sample_covariance(&window);
        ReferenceStats::baseline(mean, cov, source)
    }

    /// Mean and covariance restricted to the first `beta` coordinates.
    fn leading(&self, beta: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        match self {
            ReferenceStats::Segment => unreachable!("segment statistics are computed per call"),
            ReferenceStats::Baseline { mean, cov, .. } => {
                if beta > mean.len() {
                    return Err(Error::DimensionMismatch(format!(
                        "reference has {} dimensions, scores have {beta}",
                        mean.len()
                    )));
                }
                Ok((mean.rows(0, beta).into_owned(), cov.view((0, 0), (beta, beta)).into_owned()))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Full,
    Diagonal,
}

fn condition(eigenvalues: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = eigenvalues.clone().fold(f64::NEG_INFINITY, f64::max);
    let min = eigenvalues.fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

/// `x ↦ (x − c)ᵀ Φ⁻¹ (x − c)` with the inverse prepared once.
#[derive(Debug, Clone)]
pub(crate) struct QuadraticForm {
    center: DVector<f64>,
    kind: FormKind,
}

#[derive(Debug, Clone)]
enum FormKind {
    /// Lower Cholesky factor of the (possibly ridged) covariance.
    Cholesky(DMatrix<f64>),
    /// Reciprocal variances.
    Diagonal(Vec<f64>),
}

impl QuadraticForm {
    fn new(center: DVector<f64>, cov: DMatrix<f64>, shape: Shape) -> Result<Self> {
        let beta = cov.nrows();
        match shape {
            Shape::Full => {
                let cov = regularize(cov, |c| SymmetricEigen::new(c.clone()).eigenvalues.iter().copied().collect())?;
                let chol = nalgebra::Cholesky::new(cov)
                    .ok_or(Error::SingularCovariance { condition: f64::INFINITY })?;
                Ok(QuadraticForm { center, kind: FormKind::Cholesky(chol.l()) })
            }
            Shape::Diagonal => {
                let diag = DMatrix::from_diagonal(&cov.diagonal());
                let diag = regularize(diag, |c| c.diagonal().iter().copied().collect());
                let diag = match diag {
                    Ok(d) => d,
                    Err(_) => {
                        let g = (0..beta).find(|&g| !(cov[(g, g)] > 0.0)).unwrap_or(0);
                        return Err(Error::ZeroDiagonal(g));
                    }
                };
                if let Some(g) = (0..beta).find(|&g| !(diag[(g, g)] > 0.0)) {
                    return Err(Error::ZeroDiagonal(g));
                }
                let weights = (0..beta).map(|g| 1.0 / diag[(g, g)]).collect();
                Ok(QuadraticForm { center, kind: FormKind::Diagonal(weights) })
            }
        }
    }

    fn eval(&self, row: &[f64], work: &mut [f64]) -> f64 {
        match &self.kind {
            FormKind::Cholesky(l) => {
                // Forward substitution: L y = x − c, value = ‖y‖².
                let n = row.len();
                let mut total = 0.0;
                for i in 0..n {
                    let mut acc = row[i] - self.center[i];
                    for j in 0..i {
                        acc -= l[(i, j)] * work[j];
                    }
                    let y = acc / l[(i, i)];
                    work[i] = y;
                    total += y * y;
                }
                total
            }
            FormKind::Diagonal(w) => {
                row.iter().zip(self.center.iter()).zip(w).map(|((x, c), w)| (x - c) * (x - c) * w).sum()
            }
        }
    }
}

/// Adds the relative ridge when the covariance is numerically singular.
fn regularize(cov: DMatrix<f64>, spectrum: impl Fn(&DMatrix<f64>) -> Vec<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("covariance".into()));
    }
    let cond = condition(spectrum(&cov).into_iter());
    if cond <= MAX_CONDITION {
        return Ok(cov);
    }
    let beta = cov.nrows() as f64;
    let trace = cov.trace();
    if !(trace > 0.0) {
        return Err(Error::SingularCovariance { condition: cond });
    }
    let ridged = &cov + DMatrix::identity(cov.nrows(), cov.ncols()) * (RIDGE_EPSILON * trace / beta);
    let cond = condition(spectrum(&ridged).into_iter());
    if cond > MAX_CONDITION {
        return Err(Error::SingularCovariance { condition: cond });
    }
    Ok(ridged)
}

fn t_square_shaped(scores: DMatrixView<'_, f64>, reference: &ReferenceStats, shape: Shape) -> Result<Vec<f64>> {
    let (b, beta) = scores.shape();
    if b == 0 {
        return Err(Error::EmptySeries);
    }
    if beta == 0 {
        return Err(Error::DimensionMismatch("scores have no columns".into()));
    }
    let (center, cov) = match reference {
        ReferenceStats::Segment => {
            if b < beta + 2 {
                return Err(Error::SegmentTooShort { len: b, min: beta + 2 });
            }
            sample_covariance(&scores)
        }
        ReferenceStats::Baseline { .. } => reference.leading(beta)?,
    };
    let form = QuadraticForm::new(center, cov, shape)?;
    let mut row = vec![0.0; beta];
    let mut work = vec![0.0; beta];
    Ok((0..b)
        .map(|v| {
            for (g, slot) in row.iter_mut().enumerate() {
                *slot = scores[(v, g)];
            }
            form.eval(&row, &mut work)
        })
        .collect())
}

/// Hotelling T² of every row of a `B × β` score matrix.
pub fn t_square(scores: DMatrixView<'_, f64>, reference: &ReferenceStats) -> Result<Vec<f64>> {
    t_square_shaped(scores, reference, Shape::Full)
}

/// Per-observation full, reduced and discarded T².
#[derive(Debug, Clone, PartialEq)]
pub struct TSquareValues {
    pub tf: Vec<f64>,
    pub tr: Vec<f64>,
    /// `tf − tr`, not clamped: it can be negative in baseline mode.
    pub td: Vec<f64>,
    pub beta_full: usize,
    pub beta_reduced: usize,
}

fn check_retained(e: usize, p: usize) -> Result<()> {
    if p == 0 || p >= e {
        return Err(Error::OutOfRange(format!("retained count p must be in 1..{e}, got {p}")));
    }
    Ok(())
}

fn discarded_shaped(
    scores_full: DMatrixView<'_, f64>,
    p: usize,
    reference: &ReferenceStats,
    shape: Shape,
) -> Result<TSquareValues> {
    let e = scores_full.ncols();
    check_retained(e, p)?;
    let tf = t_square_shaped(scores_full, reference, shape)?;
    let tr = t_square_shaped(scores_full.columns(0, p), reference, shape)?;
    let td = tf.iter().zip(&tr).map(|(f, r)| f - r).collect();
    Ok(TSquareValues { tf, tr, td, beta_full: e, beta_reduced: p })
}

pub fn discarded_t_square(
    scores_full: DMatrixView<'_, f64>,
    p: usize,
    reference: &ReferenceStats,
) -> Result<TSquareValues> {
    discarded_shaped(scores_full, p, reference, Shape::Full)
}

/// Arithmetic mean in index order. Every segment average in the crate goes
/// through here so that cached and direct evaluations agree bit for bit.
pub(crate) fn ordered_mean(values: &[f64]) -> f64 {
    let mut total = 0.0;
    for v in values {
        total += v;
    }
    total / values.len() as f64
}

/// Segmented discarded T²: the mean of `TD` over the segment.
pub fn segmented_discarded(scores_full: DMatrixView<'_, f64>, p: usize, reference: &ReferenceStats) -> Result<f64> {
    Ok(ordered_mean(&discarded_t_square(scores_full, p, reference)?.td))
}

/// As [`segmented_discarded`] with each covariance replaced by its diagonal.
pub fn diagonal_segmented_discarded(
    scores_full: DMatrixView<'_, f64>,
    p: usize,
    reference: &ReferenceStats,
) -> Result<f64> {
    Ok(ordered_mean(&discarded_shaped(scores_full, p, reference, Shape::Diagonal)?.td))
}

/// The data-independent value segment mode always produces.
pub fn pinned_value(e: usize, p: usize, b: usize) -> f64 {
    (e - p) as f64 * (b as f64 - 1.0) / b as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut impl rand::Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    fn correlated(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        let mix = DMatrix::from_fn(cols, cols, |i, j| if i == j { 1.0 } else { rng.random_range(-0.6..0.6) });
        DMatrix::from_fn(rows, cols, |_, _| normal(rng)) * mix
    }

    /// Brute-force T²: explicit inverse, explicit double sum.
    fn brute_force(x: &DMatrix<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Vec<f64> {
        let inv = cov.clone().try_inverse().unwrap();
        (0..x.nrows())
            .map(|v| {
                let mut s = 0.0;
                for a in 0..x.ncols() {
                    for b in 0..x.ncols() {
                        s += (x[(v, a)] - mean[a]) * inv[(a, b)] * (x[(v, b)] - mean[b]);
                    }
                }
                s
            })
            .collect()
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn identity_ref(n: usize) -> ReferenceStats {
        ReferenceStats::baseline(DVector::zeros(n), DMatrix::identity(n, n), "unit").unwrap()
    }

    #[test]
    fn centred_observation_is_zero() {
        let mean = DVector::from_row_slice(&[1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let r = ReferenceStats::baseline(mean.clone(), cov, "x").unwrap();
        let x = DMatrix::from_row_slice(1, 2, mean.as_slice());
        assert_eq!(t_square(x.as_view(), &r).unwrap(), vec![0.0]);
    }

    #[test]
    fn euclidean_reduction() {
        let x = DMatrix::from_row_slice(1, 2, &[3.0, 4.0]);
        assert_eq!(t_square(x.as_view(), &identity_ref(2)).unwrap(), vec![25.0]);
    }

    #[test]
    fn segment_mode_matches_brute_force_and_sum_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for b in [8usize, 9, 30, 150] {
            let x = correlated(&mut rng, b, 6);
            let values = t_square(x.as_view(), &ReferenceStats::Segment).unwrap();
            let (mean, cov) = sample_covariance(&x);
            for (a, o) in values.iter().zip(brute_force(&x, &mean, &cov)) {
                assert!(rel(*a, o) < 1e-9);
            }
            let total: f64 = values.iter().sum();
            assert!(rel(total, (b as f64 - 1.0) * 6.0) < 1e-8, "{total}");
        }
    }

    #[test]
    fn segment_mode_needs_enough_rows() {
        let x = DMatrix::from_fn(7, 6, |i, j| (i * 3 + j * j) as f64);
        assert!(matches!(
            t_square(x.as_view(), &ReferenceStats::Segment),
            Err(Error::SegmentTooShort { len: 7, min: 8 })
        ));
    }

    #[test]
    fn singular_reference_is_regularized_then_rejected_when_empty() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let r = ReferenceStats::baseline(DVector::zeros(2), cov, "rank one").unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let v = t_square(x.as_view(), &r).unwrap()[0];
        assert!(v.is_finite() && v > 1e6);

        let zero = ReferenceStats::baseline(DVector::zeros(2), DMatrix::zeros(2, 2), "zero").unwrap();
        assert!(matches!(t_square(x.as_view(), &zero), Err(Error::SingularCovariance { .. })));
    }

    #[test]
    fn discarded_single_coordinate_examples() {
        let r = identity_ref(6);
        let x = DMatrix::from_row_slice(1, 6, &[0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        let v = discarded_t_square(x.as_view(), 5, &r).unwrap();
        assert_eq!(v.td, vec![4.0]);

        let cov = DMatrix::from_diagonal(&DVector::from_row_slice(&[2.0, 3.0, 0.5, 1.0, 4.0, 0.25]));
        let mean = DVector::from_row_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let r = ReferenceStats::baseline(mean, cov, "diag").unwrap();
        let x = DMatrix::from_row_slice(1, 6, &[1.0, -1.0, 2.0, 0.0, 3.0, 0.6]);
        let v = discarded_t_square(x.as_view(), 5, &r).unwrap();
        assert!(v.td[0].abs() < 1e-14);
    }

    #[test]
    fn discarded_sum_and_pinned_value_in_segment_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for (b, p) in [(8usize, 1usize), (20, 2), (64, 3), (200, 5)] {
            let x = correlated(&mut rng, b, 6);
            let v = discarded_t_square(x.as_view(), p, &ReferenceStats::Segment).unwrap();
            let total: f64 = v.td.iter().sum();
            assert!(rel(total, (b as f64 - 1.0) * (6 - p) as f64) < 1e-8);
            let seg = segmented_discarded(x.as_view(), p, &ReferenceStats::Segment).unwrap();
            assert!(rel(seg, pinned_value(6, p, b)) < 1e-8);
            let diag = diagonal_segmented_discarded(x.as_view(), p, &ReferenceStats::Segment).unwrap();
            assert!(rel(diag, pinned_value(6, p, b)) < 1e-8);
        }
    }

    #[test]
    fn baseline_from_same_segment_reproduces_pinned_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = correlated(&mut rng, 40, 6);
        let r = ReferenceStats::from_window(x.as_view(), "self").unwrap();
        let v = segmented_discarded(x.as_view(), 2, &r).unwrap();
        assert!(rel(v, pinned_value(6, 2, 40)) < 1e-8);
    }

    #[test]
    fn inflated_discarded_variance_raises_the_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let healthy = DMatrix::from_fn(400, 6, |_, _| normal(&mut rng));
        let r = ReferenceStats::from_window(healthy.as_view(), "healthy").unwrap();
        let mut worn = DMatrix::from_fn(400, 6, |_, _| normal(&mut rng));
        for g in 2..6 {
            worn.column_mut(g).scale_mut(2.0);
        }
        let fresh = DMatrix::from_fn(400, 6, |_, _| normal(&mut rng));
        let h = segmented_discarded(fresh.as_view(), 2, &r).unwrap();
        let w = segmented_discarded(worn.as_view(), 2, &r).unwrap();
        assert!(w > h);
        // Four discarded coordinates at four times the variance.
        assert!((w / 16.0 - 1.0).abs() < 0.15, "{w}");
        assert!((h / 4.0 - 1.0).abs() < 0.15, "{h}");
    }

    #[test]
    fn diagonal_variant_is_exact_for_diagonal_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let cov = DMatrix::from_diagonal(&DVector::from_fn(6, |g, _| 0.5 + g as f64));
        let r = ReferenceStats::baseline(DVector::from_element(6, 0.25), cov, "diag").unwrap();
        let x = DMatrix::from_fn(30, 6, |_, _| normal(&mut rng));
        let a = segmented_discarded(x.as_view(), 3, &r).unwrap();
        let b = diagonal_segmented_discarded(x.as_view(), 3, &r).unwrap();
        assert!(rel(a, b) < 1e-14);
    }

    #[test]
    fn diagonal_variant_on_correlated_reference_is_measured() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let reference = correlated(&mut rng, 300, 6);
        let r = ReferenceStats::from_window(reference.as_view(), "corr").unwrap();
        let x = correlated(&mut rng, 100, 6);
        let exact = segmented_discarded(x.as_view(), 2, &r).unwrap();
        let approx = diagonal_segmented_discarded(x.as_view(), 2, &r).unwrap();
        assert!(exact.is_finite() && approx.is_finite());
        eprintln!("diagonal approximation gap: |{approx} - {exact}| = {}", (approx - exact).abs());
    }

    #[test]
    fn zero_diagonal_is_reported() {
        let r = ReferenceStats::baseline(DVector::zeros(3), DMatrix::zeros(3, 3), "zero").unwrap();
        let x = DMatrix::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        assert!(matches!(diagonal_segmented_discarded(x.as_view(), 1, &r), Err(Error::ZeroDiagonal(_))));
    }

    #[test]
    fn block_diagonal_reference_gives_nonnegative_td() {
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let p = 2;
        let mut cov = DMatrix::zeros(6, 6);
        let a = correlated(&mut rng, 50, p);
        let b = correlated(&mut rng, 50, 6 - p);
        cov.view_mut((0, 0), (p, p)).copy_from(&sample_covariance(&a).1);
        cov.view_mut((p, p), (6 - p, 6 - p)).copy_from(&sample_covariance(&b).1);
        let r = ReferenceStats::baseline(DVector::zeros(6), cov, "block").unwrap();
        let x = correlated(&mut rng, 200, 6) * 3.0;
        let v = discarded_t_square(x.as_view(), p, &r).unwrap();
        assert!(v.td.iter().all(|t| *t >= -1e-12));
    }

    #[test]
    fn invariant_under_linear_reparameterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(28);
        let reference = correlated(&mut rng, 80, 4);
        let (mean, cov) = sample_covariance(&reference);
        let x = correlated(&mut rng, 25, 4);
        let base = t_square(x.as_view(), &ReferenceStats::baseline(mean.clone(), cov.clone(), "a").unwrap()).unwrap();
        for _ in 0..10 {
            let map: DMatrix<f64> = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.0 } + rng.random_range(-1.0..1.0));
            if map.determinant().abs() < 1e-3 {
                continue;
            }
            let moved_cov = &map * &cov * map.transpose();
            let moved_cov = (&moved_cov + moved_cov.transpose()) * 0.5;
            let r = ReferenceStats::baseline(&map * &mean, moved_cov, "mapped").unwrap();
            let moved = &x * map.transpose();
            for (a, b) in t_square(moved.as_view(), &r).unwrap().iter().zip(&base) {
                assert!(rel(*a, *b) < 1e-8);
            }
            let seg_a = t_square(moved.as_view(), &ReferenceStats::Segment).unwrap();
            let seg_b = t_square(x.as_view(), &ReferenceStats::Segment).unwrap();
            for (a, b) in seg_a.iter().zip(&seg_b) {
                assert!(rel(*a, *b) < 1e-8);
            }
        }
    }

    #[test]
    fn retained_count_bounds() {
        let x = DMatrix::from_fn(10, 6, |i, j| (i + j) as f64);
        assert!(discarded_t_square(x.as_view(), 0, &identity_ref(6)).is_err());
        assert!(discarded_t_square(x.as_view(), 6, &identity_ref(6)).is_err());
    }

    #[test]
    fn baseline_rejects_asymmetric_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(ReferenceStats::baseline(DVector::zeros(2), cov, "bad").is_err());
    }
}
