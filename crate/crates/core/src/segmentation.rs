//! Bottom-up segmentation of a score series.
//!
//! The series is cut into roughly `k` equal pieces, then the adjacent pair
//! whose union has the smallest segmented discarded T² is merged until `m`
//! segments remain. Only the two pair costs touching a merge are recomputed.

use std::borrow::Cow;

use nalgebra::DMatrixView;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hotelling::{discarded_t_square, ordered_mean, segmented_discarded, RefMode, ReferenceStats};

/// Inclusive index range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Segment { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn union(self, next: Segment) -> Segment {
        Segment { start: self.start, end: next.end }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    pub series_length: usize,
}

impl Segmentation {
    /// Checks that the segments are ordered, contiguous and cover
    /// `0..series_length`.
    pub fn validate(&self) -> Result<()> {
        let mut next = 0;
        for s in &self.segments {
            if s.start != next || s.end < s.start {
                return Err(Error::Schema(format!("segment {s:?} does not start at {next}")));
            }
            next = s.end + 1;
        }
        if next != self.series_length {
            return Err(Error::Schema(format!("segments cover {next} of {} points", self.series_length)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Start indices of every segment after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    /// Index of the left segment of the merged pair, at the time of merging.
    pub pair_index: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MergeTrace {
    pub steps: Vec<MergeStep>,
}

/// Pieces of length `ceil(l/k)`, the last one holding the remainder.
pub fn initial_partition(l: usize, k: usize) -> Result<Segmentation> {
    if k == 0 || l <= k {
        return Err(Error::ParameterOrder(format!("initial partition needs l > k >= 1, got l = {l}, k = {k}")));
    }
    let width = l.div_ceil(k);
    let segments = (0..l).step_by(width).map(|s| Segment::new(s, (s + width).min(l) - 1)).collect();
    Ok(Segmentation { segments, series_length: l })
}

/// Segment cost evaluator over one score series.
///
/// With a baseline reference each observation's discarded T² does not depend
/// on the segment it falls in, so it is computed once and segment costs are
/// ordered means of the cached values, bit-identical to evaluating
/// [`segmented_discarded`] on the segment directly. In segment mode the
/// statistics change with the segment and every cost is evaluated afresh.
#[derive(Debug, Clone)]
pub struct CostModel<'a> {
    kind: CostKind<'a>,
    len: usize,
}

#[derive(Debug, Clone)]
enum CostKind<'a> {
    PerObservation(Cow<'a, [f64]>),
    Segment { scores: DMatrixView<'a, f64>, p: usize },
}

impl<'a> CostModel<'a> {
    pub fn new(scores: DMatrixView<'a, f64>, p: usize, reference: &ReferenceStats) -> Result<Self> {
        let len = scores.nrows();
        let e = scores.ncols();
        if p == 0 || p >= e {
            return Err(Error::OutOfRange(format!("retained count p must be in 1..{e}, got {p}")));
        }
        let kind = match reference {
            ReferenceStats::Segment => CostKind::Segment { scores, p },
            ReferenceStats::Baseline { .. } => {
                CostKind::PerObservation(Cow::Owned(discarded_t_square(scores, p, reference)?.td))
            }
        };
        Ok(CostModel { kind, len })
    }

    pub fn mode(&self) -> RefMode {
        match self.kind {
            CostKind::PerObservation(_) => RefMode::Baseline,
            CostKind::Segment { .. } => RefMode::Segment,
        }
    }

    /// Number of observations covered.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Smallest segment length a cost can be evaluated on.
    pub fn min_segment_len(&self) -> usize {
        match &self.kind {
            CostKind::PerObservation(_) => 1,
            CostKind::Segment { scores, .. } => scores.ncols() + 2,
        }
    }

    /// The same model restricted to the first `len` observations.
    pub fn prefix(&self, len: usize) -> CostModel<'_> {
        let len = len.min(self.len);
        let kind = match &self.kind {
            CostKind::PerObservation(td) => CostKind::PerObservation(Cow::Borrowed(&td[..len])),
            CostKind::Segment { scores, p } => CostKind::Segment { scores: scores.rows(0, len), p: *p },
        };
        CostModel { kind, len }
    }

    /// Segmented discarded T² of `seg`.
    pub fn cost(&self, seg: Segment) -> Result<f64> {
        if seg.end >= self.len {
            return Err(Error::OutOfRange(format!("segment {seg:?} exceeds series length {}", self.len)));
        }
        let value = match &self.kind {
            CostKind::PerObservation(td) => ordered_mean(&td[seg.start..=seg.end]),
            CostKind::Segment { scores, p } => {
                segmented_discarded(scores.rows(seg.start, seg.len()), *p, &ReferenceStats::Segment)?
            }
        };
        if value.is_nan() {
            return Err(Error::NonFinite(format!("cost of segment {seg:?}")));
        }
        Ok(value)
    }

    /// Characteristic value of every segment, in order.
    pub fn characteristic_values(&self, segmentation: &Segmentation) -> Result<Vec<f64>> {
        segmentation.segments.iter().map(|s| self.cost(*s)).collect()
    }
}

fn check_parameters(costs: &CostModel<'_>, k: usize, m: usize) -> Result<Segmentation> {
    let l = costs.len();
    if !(l > k && k > m && m >= 1) {
        return Err(Error::ParameterOrder(format!("need l > k > m >= 1, got l = {l}, k = {k}, m = {m}")));
    }
    let initial = initial_partition(l, k)?;
    let width = initial.segments[0].len();
    if width < costs.min_segment_len() {
        return Err(Error::SegmentTooShort { len: width, min: costs.min_segment_len() });
    }
    if initial.len() < m {
        return Err(Error::ParameterOrder(format!(
            "initial partition of {l} points with k = {k} has only {} segments, fewer than m = {m}",
            initial.len()
        )));
    }
    Ok(initial)
}

/// Leftmost index of the smallest cost.
fn cheapest(costs: &[f64]) -> usize {
    let mut best = 0;
    for (i, c) in costs.iter().enumerate().skip(1) {
        if *c < costs[best] {
            best = i;
        }
    }
    best
}

/// Greedy bottom-up merging on a prepared cost model.
pub fn bottom_up_with(costs: &CostModel<'_>, k: usize, m: usize) -> Result<(Segmentation, MergeTrace)> {
    let mut segmentation = check_parameters(costs, k, m)?;
    let segs = &mut segmentation.segments;
    let mut pair_costs = segs.windows(2).map(|w| costs.cost(w[0].union(w[1]))).collect::<Result<Vec<_>>>()?;
    let mut trace = MergeTrace::default();
    while segs.len() > m {
        let i = cheapest(&pair_costs);
        trace.steps.push(MergeStep { pair_index: i, cost: pair_costs[i] });
        segs[i] = segs[i].union(segs[i + 1]);
        segs.remove(i + 1);
        pair_costs.remove(i);
        if i > 0 {
            pair_costs[i - 1] = costs.cost(segs[i - 1].union(segs[i]))?;
        }
        if i + 1 < segs.len() {
            pair_costs[i] = costs.cost(segs[i].union(segs[i + 1]))?;
        }
    }
    Ok((segmentation, trace))
}

/// Segments `scores_full` into `m` pieces starting from `k` initial ones.
pub fn bottom_up(
    scores_full: DMatrixView<'_, f64>,
    k: usize,
    m: usize,
    p: usize,
    reference: &ReferenceStats,
) -> Result<(Segmentation, MergeTrace)> {
    bottom_up_with(&CostModel::new(scores_full, p, reference)?, k, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hotelling::pinned_value;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rng: &mut impl rand::Rng) -> f64 {
        StandardNormal.sample(rng)
    }

    /// Recomputes every pair cost on every iteration.
    fn naive(costs: &CostModel<'_>, k: usize, m: usize) -> (Vec<Segment>, Vec<MergeStep>) {
        let mut segs = initial_partition(costs.len(), k).unwrap().segments;
        let mut steps = Vec::new();
        while segs.len() > m {
            let all: Vec<f64> = (0..segs.len() - 1).map(|i| costs.cost(segs[i].union(segs[i + 1])).unwrap()).collect();
            let i = cheapest(&all);
            steps.push(MergeStep { pair_index: i, cost: all[i] });
            segs[i] = segs[i].union(segs[i + 1]);
            segs.remove(i + 1);
        }
        (segs, steps)
    }

    fn lengths(s: &Segmentation) -> Vec<usize> {
        s.segments.iter().map(Segment::len).collect()
    }

    #[test]
    fn initial_partition_examples() {
        assert_eq!(lengths(&initial_partition(10, 5).unwrap()), vec![2; 5]);
        assert_eq!(lengths(&initial_partition(10, 4).unwrap()), vec![3, 3, 3, 1]);
        assert!(matches!(initial_partition(7, 7), Err(Error::ParameterOrder(_))));
        let p = initial_partition(101, 7).unwrap();
        p.validate().unwrap();
        assert_eq!(p.len(), 101usize.div_ceil(101usize.div_ceil(7)));
    }

    fn unit_reference() -> ReferenceStats {
        ReferenceStats::baseline(DVector::zeros(6), DMatrix::identity(6, 6), "unit").unwrap()
    }

    #[test]
    fn parameter_errors() {
        let x = DMatrix::from_fn(20, 6, |i, j| (i * j) as f64);
        assert!(matches!(bottom_up(x.as_view(), 5, 5, 2, &unit_reference()), Err(Error::ParameterOrder(_))));
        assert!(matches!(bottom_up(x.as_view(), 20, 2, 2, &unit_reference()), Err(Error::ParameterOrder(_))));
        assert!(matches!(bottom_up(x.as_view(), 5, 0, 2, &unit_reference()), Err(Error::ParameterOrder(_))));
        // Segment mode needs pieces of at least E + 2 = 8.
        assert!(matches!(
            bottom_up(x.as_view(), 4, 2, 2, &ReferenceStats::Segment),
            Err(Error::SegmentTooShort { len: 5, min: 8 })
        ));
        // 10 points with k = 7 give only 5 pieces of 2.
        let y = DMatrix::from_fn(10, 6, |i, j| (i + j) as f64);
        assert!(matches!(bottom_up(y.as_view(), 7, 6, 2, &unit_reference()), Err(Error::ParameterOrder(_))));
    }

    #[test]
    fn zero_merge_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = DMatrix::from_fn(10, 6, |_, _| normal(&mut rng));
        // ceil(10/6) = 2, so k = 6 also yields five pieces; m = 5 needs no merge.
        let (seg, trace) = bottom_up(x.as_view(), 6, 5, 2, &unit_reference()).unwrap();
        assert!(trace.steps.is_empty());
        assert_eq!(lengths(&seg), vec![2; 5]);
    }

    #[test]
    fn segment_mode_merges_by_length_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let x = DMatrix::from_fn(80, 6, |_, _| normal(&mut rng));
        let (seg, trace) = bottom_up(x.as_view(), 10, 2, 2, &ReferenceStats::Segment).unwrap();
        seg.validate().unwrap();
        // Every cost is the pinned value of the union length.
        assert!((trace.steps[0].cost - pinned_value(6, 2, 16)).abs() < 1e-9);
        let mut replay = initial_partition(80, 10).unwrap().segments;
        for s in &trace.steps {
            let merged = replay[s.pair_index].union(replay[s.pair_index + 1]);
            assert!((s.cost - pinned_value(6, 2, merged.len())).abs() < 1e-9);
            replay[s.pair_index] = merged;
            replay.remove(s.pair_index + 1);
        }
        assert_eq!(replay, seg.segments);
        assert_eq!(seg.len(), 2);
    }

    #[test]
    fn incremental_trace_equals_naive_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..20 {
            let l = 30 + trial;
            let x = DMatrix::from_fn(l, 6, |i, _| normal(&mut rng) * (1.0 + (i as f64 / 10.0).sin().abs()));
            let r = ReferenceStats::from_window(x.rows(0, 12), "head").unwrap();
            let costs = CostModel::new(x.as_view(), 2, &r).unwrap();
            let (seg, trace) = bottom_up_with(&costs, 15, 3).unwrap();
            let (segs, steps) = naive(&costs, 15, 3);
            assert_eq!(seg.segments, segs);
            assert_eq!(trace.steps, steps);
        }
    }

    #[test]
    fn cached_cost_matches_direct_evaluation_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let x = DMatrix::from_fn(50, 6, |_, _| normal(&mut rng));
        let r = ReferenceStats::from_window(x.rows(0, 20), "head").unwrap();
        let costs = CostModel::new(x.as_view(), 3, &r).unwrap();
        for (s, e) in [(0, 49), (3, 17), (40, 40), (10, 11)] {
            let direct = segmented_discarded(x.rows(s, e - s + 1), 3, &r).unwrap();
            assert_eq!(costs.cost(Segment::new(s, e)).unwrap().to_bits(), direct.to_bits());
        }
        let prefix = costs.prefix(30);
        assert_eq!(prefix.len(), 30);
        assert!(prefix.cost(Segment::new(20, 30)).is_err());
    }

    #[test]
    fn smallest_cost_pair_merges_first() {
        // Scores whose discarded coordinate is loud everywhere except 20..30.
        let mut x = DMatrix::from_element(40, 6, 0.0);
        for i in 0..40 {
            x[(i, 5)] = if (20..30).contains(&i) { 0.1 } else { 3.0 };
        }
        let (_, trace) = bottom_up(x.as_view(), 8, 7, 5, &unit_reference()).unwrap();
        assert_eq!(trace.steps.len(), 1);
        assert_eq!(trace.steps[0].pair_index, 4);
        assert!((trace.steps[0].cost - 0.01).abs() < 1e-15);
    }
}
