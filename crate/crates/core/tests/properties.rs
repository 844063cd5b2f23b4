use bearing_indicators::features::extract_features;
use bearing_indicators::hotelling::ReferenceStats;
use bearing_indicators::indicators::{IndicatorConfig, IndicatorKind, IndicatorSeries};
use bearing_indicators::segmentation::{bottom_up, initial_partition};
use bearing_indicators::series::{from_csv, to_csv, Series};
use bearing_indicators::tuning::{asds, srcc};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn window() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 8..200)
        .prop_filter("not constant", |w| w.iter().any(|v| (v - w[0]).abs() > 1e-3))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #[test]
    fn srcc_ignores_increasing_maps(
        pairs in prop::collection::vec((0u8..12, 0u8..12), 3..50),
        scale in 0.1f64..10.0,
        shift in -5.0f64..5.0,
    ) {
        let x: Vec<f64> = pairs.iter().map(|p| p.0 as f64).collect();
        let y: Vec<f64> = pairs.iter().map(|p| p.1 as f64).collect();
        if let Ok(r) = srcc(&x, &y) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let mx: Vec<f64> = x.iter().map(|v| scale * v + shift).collect();
            let my: Vec<f64> = y.iter().map(|v| (v / 3.0).exp()).collect();
            let r2 = srcc(&mx, &my).unwrap();
            prop_assert!((r - r2).abs() < 1e-12);
        }
    }

    #[test]
    fn features_scale_as_expected(w in window(), c in 0.1f64..20.0) {
        let f = extract_features(&w).unwrap();
        let scaled: Vec<f64> = w.iter().map(|v| c * v).collect();
        let g = extract_features(&scaled).unwrap();
        prop_assert!(close(g.rms, c * f.rms, 1e-10));
        prop_assert!(close(g.std, c * f.std, 1e-10));
        prop_assert!(close(g.mean, c * f.mean, 1e-10));
        prop_assert!(close(g.pmr, f.pmr, 1e-10));
        prop_assert!(close(g.kurtosis, f.kurtosis, 1e-9));
        prop_assert!(close(g.skewness, f.skewness, 1e-9));
    }

    #[test]
    fn features_ignore_sample_order(w in window(), rot in 0usize..200) {
        let mut r = w.clone();
        r.rotate_left(rot % w.len());
        r.reverse();
        let (f, g) = (extract_features(&w).unwrap(), extract_features(&r).unwrap());
        for (a, b) in f.to_array().iter().zip(g.to_array()) {
            prop_assert!(close(*a, b, 1e-9));
        }
    }

    #[test]
    fn bottom_up_covers_the_series_with_m_segments(
        l in 12usize..80,
        k_frac in 0.1f64..0.9,
        m_frac in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let k = ((l as f64 * k_frac) as usize).max(2);
        let pieces = initial_partition(l, k).unwrap().len();
        let m = 1 + ((pieces - 1) as f64 * m_frac) as usize;
        prop_assume!(m < k);
        let x = DMatrix::from_fn(l, 6, |i, j| {
            let h = seed
                .wrapping_mul(6364136223846793005)
                .wrapping_add(((i * 6 + j) as u64).wrapping_mul(1442695040888963407));
            (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        });
        let r = ReferenceStats::from_window(x.rows(0, 10), "head").unwrap();
        let (seg, trace) = bottom_up(x.as_view(), k, m, 2, &r).unwrap();
        seg.validate().unwrap();
        prop_assert_eq!(seg.len(), m);
        prop_assert_eq!(trace.steps.len(), pieces - m);
        prop_assert_eq!(seg.segments.iter().map(|s| s.len()).sum::<usize>(), l);
    }

    #[test]
    fn csv_round_trip_is_bitwise(
        rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 3), 1..30),
    ) {
        let mut s = Series::new(Series::numbered_dims(3));
        for (t, r) in rows.iter().enumerate() {
            s.push(t * 2, r.clone());
        }
        let back = from_csv(&to_csv(&s), "prop").unwrap();
        prop_assert_eq!(&back.time_index, &s.time_index);
        for (a, b) in back.values.iter().flatten().zip(s.values.iter().flatten()) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn asds_ignores_run_order_and_positive_scaling(
        runs in prop::collection::vec(prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 6..20), 1..5),
        scale in 0.5f64..4.0,
    ) {
        let series: Vec<IndicatorSeries> = runs
            .iter()
            .map(|rows| IndicatorSeries {
                kind: IndicatorKind::Vsdht2,
                time_index: (10..10 + rows.len()).collect(),
                values: rows.clone(),
                config: IndicatorConfig { m: 3, k: 4, int_start: 10, ..IndicatorConfig::default() },
            })
            .collect();
        if let Ok(a) = asds(&series) {
            let mut reversed = series.clone();
            reversed.reverse();
            prop_assert_eq!(a, asds(&reversed).unwrap());
            let mut scaled = series.clone();
            for s in &mut scaled {
                for row in &mut s.values {
                    row[1] *= scale;
                }
            }
            prop_assert!((a - asds(&scaled).unwrap()).abs() < 1e-12);
        }
    }
}
