//! Seeded synthetic run-to-failure data and indicator quality scoring.

use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{BearingRun, Timestamp, VibrationRecord, DEFAULT_RECORD_INTERVAL_S, DEFAULT_SAMPLING_RATE_HZ};
use crate::error::{Error, Result};
use crate::features::FEATURE_DIM;
use crate::indicators::{IndicatorConfig, IndicatorKind, IndicatorSeries};
use crate::pipeline::{compute_indicator, fit_training};
use crate::projection::DEFAULT_CPV_THRESHOLD;
use crate::tuning::{dimension_srcc, srcc_with_time};

/// Chance that a sample carries an impulse in impulsive mode.
pub const IMPULSE_PROBABILITY: f64 = 0.002;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Degradation {
    None,
    /// Variance grows as `1 + rate·t`.
    LinearVariance { rate: f64 },
    /// `(start_fraction, variance_multiplier)` pairs, in increasing order.
    Staged { stages: Vec<(f64, f64)> },
    /// Impulse amplitude grows as `rate·t` noise standard deviations.
    Impulsive { rate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_records: usize,
    pub samples_per_record: usize,
    pub base_noise_std: f64,
    pub degradation: Degradation,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_records: 400,
            samples_per_record: 2560,
            base_noise_std: 0.5,
            degradation: Degradation::None,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_records < FEATURE_DIM + 3 {
            return Err(Error::Config(format!("n_records must be at least {}", FEATURE_DIM + 3)));
        }
        if self.samples_per_record < 4 {
            return Err(Error::Config("samples_per_record must be at least 4".into()));
        }
        if !(self.base_noise_std > 0.0 && self.base_noise_std.is_finite()) {
            return Err(Error::Config("base_noise_std must be positive".into()));
        }
        match &self.degradation {
            Degradation::None => {}
            Degradation::LinearVariance { rate } | Degradation::Impulsive { rate } => {
                if !(*rate >= 0.0 && rate.is_finite()) {
                    return Err(Error::Config("rate must be non-negative".into()));
                }
            }
            Degradation::Staged { stages } => {
                if stages.is_empty() {
                    return Err(Error::Config("staged degradation needs at least one stage".into()));
                }
                let mut last = 0.0;
                for &(f, mult) in stages {
                    if !(f > last && f < 1.0) {
                        return Err(Error::Config("stage fractions must increase strictly within (0, 1)".into()));
                    }
                    if !(mult > 0.0 && mult.is_finite()) {
                        return Err(Error::Config("variance multipliers must be positive".into()));
                    }
                    last = f;
                }
            }
        }
        Ok(())
    }

    pub fn bearing_id(&self) -> String {
        format!("synth-seed{}", self.seed)
    }

    /// Record indices where a new stage begins.
    pub fn changepoints(&self) -> Vec<usize> {
        match &self.degradation {
            Degradation::Staged { stages } => {
                stages.iter().map(|&(f, _)| (f * self.n_records as f64).round() as usize).collect()
            }
            _ => Vec::new(),
        }
    }

    /// Number of regimes, counting the initial one.
    pub fn stage_count(&self) -> usize {
        self.changepoints().len() + 1
    }

    /// Noise standard deviation multiplier of record `t`.
    pub fn profile(&self, t: usize) -> f64 {
        match &self.degradation {
            Degradation::None | Degradation::Impulsive { .. } => 1.0,
            Degradation::LinearVariance { rate } => (1.0 + rate * t as f64).sqrt(),
            Degradation::Staged { stages } => {
                let variance = self
                    .changepoints()
                    .iter()
                    .zip(stages).rfind(|(cp, _)| t >= **cp)
                    .map_or(1.0, |(_, &(_, mult))| mult);
                variance.sqrt()
            }
        }
    }

    /// Parses `key = value` lines; `#` starts a comment.
    ///
    /// Keys: `n_records`, `samples_per_record`, `base_noise_std`, `seed`,
    /// `degradation` (`none`, `linear_variance`, `staged`, `impulsive`),
    /// `rate`, and `stages` as `fraction:multiplier` pairs separated by commas.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SynthSpec::default();
        let mut kind = String::from("none");
        let mut rate = None;
        let mut stages = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = || Error::Config(format!("line {}: bad value {value:?} for {key}", n + 1));
            match key {
                "n_records" => spec.n_records = value.parse().map_err(|_| bad())?,
                "samples_per_record" => spec.samples_per_record = value.parse().map_err(|_| bad())?,
                "base_noise_std" => spec.base_noise_std = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                "degradation" => kind = value.to_string(),
                "rate" => rate = Some(value.parse::<f64>().map_err(|_| bad())?),
                "stages" => {
                    let list = value
                        .split(',')
                        .map(|pair| {
                            let (f, m) = pair.split_once(':').ok_or_else(bad)?;
                            Ok((f.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
                        })
                        .collect::<Result<Vec<(f64, f64)>>>()?;
                    stages = Some(list);
                }
                other => return Err(Error::Config(format!("line {}: unknown key {other:?}", n + 1))),
            }
        }
        let need_rate = || rate.ok_or_else(|| Error::Config(format!("degradation {kind} needs a rate")));
        spec.degradation = match kind.as_str() {
            "none" => Degradation::None,
            "linear_variance" => Degradation::LinearVariance { rate: need_rate()? },
            "impulsive" => Degradation::Impulsive { rate: need_rate()? },
            "staged" => Degradation::Staged {
                stages: stages.ok_or_else(|| Error::Config("staged degradation needs stages".into()))?,
            },
            other => return Err(Error::Config(format!("unknown degradation {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn timestamp_at(seconds: f64) -> Timestamp {
    let whole = seconds.floor();
    let s = whole as u64;
    Timestamp {
        hour: (s / 3600 % 24) as u32,
        minute: (s / 60 % 60) as u32,
        second: (s % 60) as u32,
        microsecond: (seconds - whole) * 1e6,
    }
}

/// Deterministic run for `spec`: Gaussian noise scaled by the degradation
/// profile, plus sparse spikes in impulsive mode.
pub fn generate_run(spec: &SynthSpec) -> Result<BearingRun> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let records = (0..spec.n_records)
        .map(|t| {
            let noise = Normal::new(0.0, spec.base_noise_std * spec.profile(t)).expect("positive std");
            let mut horizontal: Vec<f64> = (0..spec.samples_per_record).map(|_| noise.sample(&mut rng)).collect();
            if let Degradation::Impulsive { rate } = spec.degradation {
                let amplitude = spec.base_noise_std * rate * t as f64;
                for x in &mut horizontal {
                    if rng.random::<f64>() < IMPULSE_PROBABILITY {
                        *x += if rng.random::<bool>() { amplitude } else { -amplitude };
                    }
                }
            }
            VibrationRecord {
                record_index: t,
                timestamp: timestamp_at(t as f64 * DEFAULT_RECORD_INTERVAL_S),
                horizontal,
                vertical: None,
            }
        })
        .collect();
    Ok(BearingRun {
        bearing_id: spec.bearing_id(),
        condition_id: 0,
        sampling_rate: DEFAULT_SAMPLING_RATE_HZ,
        samples_per_record: spec.samples_per_record,
        record_interval: DEFAULT_RECORD_INTERVAL_S,
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorScore {
    pub per_dimension: Vec<f64>,
    /// SRCC of the per-time mean over dimensions.
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointScore {
    pub truth: Vec<usize>,
    /// Segment boundaries found on the full run.
    pub found: Vec<usize>,
    /// Mean distance from each true changepoint to the nearest found one.
    pub mean_error: f64,
    /// Grid resolution `ceil(l/k)`.
    pub resolution: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub run_id: String,
    pub config: IndicatorConfig,
    pub sdht2_srcc: f64,
    pub vsdht2: VectorScore,
    pub nvsdht2: VectorScore,
    pub changepoints: Option<ChangepointScore>,
    /// Wall time, the only non-deterministic field.
    pub runtime_ms: f64,
}

fn vector_score(series: &IndicatorSeries) -> Result<VectorScore> {
    Ok(VectorScore {
        per_dimension: dimension_srcc(series)?,
        mean: srcc_with_time(&series.time_index, &series.row_means())?,
    })
}

/// Mean distance from each true changepoint to its nearest found boundary.
pub fn boundary_error(truth: &[usize], found: &[usize]) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    if found.is_empty() {
        return f64::INFINITY;
    }
    let total: usize = truth.iter().map(|&c| found.iter().map(|&b| b.abs_diff(c)).min().unwrap_or(0)).sum();
    total as f64 / truth.len() as f64
}

/// Fits on `training`, computes all three indicators on `run` and scores
/// them. `cfg.p` overrides the CPV choice; the first evaluated time comes
/// from the training runs as in the regular pipeline.
pub fn evaluate(
    run: &BearingRun,
    training: &[BearingRun],
    cfg: &IndicatorConfig,
    truth: &[usize],
) -> Result<EvaluationReport> {
    let started = Instant::now();
    let trained = fit_training(training, DEFAULT_CPV_THRESHOLD, Some(cfg.p))?;
    let file = &trained.file;
    let prepared = file.prepare(run, cfg.ref_mode)?;

    let scalar_cfg = file.config(IndicatorKind::Sdht2, cfg.ref_mode, cfg.k, cfg.m, cfg.stride);
    let (sd, _) = compute_indicator(&prepared, IndicatorKind::Sdht2, &scalar_cfg)?;
    let vector_cfg = file.config(IndicatorKind::Vsdht2, cfg.ref_mode, cfg.k, cfg.m, cfg.stride);
    let (vs, traces) = compute_indicator(&prepared, IndicatorKind::Vsdht2, &vector_cfg)?;
    let nv = crate::indicators::nvsdht2(&vs, prepared.scores.ncols(), vector_cfg.p)?;

    let changepoints = if truth.is_empty() {
        None
    } else {
        // The full run is the last prefix only when the stride lands on it.
        let l = run.len();
        let seg = match traces.last() {
            Some(tp) if tp.t + 1 == l => tp.segmentation.clone(),
            _ => {
                let full = IndicatorConfig { int_start: l - 1, stride: 1, ..vector_cfg };
                let (_, tr) = compute_indicator(&prepared, IndicatorKind::Vsdht2, &full)?;
                tr.into_iter().last().expect("one evaluated time").segmentation
            }
        };
        let found = seg.boundaries();
        Some(ChangepointScore {
            mean_error: boundary_error(truth, &found),
            truth: truth.to_vec(),
            found,
            resolution: l.div_ceil(cfg.k),
        })
    };

    Ok(EvaluationReport {
        run_id: run.bearing_id.clone(),
        config: vector_cfg,
        sdht2_srcc: srcc_with_time(&sd.time_index, &sd.column(0))?,
        vsdht2: vector_score(&vs)?,
        nvsdht2: vector_score(&nv)?,
        changepoints,
        runtime_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Spec for a training run matching `spec` with a shifted seed.
pub fn training_spec(spec: &SynthSpec, offset: u64) -> SynthSpec {
    SynthSpec { seed: spec.seed.wrapping_add(offset), ..spec.clone() }
}

/// Evaluates `spec` against two training runs drawn from the same spec with
/// seeds `seed + 1` and `seed + 2`.
pub fn evaluate_spec(spec: &SynthSpec, cfg: &IndicatorConfig) -> Result<EvaluationReport> {
    let run = generate_run(spec)?;
    let training = [generate_run(&training_spec(spec, 1))?, generate_run(&training_spec(spec, 2))?];
    let mut cfg = *cfg;
    if matches!(spec.degradation, Degradation::Staged { .. }) {
        cfg.m = spec.stage_count();
    }
    evaluate(&run, &training, &cfg, &spec.changepoints())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::build_feature_series;

    fn small(degradation: Degradation, seed: u64) -> SynthSpec {
        SynthSpec { n_records: 120, samples_per_record: 1024, degradation, seed, ..SynthSpec::default() }
    }

    fn rms(run: &BearingRun) -> Vec<f64> {
        build_feature_series(run).unwrap().values.iter().map(|f| f.rms).collect()
    }

    #[test]
    fn stationary_rms_is_stable() {
        let r = rms(&generate_run(&small(Degradation::None, 1)).unwrap());
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!(sd < 0.05 * mean);
    }

    #[test]
    fn four_fold_variance_doubles_rms() {
        let spec = small(Degradation::Staged { stages: vec![(0.5, 4.0)] }, 2);
        assert_eq!(spec.changepoints(), vec![60]);
        let r = rms(&generate_run(&spec).unwrap());
        let before = r[..60].iter().sum::<f64>() / 60.0;
        let after = r[60..].iter().sum::<f64>() / 60.0;
        let ratio = after / before;
        assert!((1.8..=2.2).contains(&ratio), "{ratio}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(Degradation::Impulsive { rate: 0.1 }, 3);
        assert_eq!(generate_run(&spec).unwrap(), generate_run(&spec).unwrap());
        let other = SynthSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate_run(&spec).unwrap(), generate_run(&other).unwrap());
    }

    #[test]
    fn impulses_raise_peak_to_rms() {
        let spec = small(Degradation::Impulsive { rate: 0.2 }, 5);
        let f = build_feature_series(&generate_run(&spec).unwrap()).unwrap();
        let early: f64 = f.values[..20].iter().map(|v| v.pmr).sum::<f64>() / 20.0;
        let late: f64 = f.values[100..].iter().map(|v| v.pmr).sum::<f64>() / 20.0;
        assert!(late > 2.0 * early);
    }

    #[test]
    fn spec_file_parsing() {
        let text = "# staged run\nn_records = 300\nsamples_per_record=512\nbase_noise_std = 0.25\n\
                    degradation = staged\nstages = 0.3:2, 0.7:6.5\nseed = 9\n";
        let spec = SynthSpec::parse(text).unwrap();
        assert_eq!(spec.n_records, 300);
        assert_eq!(spec.degradation, Degradation::Staged { stages: vec![(0.3, 2.0), (0.7, 6.5)] });
        assert_eq!(spec.changepoints(), vec![90, 210]);
        assert_eq!(spec.stage_count(), 3);
        assert_eq!(spec.profile(89), 1.0);
        assert_eq!(spec.profile(90), 2f64.sqrt());
        assert_eq!(spec.profile(299), 6.5f64.sqrt());

        let lin = SynthSpec::parse("degradation = linear_variance\nrate = 0.02").unwrap();
        assert_eq!(lin.degradation, Degradation::LinearVariance { rate: 0.02 });
        assert!(SynthSpec::parse("degradation = linear_variance").is_err());
        assert!(SynthSpec::parse("colour = red").is_err());
        assert!(SynthSpec::parse("n_records = 8").is_err());
        assert!(SynthSpec::parse("degradation = staged\nstages = 0.5:0").is_err());
        assert!(SynthSpec::parse("degradation = staged\nstages = 0.6:2, 0.4:3").is_err());
    }

    #[test]
    fn boundary_error_examples() {
        assert_eq!(boundary_error(&[100], &[96]), 4.0);
        assert_eq!(boundary_error(&[100, 200], &[90, 205]), 7.5);
        assert_eq!(boundary_error(&[], &[3]), 0.0);
        assert_eq!(boundary_error(&[5], &[]), f64::INFINITY);
    }

    #[test]
    fn evaluation_is_reproducible() {
        let spec = small(Degradation::LinearVariance { rate: 0.05 }, 6);
        let cfg = IndicatorConfig { k: 20, m: 3, stride: 5, ..IndicatorConfig::default() };
        let mut a = evaluate_spec(&spec, &cfg).unwrap();
        let mut b = evaluate_spec(&spec, &cfg).unwrap();
        a.runtime_ms = 0.0;
        b.runtime_ms = 0.0;
        assert_eq!(a, b);
        assert!(a.sdht2_srcc > 0.9, "{}", a.sdht2_srcc);
        for s in a.vsdht2.per_dimension.iter().chain([&a.sdht2_srcc]) {
            assert!((-1.0..=1.0).contains(s));
        }
        assert!(a.changepoints.is_none());
    }

    #[test]
    fn staged_evaluation_reports_boundaries() {
        let spec = small(Degradation::Staged { stages: vec![(0.5, 4.0)] }, 7);
        let cfg = IndicatorConfig { k: 20, stride: 10, ..IndicatorConfig::default() };
        let report = evaluate_spec(&spec, &cfg).unwrap();
        let cp = report.changepoints.unwrap();
        assert_eq!(cp.truth, vec![60]);
        assert_eq!(cp.found.len(), 1);
        assert_eq!(cp.resolution, 6);
        assert_eq!(report.config.m, 2);
    }
}
