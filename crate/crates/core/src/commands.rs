//! Self-verification on doubled signals and stage benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::audio_io::{self, AudioBuffer, GapSpec};
use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features;
use crate::pipeline::{self, Timings};
use crate::splice;

/// Fraction of the doubled signal excluded at each end.
pub const EDGE_EXCLUSION: f64 = 0.05;
/// Distance in seconds kept between a gap and the boundary of the copies.
pub const COPY_GUARD_SECONDS: f64 = 2.0;
/// Relative error below which a restoration counts as exact.
pub const VERIFY_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Trial {
    pub gap_start: usize,
    pub gap_end: usize,
    pub error: f64,
    pub duration_mismatch: Option<i64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerifySummary {
    pub seed: u64,
    pub gap_length: usize,
    pub doubled_length: usize,
    pub trials: Vec<Trial>,
    pub pass: bool,
}

/// `[s s]` for every channel.
pub fn double(buf: &AudioBuffer) -> Result<AudioBuffer> {
    let channels = buf.channels().iter().map(|c| c.repeat(2)).collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?.with_format(buf.format()))
}

/// `||x - y|| / ||y||` over all channels; infinite when the shapes differ.
pub fn relative_error(x: &AudioBuffer, reference: &AudioBuffer) -> f64 {
    if x.len() != reference.len() || x.num_channels() != reference.num_channels() {
        return f64::INFINITY;
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in x.channels().iter().zip(reference.channels()) {
        for (u, v) in a.iter().zip(b) {
            num += (u - v) * (u - v);
            den += v * v;
        }
    }
    if den == 0.0 {
        if num == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (num / den).sqrt()
    }
}

/// Seeded gap positions inside one copy of a signal of `single` samples,
/// doubled. Gaps avoid the outer edges and the boundary between the copies.
pub fn gap_positions(single: usize, gap: usize, rate: u32, trials: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = 2 * single;
    let edge = (EDGE_EXCLUSION * total as f64).ceil() as usize;
    let guard = (COPY_GUARD_SECONDS * f64::from(rate)).round() as usize;
    // allowed start ranges in the first and second copy
    let ranges = [
        (edge, single.saturating_sub(guard + gap)),
        (single + guard, (total - edge).saturating_sub(gap)),
    ];
    if ranges.iter().any(|&(lo, hi)| hi < lo) {
        return Err(Error::SignalTooShort(format!(
            "{single} samples leave no room for a {gap}-sample gap"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..trials)
        .map(|_| {
            let (lo, hi) = ranges[rng.random_range(0..2)];
            let start = rng.random_range(lo..=hi);
            (start, start + gap)
        })
        .collect())
}

/// Doubles `buf`, cuts seeded gaps and checks that inpainting restores the
/// doubled signal.
pub fn verify(buf: &AudioBuffer, gap_seconds: f64, trials: usize, seed: u64, config: &AlgoConfig) -> Result<VerifySummary> {
    if !(gap_seconds >= 0.0 && gap_seconds.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid gap length {gap_seconds}")));
    }
    let gap = (gap_seconds * f64::from(buf.sample_rate())).round() as usize;
    if buf.len() < 2 * gap {
        return Err(Error::SignalTooShort(format!(
            "{} samples is shorter than twice the gap length",
            buf.len()
        )));
    }
    let doubled = double(buf)?;
    if gap == 0 {
        let trials = (0..trials)
            .map(|_| Trial {
                gap_start: 0,
                gap_end: 0,
                error: 0.0,
                duration_mismatch: None,
                pass: true,
                failure: None,
            })
            .collect();
        return Ok(VerifySummary {
            seed,
            gap_length: 0,
            doubled_length: doubled.len(),
            trials,
            pass: true,
        });
    }
    let positions = gap_positions(buf.len(), gap, buf.sample_rate(), trials, seed)?;
    let mut results = Vec::with_capacity(trials);
    for (start, end) in positions {
        let spec = GapSpec::new(start, end, doubled.len())?;
        let corrupted = corrupt(&doubled, &spec)?;
        let trial = match pipeline::inpaint(&corrupted, &[spec], config, seed) {
            Ok(out) => {
                let error = relative_error(&out.output, &doubled);
                Trial {
                    gap_start: start,
                    gap_end: end,
                    error,
                    duration_mismatch: Some(out.report.gaps[0].selection.pair.duration_mismatch()),
                    pass: error < VERIFY_TOLERANCE,
                    failure: None,
                }
            }
            Err(e) => Trial {
                gap_start: start,
                gap_end: end,
                error: f64::INFINITY,
                duration_mismatch: None,
                pass: false,
                failure: Some(e.to_string()),
            },
        };
        results.push(trial);
    }
    let pass = results.iter().all(|t| t.pass);
    Ok(VerifySummary {
        seed,
        gap_length: gap,
        doubled_length: doubled.len(),
        trials: results,
        pass,
    })
}

/// Copy of `buf` with the gap samples set to zero.
pub fn corrupt(buf: &AudioBuffer, gap: &GapSpec) -> Result<AudioBuffer> {
    let channels = buf
        .channels()
        .iter()
        .map(|c| {
            let mut c = c.clone();
            c[gap.start()..gap.end()].fill(0.0);
            c
        })
        .collect();
    Ok(AudioBuffer::new(channels, buf.sample_rate())?.with_format(buf.format()))
}

/// Stage timings of one inpainting run. Stages after a failed transition
/// search are not run and count as zero.
pub fn time_stages(buf: &AudioBuffer, gap: &GapSpec, config: &AlgoConfig) -> Result<Timings> {
    let mut timings = Timings::default();
    let t = std::time::Instant::now();
    let fm = features::extract_features(buf, &[*gap], &config.feature_params())?;
    timings.feature_extraction = t.elapsed().as_secs_f64();
    let layout = *fm.layout().expect("extracted features carry a layout");
    let sol = match pipeline::solve_gap(&fm, gap, config, 0, &mut timings) {
        Ok(sol) => sol,
        Err(Error::NoTransitionFound { .. }) => return Ok(timings),
        Err(e) => return Err(e),
    };
    let t = std::time::Instant::now();
    let mono = audio_io::downmix_mono(buf);
    let plan = splice::plan(mono.channel(0), &sol.selection.pair, &[*gap], layout.effective_hop(), layout.half_window());
    splice::crossfade_splice(buf, &[plan], config.window)?;
    timings.signal_reconstruction = t.elapsed().as_secs_f64();
    Ok(timings)
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Least-squares line `y = slope x + intercept` and its `R^2`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageStats {
    pub stage: &'static str,
    /// Seconds per minute of audio.
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InputBench {
    pub name: String,
    pub minutes: f64,
    pub stages: Vec<StageStats>,
    /// Mean total seconds.
    pub total_seconds: f64,
    pub total_per_minute: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchSummary {
    pub repetitions: usize,
    pub inputs: Vec<InputBench>,
    /// Total seconds per minute of audio from the linear fit.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Gap used by the benchmark: one second (at most a tenth of the signal)
/// centered in the input.
pub fn bench_gap(buf: &AudioBuffer) -> Result<GapSpec> {
    let len = (f64::from(buf.sample_rate()) as usize).min(buf.len() / 10).max(1);
    let start = (buf.len() - len) / 2;
    GapSpec::new(start, start + len, buf.len())
}

pub fn bench(inputs: &[(String, AudioBuffer)], repetitions: usize, config: &AlgoConfig) -> Result<BenchSummary> {
    if inputs.is_empty() || repetitions == 0 {
        return Err(Error::InvalidConfig("bench needs at least one input and one repetition".into()));
    }
    let mut rows = Vec::with_capacity(inputs.len());
    for (name, buf) in inputs {
        let gap = bench_gap(buf)?;
        let minutes = buf.duration_secs() / 60.0;
        let runs: Vec<Timings> = (0..repetitions)
            .map(|_| time_stages(buf, &gap, config))
            .collect::<Result<_>>()?;
        let stages = Timings::STAGES
            .iter()
            .enumerate()
            .map(|(i, &stage)| {
                let v: Vec<f64> = runs.iter().map(|t| t.as_array()[i] / minutes).collect();
                let (mean, std) = mean_std(&v);
                StageStats { stage, mean, std }
            })
            .collect();
        let totals: Vec<f64> = runs.iter().map(Timings::total).collect();
        let (total, _) = mean_std(&totals);
        rows.push(InputBench {
            name: name.clone(),
            minutes,
            stages,
            total_seconds: total,
            total_per_minute: total / minutes,
        });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.minutes).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.total_seconds).collect();
    let (slope, intercept, r_squared) = linear_fit(&x, &y);
    Ok(BenchSummary {
        repetitions,
        inputs: rows,
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert_eq!(s, 1.0);
        let (slope, intercept, r2) = linear_fit(&[1.0, 2.0, 4.0, 8.0], &[3.0, 5.0, 9.0, 17.0]);
        assert!((slope - 2.0).abs() < 1e-12);
        assert!((intercept - 1.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn positions_respect_exclusions() {
        let single = 44100 * 30;
        let gap = 88200;
        let pos = gap_positions(single, gap, 44100, 200, 9).unwrap();
        assert_eq!(pos, gap_positions(single, gap, 44100, 200, 9).unwrap());
        let edge = (0.05 * 2.0 * single as f64) as usize;
        for (s, e) in pos {
            assert_eq!(e - s, gap);
            assert!(s >= edge && e <= 2 * single - edge);
            assert!(e + 88200 <= single || s >= single + 88200);
        }
        assert!(gap_positions(44100 * 3, gap, 44100, 1, 0).is_err());
    }

    #[test]
    fn zero_gap_passes() {
        let buf = AudioBuffer::mono(vec![0.1; 1000], 8000).unwrap();
        let s = verify(&buf, 0.0, 3, 1, &AlgoConfig::default()).unwrap();
        assert!(s.pass);
        assert_eq!(s.trials.len(), 3);
    }

    #[test]
    fn error_measure() {
        let a = AudioBuffer::mono(vec![1.0, 0.0], 10).unwrap();
        let b = AudioBuffer::mono(vec![1.0, 1.0], 10).unwrap();
        assert!((relative_error(&a, &b) - (0.5f64).sqrt()).abs() < 1e-15);
        let c = AudioBuffer::mono(vec![1.0], 10).unwrap();
        assert_eq!(relative_error(&c, &b), f64::INFINITY);
    }
}
