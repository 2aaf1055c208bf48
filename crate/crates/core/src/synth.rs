//! Seeded synthetic test signals.
//!
//! None of the fixtures repeats itself exactly, so after doubling the only
//! sample-exact match of any excerpt is its copy.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    ToneMixture,
    DrumLoop,
    ChirpNoise,
    SpeechLike,
}

impl Fixture {
    pub const ALL: [Fixture; 4] = [
        Fixture::ToneMixture,
        Fixture::DrumLoop,
        Fixture::ChirpNoise,
        Fixture::SpeechLike,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Fixture::ToneMixture => "tone_mixture",
            Fixture::DrumLoop => "drum_loop",
            Fixture::ChirpNoise => "chirp_noise",
            Fixture::SpeechLike => "speech_like",
        }
    }

    pub fn render(self, seconds: f64, rate: u32, seed: u64) -> Vec<f64> {
        match self {
            Fixture::ToneMixture => tone_mixture(seconds, rate, seed),
            Fixture::DrumLoop => drum_loop(seconds, rate, seed),
            Fixture::ChirpNoise => chirp_noise(seconds, rate, seed),
            Fixture::SpeechLike => speech_like(seconds, rate, seed),
        }
    }
}

fn samples(seconds: f64, rate: u32) -> usize {
    (seconds * f64::from(rate)).round() as usize
}

/// Uniform white noise in `[-amp, amp)`.
pub fn white_noise(seconds: f64, rate: u32, amp: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..samples(seconds, rate))
        .map(|_| amp * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

/// Three overlapping voices of slightly inharmonic notes with vibrato over a
/// faint noise bed.
pub fn tone_mixture(seconds: f64, rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples(seconds, rate);
    let fs = f64::from(rate);
    let mut out: Vec<f64> = (0..n).map(|_| 0.003 * (2.0 * rng.random::<f64>() - 1.0)).collect();
    for _voice in 0..3 {
        let mut start = (rng.random::<f64>() * 0.3 * fs) as usize;
        while start < n {
            let dur = ((0.15 + 0.45 * rng.random::<f64>()) * fs) as usize;
            let f0 = 110.0 * 2f64.powf(rng.random_range(0..36) as f64 / 12.0);
            let stretch = 1.0 + 0.002 * rng.random::<f64>();
            let harmonics: Vec<(f64, f64)> = (1..=6)
                .map(|h| (rng.random::<f64>() / h as f64, rng.random::<f64>() * 2.0 * PI))
                .collect();
            let (vib_rate, vib_depth) = (4.0 + 3.0 * rng.random::<f64>(), 0.004 * rng.random::<f64>());
            let end = (start + dur + fs as usize / 5).min(n);
            let mut phase = 0.0;
            for (i, v) in out[start..end].iter_mut().enumerate() {
                let t = i as f64 / fs;
                phase += 2.0 * PI * f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * t).sin()) / fs;
                let env = (t * 30.0).min(1.0) * (-3.0 * t).exp();
                let tone: f64 = harmonics
                    .iter()
                    .enumerate()
                    .map(|(h, (a, p))| a * (phase * (h + 1) as f64 * stretch.powi(h as i32) + p).sin())
                    .sum();
                *v += 0.15 * env * tone;
            }
            start += dur;
        }
    }
    out
}

/// Kick, snare and hat patterns with per-bar variation, loose timing,
/// random velocities and a faint noise bed.
pub fn drum_loop(seconds: f64, rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples(seconds, rate);
    let fs = f64::from(rate);
    let step = 0.125 * fs;
    let mut out: Vec<f64> = (0..n).map(|_| 0.004 * (2.0 * rng.random::<f64>() - 1.0)).collect();
    let patterns = [[1u8, 4, 2, 4, 1, 1, 2, 4], [1, 4, 2, 1, 4, 1, 2, 2], [1, 0, 2, 4, 1, 4, 2, 4]];
    let mut idx = 0usize;
    let mut pattern = patterns[0];
    loop {
        if idx.is_multiple_of(8) {
            pattern = patterns[rng.random_range(0..patterns.len())];
        }
        let jitter = (rng.random::<f64>() - 0.5) * 0.01 * fs;
        let pos = (idx as f64 * step + jitter).max(0.0) as usize;
        if pos >= n {
            break;
        }
        let kind = pattern[idx % 8];
        let vel = 0.4 + 0.6 * rng.random::<f64>();
        let tune = 0.9 + 0.2 * rng.random::<f64>();
        let len = (0.25 * fs) as usize;
        for i in 0..len.min(n - pos) {
            let t = i as f64 / fs;
            let v = match kind {
                0 => 0.0,
                1 => (2.0 * PI * tune * (50.0 + 100.0 * (-30.0 * t).exp()) * t).sin() * (-12.0 * t).exp(),
                2 => {
                    (2.0 * rng.random::<f64>() - 1.0) * (-25.0 * t).exp() * 0.6
                        + (2.0 * PI * 190.0 * tune * t).sin() * (-20.0 * t).exp() * 0.4
                }
                _ => (2.0 * rng.random::<f64>() - 1.0) * (-80.0 * t).exp() * 0.3,
            };
            out[pos + i] += 0.5 * vel * v;
        }
        idx += 1;
    }
    out
}

/// Random linear chirps over a low-passed noise bed.
pub fn chirp_noise(seconds: f64, rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples(seconds, rate);
    let fs = f64::from(rate);
    let mut lp = 0.0;
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            lp += 0.05 * ((2.0 * rng.random::<f64>() - 1.0) - lp);
            0.2 * lp
        })
        .collect();
    let mut start = 0;
    while start < n {
        let dur = ((0.5 + rng.random::<f64>()) * fs) as usize;
        let f_start = 200.0 + 2000.0 * rng.random::<f64>();
        let f_end = 200.0 + 2000.0 * rng.random::<f64>();
        let end = (start + dur).min(n);
        let total = dur as f64 / fs;
        for (i, v) in out[start..end].iter_mut().enumerate() {
            let t = i as f64 / fs;
            let phase = 2.0 * PI * (f_start * t + 0.5 * (f_end - f_start) / total * t * t);
            let env = (PI * t / total).sin();
            *v += 0.4 * env * phase.sin();
        }
        start += dur;
    }
    out
}

/// Noise through two moving resonances with a syllable-rate envelope.
pub fn speech_like(seconds: f64, rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples(seconds, rate);
    let fs = f64::from(rate);
    let mut out = vec![0.0; n];
    let mut state = [[0.0f64; 2]; 2];
    let mut syllable_end = 0;
    let mut formants = [500.0, 1500.0];
    let mut syllable_len = 1;
    let mut syllable_start = 0;
    for (i, v) in out.iter_mut().enumerate() {
        if i >= syllable_end {
            syllable_start = i;
            syllable_len = ((0.12 + 0.2 * rng.random::<f64>()) * fs) as usize;
            syllable_end = i + syllable_len;
            formants = [300.0 + 600.0 * rng.random::<f64>(), 900.0 + 1600.0 * rng.random::<f64>()];
        }
        let x = 2.0 * rng.random::<f64>() - 1.0;
        let mut y = 0.0;
        for (f, s) in formants.iter().zip(state.iter_mut()) {
            // two-pole resonator
            let r = 0.995;
            let c = 2.0 * r * (2.0 * PI * f / fs).cos();
            let o = x * (1.0 - r) + c * s[0] - r * r * s[1];
            s[1] = s[0];
            s[0] = o;
            y += o;
        }
        let phase = (i - syllable_start) as f64 / syllable_len as f64;
        *v = 0.5 * y * (PI * phase).sin().powi(2);
    }
    out
}

/// `times` back-to-back copies of `s`.
pub fn repeat(s: &[f64], times: usize) -> Vec<f64> {
    s.repeat(times)
}
