//! WAV input/output, channel downmix and anti-aliased integer decimation.

use std::f64::consts::PI;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// On-disk sample encoding, kept so output files match their input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SampleFormat {
    Pcm16,
    Pcm24,
    Float32,
}

impl SampleFormat {
    fn int_scale(self) -> Option<f64> {
        match self {
            SampleFormat::Pcm16 => Some(32768.0),
            SampleFormat::Pcm24 => Some(8_388_608.0),
            SampleFormat::Float32 => None,
        }
    }
}

/// Multichannel audio with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
    format: SampleFormat,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidRate(0.0));
        }
        let Some(first) = channels.first() else {
            return Err(Error::InvalidBuffer("no channels".into()));
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::EmptySignal);
        }
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidBuffer("channels differ in length".into()));
        }
        if channels.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidBuffer("non-finite sample".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
            format: SampleFormat::Float32,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn with_format(mut self, format: SampleFormat) -> Self {
        self.format = format;
        self
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &[f64] {
        &self.channels[i]
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn format(&self) -> SampleFormat {
        self.format
    }

    pub fn duration_secs(&self) -> f64 {
        self.len() as f64 / f64::from(self.sample_rate)
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }
}

/// A lost interval `[start, end)` in samples of the undecimated signal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct GapSpec {
    start: usize,
    end: usize,
}

impl GapSpec {
    pub fn new(start: usize, end: usize, signal_len: usize) -> Result<Self> {
        if end <= start {
            return Err(Error::InvalidGap {
                start,
                end,
                len: signal_len,
            });
        }
        if end > signal_len {
            return Err(Error::GapOutOfBounds {
                start,
                end,
                len: signal_len,
            });
        }
        Ok(Self { start, end })
    }

    /// Builds a gap from times in seconds, rounding to the nearest sample.
    pub fn from_seconds(start: f64, end: f64, sample_rate: u32, signal_len: usize) -> Result<Self> {
        if !(start.is_finite() && end.is_finite()) || start < 0.0 || end < 0.0 {
            return Err(Error::InvalidGap {
                start: 0,
                end: 0,
                len: signal_len,
            });
        }
        let rate = f64::from(sample_rate);
        Self::new(
            (start * rate).round() as usize,
            (end * rate).round() as usize,
            signal_len,
        )
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn end(&self) -> usize {
        self.end
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains(&self, sample: usize) -> bool {
        (self.start..self.end).contains(&sample)
    }

    /// Frame indices `(d_s, d_e)` bracketing the gap at the effective hop.
    pub fn frame_bounds(&self, effective_hop: usize) -> (usize, usize) {
        (self.start / effective_hop, self.end.div_ceil(effective_hop))
    }
}

/// Reads a 16/24-bit PCM or 32-bit float WAV file with one or two channels.
pub fn read_audio(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let nch = usize::from(spec.channels);
    if !(1..=2).contains(&nch) {
        return Err(Error::UnsupportedFormat(format!("{nch} channels")));
    }
    let format = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => SampleFormat::Pcm16,
        (hound::SampleFormat::Int, 24) => SampleFormat::Pcm24,
        (hound::SampleFormat::Float, 32) => SampleFormat::Float32,
        (kind, bits) => {
            return Err(Error::UnsupportedFormat(format!("{kind:?} with {bits} bits")));
        }
    };
    let interleaved: Vec<f64> = match format.int_scale() {
        Some(scale) => reader
            .samples::<i32>()
            .map(|s| s.map(|v| f64::from(v) / scale))
            .collect::<Result<_, _>>()?,
        None => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>()?,
    };
    if interleaved.is_empty() {
        return Err(Error::EmptySignal);
    }
    let frames = interleaved.len() / nch;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    for frame in interleaved.chunks_exact(nch) {
        for (c, &v) in frame.iter().enumerate() {
            channels[c].push(v);
        }
    }
    Ok(AudioBuffer::new(channels, spec.sample_rate)?.with_format(format))
}

/// Writes `buf` using its recorded sample format. Integer formats round to the
/// nearest code and clip to the representable range.
pub fn write_audio(path: impl AsRef<Path>, buf: &AudioBuffer) -> Result<()> {
    let (bits, sample_format) = match buf.format {
        SampleFormat::Pcm16 => (16, hound::SampleFormat::Int),
        SampleFormat::Pcm24 => (24, hound::SampleFormat::Int),
        SampleFormat::Float32 => (32, hound::SampleFormat::Float),
    };
    let spec = hound::WavSpec {
        channels: buf.num_channels() as u16,
        sample_rate: buf.sample_rate,
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    match buf.format.int_scale() {
        Some(scale) => {
            let (lo, hi) = (-scale, scale - 1.0);
            for i in 0..buf.len() {
                for ch in &buf.channels {
                    writer.write_sample((ch[i] * scale).round().clamp(lo, hi) as i32)?;
                }
            }
        }
        None => {
            for i in 0..buf.len() {
                for ch in &buf.channels {
                    writer.write_sample(ch[i] as f32)?;
                }
            }
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Averages all channels into one.
pub fn downmix_mono(buf: &AudioBuffer) -> AudioBuffer {
    if buf.num_channels() == 1 {
        return buf.clone();
    }
    let scale = 1.0 / buf.num_channels() as f64;
    let mono = (0..buf.len())
        .map(|i| buf.channels.iter().map(|c| c[i]).sum::<f64>() * scale)
        .collect();
    AudioBuffer {
        channels: vec![mono],
        sample_rate: buf.sample_rate,
        format: buf.format,
    }
}

/// Decimated analysis signal. Its rate is `source_rate / factor`, kept as a
/// ratio so non-integer rates stay exact.
#[derive(Clone, Debug, PartialEq)]
pub struct Decimated {
    pub samples: Vec<f64>,
    pub factor: usize,
    pub source_rate: u32,
}

impl Decimated {
    pub fn rate(&self) -> f64 {
        f64::from(self.source_rate) / self.factor as f64
    }
}

/// Decimation factor `ceil(rate / max_rate)`.
pub fn decimation_factor(sample_rate: u32, max_rate: f64) -> Result<usize> {
    if !(max_rate > 0.0 && max_rate.is_finite()) {
        return Err(Error::InvalidRate(max_rate));
    }
    Ok(((f64::from(sample_rate) / max_rate).ceil() as usize).max(1))
}

/// Low-pass filters and keeps every `d`-th sample of the first channel, where
/// `d = ceil(rate / max_rate)`. The filter is a zero-phase (delay-compensated)
/// Kaiser-windowed sinc with cutoff at the output Nyquist frequency.
pub fn decimate(buf: &AudioBuffer, max_rate: f64) -> Result<Decimated> {
    let factor = decimation_factor(buf.sample_rate, max_rate)?;
    let x = buf.channel(0);
    if factor == 1 {
        return Ok(Decimated {
            samples: x.to_vec(),
            factor,
            source_rate: buf.sample_rate,
        });
    }
    let taps = antialias_filter(factor);
    let half = (taps.len() - 1) / 2;
    let out_len = x.len().div_ceil(factor);
    let samples = crate::par::map_range(0..out_len, |j| {
        let center = j * factor;
        // y[j] = sum_k h[k] x[center + half - k]
        let lo = (center + half + 1).saturating_sub(x.len());
        let hi = (center + half).min(taps.len() - 1);
        let mut acc = 0.0;
        for k in lo..=hi {
            acc += taps[k] * x[center + half - k];
        }
        acc
    });
    Ok(Decimated {
        samples,
        factor,
        source_rate: buf.sample_rate,
    })
}

const STOPBAND_DB: f64 = 60.0;

/// Odd-length linear-phase low-pass for decimation by `factor`: cutoff
/// `pi / factor`, transition width `pi / (10 factor)` rad/sample, unit DC gain.
pub fn antialias_filter(factor: usize) -> Vec<f64> {
    let d = factor as f64;
    let transition = PI / (10.0 * d);
    let beta = 0.1102 * (STOPBAND_DB - 8.7);
    let mut len = ((STOPBAND_DB - 8.0) / (2.285 * transition)).ceil() as usize + 1;
    if len.is_multiple_of(2) {
        len += 1;
    }
    let center = (len - 1) as f64 / 2.0;
    let cutoff = 1.0 / d;
    let norm = bessel_i0(beta);
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let t = n as f64 - center;
            let sinc = if t == 0.0 {
                cutoff
            } else {
                (PI * cutoff * t).sin() / (PI * t)
            };
            let r = t / center;
            let kaiser = bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * kaiser
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}
