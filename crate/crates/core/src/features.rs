//! Per-frame similarity features: a clipped, peak-normalized dB spectrogram
//! stacked over a smoothed relative instantaneous frequency.
//!
//! Only the non-negative frequency rows `0..=M/2` are stored. Rows strictly
//! between DC and Nyquist carry weight 2 in [`FeatureMatrix::distance`], which
//! makes the distance equal to the one over all `M` channels (the negative
//! frequency rows mirror the positive ones for real input).

use serde::{Deserialize, Serialize};

use crate::audio_io::{self, AudioBuffer, GapSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::stft::{self, CoefficientKind, CoefficientMatrix, StftParams, WindowKind};

/// Magnitude floor applied before taking logarithms.
pub const MAGNITUDE_FLOOR: f64 = 1e-10;

/// Frame-major real matrix: `rows` values per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameGrid {
    rows: usize,
    frames: usize,
    data: Vec<f64>,
}

impl FrameGrid {
    pub fn zeros(rows: usize, frames: usize) -> Self {
        Self {
            rows,
            frames,
            data: vec![0.0; rows * frames],
        }
    }

    pub fn from_data(rows: usize, frames: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * frames {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {rows} x {frames}",
                data.len()
            )));
        }
        Ok(Self { rows, frames, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn get(&self, m: usize, n: usize) -> f64 {
        self.data[n * self.rows + m]
    }

    pub fn set(&mut self, m: usize, n: usize, v: f64) {
        self.data[n * self.rows + m] = v;
    }

    pub fn column(&self, n: usize) -> &[f64] {
        &self.data[n * self.rows..(n + 1) * self.rows]
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }
}

#[inline]
fn level_db(magnitude: f64) -> f64 {
    20.0 * magnitude.max(MAGNITUDE_FLOOR).log10()
}

#[inline]
fn clip_db(level: f64, peak: f64, range: f64) -> f64 {
    let v = (level - peak + range) / range;
    if v > 0.0 { v } else { 0.0 }
}

fn check_range(range: f64) -> Result<()> {
    if range > 0.0 && range.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidRange(range))
    }
}

/// `F1 = ((S_dB - max S_dB + t_s) / t_s)_+` over the stored rows of `c`.
/// Silent coefficients (at or below [`MAGNITUDE_FLOOR`]) map to 0.
pub fn db_feature(c: &CoefficientMatrix, range: f64) -> Result<FrameGrid> {
    check_range(range)?;
    let (rows, frames) = (c.bins(), c.frames());
    let mut grid = FrameGrid::zeros(rows, frames);
    for n in 0..frames {
        for (m, z) in c.column(n).iter().enumerate() {
            grid.set(m, n, z.norm());
        }
    }
    normalize_db_in_place(&mut grid.data, rows, 0, rows, range);
    Ok(grid)
}

/// Converts the magnitude block `[offset, offset + width)` of every
/// `stride`-long frame into clipped dB features.
fn normalize_db_in_place(data: &mut [f64], stride: usize, offset: usize, width: usize, range: f64) {
    let mut peak_mag = 0.0f64;
    for frame in data.chunks_exact(stride) {
        for &v in &frame[offset..offset + width] {
            peak_mag = peak_mag.max(v);
        }
    }
    if peak_mag <= MAGNITUDE_FLOOR {
        for frame in data.chunks_exact_mut(stride) {
            frame[offset..offset + width].iter_mut().for_each(|v| *v = 0.0);
        }
        return;
    }
    let peak = level_db(peak_mag);
    for frame in data.chunks_exact_mut(stride) {
        for v in &mut frame[offset..offset + width] {
            *v = if *v <= MAGNITUDE_FLOOR {
                0.0
            } else {
                clip_db(level_db(*v), peak, range)
            };
        }
    }
}

/// Symmetric Hann kernel of `len` points normalized to unit sum.
pub fn smoothing_kernel(len: usize) -> Vec<f64> {
    if len <= 2 {
        return vec![1.0 / len.max(1) as f64; len.max(1)];
    }
    let w: Vec<f64> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (len - 1) as f64).cos())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Same-size convolution with zero extension; output `n` is aligned with
/// input `n + len/2 - j` for tap `j`.
fn convolve_same(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let c = (kernel.len() / 2) as isize;
    let n = x.len() as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let idx = i + c - j as isize;
                    if (0..n).contains(&idx) { k * x[idx as usize] } else { 0.0 }
                })
                .sum()
        })
        .collect()
}

#[inline]
fn relative_frequency(c: rustfft::num_complex::Complex64, ctd: rustfft::num_complex::Complex64) -> f64 {
    (ctd / c).im
}

/// Smoothed, normalized relative instantaneous frequency
/// `F2 = -(r * v) / max|r|` with `r = Im(C_td / C)` masked to `F1 > 0`.
pub fn relative_if_feature(
    c: &CoefficientMatrix,
    ctd: &CoefficientMatrix,
    f1: &FrameGrid,
    smoothing_length: usize,
) -> Result<FrameGrid> {
    if c.bins() != ctd.bins() || c.frames() != ctd.frames() {
        return Err(Error::DimensionMismatch("C and C_td differ in shape".into()));
    }
    if ctd.kind() != CoefficientKind::TimeDerivative || c.kind() != CoefficientKind::Plain {
        return Err(Error::ParamMismatch("expected plain and derivative coefficients".into()));
    }
    if f1.rows() != c.bins() || f1.frames() != c.frames() {
        return Err(Error::DimensionMismatch("F1 does not match coefficients".into()));
    }
    let (rows, frames) = (c.bins(), c.frames());
    // per frame: [F1 ; r]
    let mut work = vec![0.0; 2 * rows * frames];
    for (n, out) in work.chunks_exact_mut(2 * rows).enumerate() {
        let (cc, cd) = (c.column(n), ctd.column(n));
        out[..rows].copy_from_slice(f1.column(n));
        for m in 0..rows {
            if out[m] > 0.0 {
                out[rows + m] = relative_frequency(cc[m], cd[m]);
            }
        }
    }
    smooth_relative_if_in_place(&mut work, 2 * rows, rows, smoothing_length);
    let data = work
        .chunks_exact(2 * rows)
        .flat_map(|f| f[rows..].iter().copied())
        .collect();
    FrameGrid::from_data(rows, frames, data)
}

/// Frames are laid out as `[F1 ; r]` with `width` rows each. Replaces the raw
/// relative frequencies `r` by the smoothed, normalized, F1-masked F2.
fn smooth_relative_if_in_place(data: &mut [f64], stride: usize, width: usize, smoothing_length: usize) {
    let offset = width;
    let frames = data.len() / stride;
    let t_p = data
        .chunks_exact(stride)
        .flat_map(|f| f[offset..offset + width].iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let kernel = smoothing_kernel(smoothing_length.max(1));
    let rows: Vec<Vec<f64>> = {
        let data = &*data;
        par::map_range(0..width, |m| {
            let raw: Vec<f64> = (0..frames).map(|n| data[n * stride + offset + m]).collect();
            convolve_same(&raw, &kernel)
        })
    };
    for (m, row) in rows.into_iter().enumerate() {
        for (n, v) in row.into_iter().enumerate() {
            let keep = data[n * stride + m] > 0.0;
            data[n * stride + offset + m] = if keep && t_p > 0.0 { -v / t_p } else { 0.0 };
        }
    }
}

/// Parameters of the feature computation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    pub max_rate: f64,
    pub hop: usize,
    pub channels: usize,
    pub window_length: usize,
    pub window: WindowKind,
    pub db_range: f64,
    pub phase_weight: f64,
    pub smoothing_length: usize,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            max_rate: 12000.0,
            hop: 128,
            channels: 1024,
            window_length: 1024,
            window: WindowKind::Itersine,
            db_range: 50.0,
            phase_weight: 1.5,
            smoothing_length: 8,
        }
    }
}

/// Time layout of feature frames relative to the undecimated signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameLayout {
    /// Hop in decimated samples.
    pub hop: usize,
    pub decimation: usize,
    /// Analysis window length in decimated samples.
    pub window_length: usize,
    pub sample_rate: u32,
    /// Length of the undecimated signal.
    pub signal_length: usize,
}

impl FrameLayout {
    /// Effective hop in undecimated samples.
    pub fn effective_hop(&self) -> usize {
        self.hop * self.decimation
    }

    /// Half the analysis window in undecimated samples.
    pub fn half_window(&self) -> usize {
        self.window_length.div_ceil(2) * self.decimation
    }

    pub fn frame_rate(&self) -> f64 {
        f64::from(self.sample_rate) / self.effective_hop() as f64
    }

    /// Whether the support of frame `n` touches `[start, end)`.
    pub fn frame_touches(&self, n: usize, start: usize, end: usize) -> bool {
        let center = (n * self.effective_hop()) as isize;
        let half = self.half_window() as isize;
        center - half < end as isize && center + half > start as isize
    }
}

/// Stacked feature vectors `f_n = (F1[., n], lambda F2[., n])`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    frames: usize,
    data: Vec<f64>,
    weights: Vec<f64>,
    valid: Vec<bool>,
    layout: Option<FrameLayout>,
}

impl FeatureMatrix {
    /// Feature vectors with unit distance weights and no time layout.
    pub fn from_vectors(vectors: &[Vec<f64>]) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch("feature vectors differ in length".into()));
        }
        Ok(Self {
            dim,
            frames: vectors.len(),
            data: vectors.concat(),
            weights: vec![1.0; dim],
            valid: vec![true; vectors.len()],
            layout: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    /// All feature vectors, frame-major.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn vector(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_valid(&self, n: usize) -> bool {
        self.valid[n]
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    pub fn layout(&self) -> Option<&FrameLayout> {
        self.layout.as_ref()
    }

    /// Weighted squared Euclidean distance between frames `l` and `k`.
    pub fn distance(&self, l: usize, k: usize) -> f64 {
        self.vector(l)
            .iter()
            .zip(self.vector(k))
            .zip(&self.weights)
            .map(|((a, b), w)| w * (a - b) * (a - b))
            .sum()
    }

    /// Marks `n` invalid and zeroes its vector.
    pub fn invalidate_frame(&mut self, n: usize) {
        self.valid[n] = false;
        self.data[n * self.dim..(n + 1) * self.dim].fill(0.0);
    }

    pub fn set_layout(&mut self, layout: FrameLayout) {
        self.layout = Some(layout);
    }

    /// Splits back into the F1 block and the (unscaled by lambda) F2 block.
    pub fn blocks(&self, phase_weight: f64) -> (FrameGrid, FrameGrid) {
        let half = self.dim / 2;
        let mut f1 = FrameGrid::zeros(half, self.frames);
        let mut f2 = FrameGrid::zeros(half, self.frames);
        for n in 0..self.frames {
            let v = self.vector(n);
            for m in 0..half {
                f1.set(m, n, v[m]);
                f2.set(m, n, if phase_weight != 0.0 { v[half + m] / phase_weight } else { 0.0 });
            }
        }
        (f1, f2)
    }
}

/// Weights that turn half-spectrum rows into full-spectrum distances.
fn half_spectrum_weights(bins: usize, channels: usize) -> Vec<f64> {
    (0..bins)
        .map(|m| if m == 0 || 2 * m == channels { 1.0 } else { 2.0 })
        .collect()
}

/// Stacks `F1` over `phase_weight * F2`.
pub fn assemble(f1: &FrameGrid, f2: &FrameGrid, phase_weight: f64, channels: usize) -> Result<FeatureMatrix> {
    if f1.rows() != f2.rows() || f1.frames() != f2.frames() {
        return Err(Error::DimensionMismatch("F1 and F2 differ in shape".into()));
    }
    let rows = f1.rows();
    let dim = 2 * rows;
    let mut data = vec![0.0; dim * f1.frames()];
    for (n, out) in data.chunks_exact_mut(dim).enumerate() {
        out[..rows].copy_from_slice(f1.column(n));
        for (o, v) in out[rows..].iter_mut().zip(f2.column(n)) {
            *o = phase_weight * v;
        }
    }
    let w = half_spectrum_weights(rows, channels);
    Ok(FeatureMatrix {
        dim,
        frames: f1.frames(),
        data,
        weights: [w.clone(), w].concat(),
        valid: vec![true; f1.frames()],
        layout: None,
    })
}

/// Marks every frame whose analysis window overlaps the gap as invalid.
pub fn invalidate_gap(fm: &mut FeatureMatrix, gap: &GapSpec) -> Result<()> {
    let layout = fm
        .layout
        .ok_or_else(|| Error::ParamMismatch("feature matrix has no frame layout".into()))?;
    if gap.end() > layout.signal_length {
        return Err(Error::GapOutOfBounds {
            start: gap.start(),
            end: gap.end(),
            len: layout.signal_length,
        });
    }
    for n in 0..fm.frames {
        if layout.frame_touches(n, gap.start(), gap.end()) {
            fm.invalidate_frame(n);
        }
    }
    Ok(())
}

/// Number of feature frames for a decimated signal of `len` samples.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop)
}

/// Full feature extraction on the mono downmix of `buf`. Gap samples are
/// zeroed before analysis and frames touching any gap are invalidated.
pub fn extract_features(buf: &AudioBuffer, gaps: &[GapSpec], params: &FeatureParams) -> Result<FeatureMatrix> {
    check_range(params.db_range)?;
    for gap in gaps {
        if gap.end() > buf.len() {
            return Err(Error::GapOutOfBounds {
                start: gap.start(),
                end: gap.end(),
                len: buf.len(),
            });
        }
    }
    let mono = audio_io::downmix_mono(buf);
    let mut samples = mono.into_channels().pop().expect("one channel");
    for gap in gaps {
        samples[gap.start()..gap.end()].fill(0.0);
    }
    let zeroed = AudioBuffer::mono(samples, buf.sample_rate())?;
    let dec = audio_io::decimate(&zeroed, params.max_rate)?;

    let window = params.window.build(params.window_length)?;
    let dwindow = stft::derivative_window(&window);
    let len = dec.samples.len();
    let sp = StftParams::with_min_length(
        params.window_length,
        params.hop,
        params.channels,
        len,
        len + params.window_length,
    )?;
    let frames = frame_count(len, params.hop);
    let (c, ctd) = stft::stft_pair(&dec.samples, &sp, &window, &dwindow)?;

    let bins = sp.bins();
    let dim = 2 * bins;
    // raw block layout per frame: [|C| ; Im(C_td / C)], normalized in place
    let mut data = vec![0.0; dim * frames];
    par::for_each_chunk_mut(&mut data, dim, |n, out| {
        let (cc, cd) = (c.column(n), ctd.column(n));
        for m in 0..bins {
            out[m] = cc[m].norm();
            out[bins + m] = if cc[m].norm() > MAGNITUDE_FLOOR {
                relative_frequency(cc[m], cd[m])
            } else {
                0.0
            };
        }
    });
    drop((c, ctd));
    normalize_db_in_place(&mut data, dim, 0, bins, params.db_range);
    for frame in data.chunks_exact_mut(dim) {
        for m in 0..bins {
            if frame[m] <= 0.0 {
                frame[bins + m] = 0.0;
            }
        }
    }
    smooth_relative_if_in_place(&mut data, dim, bins, params.smoothing_length);
    if params.phase_weight != 1.0 {
        for frame in data.chunks_exact_mut(dim) {
            frame[bins..].iter_mut().for_each(|v| *v *= params.phase_weight);
        }
    }

    let w = half_spectrum_weights(bins, params.channels);
    let mut fm = FeatureMatrix {
        dim,
        frames,
        data,
        weights: [w.clone(), w].concat(),
        valid: vec![true; frames],
        layout: Some(FrameLayout {
            hop: params.hop,
            decimation: dec.factor,
            window_length: params.window_length,
            sample_rate: buf.sample_rate(),
            signal_length: buf.len(),
        }),
    };
    for gap in gaps {
        invalidate_gap(&mut fm, gap)?;
    }
    Ok(fm)
}
