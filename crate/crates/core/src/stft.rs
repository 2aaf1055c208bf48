//! Short-time Fourier analysis and synthesis on tight Itersine frames.
//!
//! Conventions used throughout the crate:
//!
//! * Frame `n` is centered at sample `n * hop`; window sample `j` sits at
//!   offset `j - window_length / 2` from the center, so the window peak
//!   `g[L_w / 2]` lands exactly on the frame center.
//! * [`stft`] is circular over the padded signal and keeps the absolute phase
//!   reference `C[m, n] = sum_l s[l] g[l - n a] exp(-2 pi i m l / M)`.
//! * [`FrameTransform`] works frame by frame on arbitrary centers with a
//!   frame-local phase reference, so columns can be moved between positions
//!   before synthesis (used by the splice cross-fades).
//!
//! Only the `M / 2 + 1` non-negative frequency rows are stored; the rest follow
//! from conjugate symmetry of real input.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;

const FRAMES_PER_TASK: usize = 64;

/// Window shapes supported for analysis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Itersine,
}

impl WindowKind {
    pub fn build(self, len: usize) -> Result<Vec<f64>> {
        match self {
            WindowKind::Itersine => itersine_window(len),
        }
    }
}

/// `g[l] = sin(pi/2 * cos^2(pi (l - L/2) / L))`, peak 1 at `l = L/2`.
pub fn itersine_window(len: usize) -> Result<Vec<f64>> {
    if len == 0 || !len.is_multiple_of(2) {
        return Err(Error::InvalidLength(len));
    }
    let half = (len / 2) as f64;
    Ok((0..len)
        .map(|l| {
            let c = (PI * (l as f64 - half) / len as f64).cos();
            (PI / 2.0 * c * c).sin()
        })
        .collect())
}

/// Spectral derivative of the periodized window, in units of 1/sample.
pub fn derivative_window(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let freq = if 2 * k < n {
            k as f64
        } else if 2 * k == n {
            0.0
        } else {
            k as f64 - n as f64
        };
        *c *= Complex64::new(0.0, 2.0 * PI * freq / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

/// Geometry of a discrete STFT.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StftParams {
    window_length: usize,
    hop: usize,
    channels: usize,
    signal_length: usize,
    padded_length: usize,
}

impl StftParams {
    /// The transform length is `signal_length` zero-padded to a multiple of
    /// `lcm(hop, channels)` that is at least `padded_min`.
    pub fn with_min_length(
        window_length: usize,
        hop: usize,
        channels: usize,
        signal_length: usize,
        padded_min: usize,
    ) -> Result<Self> {
        if window_length == 0 || !window_length.is_multiple_of(2) {
            return Err(Error::InvalidLength(window_length));
        }
        if hop == 0 {
            return Err(Error::ParamMismatch("hop must be positive".into()));
        }
        if channels < window_length {
            return Err(Error::ParamMismatch(format!(
                "{channels} channels < window length {window_length}"
            )));
        }
        let unit = hop / gcd(hop, channels) * channels;
        let target = signal_length.max(padded_min).max(window_length).max(1);
        Ok(Self {
            window_length,
            hop,
            channels,
            signal_length,
            padded_length: target.div_ceil(unit) * unit,
        })
    }

    pub fn new(window_length: usize, hop: usize, channels: usize, signal_length: usize) -> Result<Self> {
        Self::with_min_length(window_length, hop, channels, signal_length, 0)
    }

    pub fn window_length(&self) -> usize {
        self.window_length
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn signal_length(&self) -> usize {
        self.signal_length
    }

    pub fn padded_length(&self) -> usize {
        self.padded_length
    }

    pub fn frames(&self) -> usize {
        self.padded_length / self.hop
    }

    pub fn bins(&self) -> usize {
        self.channels / 2 + 1
    }

    /// `sum_n g[l - n a]^2`, which must not depend on `l` for synthesis to
    /// invert analysis.
    pub fn frame_constant(&self, window: &[f64]) -> Result<f64> {
        if window.len() != self.window_length {
            return Err(Error::ParamMismatch(format!(
                "window has {} samples, expected {}",
                window.len(),
                self.window_length
            )));
        }
        frame_constant(window, self.hop)
    }
}

/// Returns the overlap sum of squared windows at hop `hop` if it is constant.
pub fn frame_constant(window: &[f64], hop: usize) -> Result<f64> {
    if hop == 0 || !window.len().is_multiple_of(hop) {
        return Err(Error::NotInvertible(format!(
            "hop {hop} does not divide window length {}",
            window.len()
        )));
    }
    let sums: Vec<f64> = (0..hop)
        .map(|r| window.iter().skip(r).step_by(hop).map(|g| g * g).sum())
        .collect();
    let c = sums[0];
    if c.is_nan() || c <= 0.0 || sums.iter().any(|s| (s - c).abs() > 1e-9 * c) {
        return Err(Error::NotInvertible("overlapping squared windows are not constant".into()));
    }
    Ok(c)
}

/// Which window produced a coefficient matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoefficientKind {
    Plain,
    TimeDerivative,
}

/// STFT coefficients, frame-major, non-negative frequencies only.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    params: StftParams,
    kind: CoefficientKind,
    data: Vec<Complex64>,
}

impl CoefficientMatrix {
    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn kind(&self) -> CoefficientKind {
        self.kind
    }

    pub fn frames(&self) -> usize {
        self.params.frames()
    }

    pub fn bins(&self) -> usize {
        self.params.bins()
    }

    /// Coefficient for any channel `m < M`, using conjugate symmetry above M/2.
    pub fn get(&self, m: usize, n: usize) -> Complex64 {
        let bins = self.bins();
        let mm = self.params.channels;
        if m < bins {
            self.data[n * bins + m]
        } else {
            self.data[n * bins + (mm - m)].conj()
        }
    }

    /// Stored rows `0..=M/2` of frame `n`.
    pub fn column(&self, n: usize) -> &[Complex64] {
        let bins = self.bins();
        &self.data[n * bins..(n + 1) * bins]
    }

    pub fn from_columns(params: StftParams, kind: CoefficientKind, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != params.frames() * params.bins() {
            return Err(Error::DimensionMismatch(format!(
                "{} coefficients for {} x {}",
                data.len(),
                params.bins(),
                params.frames()
            )));
        }
        Ok(Self { params, kind, data })
    }
}

fn check_inputs(signal: &[f64], params: &StftParams, window: &[f64]) -> Result<()> {
    if window.len() != params.window_length {
        return Err(Error::ParamMismatch(format!(
            "window has {} samples, expected {}",
            window.len(),
            params.window_length
        )));
    }
    if signal.len() > params.padded_length {
        return Err(Error::ParamMismatch(format!(
            "signal has {} samples, transform length is {}",
            signal.len(),
            params.padded_length
        )));
    }
    Ok(())
}

/// Circular sample index of window tap `j` for frame `n`.
#[inline]
fn tap_index(params: &StftParams, n: usize, j: usize) -> usize {
    let l = (n * params.hop + j) as isize - (params.window_length / 2) as isize;
    l.rem_euclid(params.padded_length as isize) as usize
}

/// Circular STFT of `signal` (implicitly zero-padded to the transform length).
pub fn stft(signal: &[f64], params: &StftParams, window: &[f64]) -> Result<CoefficientMatrix> {
    Ok(analyze_windows(signal, params, window, None)?.0)
}

/// STFTs with `window` and `dwindow` computed together. Both are real, so a
/// single complex FFT per frame carries both.
pub fn stft_pair(
    signal: &[f64],
    params: &StftParams,
    window: &[f64],
    dwindow: &[f64],
) -> Result<(CoefficientMatrix, CoefficientMatrix)> {
    check_inputs(signal, params, dwindow)?;
    let (c, ctd) = analyze_windows(signal, params, window, Some(dwindow))?;
    Ok((c, ctd.expect("derivative requested")))
}

fn analyze_windows(
    signal: &[f64],
    params: &StftParams,
    window: &[f64],
    dwindow: Option<&[f64]>,
) -> Result<(CoefficientMatrix, Option<CoefficientMatrix>)> {
    check_inputs(signal, params, window)?;
    let m = params.channels;
    let bins = params.bins();
    let frames = params.frames();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let mut plain = vec![Complex64::default(); frames * bins];
    let mut deriv = dwindow.map(|_| vec![Complex64::default(); frames * bins]);

    let fill = |first: usize, out: &mut [Complex64], out_d: Option<&mut [Complex64]>| {
        let mut buf = vec![Complex64::default(); m];
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        let count = out.len() / bins;
        let mut out_d = out_d;
        for i in 0..count {
            let n = first + i;
            buf.iter_mut().for_each(|c| *c = Complex64::default());
            for j in 0..params.window_length {
                let l = tap_index(params, n, j);
                let x = signal.get(l).copied().unwrap_or(0.0);
                let im = dwindow.map_or(0.0, |d| x * d[j]);
                buf[l % m] += Complex64::new(x * window[j], im);
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            let col = &mut out[i * bins..(i + 1) * bins];
            match out_d.as_deref_mut() {
                None => col.copy_from_slice(&buf[..bins]),
                Some(dcols) => {
                    let dcol = &mut dcols[i * bins..(i + 1) * bins];
                    for k in 0..bins {
                        let z = buf[k];
                        let zr = buf[(m - k) % m].conj();
                        col[k] = (z + zr) * 0.5;
                        dcol[k] = (z - zr) * Complex64::new(0.0, -0.5);
                    }
                }
            }
        }
    };

    let chunk = FRAMES_PER_TASK * bins;
    match deriv.as_mut() {
        None => par::for_each_chunk_mut(&mut plain, chunk, |ci, out| {
            fill(ci * FRAMES_PER_TASK, out, None)
        }),
        Some(d) => {
            // zip the two outputs chunk by chunk
            let mut pairs: Vec<(&mut [Complex64], &mut [Complex64])> =
                plain.chunks_mut(chunk).zip(d.chunks_mut(chunk)).collect();
            par::for_each_chunk_mut(&mut pairs, 1, |ci, p| {
                let (a, b) = &mut p[0];
                fill(ci * FRAMES_PER_TASK, a, Some(b));
            });
        }
    }

    let c = CoefficientMatrix {
        params: *params,
        kind: CoefficientKind::Plain,
        data: plain,
    };
    let ctd = deriv.map(|data| CoefficientMatrix {
        params: *params,
        kind: CoefficientKind::TimeDerivative,
        data,
    });
    Ok((c, ctd))
}

/// Inverse of [`stft`] via the canonical dual window `g / sum_n g[l - n a]^2`.
/// Returns `signal_length` samples.
pub fn istft(coeffs: &CoefficientMatrix, window: &[f64]) -> Result<Vec<f64>> {
    let params = coeffs.params;
    if coeffs.kind != CoefficientKind::Plain {
        return Err(Error::ParamMismatch("synthesis needs plain coefficients".into()));
    }
    let constant = params.frame_constant(window)?;
    let dual: Vec<f64> = window.iter().map(|g| g / constant).collect();
    let m = params.channels;
    let frames = params.frames();
    let lw = params.window_length;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(m);

    let chunks = frames.div_ceil(FRAMES_PER_TASK);
    let pieces = par::map_range(0..chunks, |ci| {
        let first = ci * FRAMES_PER_TASK;
        let last = (first + FRAMES_PER_TASK).min(frames);
        let mut buf = vec![Complex64::default(); m];
        let mut scratch = vec![Complex64::default(); ifft.get_inplace_scratch_len()];
        let mut out = vec![0.0; (last - first) * lw];
        for n in first..last {
            expand_half_spectrum(coeffs.column(n), &mut buf);
            ifft.process_with_scratch(&mut buf, &mut scratch);
            let seg = &mut out[(n - first) * lw..(n - first + 1) * lw];
            for j in 0..lw {
                let l = tap_index(&params, n, j);
                seg[j] = dual[j] * buf[l % m].re / m as f64;
            }
        }
        out
    });

    let mut signal = vec![0.0; params.padded_length];
    for (ci, piece) in pieces.iter().enumerate() {
        for (i, seg) in piece.chunks_exact(lw).enumerate() {
            let n = ci * FRAMES_PER_TASK + i;
            for (j, v) in seg.iter().enumerate() {
                signal[tap_index(&params, n, j)] += v;
            }
        }
    }
    signal.truncate(params.signal_length);
    Ok(signal)
}

fn expand_half_spectrum(half: &[Complex64], full: &mut [Complex64]) {
    let m = full.len();
    full[..half.len()].copy_from_slice(half);
    for k in half.len()..m {
        full[k] = half[m - k].conj();
    }
}

/// Single-frame analysis/synthesis at arbitrary frame centers with a
/// frame-local phase reference.
pub struct FrameTransform {
    window: Vec<f64>,
    dual: Vec<f64>,
    channels: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl FrameTransform {
    pub fn new(window: Vec<f64>, hop: usize, channels: usize) -> Result<Self> {
        if channels < window.len() {
            return Err(Error::ParamMismatch(format!(
                "{channels} channels < window length {}",
                window.len()
            )));
        }
        let constant = frame_constant(&window, hop)?;
        let dual = window.iter().map(|g| g / constant).collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            forward: planner.plan_fft_forward(channels),
            inverse: planner.plan_fft_inverse(channels),
            window,
            dual,
            channels,
        })
    }

    pub fn window_length(&self) -> usize {
        self.window.len()
    }

    pub fn bins(&self) -> usize {
        self.channels / 2 + 1
    }

    /// Analysis column of the frame centered at `center`; samples outside
    /// `signal` read as zero.
    pub fn analyze(&self, signal: &[f64], center: isize) -> Vec<Complex64> {
        let half = (self.window.len() / 2) as isize;
        let mut buf = vec![Complex64::default(); self.channels];
        for (j, &g) in self.window.iter().enumerate() {
            let l = center - half + j as isize;
            if l >= 0 && (l as usize) < signal.len() {
                buf[j] = Complex64::new(signal[l as usize] * g, 0.0);
            }
        }
        self.forward.process(&mut buf);
        buf.truncate(self.bins());
        buf
    }

    /// Overlap-adds the synthesis of `column` centered at `center` into `out`,
    /// where `out[0]` corresponds to sample position `origin`.
    pub fn synthesize_add(&self, column: &[Complex64], center: isize, out: &mut [f64], origin: isize) {
        let mut buf = vec![Complex64::default(); self.channels];
        expand_half_spectrum(column, &mut buf);
        self.inverse.process(&mut buf);
        let half = (self.window.len() / 2) as isize;
        let scale = 1.0 / self.channels as f64;
        for (j, &d) in self.dual.iter().enumerate() {
            let idx = center - half + j as isize - origin;
            if idx >= 0 && (idx as usize) < out.len() {
                out[idx as usize] += d * buf[j].re * scale;
            }
        }
    }
}
