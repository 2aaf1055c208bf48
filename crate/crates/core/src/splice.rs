//! Sample-accurate splicing.
//!
//! Frame-level transitions are refined to sample positions by maximizing the
//! inner product with the waveform at the other end of the jump, then the
//! signal is cut and joined with time-frequency cross-fades. Each cross-fade
//! spans `2 L~w` samples around a junction: frames left of the junction are
//! analyzed from the signal before the jump, frames at or right of it from the
//! signal after the jump, and the combined coefficients are resynthesized.

use serde::Serialize;

use crate::audio_io::{AudioBuffer, GapSpec};
use crate::error::{Error, Result};
use crate::par;
use crate::stft::{FrameTransform, WindowKind};
use crate::transition::TransitionPair;

/// Sample-level description of one transition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SplicePlan {
    /// Effective hop `a~` in samples.
    pub hop: usize,
    /// Half cross-fade length `L~w` in samples.
    pub half_window: usize,
    pub l0: usize,
    pub k0: usize,
    pub l1: usize,
    pub k1: usize,
    /// Refined cut-out start `l~0`.
    pub cut_start: usize,
    /// Refined cut-out end `k~1`.
    pub cut_end: usize,
}

impl SplicePlan {
    /// Plan without refinement: cuts sit on the frame grid.
    pub fn aligned(pair: &TransitionPair, hop: usize, half_window: usize) -> Self {
        Self {
            hop,
            half_window,
            l0: pair.l0,
            k0: pair.k0,
            l1: pair.l1,
            k1: pair.k1,
            cut_start: pair.l0 * hop,
            cut_end: pair.k1 * hop,
        }
    }

    pub fn replacement_start(&self) -> usize {
        self.k0 * self.hop
    }

    pub fn replacement_end(&self) -> usize {
        self.l1 * self.hop
    }

    /// First input sample replaced by this plan.
    pub fn removed_start(&self) -> usize {
        self.cut_start - self.half_window
    }

    /// One past the last input sample replaced by this plan.
    pub fn removed_end(&self) -> usize {
        self.cut_end + self.half_window
    }

    /// Output length minus input length.
    pub fn length_change(&self) -> i64 {
        (self.replacement_end() as i64 - self.replacement_start() as i64)
            - (self.cut_end as i64 - self.cut_start as i64)
    }

    /// Cross-fade regions `[start, end)` in output samples, given the output
    /// position of this plan's first removed sample.
    pub fn output_regions(&self, offset: usize) -> [(usize, usize); 2] {
        let w = 2 * self.half_window;
        let first = offset;
        let second = offset + w + (self.replacement_end() - self.replacement_start() - w);
        [(first, first + w), (second, second + w)]
    }

    fn check(&self, len: usize) -> Result<()> {
        let h = self.half_window;
        if self.cut_start < h || self.replacement_start() < h {
            return Err(Error::OutOfBounds(format!(
                "transition at sample {} is too close to the signal start",
                self.cut_start.min(self.replacement_start())
            )));
        }
        if self.cut_end + h > len || self.replacement_end() + h > len {
            return Err(Error::OutOfBounds(format!(
                "transition at sample {} is too close to the signal end",
                self.cut_end.max(self.replacement_end())
            )));
        }
        if self.replacement_end() < self.replacement_start() + 2 * h {
            return Err(Error::OutOfBounds("replacement shorter than two cross-fades".into()));
        }
        if self.cut_end < self.cut_start {
            return Err(Error::OutOfBounds("cut end precedes cut start".into()));
        }
        Ok(())
    }
}

/// `argmax_l <s[l - h .. l + h), s[target - h .. target + h)>` over
/// `l` in `[center - hop/2, center - hop/2 + hop)`, smallest index on ties.
/// Samples outside `s` read as zero.
pub fn best_alignment(s: &[f64], center: usize, target: usize, hop: usize, half_window: usize) -> usize {
    let h = half_window as isize;
    let at = |i: isize| if i >= 0 && (i as usize) < s.len() { s[i as usize] } else { 0.0 };
    let template: Vec<f64> = (-h..h).map(|u| at(target as isize + u)).collect();
    let lo = center.saturating_sub(hop / 2);
    let scores = par::map_range(lo..lo + hop, |l| {
        template
            .iter()
            .zip(-h..h)
            .map(|(t, u)| t * at(l as isize + u))
            .sum::<f64>()
    });
    let mut best = 0;
    for (i, &v) in scores.iter().enumerate() {
        if v > scores[best] {
            best = i;
        }
    }
    lo + best
}

/// Refined cut positions `(l~0, k~1)`. Gap samples are treated as zeros.
pub fn refine_offsets(
    s: &[f64],
    pair: &TransitionPair,
    gaps: &[GapSpec],
    hop: usize,
    half_window: usize,
) -> (usize, usize) {
    let mut zeroed;
    let s = if gaps.is_empty() {
        s
    } else {
        zeroed = s.to_vec();
        for g in gaps {
            zeroed[g.start().min(s.len())..g.end().min(s.len())].fill(0.0);
        }
        &zeroed[..]
    };
    let start = best_alignment(s, pair.l0 * hop, pair.k0 * hop, hop, half_window);
    let end = best_alignment(s, pair.k1 * hop, pair.l1 * hop, hop, half_window);
    (start, end)
}

/// Refines `pair` against the mono signal and returns the plan.
pub fn plan(s: &[f64], pair: &TransitionPair, gaps: &[GapSpec], hop: usize, half_window: usize) -> SplicePlan {
    let (cut_start, cut_end) = refine_offsets(s, pair, gaps, hop, half_window);
    SplicePlan {
        cut_start,
        cut_end,
        ..SplicePlan::aligned(pair, hop, half_window)
    }
}

/// Time-frequency cross-fader with window length `2 L~w`, hop `a~` and
/// `2 L~w` channels.
pub struct Crossfader {
    transform: FrameTransform,
    hop: usize,
    half_window: usize,
}

impl Crossfader {
    pub fn new(window: WindowKind, hop: usize, half_window: usize) -> Result<Self> {
        let g = window.build(2 * half_window)?;
        Ok(Self {
            transform: FrameTransform::new(g, hop, 2 * half_window)?,
            hop,
            half_window,
        })
    }

    /// Number of coefficient columns taken from each side of a junction.
    pub fn columns_per_side(&self) -> usize {
        2 * self.half_window.div_ceil(self.hop)
    }

    /// `2 L~w` samples joining `left` (the signal before the junction, at
    /// `left_pos`) to `right` (after the junction, at `right_pos`).
    pub fn junction(&self, left: &[f64], left_pos: usize, right: &[f64], right_pos: usize) -> Vec<f64> {
        let h = self.half_window as isize;
        let a = self.hop as isize;
        let r = self.columns_per_side() as isize;
        let mut out = vec![0.0; 2 * self.half_window];
        for j in 1..=r {
            let col = self.transform.analyze(left, left_pos as isize - j * a);
            self.transform.synthesize_add(&col, -j * a, &mut out, -h);
        }
        for j in 0..r {
            let col = self.transform.analyze(right, right_pos as isize + j * a);
            self.transform.synthesize_add(&col, j * a, &mut out, -h);
        }
        out
    }

    /// Applies `plans` to one channel.
    pub fn splice_channel(&self, x: &[f64], plans: &[SplicePlan]) -> Vec<f64> {
        let h = self.half_window;
        let mut out = Vec::with_capacity(x.len());
        let mut pos = 0;
        for p in plans {
            out.extend_from_slice(&x[pos..p.cut_start - h]);
            out.extend(self.junction(x, p.cut_start, x, p.replacement_start()));
            out.extend_from_slice(&x[p.replacement_start() + h..p.replacement_end() - h]);
            out.extend(self.junction(x, p.replacement_end(), x, p.cut_end));
            pos = p.cut_end + h;
        }
        out.extend_from_slice(&x[pos..]);
        out
    }
}

/// Checks plans against the signal length and orders them by position.
pub fn order_plans(plans: &[SplicePlan], len: usize) -> Result<Vec<SplicePlan>> {
    let mut sorted = plans.to_vec();
    sorted.sort_by_key(|p| p.cut_start);
    for p in &sorted {
        p.check(len)?;
    }
    for pair in sorted.windows(2) {
        if pair[1].removed_start() < pair[0].removed_end() {
            return Err(Error::OverlappingGaps);
        }
    }
    Ok(sorted)
}

/// Applies all plans to every channel of `buf` at identical positions.
pub fn crossfade_splice(buf: &AudioBuffer, plans: &[SplicePlan], window: WindowKind) -> Result<AudioBuffer> {
    let Some(first) = plans.first() else {
        return Ok(buf.clone());
    };
    if plans.iter().any(|p| p.hop != first.hop || p.half_window != first.half_window) {
        return Err(Error::ParamMismatch("plans use different hops or window lengths".into()));
    }
    let sorted = order_plans(plans, buf.len())?;
    let fader = Crossfader::new(window, first.hop, first.half_window)?;
    let channels = par::map_slice(buf.channels(), |x| fader.splice_channel(x, &sorted));
    Ok(AudioBuffer::new(channels, buf.sample_rate())?.with_format(buf.format()))
}
