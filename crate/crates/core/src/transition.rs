//! Transition selection.
//!
//! A transition replaces the gap region by jumping from frame `l0` (just
//! before the gap) to a similar frame `k0`, playing `k0..l1`, and jumping from
//! `l1` back to `k1` (just after the gap). The entry edge is `Ws(l0, k0)`; the
//! exit edge is looked up from the row of `k1` as `Ws(k1, l1)`, since the
//! reduced graph only holds rows near the gap.
//!
//! Among all acceptable pairs the one minimizing
//!
//! ```text
//! |(k1 - l0) - (l1 - k0)| + gamma_len ((d_s - l0) + (k1 - d_e)) + gamma_w (1/w0 + 1/w1)
//! ```
//!
//! is chosen; ties go to the smaller duration mismatch, then smaller `l0`,
//! smaller `k1`, smaller `k0` and smaller `l1`.

use std::cmp::Ordering;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::par;
use crate::simgraph::{Edge, SparseWeights};

/// Maximum number of acceptable pairs considered before giving up.
pub const CANDIDATE_CAP: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TransitionPair {
    pub l0: usize,
    pub k0: usize,
    pub l1: usize,
    pub k1: usize,
    pub w0: f64,
    pub w1: f64,
}

impl TransitionPair {
    /// `(k1 - l0) - (l1 - k0)`: removed minus inserted frames.
    pub fn duration_mismatch(&self) -> i64 {
        (self.k1 as i64 - self.l0 as i64) - (self.l1 as i64 - self.k0 as i64)
    }

    /// Shifts every frame index by `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            l0: self.l0 + offset,
            k0: self.k0 + offset,
            l1: self.l1 + offset,
            k1: self.k1 + offset,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveParams {
    pub gamma_len: f64,
    pub gamma_w: f64,
    /// Minimum replacement length `l1 - k0` in frames.
    pub min_length: usize,
}

impl Default for ObjectiveParams {
    fn default() -> Self {
        Self {
            gamma_len: 1.0,
            gamma_w: 100.0,
            min_length: 40,
        }
    }
}

impl ObjectiveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_len >= 0.0 && self.gamma_len.is_finite()) {
            return Err(Error::InvalidConfig("gamma_len must be finite and non-negative".into()));
        }
        if !(self.gamma_w >= 0.0 && self.gamma_w.is_finite()) {
            return Err(Error::InvalidConfig("gamma_w must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Frame range around a gap: `d_s`, `d_e` and the allowed distances from them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SearchWindow {
    pub ds: usize,
    pub de: usize,
    pub eps_before: usize,
    pub eps_after: usize,
}

impl SearchWindow {
    fn entry_ok(&self, l0: usize) -> bool {
        l0 <= self.ds && self.ds - l0 <= self.eps_before
    }

    fn exit_ok(&self, k1: usize) -> bool {
        k1 >= self.de && k1 - self.de <= self.eps_after
    }
}

/// Individual objective terms, already weighted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ObjectiveTerms {
    pub mismatch: f64,
    pub border: f64,
    pub weight: f64,
    pub total: f64,
}

pub fn objective_terms(pair: &TransitionPair, window: &SearchWindow, params: &ObjectiveParams) -> ObjectiveTerms {
    let mismatch = pair.duration_mismatch().unsigned_abs() as f64;
    let before = window.ds as f64 - pair.l0 as f64;
    let after = pair.k1 as f64 - window.de as f64;
    let border = params.gamma_len * (before + after);
    let weight = params.gamma_w * (1.0 / pair.w0 + 1.0 / pair.w1);
    ObjectiveTerms {
        mismatch,
        border,
        weight,
        total: mismatch + border + weight,
    }
}

pub fn objective(pair: &TransitionPair, window: &SearchWindow, params: &ObjectiveParams) -> f64 {
    objective_terms(pair, window, params).total
}

/// Prefix counts of invalid frames for constant-time range checks.
struct Validity {
    invalid_before: Vec<usize>,
}

impl Validity {
    fn new(valid: &[bool]) -> Self {
        let mut invalid_before = Vec::with_capacity(valid.len() + 1);
        invalid_before.push(0);
        for &v in valid {
            invalid_before.push(invalid_before.last().unwrap() + usize::from(!v));
        }
        Self { invalid_before }
    }

    fn frames(&self) -> usize {
        self.invalid_before.len() - 1
    }

    fn valid(&self, n: usize) -> bool {
        n < self.frames() && self.invalid_before[n + 1] == self.invalid_before[n]
    }

    /// All frames in `lo..=hi` are valid.
    fn range_valid(&self, lo: usize, hi: usize) -> bool {
        hi < self.frames() && self.invalid_before[hi + 1] == self.invalid_before[lo]
    }
}

fn pair_from(entry: &Edge, exit: &Edge) -> TransitionPair {
    TransitionPair {
        l0: entry.l,
        k0: entry.k,
        l1: exit.k,
        k1: exit.l,
        w0: entry.weight,
        w1: exit.weight,
    }
}

struct Enumeration<'a> {
    entries: Vec<&'a Edge>,
    exits: Vec<&'a Edge>,
    validity: Validity,
    min_length: usize,
}

impl<'a> Enumeration<'a> {
    fn new(ws: &'a SparseWeights, valid: &[bool], window: &SearchWindow, min_length: usize) -> Self {
        let validity = Validity::new(valid);
        // the frames next to the cuts must be valid too, so the refined cut
        // positions keep their cross-fades clear of the gap
        let entries = ws
            .edges()
            .iter()
            .filter(|e| window.entry_ok(e.l) && validity.valid(e.l) && validity.valid(e.l + 1))
            .collect();
        let exits = ws
            .edges()
            .iter()
            .filter(|e| window.exit_ok(e.l) && validity.valid(e.l) && e.l >= 1 && validity.valid(e.l - 1))
            .collect();
        Self {
            entries,
            exits,
            validity,
            min_length: min_length.max(1),
        }
    }

    fn acceptable(&self, entry: &Edge, exit: &Edge) -> bool {
        let (k0, l1) = (entry.k, exit.k);
        l1 > k0 && l1 - k0 >= self.min_length && self.validity.range_valid(k0, l1)
    }
}

/// All acceptable pairs of entry and exit edges, in entry-major order.
pub fn acceptable_pairs(
    ws: &SparseWeights,
    valid: &[bool],
    window: &SearchWindow,
    min_length: usize,
) -> Vec<TransitionPair> {
    let en = Enumeration::new(ws, valid, window, min_length);
    let mut out = Vec::new();
    for entry in &en.entries {
        for exit in &en.exits {
            if en.acceptable(entry, exit) {
                out.push(pair_from(entry, exit));
            }
        }
    }
    out
}

/// Total order used for selection: objective, then the tie-break chain.
pub fn compare_candidates(a: (&TransitionPair, f64), b: (&TransitionPair, f64)) -> Ordering {
    let key = |p: &TransitionPair| (p.duration_mismatch().unsigned_abs(), p.l0, p.k1, p.k0, p.l1);
    a.1.total_cmp(&b.1).then_with(|| key(a.0).cmp(&key(b.0)))
}

/// The selected pair with its objective breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub pair: TransitionPair,
    pub terms: ObjectiveTerms,
    pub candidates: usize,
}

/// Exhaustive minimization over all acceptable pairs.
pub fn select(
    ws: &SparseWeights,
    valid: &[bool],
    window: &SearchWindow,
    params: &ObjectiveParams,
) -> Result<Selection> {
    params.validate()?;
    let en = Enumeration::new(ws, valid, window, params.min_length);
    let per_entry = par::map_slice(&en.entries, |entry| {
        let mut best: Option<(TransitionPair, f64)> = None;
        let mut count = 0usize;
        for exit in &en.exits {
            if !en.acceptable(entry, exit) {
                continue;
            }
            count += 1;
            let pair = pair_from(entry, exit);
            let value = objective(&pair, window, params);
            if best.is_none_or(|(b, bv)| compare_candidates((&pair, value), (&b, bv)) == Ordering::Less) {
                best = Some((pair, value));
            }
        }
        (best, count)
    });
    let candidates: usize = per_entry.iter().map(|(_, c)| c).sum();
    if candidates > CANDIDATE_CAP {
        return Err(Error::TooManyCandidates {
            count: candidates,
            cap: CANDIDATE_CAP,
        });
    }
    let best = per_entry
        .into_iter()
        .filter_map(|(b, _)| b)
        .min_by(|a, b| compare_candidates((&a.0, a.1), (&b.0, b.1)));
    match best {
        Some((pair, _)) => Ok(Selection {
            pair,
            terms: objective_terms(&pair, window, params),
            candidates,
        }),
        None => Err(Error::NoTransitionFound {
            start: window.ds,
            end: window.de,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgraph::Stage;

    fn window() -> SearchWindow {
        SearchWindow {
            ds: 105,
            de: 155,
            eps_before: 50,
            eps_after: 50,
        }
    }

    fn pair(l0: usize, k0: usize, l1: usize, k1: usize, w0: f64, w1: f64) -> TransitionPair {
        TransitionPair { l0, k0, l1, k1, w0, w1 }
    }

    fn valid_mask(n: usize, ds: usize, de: usize) -> Vec<bool> {
        (0..n).map(|i| i < ds || i > de).collect()
    }

    fn graph(n: usize, edges: &[(usize, usize, f64)]) -> SparseWeights {
        let e = edges.iter().map(|&(l, k, weight)| Edge { l, k, weight }).collect();
        SparseWeights::new(Stage::Ws, n, e).unwrap()
    }

    #[test]
    fn worked_objective() {
        let p = pair(100, 500, 560, 160, 2.0, 2.0);
        let t = objective_terms(&p, &window(), &ObjectiveParams::default());
        assert_eq!(t.mismatch, 0.0);
        assert_eq!(t.border, 10.0);
        assert_eq!(t.weight, 100.0);
        assert_eq!(t.total, 110.0);
    }

    #[test]
    fn perfect_fit_limit() {
        let params = ObjectiveParams::default();
        let w = window();
        let mut last = f64::INFINITY;
        for exp in [1, 3, 6, 9] {
            let big = 10f64.powi(exp);
            let v = objective(&pair(105, 500, 550, 155, big, big), &w, &params);
            assert!(v < last);
            last = v;
        }
        assert!(last < 1e-6);
    }

    #[test]
    fn mismatch_is_linear() {
        let params = ObjectiveParams::default();
        let a = objective(&pair(100, 500, 560, 160, 3.0, 4.0), &window(), &params);
        let b = objective(&pair(100, 500, 567, 160, 3.0, 4.0), &window(), &params);
        assert_eq!(b - a, 7.0);
    }

    #[test]
    fn single_pair_and_empty_replacement() {
        let n = 700;
        let valid = valid_mask(n, 106, 154);
        let ws = graph(n, &[(100, 500, 2.0), (160, 560, 2.0)]);
        let pairs = acceptable_pairs(&ws, &valid, &window(), 40);
        assert_eq!(pairs, vec![pair(100, 500, 560, 160, 2.0, 2.0)]);

        // k0 >= l1
        let ws = graph(n, &[(100, 600, 2.0), (160, 560, 2.0)]);
        assert!(acceptable_pairs(&ws, &valid, &window(), 40).is_empty());
        // replacement running through the gap
        let ws = graph(n, &[(100, 20, 2.0), (160, 300, 2.0)]);
        assert!(acceptable_pairs(&ws, &valid, &window(), 40).is_empty());
    }

    #[test]
    fn selects_minimum() {
        let n = 800;
        let valid = valid_mask(n, 106, 154);
        let w = window();
        let params = ObjectiveParams::default();
        // objectives 110, 250-ish, 93-ish
        let ws = graph(n, &[(100, 500, 2.0), (160, 560, 2.0), (104, 600, 20.0 / 3.0), (157, 650, 20.0 / 3.0)]);
        let all = acceptable_pairs(&ws, &valid, &w, 40);
        let best = select(&ws, &valid, &w, &params).unwrap();
        let min = all
            .iter()
            .map(|p| objective(p, &w, &params))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(best.terms.total, min);
        assert_eq!(best.candidates, all.len());
        assert_eq!((best.pair.l0, best.pair.k0, best.pair.l1, best.pair.k1), (104, 600, 650, 157));
    }

    #[test]
    fn ties_prefer_smaller_l0() {
        let n = 800;
        let valid = valid_mask(n, 106, 154);
        let w = SearchWindow {
            ds: 105,
            de: 155,
            eps_before: 50,
            eps_after: 50,
        };
        let params = ObjectiveParams {
            gamma_len: 0.0,
            ..ObjectiveParams::default()
        };
        let ws = graph(n, &[(100, 500, 2.0), (102, 502, 2.0), (160, 560, 2.0)]);
        let best = select(&ws, &valid, &w, &params).unwrap();
        assert_eq!(best.pair.l0, 100);
    }

    #[test]
    fn no_transition() {
        let n = 300;
        let valid = valid_mask(n, 106, 154);
        let ws = graph(n, &[]);
        assert!(matches!(
            select(&ws, &valid, &window(), &ObjectiveParams::default()),
            Err(Error::NoTransitionFound { .. })
        ));
    }

    #[test]
    fn shift_invariance() {
        let n = 1000;
        let edges = [(100, 500, 2.0), (98, 480, 3.0), (160, 560, 2.5), (170, 540, 4.0)];
        let params = ObjectiveParams::default();
        let base = select(&graph(n, &edges), &valid_mask(n, 106, 154), &window(), &params).unwrap();
        let shift = 37;
        let moved: Vec<(usize, usize, f64)> = edges.iter().map(|&(l, k, w)| (l + shift, k + shift, w)).collect();
        let w = SearchWindow {
            ds: 105 + shift,
            de: 155 + shift,
            ..window()
        };
        let other = select(&graph(n, &moved), &valid_mask(n, 106 + shift, 154 + shift), &w, &params).unwrap();
        assert_eq!(other.pair, base.pair.shifted(shift));
        assert_eq!(other.terms.total, base.terms.total);
    }

    #[test]
    fn too_many_candidates() {
        let n = 5000;
        let mut edges = Vec::new();
        for l in 0..=105 {
            for k in 1000..1011 {
                edges.push((l, k, 2.0));
            }
        }
        for l in 155..=260 {
            for k in 2000..2090 {
                edges.push((l, k, 2.0));
            }
        }
        let w = SearchWindow {
            ds: 105,
            de: 155,
            eps_before: 200,
            eps_after: 200,
        };
        let r = select(&graph(n, &edges), &valid_mask(n, 106, 154), &w, &ObjectiveParams::default());
        assert!(matches!(r, Err(Error::TooManyCandidates { .. })));
    }
}
