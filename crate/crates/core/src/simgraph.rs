//! Similarity graph over feature frames.
//!
//! The graph is built in three stages:
//!
//! 1. `W0`: Gaussian weights `exp(-d^2 / sigma)` to each query's `K` nearest
//!    neighbors, with `sigma` the mean squared neighbor distance.
//! 2. `W`: `W0` convolved along the main-diagonal direction with a triangular
//!    kernel of length `L_K + 1`, which rewards similarity that persists over
//!    consecutive frames.
//! 3. `Ws`: entries of `W` that reach the threshold `t_w` and are not smaller
//!    than any of their four diagonal neighbors `W(l +- 1, k +- 1)`.
//!
//! For inpainting only rows near the gap are needed ([`reduced_graph`]); the
//! full graph ([`full_graph`]) is available for analysis.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio_io::GapSpec;
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::par;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    W0,
    W,
    Ws,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::W0 => "w0",
            Stage::W => "w",
            Stage::Ws => "ws",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub l: usize,
    pub k: usize,
    pub weight: f64,
}

/// Sparse `N x N` weight matrix stored as a coordinate list sorted by `(l, k)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseWeights {
    stage: Stage,
    size: usize,
    edges: Vec<Edge>,
    restriction: Option<Vec<usize>>,
}

impl SparseWeights {
    /// Sorts the entries; fails on duplicates, out-of-range indices or
    /// non-positive weights.
    pub fn new(stage: Stage, size: usize, mut edges: Vec<Edge>) -> Result<Self> {
        edges.sort_by_key(|e| (e.l, e.k));
        for pair in edges.windows(2) {
            if (pair[0].l, pair[0].k) == (pair[1].l, pair[1].k) {
                return Err(Error::DimensionMismatch(format!(
                    "duplicate entry ({}, {})",
                    pair[0].l, pair[0].k
                )));
            }
        }
        if let Some(e) = edges
            .iter()
            .find(|e| e.l >= size || e.k >= size || !(e.weight > 0.0 && e.weight.is_finite()))
        {
            return Err(Error::DimensionMismatch(format!(
                "invalid entry ({}, {}, {}) for size {size}",
                e.l, e.k, e.weight
            )));
        }
        Ok(Self {
            stage,
            size,
            edges,
            restriction: None,
        })
    }

    fn from_sorted(stage: Stage, size: usize, edges: Vec<Edge>) -> Self {
        debug_assert!(edges.windows(2).all(|p| (p[0].l, p[0].k) < (p[1].l, p[1].k)));
        Self {
            stage,
            size,
            edges,
            restriction: None,
        }
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn restriction(&self) -> Option<&[usize]> {
        self.restriction.as_deref()
    }

    pub fn with_restriction(mut self, rows: Vec<usize>) -> Self {
        self.restriction = Some(rows);
        self
    }

    /// Weight at `(l, k)`, zero when absent.
    pub fn get(&self, l: usize, k: usize) -> f64 {
        self.edges
            .binary_search_by_key(&(l, k), |e| (e.l, e.k))
            .map_or(0.0, |i| self.edges[i].weight)
    }

    fn get_signed(&self, l: isize, k: isize) -> f64 {
        if l < 0 || k < 0 {
            0.0
        } else {
            self.get(l as usize, k as usize)
        }
    }

    /// Entries of row `l`.
    pub fn row(&self, l: usize) -> &[Edge] {
        let lo = self.edges.partition_point(|e| e.l < l);
        let hi = self.edges.partition_point(|e| e.l <= l);
        &self.edges[lo..hi]
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Edge) -> bool) {
        self.edges.retain(|e| keep(e));
    }
}

/// Nearest-neighbor backend.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnnMode {
    #[default]
    Exact,
    Approx,
}

/// Graph construction parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphParams {
    pub neighbors: usize,
    pub kernel_length: usize,
    pub threshold: f64,
    /// Fixed bandwidth; `None` selects it from the neighbor distances.
    pub sigma: Option<f64>,
    /// Candidates with `|k - l| <= min_separation` are never neighbors.
    pub min_separation: usize,
    /// Acceptable frames before the gap start.
    pub eps_before: usize,
    /// Acceptable frames after the gap end.
    pub eps_after: usize,
    pub knn_mode: KnnMode,
    /// Seed of the random projection in approximate mode.
    pub seed: u64,
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        if self.neighbors == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if self.kernel_length < 2 || !self.kernel_length.is_multiple_of(2) {
            return Err(Error::InvalidKernelLength(self.kernel_length));
        }
        if self.threshold.is_nan() || self.threshold <= 0.0 {
            return Err(Error::InvalidConfig("t_w must be positive".into()));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig("sigma must be finite and non-negative".into()));
            }
        }
        Ok(())
    }
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            neighbors: 40,
            kernel_length: 40,
            threshold: 2.0,
            sigma: None,
            min_separation: 40,
            eps_before: 431,
            eps_after: 431,
            knn_mode: KnnMode::Exact,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    /// Squared feature distance.
    pub distance: f64,
}

/// Neighbor lists for a set of query frames.
#[derive(Clone, Debug, PartialEq)]
pub struct KnnResult {
    pub queries: Vec<usize>,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl KnnResult {
    pub fn distances(&self) -> impl Iterator<Item = f64> + '_ {
        self.neighbors.iter().flatten().map(|n| n.distance)
    }
}

const ABORT_BLOCK: usize = 64;

/// Weighted squared distance with early exit once the partial sum exceeds
/// `bound`. When it returns `Some`, the value does not depend on `bound`.
#[inline]
fn bounded_distance(a: &[f64], b: &[f64], w: &[f64], bound: f64) -> Option<f64> {
    let mut total = 0.0;
    let blocks = a.chunks(ABORT_BLOCK).zip(b.chunks(ABORT_BLOCK)).zip(w.chunks(ABORT_BLOCK));
    for ((ab, bb), wb) in blocks {
        let mut acc = [0.0f64; 8];
        let mut i = 0;
        while i + 8 <= ab.len() {
            for lane in 0..8 {
                let d = ab[i + lane] - bb[i + lane];
                acc[lane] += wb[i + lane] * d * d;
            }
            i += 8;
        }
        for j in i..ab.len() {
            let d = ab[j] - bb[j];
            acc[j - i] += wb[j] * d * d;
        }
        total += ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
        if total > bound {
            return None;
        }
    }
    Some(total)
}

/// Keeps the `k` smallest `(distance, index)` pairs in ascending order.
struct TopK {
    k: usize,
    items: Vec<Neighbor>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self {
            k,
            items: Vec::with_capacity(k + 1),
        }
    }

    fn bound(&self) -> f64 {
        if self.items.len() < self.k {
            f64::INFINITY
        } else {
            self.items[self.k - 1].distance
        }
    }

    fn offer(&mut self, index: usize, distance: f64) {
        let key = |n: &Neighbor| (n.distance, n.index);
        if self.items.len() == self.k {
            let worst = &self.items[self.k - 1];
            if (distance, index) >= key(worst) {
                return;
            }
        }
        let pos = self.items.partition_point(|n| key(n) < (distance, index));
        self.items.insert(pos, Neighbor { index, distance });
        self.items.truncate(self.k);
    }
}

fn check_knn_inputs(fm: &FeatureMatrix, k: usize, queries: &[usize]) -> Result<Vec<usize>> {
    let valid: Vec<usize> = (0..fm.frames()).filter(|&n| fm.is_valid(n)).collect();
    if k == 0 || valid.len() < k + 1 {
        return Err(Error::NotEnoughFrames { k, valid: valid.len() });
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= fm.frames() || !fm.is_valid(q)) {
        return Err(Error::ParamMismatch(format!("query frame {q} is not a valid frame")));
    }
    Ok(valid)
}

/// Queries per block of the distance product.
const QUERY_BLOCK: usize = 128;

/// Exact `k` nearest valid neighbors of each query, ties broken by index.
/// Frames within `min_separation` of the query (including itself) are skipped.
///
/// Distances to all valid frames are first estimated blockwise as
/// `|q|^2 + |c|^2 - 2 q.c`, with the products taken in single precision over
/// the dimensions that are nonzero somewhere. Every frame whose estimate lies
/// within twice the rounding bound of the `k`-th smallest estimate is then
/// re-ranked with the directly summed distance, so the result equals a scan
/// with direct distances.
pub fn knn(fm: &FeatureMatrix, k: usize, queries: &[usize], min_separation: usize) -> Result<KnnResult> {
    let valid = check_knn_inputs(fm, k, queries)?;
    let w = fm.weights();
    let active: Vec<usize> = (0..fm.dim())
        .filter(|&d| valid.iter().any(|&c| fm.vector(c)[d] != 0.0))
        .collect();
    let dim = active.len().max(1);
    let mut packed = vec![0.0f32; valid.len() * dim];
    par::for_each_chunk_mut(&mut packed, dim, |j, out| {
        let v = fm.vector(valid[j]);
        for (o, &d) in out.iter_mut().zip(&active) {
            *o = v[d] as f32;
        }
    });
    let norms = par::map_range(0..valid.len(), |j| {
        let v = fm.vector(valid[j]);
        active.iter().map(|&d| w[d] * v[d] * v[d]).sum::<f64>()
    });
    let max_norm = norms.iter().copied().fold(0.0, f64::max);
    // rounding bounds: single-precision inputs and products, then the
    // double-precision norms and direct sums
    let n = fm.dim() as f64 + 3.0;
    let margin = |qn: f64| 2.0 * n * f64::from(f32::EPSILON) * (qn * max_norm).sqrt() + 8.0 * n * f64::EPSILON * (qn + max_norm);

    let blocks: Vec<&[usize]> = queries.chunks(QUERY_BLOCK).collect();
    let per_block = par::map_slice(&blocks, |block| {
        let rows = block.len();
        let m = valid.len();
        let positions: Vec<usize> = block
            .iter()
            .map(|q| valid.binary_search(q).expect("queries are valid frames"))
            .collect();
        let mut a = Vec::with_capacity(rows * dim);
        for &q in *block {
            let v = fm.vector(q);
            a.extend(active.iter().map(|&d| (w[d] * v[d]) as f32));
        }
        let mut dots = vec![0.0f32; rows * m];
        // SAFETY: the strides describe `a` (rows x dim), `packed` read as
        // dim x m and `dots` (rows x m), all in bounds.
        unsafe {
            matrixmultiply::sgemm(
                rows,
                dim,
                m,
                1.0,
                a.as_ptr(),
                dim as isize,
                1,
                packed.as_ptr(),
                1,
                dim as isize,
                0.0,
                dots.as_mut_ptr(),
                m as isize,
                1,
            );
        }
        let mut estimates = Vec::with_capacity(m);
        block
            .iter()
            .zip(&positions)
            .zip(dots.chunks_exact(m))
            .map(|((&q, &jq), row)| {
                estimates.clear();
                estimates.extend(
                    valid
                        .iter()
                        .enumerate()
                        .filter(|&(_, &c)| c.abs_diff(q) > min_separation)
                        .map(|(j, &c)| (norms[jq] + norms[j] - 2.0 * f64::from(row[j]), c)),
                );
                let qv = fm.vector(q);
                let mut top = TopK::new(k);
                let cutoff = if estimates.len() > k {
                    let kth = estimates.select_nth_unstable_by(k - 1, |x, y| x.0.total_cmp(&y.0)).1 .0;
                    kth + 2.0 * margin(norms[jq])
                } else {
                    f64::INFINITY
                };
                for &(e, c) in &estimates {
                    if e <= cutoff {
                        if let Some(d) = bounded_distance(qv, fm.vector(c), w, top.bound()) {
                            top.offer(c, d);
                        }
                    }
                }
                top.items
            })
            .collect::<Vec<_>>()
    });
    Ok(KnnResult {
        queries: queries.to_vec(),
        neighbors: per_block.into_iter().flatten().collect(),
    })
}

const PROJECTION_DIM: usize = 32;

/// Approximate neighbors: candidates are preselected with a seeded random
/// projection, then re-ranked with exact distances.
pub fn knn_approx(
    fm: &FeatureMatrix,
    k: usize,
    queries: &[usize],
    min_separation: usize,
    seed: u64,
) -> Result<KnnResult> {
    let valid = check_knn_inputs(fm, k, queries)?;
    let dim = fm.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (PROJECTION_DIM as f64).sqrt();
    let proj: Vec<f64> = (0..PROJECTION_DIM * dim)
        .map(|i| {
            let s = if rng.random::<bool>() { scale } else { -scale };
            s * fm.weights()[i % dim].sqrt()
        })
        .collect();
    let project = |n: usize| -> Vec<f64> {
        let v = fm.vector(n);
        proj.chunks_exact(dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    };
    let projected: Vec<Vec<f64>> = par::map_range(0..fm.frames(), |n| {
        if fm.is_valid(n) { project(n) } else { Vec::new() }
    });
    let ones = vec![1.0; PROJECTION_DIM];
    let shortlist = 4 * k;
    let neighbors = par::map_slice(queries, |&q| {
        let mut coarse = TopK::new(shortlist);
        for &c in &valid {
            if c.abs_diff(q) <= min_separation {
                continue;
            }
            if let Some(d) = bounded_distance(&projected[q], &projected[c], &ones, coarse.bound()) {
                coarse.offer(c, d);
            }
        }
        let mut top = TopK::new(k);
        for cand in coarse.items {
            top.offer(cand.index, fm.distance(q, cand.index));
        }
        top.items
    });
    Ok(KnnResult {
        queries: queries.to_vec(),
        neighbors,
    })
}

/// Mean squared neighbor distance over all returned pairs.
pub fn auto_sigma(result: &KnnResult) -> f64 {
    let (sum, count) = result
        .distances()
        .fold((0.0, 0usize), |(s, c), d| (s + d, c + 1));
    if count == 0 { 0.0 } else { sum / count as f64 }
}

/// `W0(l, k) = exp(-d^2 / sigma)` on neighbor pairs; weights are 1 when
/// `sigma == 0`. Underflowed weights are dropped.
pub fn build_w0(result: &KnnResult, sigma: f64, size: usize) -> SparseWeights {
    let mut edges = Vec::with_capacity(result.neighbors.iter().map(Vec::len).sum());
    for (&l, list) in result.queries.iter().zip(&result.neighbors) {
        for n in list {
            let weight = if sigma > 0.0 { (-n.distance / sigma).exp() } else { 1.0 };
            if weight > 0.0 {
                edges.push(Edge { l, k: n.index, weight });
            }
        }
    }
    edges.sort_by_key(|e| (e.l, e.k));
    edges.dedup_by_key(|e| (e.l, e.k));
    SparseWeights::from_sorted(Stage::W0, size, edges)
}

/// Diagonal of the `(L_K + 1) x (L_K + 1)` kernel: `1 - |L_K - 2i| / L_K`.
pub fn diagonal_kernel(kernel_length: usize) -> Result<Vec<f64>> {
    if kernel_length < 2 || !kernel_length.is_multiple_of(2) {
        return Err(Error::InvalidKernelLength(kernel_length));
    }
    let lk = kernel_length as f64;
    Ok((0..=kernel_length)
        .map(|i| 1.0 - (lk - 2.0 * i as f64).abs() / lk)
        .collect())
}

/// `W(l, k) = sum_j D[j] W0(l + j - L_K/2, k + j - L_K/2)` with `W0` zero
/// outside `[0, N)`. When `rows` is given, only those output rows are formed.
pub fn convolve_weights(w0: &SparseWeights, kernel_length: usize, rows: Option<&[bool]>) -> Result<SparseWeights> {
    let kernel = diagonal_kernel(kernel_length)?;
    let half = (kernel_length / 2) as isize;
    let n = w0.size as isize;

    // group entries by diagonal k - l; entries stay sorted by l within each
    let mut diagonals: BTreeMap<isize, Vec<(isize, f64)>> = BTreeMap::new();
    for e in &w0.edges {
        diagonals
            .entry(e.k as isize - e.l as isize)
            .or_default()
            .push((e.l as isize, e.weight));
    }
    let diagonals: Vec<(isize, Vec<(isize, f64)>)> = diagonals.into_iter().collect();

    let per_diagonal = par::map_slice(&diagonals, |(offset, entries)| {
        let offset = *offset;
        let mut outs: Vec<isize> = entries
            .iter()
            .flat_map(|&(p, _)| (p - half + 1)..=(p + half - 1))
            .filter(|&q| q >= 0 && q < n && q + offset >= 0 && q + offset < n)
            .filter(|&q| rows.is_none_or(|r| r[q as usize]))
            .collect();
        outs.sort_unstable();
        outs.dedup();
        let mut result = Vec::with_capacity(outs.len());
        for q in outs {
            let start = entries.partition_point(|&(p, _)| p <= q - half);
            let mut acc = 0.0;
            for &(p, w) in entries[start..].iter().take_while(|&&(p, _)| p < q + half) {
                acc += kernel[(p - q + half) as usize] * w;
            }
            if acc > 0.0 {
                result.push(Edge {
                    l: q as usize,
                    k: (q + offset) as usize,
                    weight: acc,
                });
            }
        }
        result
    });
    let mut edges: Vec<Edge> = per_diagonal.into_iter().flatten().collect();
    edges.sort_by_key(|e| (e.l, e.k));
    Ok(SparseWeights::from_sorted(Stage::W, w0.size, edges))
}

/// Keeps entries with `W(l, k) >= max(t_w, W(l +- 1, k +- 1))`.
pub fn sparsify(w: &SparseWeights, threshold: f64) -> SparseWeights {
    let edges = w
        .edges
        .iter()
        .filter(|e| {
            if e.weight < threshold {
                return false;
            }
            let (l, k) = (e.l as isize, e.k as isize);
            [(-1, -1), (-1, 1), (1, -1), (1, 1)]
                .iter()
                .all(|&(dl, dk)| e.weight >= w.get_signed(l + dl, k + dk))
        })
        .copied()
        .collect();
    SparseWeights {
        stage: Stage::Ws,
        size: w.size,
        edges,
        restriction: w.restriction.clone(),
    }
}

/// All three stages of a graph plus the bandwidth used.
#[derive(Clone, Debug)]
pub struct GraphStages {
    pub w0: SparseWeights,
    pub w: SparseWeights,
    pub ws: SparseWeights,
    pub sigma: f64,
    /// Frames whose rows of `Ws` are exact.
    pub rows: Vec<usize>,
}

impl GraphStages {
    pub fn stage(&self, stage: Stage) -> &SparseWeights {
        match stage {
            Stage::W0 => &self.w0,
            Stage::W => &self.w,
            Stage::Ws => &self.ws,
        }
    }
}

fn run_knn(fm: &FeatureMatrix, queries: &[usize], params: &GraphParams) -> Result<KnnResult> {
    match params.knn_mode {
        KnnMode::Exact => knn(fm, params.neighbors, queries, params.min_separation),
        KnnMode::Approx => knn_approx(fm, params.neighbors, queries, params.min_separation, params.seed),
    }
}

/// Dilates `rows` by `radius` frames, keeping valid frames only.
fn dilate(fm: &FeatureMatrix, rows: &[usize], radius: usize) -> Vec<bool> {
    let mut mask = vec![false; fm.frames()];
    for &r in rows {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(fm.frames() - 1);
        for (n, m) in mask.iter_mut().enumerate().take(hi + 1).skip(lo) {
            *m = fm.is_valid(n);
        }
    }
    mask
}

fn build_stages(fm: &FeatureMatrix, rows: Vec<usize>, params: &GraphParams) -> Result<GraphStages> {
    params.validate()?;
    let half = params.kernel_length / 2;
    // neighbor rows needed for exact W on rows +- 1, hence exact Ws on rows
    let knn_mask = dilate(fm, &rows, half + 1);
    let w_mask = dilate(fm, &rows, 1);
    let queries: Vec<usize> = (0..fm.frames()).filter(|&n| knn_mask[n]).collect();
    let result = run_knn(fm, &queries, params)?;
    let sigma = params.sigma.unwrap_or_else(|| auto_sigma(&result));
    let w0 = build_w0(&result, sigma, fm.frames());
    let w = convolve_weights(&w0, params.kernel_length, Some(&w_mask))?;
    let mut ws = sparsify(&w, params.threshold);
    let mut row_mask = vec![false; fm.frames()];
    rows.iter().for_each(|&r| row_mask[r] = true);
    ws.retain(|e| row_mask[e.l] && fm.is_valid(e.k));
    Ok(GraphStages {
        w0,
        w,
        ws: ws.with_restriction(rows.clone()),
        sigma,
        rows,
    })
}

/// Query frames `([d_s - eps_before, d_s] u [d_e, d_e + eps_after])` that are
/// valid and inside the signal.
pub fn query_frames(fm: &FeatureMatrix, gap: &GapSpec, params: &GraphParams) -> Result<Vec<usize>> {
    let layout = fm
        .layout()
        .ok_or_else(|| Error::ParamMismatch("feature matrix has no frame layout".into()))?;
    let (ds, de) = gap.frame_bounds(layout.effective_hop());
    let before = ds.saturating_sub(params.eps_before)..=ds;
    let after = de..=de.saturating_add(params.eps_after);
    let n = fm.frames();
    Ok(before
        .chain(after)
        .filter(|&f| f < n && fm.is_valid(f))
        .collect())
}

/// Graph rows restricted to the frames just before and after `gap`.
pub fn reduced_graph(fm: &FeatureMatrix, gap: &GapSpec, params: &GraphParams) -> Result<GraphStages> {
    let mut rows = query_frames(fm, gap, params)?;
    rows.dedup();
    if rows.is_empty() {
        return Err(Error::NoValidQueries);
    }
    build_stages(fm, rows, params)
}

/// Graph over every valid frame.
pub fn full_graph(fm: &FeatureMatrix, params: &GraphParams) -> Result<GraphStages> {
    let rows: Vec<usize> = (0..fm.frames()).filter(|&n| fm.is_valid(n)).collect();
    if rows.is_empty() {
        return Err(Error::NoValidQueries);
    }
    build_stages(fm, rows, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_features(n: usize) -> FeatureMatrix {
        let v: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, 0.0, 0.0]).collect();
        FeatureMatrix::from_vectors(&v).unwrap()
    }

    #[test]
    fn knn_identical_features() {
        let fm = FeatureMatrix::from_vectors(&vec![vec![0.5, 0.25]; 3]).unwrap();
        let r = knn(&fm, 2, &[0, 1, 2], 0).unwrap();
        for (q, list) in r.queries.iter().zip(&r.neighbors) {
            let idx: Vec<usize> = list.iter().map(|n| n.index).collect();
            let expected: Vec<usize> = (0..3).filter(|i| i != q).collect();
            assert_eq!(idx, expected);
            assert!(list.iter().all(|n| n.distance == 0.0));
        }
    }

    #[test]
    fn knn_on_a_line() {
        let r = knn(&line_features(10), 2, &[5], 0).unwrap();
        assert_eq!(r.neighbors[0], vec![
            Neighbor { index: 4, distance: 1.0 },
            Neighbor { index: 6, distance: 1.0 }
        ]);
        // separation pushes neighbors outwards
        let r = knn(&line_features(10), 2, &[5], 2).unwrap();
        let idx: Vec<usize> = r.neighbors[0].iter().map(|n| n.index).collect();
        assert_eq!(idx, vec![2, 8]);
    }

    #[test]
    fn knn_errors() {
        let fm = line_features(3);
        assert!(matches!(knn(&fm, 3, &[0], 0), Err(Error::NotEnoughFrames { .. })));
        assert!(knn(&fm, 1, &[7], 0).is_err());
    }

    #[test]
    fn sigma_mean() {
        let r = KnnResult {
            queries: vec![0],
            neighbors: vec![vec![
                Neighbor { index: 1, distance: 1.0 },
                Neighbor { index: 2, distance: 3.0 },
            ]],
        };
        assert_eq!(auto_sigma(&r), 2.0);
        let w0 = build_w0(&r, 1.0, 3);
        assert!((w0.get(0, 1) - (-1.0f64).exp()).abs() < 1e-15);
        let zero = KnnResult {
            queries: vec![0],
            neighbors: vec![vec![Neighbor { index: 1, distance: 0.0 }]],
        };
        assert_eq!(auto_sigma(&zero), 0.0);
        assert_eq!(build_w0(&zero, 0.0, 2).get(0, 1), 1.0);
    }

    #[test]
    fn kernel_values() {
        assert_eq!(diagonal_kernel(4).unwrap(), vec![0.0, 0.5, 1.0, 0.5, 0.0]);
        for lk in (2..=60).step_by(2) {
            assert_eq!(diagonal_kernel(lk).unwrap()[lk / 2], 1.0);
        }
        let k = diagonal_kernel(40).unwrap();
        assert_eq!(k.len(), 41);
        for (i, v) in k.iter().enumerate() {
            assert!((v - (1.0 - (40.0 - 2.0 * i as f64).abs() / 40.0)).abs() < 1e-15);
        }
        assert!(matches!(diagonal_kernel(3), Err(Error::InvalidKernelLength(3))));
        assert!(matches!(diagonal_kernel(0), Err(Error::InvalidKernelLength(0))));
    }

    #[test]
    fn impulse_response() {
        let w0 = SparseWeights::new(Stage::W0, 20, vec![Edge { l: 8, k: 12, weight: 1.0 }]).unwrap();
        let w = convolve_weights(&w0, 4, None).unwrap();
        let got: Vec<(usize, usize, f64)> = w.edges().iter().map(|e| (e.l, e.k, e.weight)).collect();
        assert_eq!(got, vec![(7, 11, 0.5), (8, 12, 1.0), (9, 13, 0.5)]);
        let mass: f64 = w.edges().iter().map(|e| e.weight).sum();
        assert_eq!(mass, 2.0);
    }

    #[test]
    fn sparsify_threshold() {
        let w = SparseWeights::new(Stage::W, 10, vec![
            Edge { l: 2, k: 7, weight: 2.5 },
            Edge { l: 5, k: 1, weight: 1.9 },
        ])
        .unwrap();
        let ws = sparsify(&w, 2.0);
        assert_eq!(ws.len(), 1);
        assert_eq!(ws.get(2, 7), 2.5);
        assert_eq!(ws.stage(), Stage::Ws);
    }

    #[test]
    fn sparsify_keeps_ties_and_drops_dominated() {
        let w = SparseWeights::new(Stage::W, 10, vec![
            Edge { l: 2, k: 2, weight: 3.0 },
            Edge { l: 3, k: 3, weight: 3.0 },
            Edge { l: 4, k: 4, weight: 2.5 },
            Edge { l: 4, k: 5, weight: 4.0 },
        ])
        .unwrap();
        let ws = sparsify(&w, 2.0);
        let kept: Vec<(usize, usize)> = ws.edges().iter().map(|e| (e.l, e.k)).collect();
        assert_eq!(kept, vec![(2, 2), (3, 3), (4, 5)]);
    }

    #[test]
    fn sparse_weights_rejects_duplicates() {
        let e = Edge { l: 1, k: 1, weight: 1.0 };
        assert!(SparseWeights::new(Stage::W0, 3, vec![e, e]).is_err());
        assert!(SparseWeights::new(Stage::W0, 3, vec![Edge { l: 1, k: 5, weight: 1.0 }]).is_err());
        assert!(SparseWeights::new(Stage::W0, 3, vec![Edge { l: 1, k: 2, weight: 0.0 }]).is_err());
    }

    use crate::features::FrameLayout;
    use rand::Rng;

    fn random_features(n: usize, dim: usize, seed: u64) -> FeatureMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..dim).map(|j| ((i / 7 + j) % 5) as f64 * 0.1 + rng.random::<f64>() * 0.3).collect())
            .collect();
        FeatureMatrix::from_vectors(&v).unwrap()
    }

    fn brute_knn(fm: &FeatureMatrix, k: usize, q: usize, sep: usize) -> Vec<usize> {
        let mut all: Vec<(f64, usize)> = (0..fm.frames())
            .filter(|&c| fm.is_valid(c) && c.abs_diff(q) > sep)
            .map(|c| (fm.distance(q, c), c))
            .collect();
        all.sort_by(|a, b| a.partial_cmp(b).unwrap());
        all.into_iter().take(k).map(|(_, c)| c).collect()
    }

    #[test]
    fn exact_knn_matches_brute_force() {
        let fm = random_features(300, 70, 3);
        let queries: Vec<usize> = (0..300).step_by(7).collect();
        let r = knn(&fm, 10, &queries, 5).unwrap();
        for (q, list) in queries.iter().zip(&r.neighbors) {
            let idx: Vec<usize> = list.iter().map(|n| n.index).collect();
            assert_eq!(idx, brute_knn(&fm, 10, *q, 5));
            for n in list {
                assert!((n.distance - fm.distance(*q, n.index)).abs() <= 1e-12 * n.distance.max(1.0));
            }
        }
    }

    #[test]
    fn exact_knn_with_ties_offsets_and_invalid_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // large common offset, many exact duplicates, one all-zero dimension
        let v: Vec<Vec<f64>> = (0..240)
            .map(|i| {
                let base = [1e4, 0.0, (i % 6) as f64, ((i / 6) % 4) as f64 * 1e-3];
                let jitter = if i % 3 == 0 { rng.random::<f64>() * 1e-6 } else { 0.0 };
                base.iter().enumerate().map(|(d, x)| if d == 3 { x + jitter } else { *x }).collect()
            })
            .collect();
        let mut fm = FeatureMatrix::from_vectors(&v).unwrap();
        for n in (5..240).step_by(17) {
            fm.invalidate_frame(n);
        }
        let queries: Vec<usize> = (0..240).filter(|&n| fm.is_valid(n)).step_by(3).collect();
        for (k, sep) in [(1, 0), (12, 3), (40, 10)] {
            let r = knn(&fm, k, &queries, sep).unwrap();
            for (q, list) in queries.iter().zip(&r.neighbors) {
                let idx: Vec<usize> = list.iter().map(|n| n.index).collect();
                assert_eq!(idx, brute_knn(&fm, k, *q, sep), "query {q} k {k}");
            }
        }
    }

    #[test]
    fn approx_knn_is_deterministic_and_close() {
        let fm = random_features(300, 70, 4);
        let queries: Vec<usize> = (0..300).step_by(11).collect();
        let a = knn_approx(&fm, 8, &queries, 5, 11).unwrap();
        assert_eq!(a, knn_approx(&fm, 8, &queries, 5, 11).unwrap());
        let mut hits = 0;
        for (q, list) in queries.iter().zip(&a.neighbors) {
            assert_eq!(list.len(), 8);
            let truth = brute_knn(&fm, 8, *q, 5);
            hits += list.iter().filter(|n| truth.contains(&n.index)).count();
        }
        assert!(hits as f64 >= 0.5 * (8 * queries.len()) as f64, "{hits}");
    }

    fn dense_convolution(w0: &SparseWeights, lk: usize) -> Vec<f64> {
        let n = w0.size();
        let kernel = diagonal_kernel(lk).unwrap();
        let h = (lk / 2) as isize;
        let mut out = vec![0.0; n * n];
        for l in 0..n as isize {
            for k in 0..n as isize {
                let mut acc = 0.0;
                for j in 0..=lk as isize {
                    acc += kernel[j as usize] * w0.get_signed(l + j - h, k + j - h);
                }
                out[(l * n as isize + k) as usize] = acc;
            }
        }
        out
    }

    #[test]
    fn convolution_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 30;
        let mut edges = Vec::new();
        for l in 0..n {
            for k in 0..n {
                if rng.random::<f64>() < 0.15 {
                    edges.push(Edge { l, k, weight: rng.random::<f64>() + 0.01 });
                }
            }
        }
        let w0 = SparseWeights::new(Stage::W0, n, edges).unwrap();
        let w = convolve_weights(&w0, 6, None).unwrap();
        let dense = dense_convolution(&w0, 6);
        for l in 0..n {
            for k in 0..n {
                assert!((w.get(l, k) - dense[l * n + k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparsified_entries_are_local_maxima() {
        let fm = random_features(200, 20, 5);
        let params = GraphParams {
            neighbors: 8,
            kernel_length: 8,
            threshold: 0.5,
            min_separation: 8,
            ..GraphParams::default()
        };
        let g = full_graph(&fm, &params).unwrap();
        assert!(!g.ws.is_empty());
        for e in g.ws.edges() {
            assert!(e.weight >= 0.5);
            assert_eq!(e.weight, g.w.get(e.l, e.k));
            for (dl, dk) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
                assert!(e.weight >= g.w.get_signed(e.l as isize + dl, e.k as isize + dk));
            }
        }
        for e in g.w0.edges() {
            assert!(e.l.abs_diff(e.k) > 8);
        }
    }

    fn laid_out(mut fm: FeatureMatrix, n: usize) -> FeatureMatrix {
        fm.set_layout(FrameLayout {
            hop: 128,
            decimation: 1,
            window_length: 1024,
            sample_rate: 12000,
            signal_length: n * 128,
        });
        fm
    }

    #[test]
    fn query_frames_without_slack() {
        let fm = laid_out(random_features(100, 4, 1), 100);
        let gap = GapSpec::new(40 * 128, 50 * 128, 100 * 128).unwrap();
        let params = GraphParams {
            eps_before: 0,
            eps_after: 0,
            ..GraphParams::default()
        };
        assert_eq!(query_frames(&fm, &gap, &params).unwrap(), vec![40, 50]);
        let params = GraphParams {
            eps_before: 3,
            eps_after: 200,
            ..GraphParams::default()
        };
        let q = query_frames(&fm, &gap, &params).unwrap();
        assert_eq!(q, [37, 38, 39, 40].into_iter().chain(50..100).collect::<Vec<_>>());
    }

    #[test]
    fn reduced_graph_is_exact_on_query_rows() {
        let n = 400;
        let mut fm = laid_out(random_features(n, 12, 8), n);
        for f in 180..200 {
            fm.invalidate_frame(f);
        }
        let gap = GapSpec::new(185 * 128, 195 * 128, n * 128).unwrap();
        let params = GraphParams {
            neighbors: 10,
            kernel_length: 10,
            threshold: 1.0,
            min_separation: 10,
            eps_before: 40,
            eps_after: 40,
            sigma: Some(0.8),
            ..GraphParams::default()
        };
        let reduced = reduced_graph(&fm, &gap, &params).unwrap();
        let full = full_graph(&fm, &params).unwrap();
        assert_eq!(reduced.rows, (145..180).chain(200..236).collect::<Vec<_>>());
        let rows = reduced.ws.restriction().unwrap().to_vec();
        assert!(reduced.ws.edges().iter().all(|e| rows.contains(&e.l) && fm.is_valid(e.k)));
        for &r in &rows {
            assert_eq!(reduced.ws.row(r), full.ws.row(r), "row {r}");
        }
        assert!(!reduced.ws.is_empty());
    }

    #[test]
    fn no_valid_queries() {
        let mut fm = laid_out(random_features(50, 4, 2), 50);
        for f in 0..50 {
            fm.invalidate_frame(f);
        }
        let gap = GapSpec::new(128 * 20, 128 * 25, 50 * 128).unwrap();
        assert!(matches!(reduced_graph(&fm, &gap, &GraphParams::default()), Err(Error::NoValidQueries)));
    }
}
