//! End-to-end inpainting and graph analysis.

use std::time::Instant;

use serde::Serialize;

use crate::audio_io::{self, AudioBuffer, GapSpec};
use crate::config::AlgoConfig;
use crate::error::{Error, Result};
use crate::features::{self, FeatureMatrix};
use crate::simgraph::{self, GraphStages, SparseWeights};
use crate::splice::{self, SplicePlan};
use crate::transition::{self, SearchWindow, Selection};

pub const SCHEMA_VERSION: u32 = 1;

/// Wall-clock seconds per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Timings {
    pub feature_extraction: f64,
    pub graph_construction: f64,
    pub transition_selection: f64,
    pub signal_reconstruction: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.feature_extraction + self.graph_construction + self.transition_selection + self.signal_reconstruction
    }

    pub fn as_array(&self) -> [f64; 4] {
        [
            self.feature_extraction,
            self.graph_construction,
            self.transition_selection,
            self.signal_reconstruction,
        ]
    }

    pub const STAGES: [&'static str; 4] = [
        "feature_extraction",
        "graph_construction",
        "transition_selection",
        "signal_reconstruction",
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GapInfo {
    pub start: usize,
    pub end: usize,
    pub start_seconds: f64,
    pub end_seconds: f64,
    pub frame_start: usize,
    pub frame_end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Region {
    pub start: usize,
    pub end: usize,
    pub start_seconds: f64,
    pub end_seconds: f64,
}

impl Region {
    fn new(start: usize, end: usize, rate: f64) -> Self {
        Self {
            start,
            end,
            start_seconds: start as f64 / rate,
            end_seconds: end as f64 / rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapReport {
    pub gap: GapInfo,
    pub query_frames: usize,
    pub graph_edges: usize,
    pub sigma: f64,
    pub selection: Selection,
    pub splice: SplicePlan,
    /// Cross-fade regions in output samples.
    pub crossfades: [Region; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub seed: u64,
    pub sample_rate: u32,
    pub channels: usize,
    pub input_length: usize,
    pub output_length: usize,
    pub decimation: usize,
    pub effective_hop: usize,
    pub half_window: usize,
    pub frames: usize,
    pub config: AlgoConfig,
    pub gaps: Vec<GapReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

/// Result of [`inpaint`].
#[derive(Clone, Debug)]
pub struct Outcome {
    pub output: AudioBuffer,
    pub report: Report,
    pub timings: Timings,
    /// Sparsified graphs used per gap.
    pub graphs: Vec<SparseWeights>,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let t = Instant::now();
    let out = f();
    *slot += t.elapsed().as_secs_f64();
    out
}

/// Sorts gaps and rejects overlapping ones.
pub fn order_gaps(gaps: &[GapSpec]) -> Result<Vec<GapSpec>> {
    let mut sorted = gaps.to_vec();
    sorted.sort_by_key(|g| g.start());
    if sorted.windows(2).any(|p| p[1].start() < p[0].end()) {
        return Err(Error::OverlappingGaps);
    }
    Ok(sorted)
}

/// Per-gap transition choice on precomputed features.
pub struct GapSolution {
    pub stages: GraphStages,
    pub window: SearchWindow,
    pub selection: Selection,
}

/// Builds the reduced graph around `gap` and selects its transition.
pub fn solve_gap(
    fm: &FeatureMatrix,
    gap: &GapSpec,
    config: &AlgoConfig,
    seed: u64,
    timings: &mut Timings,
) -> Result<GapSolution> {
    let layout = *fm
        .layout()
        .ok_or_else(|| Error::ParamMismatch("feature matrix has no frame layout".into()))?;
    let mut gp = config.graph_params(layout.frame_rate());
    gp.seed = seed;
    let stages = timed(&mut timings.graph_construction, || simgraph::reduced_graph(fm, gap, &gp))?;
    let (ds, de) = gap.frame_bounds(layout.effective_hop());
    let window = SearchWindow {
        ds,
        de,
        eps_before: gp.eps_before,
        eps_after: gp.eps_after,
    };
    let selection = timed(&mut timings.transition_selection, || {
        transition::select(&stages.ws, fm.valid_mask(), &window, &config.objective_params())
    })?;
    Ok(GapSolution {
        stages,
        window,
        selection,
    })
}

/// Restores every gap of `buf`. Features are computed once for all gaps.
pub fn inpaint(buf: &AudioBuffer, gaps: &[GapSpec], config: &AlgoConfig, seed: u64) -> Result<Outcome> {
    config.validate()?;
    let gaps = order_gaps(gaps)?;
    if let Some(g) = gaps.iter().find(|g| g.end() > buf.len()) {
        return Err(Error::GapOutOfBounds {
            start: g.start(),
            end: g.end(),
            len: buf.len(),
        });
    }
    let mut timings = Timings::default();
    let fm = timed(&mut timings.feature_extraction, || {
        features::extract_features(buf, &gaps, &config.feature_params())
    })?;
    let layout = *fm.layout().expect("extracted features carry a layout");
    let (hop, half) = (layout.effective_hop(), layout.half_window());

    let mono = audio_io::downmix_mono(buf);
    let mut reports = Vec::with_capacity(gaps.len());
    let mut graphs = Vec::with_capacity(gaps.len());
    let mut plans = Vec::with_capacity(gaps.len());
    for gap in &gaps {
        let sol = solve_gap(&fm, gap, config, seed, &mut timings)?;
        let plan = timed(&mut timings.signal_reconstruction, || {
            splice::plan(mono.channel(0), &sol.selection.pair, &gaps, hop, half)
        });
        plans.push(plan);
        reports.push((gap, sol.window, sol.selection, sol.stages.sigma, sol.stages.rows.len(), sol.stages.ws.len()));
        graphs.push(sol.stages.ws);
    }
    let output = timed(&mut timings.signal_reconstruction, || {
        splice::crossfade_splice(buf, &plans, config.window)
    })?;

    let rate = f64::from(buf.sample_rate());
    let mut shift: i64 = 0;
    let gap_reports = reports
        .into_iter()
        .zip(&plans)
        .map(|((gap, window, selection, sigma, rows, edges), plan)| {
            let offset = (plan.removed_start() as i64 + shift) as usize;
            let [a, b] = plan.output_regions(offset);
            shift += plan.length_change();
            GapReport {
                gap: GapInfo {
                    start: gap.start(),
                    end: gap.end(),
                    start_seconds: gap.start() as f64 / rate,
                    end_seconds: gap.end() as f64 / rate,
                    frame_start: window.ds,
                    frame_end: window.de,
                },
                query_frames: rows,
                graph_edges: edges,
                sigma,
                selection,
                splice: *plan,
                crossfades: [Region::new(a.0, a.1, rate), Region::new(b.0, b.1, rate)],
            }
        })
        .collect();
    let report = Report {
        schema_version: SCHEMA_VERSION,
        seed,
        sample_rate: buf.sample_rate(),
        channels: buf.num_channels(),
        input_length: buf.len(),
        output_length: output.len(),
        decimation: layout.decimation,
        effective_hop: hop,
        half_window: half,
        frames: fm.frames(),
        config: config.clone(),
        gaps: gap_reports,
        timings: None,
    };
    Ok(Outcome {
        output,
        report,
        timings,
        graphs,
    })
}

/// Graph stages for analysis: the full graph, or the reduced graph around `gap`.
pub fn analyze(buf: &AudioBuffer, gap: Option<&GapSpec>, config: &AlgoConfig, seed: u64) -> Result<(FeatureMatrix, GraphStages)> {
    config.validate()?;
    let gaps: Vec<GapSpec> = gap.copied().into_iter().collect();
    let fm = features::extract_features(buf, &gaps, &config.feature_params())?;
    let layout = *fm.layout().expect("extracted features carry a layout");
    let mut gp = config.graph_params(layout.frame_rate());
    gp.seed = seed;
    let stages = match gap {
        Some(g) => simgraph::reduced_graph(&fm, g, &gp)?,
        None => simgraph::full_graph(&fm, &gp)?,
    };
    Ok((fm, stages))
}
