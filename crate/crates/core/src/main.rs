use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use simgraph_inpaint::audio_io::{self, AudioBuffer, GapSpec};
use simgraph_inpaint::commands;
use simgraph_inpaint::config::AlgoConfig;
use simgraph_inpaint::export;
use simgraph_inpaint::pipeline;
use simgraph_inpaint::simgraph::Stage;
use simgraph_inpaint::Error;

#[derive(Parser)]
#[command(name = "inpaint", version, about = "Long-gap audio inpainting with similarity graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Restore one or more gaps in a WAV file.
    Inpaint(InpaintArgs),
    /// Export a similarity graph stage as an edge list.
    Analyze(AnalyzeArgs),
    /// Check exact restoration on a doubled copy of the input.
    Verify(VerifyArgs),
    /// Time the pipeline stages per minute of audio.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GapArgs {
    /// Gap start in seconds (repeatable).
    #[arg(long = "gap-start", conflicts_with_all = ["gap_start_sample", "gap_end_sample"])]
    gap_start: Vec<f64>,
    /// Gap end in seconds, exclusive (repeatable).
    #[arg(long = "gap-end", conflicts_with_all = ["gap_start_sample", "gap_end_sample"])]
    gap_end: Vec<f64>,
    /// Gap start in samples (repeatable).
    #[arg(long = "gap-start-sample")]
    gap_start_sample: Vec<usize>,
    /// Gap end in samples, exclusive (repeatable).
    #[arg(long = "gap-end-sample")]
    gap_end_sample: Vec<usize>,
}

impl GapArgs {
    fn is_empty(&self) -> bool {
        self.gap_start.is_empty() && self.gap_end.is_empty() && self.gap_start_sample.is_empty() && self.gap_end_sample.is_empty()
    }

    fn resolve(&self, buf: &AudioBuffer) -> Result<Vec<GapSpec>, Failure> {
        let len = buf.len();
        let gaps = if !self.gap_start_sample.is_empty() || !self.gap_end_sample.is_empty() {
            if self.gap_start_sample.len() != self.gap_end_sample.len() {
                return Err(Failure::usage("every --gap-start-sample needs a matching --gap-end-sample"));
            }
            self.gap_start_sample
                .iter()
                .zip(&self.gap_end_sample)
                .map(|(&s, &e)| GapSpec::new(s, e, len))
                .collect::<Result<Vec<_>, _>>()?
        } else {
            if self.gap_start.len() != self.gap_end.len() {
                return Err(Failure::usage("every --gap-start needs a matching --gap-end"));
            }
            self.gap_start
                .iter()
                .zip(&self.gap_end)
                .map(|(&s, &e)| GapSpec::from_seconds(s, e, buf.sample_rate(), len))
                .collect::<Result<Vec<_>, _>>()?
        };
        if gaps.is_empty() {
            return Err(Failure::usage("no gap given"));
        }
        Ok(pipeline::order_gaps(&gaps)?)
    }
}

#[derive(Args)]
struct InpaintArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    gaps: GapArgs,
    /// Algorithm configuration as JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the sparsified graph of each gap as CSV.
    #[arg(long)]
    export_graph: Option<PathBuf>,
    /// Write a JSON report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Include wall-clock stage timings in the report.
    #[arg(long)]
    timings: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    W0,
    W,
    Ws,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::W0 => Stage::W0,
            StageArg::W => Stage::W,
            StageArg::Ws => Stage::Ws,
        }
    }
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    stage: StageArg,
    /// Build the graph over all frames instead of around a gap.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    export: PathBuf,
    #[command(flatten)]
    gaps: GapArgs,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    input: PathBuf,
    /// Gap length in seconds.
    #[arg(long)]
    gap_length: f64,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the summary as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the summary as JSON.
    #[arg(long)]
    summary: Option<PathBuf>,
}

/// Error with the process exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: &str) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        let code = match &err {
            Error::InvalidGap { .. }
            | Error::GapOutOfBounds { .. }
            | Error::OverlappingGaps
            | Error::InvalidConfig(_)
            | Error::SignalTooShort(_)
            | Error::NoValidQueries
            | Error::NotEnoughFrames { .. } => 2,
            Error::UnsupportedFormat(_) | Error::EmptySignal => 3,
            Error::NoTransitionFound { .. } => 4,
            _ => 5,
        };
        Self {
            code,
            message: err.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err).into()
    }
}

fn load_config(path: Option<&Path>) -> Result<AlgoConfig, Failure> {
    Ok(match path {
        Some(p) => AlgoConfig::load(p)?,
        None => AlgoConfig::default(),
    })
}

fn read_input(path: &Path) -> Result<AudioBuffer, Failure> {
    audio_io::read_audio(path).map_err(|e| match e {
        Error::Io(io) => Failure {
            code: 2,
            message: format!("cannot read {}: {io}", path.display()),
        },
        other => other.into(),
    })
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: 5,
        message: e.to_string(),
    })?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `graph.csv` for one gap, `graph_gap0.csv`, `graph_gap1.csv`, ... otherwise.
fn indexed_path(path: &Path, index: usize, count: usize) -> PathBuf {
    if count == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_gap{index}.{}", ext.to_string_lossy()),
        None => format!("{stem}_gap{index}"),
    };
    path.with_file_name(name)
}

fn run_inpaint(args: InpaintArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let buf = read_input(&args.input)?;
    let gaps = args.gaps.resolve(&buf)?;
    let outcome = pipeline::inpaint(&buf, &gaps, &config, args.seed)?;
    audio_io::write_audio(&args.output, &outcome.output)?;
    if let Some(path) = &args.export_graph {
        for (i, g) in outcome.graphs.iter().enumerate() {
            export::save_edges(indexed_path(path, i, outcome.graphs.len()), g.size(), g.stage(), g.edges())?;
        }
    }
    let mut report = outcome.report;
    if args.timings {
        report.timings = Some(outcome.timings);
    }
    if let Some(path) = &args.report {
        write_json(path, &report)?;
    }
    for g in &report.gaps {
        let p = &g.selection.pair;
        eprintln!(
            "gap [{}, {}): jump {} -> {}, return {} -> {}, objective {:.4}, length change {}",
            g.gap.start,
            g.gap.end,
            p.l0,
            p.k0,
            p.l1,
            p.k1,
            g.selection.terms.total,
            g.splice.length_change()
        );
    }
    if args.timings {
        let t = outcome.timings;
        for (name, secs) in pipeline::Timings::STAGES.iter().zip(t.as_array()) {
            eprintln!("{name:<22} {secs:>9.3} s");
        }
        eprintln!("{:<22} {:>9.3} s", "total", t.total());
    }
    Ok(())
}

fn run_analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let buf = read_input(&args.input)?;
    let gap = if args.full {
        if !args.gaps.is_empty() {
            return Err(Failure::usage("--full does not take a gap"));
        }
        None
    } else {
        if args.gaps.is_empty() {
            return Err(Failure::usage("the reduced graph needs a gap; pass --full for the whole signal"));
        }
        let gaps = args.gaps.resolve(&buf)?;
        if gaps.len() != 1 {
            return Err(Failure::usage("analyze takes a single gap"));
        }
        Some(gaps[0])
    };
    let (_, stages) = pipeline::analyze(&buf, gap.as_ref(), &config, args.seed)?;
    let g = stages.stage(args.stage.into());
    export::save_edges(&args.export, g.size(), g.stage(), g.edges())?;
    eprintln!("{} edges of {} over {} frames, sigma {:.6}", g.len(), g.stage().name(), g.size(), stages.sigma);
    Ok(())
}

fn run_verify(args: VerifyArgs) -> Result<bool, Failure> {
    let config = load_config(args.config.as_deref())?;
    let buf = read_input(&args.input)?;
    let summary = commands::verify(&buf, args.gap_length, args.trials, args.seed, &config)?;
    for (i, t) in summary.trials.iter().enumerate() {
        let status = if t.pass { "PASS" } else { "FAIL" };
        match &t.failure {
            Some(msg) => println!("trial {i}: gap [{}, {}) {status} ({msg})", t.gap_start, t.gap_end),
            None => println!("trial {i}: gap [{}, {}) error {:.3e} {status}", t.gap_start, t.gap_end, t.error),
        }
    }
    println!("{}", if summary.pass { "PASS" } else { "FAIL" });
    if let Some(path) = &args.summary {
        write_json(path, &summary)?;
    }
    Ok(summary.pass)
}

fn run_bench(args: BenchArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref())?;
    let inputs = args
        .input
        .iter()
        .map(|p| Ok((p.display().to_string(), read_input(p)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let summary = commands::bench(&inputs, args.reps, &config)?;
    for input in &summary.inputs {
        println!("{} ({:.2} min)", input.name, input.minutes);
        println!("  {:<22} {:>10} {:>10}", "stage", "s/min", "std");
        for s in &input.stages {
            println!("  {:<22} {:>10.3} {:>10.3}", s.stage, s.mean, s.std);
        }
        println!("  {:<22} {:>10.3}", "total", input.total_per_minute);
    }
    println!(
        "total seconds = {:.3} * minutes + {:.3} (R^2 {:.4})",
        summary.slope, summary.intercept, summary.r_squared
    );
    if let Some(path) = &args.summary {
        write_json(path, &summary)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Inpaint(a) => run_inpaint(a).map(|_| true),
        Command::Analyze(a) => run_analyze(a).map(|_| true),
        Command::Verify(a) => run_verify(a),
        Command::Bench(a) => run_bench(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
