//! Command-line pipeline over directory trees of frames and mask PNGs.
//!
//! Subcommands mirror the library stages: `select` ranks raw proposals and
//! keeps the best masks, `refine` runs selection plus the temporal repair,
//! `diagnose` reports what the repair would do without touching anything,
//! `evaluate` scores predictions against ground truth, and `synth` renders
//! a scripted scene (with injected defects) into a dataset tree so the whole
//! pipeline can be exercised without real data.
//!
//! Sequences are processed in parallel (bounded by `--jobs`) but all output
//! is collected and printed in sequence order, so repeated runs are
//! byte-identical.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use maskmend::dataset::{
    list_sequences, load_sequence, save_frames, save_masks, save_masks_to, DatasetLayout,
    MaskSource,
};
use maskmend::flow::FlowParams;
use maskmend::metrics::{evaluate_sequence, IdMatching, SequenceMetrics};
use maskmend::select::{score_objects, select_top, SelectionConfig};
use maskmend::synth::{load_script, realize};
use maskmend::temporal::{diagnose, run_tc, InconsistencyReport, TcConfig, TcStatus};

#[derive(Parser)]
#[command(
    name = "maskmend",
    version,
    about = "Select, repair, and score multi-object video segmentation masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank raw proposals by frequency and size, keep the top K
    Select(SelectCmd),
    /// Run selection, then repair temporally inconsistent masks
    Refine(RefineCmd),
    /// Score predicted masks against ground-truth masks
    Evaluate(EvaluateCmd),
    /// Report detection and refinement decisions without modifying masks
    Diagnose(DiagnoseCmd),
    /// Render a scene script into frames, ground truth, and raw proposals
    Synth(SynthCmd),
}

// ------------------------------------------------------------ shared options

#[derive(Args, Clone)]
struct LayoutArgs {
    /// Dataset root directory
    #[arg(long, env = "MASKMEND_ROOT")]
    root: PathBuf,
    /// Frames subdirectory under the root
    #[arg(long, default_value = "JPEGImages", env = "MASKMEND_FRAMES_SUBDIR")]
    frames_subdir: String,
    /// Raw proposal masks subdirectory
    #[arg(long, default_value = "RawMasks", env = "MASKMEND_RAW_SUBDIR")]
    raw_subdir: String,
    /// Ground-truth masks subdirectory
    #[arg(long, default_value = "Annotations", env = "MASKMEND_GT_SUBDIR")]
    gt_subdir: String,
    /// Output masks subdirectory (written by select/refine)
    #[arg(long, default_value = "Results", env = "MASKMEND_OUT_SUBDIR")]
    out_subdir: String,
}

impl LayoutArgs {
    fn layout(&self) -> DatasetLayout {
        let mut layout = DatasetLayout::new(&self.root);
        layout.frames_subdir = self.frames_subdir.clone();
        layout.raw_masks_subdir = self.raw_subdir.clone();
        layout.gt_subdir = self.gt_subdir.clone();
        layout.output_subdir = self.out_subdir.clone();
        layout
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Process only this sequence (repeatable; default: every sequence found)
    #[arg(long = "sequence", value_name = "NAME")]
    sequences: Vec<String>,
    /// Parallel sequence workers (0 = one per core)
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Clone)]
struct SelectionArgs {
    /// Weight of relative size against appearance count in the ranking
    #[arg(long, default_value_t = 5.0)]
    alpha: f64,
    /// How many top-ranked objects to keep
    #[arg(long, default_value_t = 20)]
    top_k: usize,
}

impl SelectionArgs {
    fn config(&self) -> SelectionConfig {
        SelectionConfig { alpha: self.alpha, top_k: self.top_k }
    }
}

#[derive(Args, Clone)]
struct TcArgs {
    /// Detection window length (frames per voting window)
    #[arg(long, default_value_t = 5)]
    window: usize,
    /// Occlusion threshold for large objects
    #[arg(long = "tau-min", default_value_t = 0.4)]
    tau_min: f64,
    /// Occlusion threshold for vanishing objects
    #[arg(long = "tau-max", default_value_t = 0.7)]
    tau_max: f64,
    /// Object area (fraction of the frame) where the occlusion threshold bottoms out
    #[arg(long, default_value_t = 0.01)]
    size_ref: f64,
    /// Centroid drift tolerance factor for the zoom exemption
    #[arg(long, default_value_t = 0.2)]
    zoom_centroid_tol: f64,
    /// Discard difference-region components below this fraction of the frame
    #[arg(long, default_value_t = 0.0005)]
    min_component_frac: f64,
    /// Skip components below this fraction of the larger object mask
    #[arg(long, default_value_t = 0.05)]
    minor_add_frac: f64,
    /// Raw-proposal coverage that triggers a whole-mask merge
    #[arg(long, default_value_t = 0.6)]
    overseg_cover_frac: f64,
    /// Erosion radius of the component reliability probe
    #[arg(long, default_value_t = 1)]
    erosion_radius: usize,
    /// Repair pass budget (default: one pass per frame)
    #[arg(long)]
    max_passes: Option<usize>,
    /// Histogram bins per channel (must divide 256)
    #[arg(long = "bins", default_value_t = 32)]
    bins_per_channel: usize,
    /// Disable the occlusion refinement stage
    #[arg(long = "no-refining")]
    no_refining: bool,
    /// Disable whole-proposal merging during correction
    #[arg(long = "not-use-all-objects")]
    not_use_all_objects: bool,
    #[command(flatten)]
    flow: FlowArgs,
}

#[derive(Args, Clone)]
struct FlowArgs {
    /// Optical-flow correlation window (odd, >= 3)
    #[arg(long = "flow-window", default_value_t = 15)]
    window_size: usize,
    /// Optical-flow pyramid levels
    #[arg(long = "flow-levels", default_value_t = 3)]
    pyramid_levels: usize,
    /// Optical-flow solver iterations per level
    #[arg(long = "flow-iterations", default_value_t = 5)]
    iterations_per_level: usize,
    /// Minimum normalized eigenvalue for a well-conditioned flow window
    #[arg(long = "flow-eigen-floor", default_value_t = 1e-4)]
    eigen_floor: f64,
}

impl TcArgs {
    fn config(&self) -> TcConfig {
        TcConfig {
            window: self.window,
            occlusion_tau_min: self.tau_min,
            occlusion_tau_max: self.tau_max,
            size_ref: self.size_ref,
            zoom_centroid_tol: self.zoom_centroid_tol,
            min_component_frac: self.min_component_frac,
            minor_add_frac: self.minor_add_frac,
            overseg_cover_frac: self.overseg_cover_frac,
            erosion_radius: self.erosion_radius,
            max_passes: self.max_passes,
            bins_per_channel: self.bins_per_channel,
            refine: !self.no_refining,
            use_all_objects: !self.not_use_all_objects,
            flow: FlowParams {
                window_size: self.flow.window_size,
                pyramid_levels: self.flow.pyramid_levels,
                iterations_per_level: self.flow.iterations_per_level,
                eigen_floor: self.flow.eigen_floor,
            },
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum SourceArg {
    /// Raw proposal masks
    Raw,
    /// Ground-truth masks
    Gt,
    /// Masks written by select/refine
    Output,
}

impl From<SourceArg> for MaskSource {
    fn from(value: SourceArg) -> Self {
        match value {
            SourceArg::Raw => MaskSource::Raw,
            SourceArg::Gt => MaskSource::GroundTruth,
            SourceArg::Output => MaskSource::Output,
        }
    }
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum MatchArg {
    /// Pair predicted id k with ground-truth id k
    ById,
    /// Pair ids by the optimal assignment over (J + F) / 2
    Hungarian,
}

impl From<MatchArg> for IdMatching {
    fn from(value: MatchArg) -> Self {
        match value {
            MatchArg::ById => IdMatching::ById,
            MatchArg::Hungarian => IdMatching::Hungarian,
        }
    }
}

// ---------------------------------------------------------------- subcommands

#[derive(Args)]
struct SelectCmd {
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    selection: SelectionArgs,
}

#[derive(Args)]
struct RefineCmd {
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    selection: SelectionArgs,
    #[command(flatten)]
    tc: TcArgs,
}

#[derive(Args)]
struct EvaluateCmd {
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    run: RunArgs,
    /// Which mask tree holds the predictions to score
    #[arg(long, value_enum, default_value_t = SourceArg::Output)]
    pred: SourceArg,
    /// How predicted ids are paired with ground-truth ids
    #[arg(long, value_enum, default_value_t = MatchArg::Hungarian)]
    matching: MatchArg,
    /// Also write the scores as JSON to this path
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct DiagnoseCmd {
    #[command(flatten)]
    layout: LayoutArgs,
    #[command(flatten)]
    run: RunArgs,
    #[command(flatten)]
    tc: TcArgs,
    /// Which mask tree to inspect
    #[arg(long, value_enum, default_value_t = SourceArg::Output)]
    source: SourceArg,
    /// Also write the combined report as JSON to this path
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    #[command(flatten)]
    layout: LayoutArgs,
    /// Scene script (TOML)
    #[arg(long)]
    script: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Select(cmd) => cmd_select(cmd),
        Command::Refine(cmd) => cmd_refine(cmd),
        Command::Evaluate(cmd) => cmd_evaluate(cmd),
        Command::Diagnose(cmd) => cmd_diagnose(cmd),
        Command::Synth(cmd) => cmd_synth(cmd),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

// ------------------------------------------------------------- orchestration

/// Resolves the sequence list: everything under the source tree, or the
/// explicit `--sequence` picks (verified to exist).
fn resolve_sequences(
    layout: &DatasetLayout,
    source: MaskSource,
    requested: &[String],
) -> Result<Vec<String>> {
    let available = list_sequences(layout, source)
        .with_context(|| format!("listing sequences under {}", layout.root.display()))?;
    if requested.is_empty() {
        if available.is_empty() {
            bail!("no sequences found under {}", layout.root.display());
        }
        return Ok(available);
    }
    for name in requested {
        if !available.contains(name) {
            bail!("sequence {name} not found (available: {})", available.join(", "));
        }
    }
    Ok(requested.to_vec())
}

/// Runs `work` over the sequences on a bounded pool, then reports results in
/// input order: printed blocks to stdout, failures to stderr. Errors do not
/// stop other sequences; the final result is Ok only if every sequence
/// succeeded.
fn run_sequences(
    jobs: usize,
    sequences: &[String],
    work: impl Fn(&str) -> Result<String> + Sync,
) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<(String, Result<String>)> = pool.install(|| {
        sequences
            .par_iter()
            .map(|name| (name.clone(), work(name)))
            .collect()
    });
    let mut failures = 0usize;
    for (name, result) in results {
        match result {
            Ok(block) => print!("{block}"),
            Err(err) => {
                failures += 1;
                eprintln!("sequence {name}: error: {err:#}");
            }
        }
    }
    if failures > 0 {
        bail!("{failures} of {} sequences failed", sequences.len());
    }
    Ok(())
}

fn seconds(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

// -------------------------------------------------------------------- select

fn cmd_select(cmd: SelectCmd) -> Result<()> {
    let layout = cmd.layout.layout();
    let config = cmd.selection.config();
    let sequences = resolve_sequences(&layout, MaskSource::Raw, &cmd.run.sequences)?;
    run_sequences(cmd.run.jobs, &sequences, |seq| {
        let start = Instant::now();
        let raw = load_sequence(&layout, seq, MaskSource::Raw)?;
        let scores = score_objects(&raw, &config);
        let selected = select_top(&raw, &config);
        save_masks(&selected, &layout, seq)?;
        let mut block = format!(
            "sequence {seq} ({} frames, {} objects proposed, {} kept, {})\n",
            raw.len(),
            scores.len(),
            selected.object_ids().len(),
            seconds(start.elapsed())
        );
        block.push_str("  rank  id  frames  rel-size  score     kept\n");
        for (rank, s) in scores.iter().enumerate() {
            block.push_str(&format!(
                "  {:<4}  {:<2}  {:<6}  {:<8.4}  {:<8.3}  {}\n",
                rank + 1,
                s.id,
                s.appearance_count,
                s.relative_size,
                s.combined,
                if rank < config.top_k { "yes" } else { "no" }
            ));
        }
        Ok(block)
    })
}

// -------------------------------------------------------------------- refine

#[derive(Serialize)]
struct ReportFile<'a> {
    sequence: &'a str,
    entries: &'a [maskmend::temporal::ReportEntry],
}

fn write_report(
    layout: &DatasetLayout,
    seq: &str,
    report: &InconsistencyReport,
) -> Result<()> {
    let dir = layout.masks_dir(MaskSource::Output, seq);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("report.txt"), report.to_lines())?;
    let json = serde_json::to_string_pretty(&ReportFile { sequence: seq, entries: &report.entries })?;
    fs::write(dir.join("report.json"), json + "\n")?;
    Ok(())
}

fn status_counts(report: &InconsistencyReport) -> String {
    format!(
        "{} corrected, {} uncorrectable, {} occlusion-guarded, {} zoom-exempt, {} unresolved",
        report.count(TcStatus::Corrected),
        report.count(TcStatus::Uncorrectable),
        report.count(TcStatus::RefinedAwayOcclusion),
        report.count(TcStatus::RefinedAwayZoom),
        report.count(TcStatus::Detected),
    )
}

fn cmd_refine(cmd: RefineCmd) -> Result<()> {
    let layout = cmd.layout.layout();
    let selection = cmd.selection.config();
    let tc = cmd.tc.config();
    let sequences = resolve_sequences(&layout, MaskSource::Raw, &cmd.run.sequences)?;
    run_sequences(cmd.run.jobs, &sequences, |seq| {
        let start = Instant::now();
        let raw = load_sequence(&layout, seq, MaskSource::Raw)?;
        let selected = select_top(&raw, &selection);
        let (repaired, report) = run_tc(&selected, &raw, &tc);
        save_masks(&repaired, &layout, seq)?;
        write_report(&layout, seq, &report)?;
        let elapsed = start.elapsed();
        let mut block = format!(
            "sequence {seq} ({} frames, kept {:?}, {}; {:.0} ms/frame)\n",
            raw.len(),
            repaired.object_ids(),
            seconds(elapsed),
            elapsed.as_secs_f64() * 1000.0 / raw.len() as f64
        );
        block.push_str(&format!("  {}\n", status_counts(&report)));
        for line in report.to_lines().lines() {
            block.push_str(&format!("  {line}\n"));
        }
        Ok(block)
    })
}

// ------------------------------------------------------------------ evaluate

#[derive(Serialize)]
struct ObjectScoreJson {
    id: u16,
    matched_pred: Option<u16>,
    j: f64,
    f: f64,
    jf: f64,
}

#[derive(Serialize)]
struct SequenceScoreJson {
    sequence: String,
    objects: Vec<ObjectScoreJson>,
    j: f64,
    f: f64,
    jf: f64,
}

#[derive(Serialize)]
struct EvaluationJson {
    sequences: Vec<SequenceScoreJson>,
    global_j: f64,
    global_f: f64,
    global_jf: f64,
}

fn sequence_block(seq: &str, metrics: &SequenceMetrics, elapsed: Duration) -> String {
    let mut block = format!("sequence {seq} ({})\n", seconds(elapsed));
    for o in &metrics.per_object {
        let matched = match o.matched_pred {
            Some(p) => format!("pred {p}"),
            None => "(unmatched)".to_string(),
        };
        block.push_str(&format!(
            "  gt {:<3} -> {:<11}  J&F {:>5}  J {:>5}  F {:>5}\n",
            o.id,
            matched,
            pct(o.jf),
            pct(o.j_mean),
            pct(o.f_mean)
        ));
    }
    block.push_str(&format!(
        "  mean                  J&F {:>5}  J {:>5}  F {:>5}\n",
        pct(metrics.jf),
        pct(metrics.j_mean),
        pct(metrics.f_mean)
    ));
    block
}

fn cmd_evaluate(cmd: EvaluateCmd) -> Result<()> {
    let layout = cmd.layout.layout();
    let pred_source: MaskSource = cmd.pred.into();
    let matching: IdMatching = cmd.matching.into();
    let sequences = resolve_sequences(&layout, MaskSource::GroundTruth, &cmd.run.sequences)?;
    // Collect metrics (not just printed blocks) for the global row and JSON.
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cmd.run.jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<(String, Result<(SequenceMetrics, Duration)>)> = pool.install(|| {
        sequences
            .par_iter()
            .map(|seq| {
                let outcome = (|| {
                    let start = Instant::now();
                    let gt = load_sequence(&layout, seq, MaskSource::GroundTruth)?;
                    let pred = load_sequence(&layout, seq, pred_source)?;
                    let metrics = evaluate_sequence(&pred, &gt, matching);
                    Ok((metrics, start.elapsed()))
                })();
                (seq.clone(), outcome)
            })
            .collect()
    });
    let mut failures = 0usize;
    let mut scored: Vec<(String, SequenceMetrics)> = Vec::new();
    for (seq, result) in results {
        match result {
            Ok((metrics, elapsed)) => {
                print!("{}", sequence_block(&seq, &metrics, elapsed));
                scored.push((seq, metrics));
            }
            Err(err) => {
                failures += 1;
                eprintln!("sequence {seq}: error: {err:#}");
            }
        }
    }
    if !scored.is_empty() {
        // Global scores pool every ground-truth object track equally.
        let objects: Vec<&maskmend::metrics::ObjectMetrics> =
            scored.iter().flat_map(|(_, m)| m.per_object.iter()).collect();
        let n = objects.len() as f64;
        let gj = objects.iter().map(|o| o.j_mean).sum::<f64>() / n;
        let gf = objects.iter().map(|o| o.f_mean).sum::<f64>() / n;
        let gjf = objects.iter().map(|o| o.jf).sum::<f64>() / n;
        println!(
            "global over {} sequence(s), {} object(s): J&F {}  J {}  F {}",
            scored.len(),
            objects.len(),
            pct(gjf),
            pct(gj),
            pct(gf)
        );
        if let Some(path) = &cmd.json {
            let doc = EvaluationJson {
                sequences: scored
                    .iter()
                    .map(|(seq, m)| SequenceScoreJson {
                        sequence: seq.clone(),
                        objects: m
                            .per_object
                            .iter()
                            .map(|o| ObjectScoreJson {
                                id: o.id,
                                matched_pred: o.matched_pred,
                                j: o.j_mean,
                                f: o.f_mean,
                                jf: o.jf,
                            })
                            .collect(),
                        j: m.j_mean,
                        f: m.f_mean,
                        jf: m.jf,
                    })
                    .collect(),
                global_j: gj,
                global_f: gf,
                global_jf: gjf,
            };
            fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
                .with_context(|| format!("writing {}", path.display()))?;
        }
    }
    if failures > 0 {
        bail!("{failures} of {} sequences failed", sequences.len());
    }
    Ok(())
}

// ------------------------------------------------------------------ diagnose

fn cmd_diagnose(cmd: DiagnoseCmd) -> Result<()> {
    let layout = cmd.layout.layout();
    let source: MaskSource = cmd.source.into();
    let tc = cmd.tc.config();
    let sequences = resolve_sequences(&layout, source, &cmd.run.sequences)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cmd.run.jobs)
        .build()
        .context("building worker pool")?;
    let results: Vec<(String, Result<(InconsistencyReport, Duration)>)> = pool.install(|| {
        sequences
            .par_iter()
            .map(|seq| {
                let outcome = (|| {
                    let start = Instant::now();
                    let bundle = load_sequence(&layout, seq, source)?;
                    Ok((diagnose(&bundle, &tc), start.elapsed()))
                })();
                (seq.clone(), outcome)
            })
            .collect()
    });
    let mut failures = 0usize;
    let mut all: Vec<(String, InconsistencyReport)> = Vec::new();
    for (seq, result) in results {
        match result {
            Ok((report, elapsed)) => {
                println!("sequence {seq} ({}, {})", status_counts(&report), seconds(elapsed));
                for line in report.to_lines().lines() {
                    println!("  {line}");
                }
                all.push((seq, report));
            }
            Err(err) => {
                failures += 1;
                eprintln!("sequence {seq}: error: {err:#}");
            }
        }
    }
    if let Some(path) = &cmd.json {
        #[derive(Serialize)]
        struct DiagnoseJson<'a> {
            reports: Vec<ReportFile<'a>>,
        }
        let doc = DiagnoseJson {
            reports: all
                .iter()
                .map(|(seq, r)| ReportFile { sequence: seq, entries: &r.entries })
                .collect(),
        };
        fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if failures > 0 {
        bail!("{failures} of {} sequences failed", sequences.len());
    }
    Ok(())
}

// --------------------------------------------------------------------- synth

fn cmd_synth(cmd: SynthCmd) -> Result<()> {
    let layout = cmd.layout.layout();
    let script = load_script(&cmd.script)
        .map_err(|e| anyhow!("{e}"))
        .with_context(|| format!("loading {}", cmd.script.display()))?;
    let (clean, defective) = realize(&script).map_err(|e| anyhow!("{e}"))?;
    save_frames(&clean, &layout, &script.name)?;
    save_masks_to(&clean, &layout, &script.name, MaskSource::GroundTruth)?;
    save_masks_to(&defective, &layout, &script.name, MaskSource::Raw)?;
    println!(
        "rendered {}: {} frames {}x{}, objects {:?}, {} defect(s); wrote frames, ground truth, and raw proposals",
        script.name,
        clean.len(),
        clean.width(),
        clean.height(),
        defective.object_ids(),
        script.defects.len()
    );
    Ok(())
}
