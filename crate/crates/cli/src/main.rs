//! Command-line front end: `detect` runs the full change-detection pipeline
//! on two splat scenes, `synth` generates verification scene pairs with
//! ground truth, `eval` scores predictions against ground-truth masks, and
//! `sweep` reruns the pipeline across a quantile grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use splatdiff_core::eval::{self, RoutingConditioning};
use splatdiff_core::io::{cameras, image, ply};
use splatdiff_core::maps::{BinaryImage, LabelImage, ScalarImage};
use splatdiff_core::kernels::BandwidthEstimator;
use splatdiff_core::pipeline::{
    self, NeighborStrategy, PipelineConfig, RunManifest, SweepAxis,
};
use splatdiff_core::scene::to_raw_record;
use splatdiff_core::synth::{self, ChangeKind};

#[derive(Parser)]
#[command(name = "splatdiff", version, about = "Primitive-space change detection for Gaussian-splat scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect changes between two splat scenes and render change maps.
    Detect(DetectArgs),
    /// Generate a synthetic scene pair with ground truth.
    Synth(SynthArgs),
    /// Score predictions against ground-truth masks.
    Eval(EvalArgs),
    /// Sweep one data-driven quantile across a grid.
    Sweep(SweepArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Neighbor-ball radius multiplier.
    #[arg(long, default_value_t = 3.0)]
    eta: f64,
    /// Quantile for the geometric drift scales.
    #[arg(long, default_value_t = 0.75)]
    geo_quantile: f64,
    /// Quantile for the color bandwidth.
    #[arg(long, default_value_t = 0.50)]
    color_quantile: f64,
    /// Quantile for the confidence-weight reference.
    #[arg(long, default_value_t = 0.25)]
    conf_quantile: f64,
    /// Binarization threshold for the fused map.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.01)]
    z_near: f64,
    #[arg(long, default_value_t = 1000.0)]
    z_far: f64,
    /// Drop primitives below this opacity before filtering.
    #[arg(long, default_value_t = 0.0)]
    min_opacity: f64,
    /// Floor for the squared color bandwidth.
    #[arg(long, default_value_t = 1e-6)]
    bandwidth_floor: f64,
    /// Use the kernel-weighted quantile of squared color differences for the
    /// bandwidth instead of the quantile of the weighted products.
    #[arg(long, default_value_t = false)]
    weighted_color_quantile: bool,
    /// Render resolution override, e.g. 128x96.
    #[arg(long, value_parser = parse_size)]
    render_size: Option<(u32, u32)>,
}

fn parse_size(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got {s}"))?;
    Ok((
        w.parse().map_err(|e| format!("bad width: {e}"))?,
        h.parse().map_err(|e| format!("bad height: {e}"))?,
    ))
}

impl ConfigArgs {
    fn to_config(&self) -> PipelineConfig {
        PipelineConfig {
            eta: self.eta,
            geo_quantile: self.geo_quantile,
            color_quantile: self.color_quantile,
            conf_quantile: self.conf_quantile,
            threshold: self.threshold,
            z_near: self.z_near,
            z_far: self.z_far,
            min_opacity: self.min_opacity,
            bandwidth_floor: self.bandwidth_floor,
            bandwidth_estimator: if self.weighted_color_quantile {
                BandwidthEstimator::WeightedQuantile
            } else {
                BandwidthEstimator::ProductQuantile
            },
            render_size: self.render_size,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    /// First (reference) scene PLY.
    #[arg(long)]
    scene1: PathBuf,
    /// Second (inference) scene PLY.
    #[arg(long)]
    scene2: PathBuf,
    /// Poses of rig 1 (.json or COLMAP directory).
    #[arg(long)]
    poses1: PathBuf,
    /// Poses of rig 2 (.json or COLMAP directory).
    #[arg(long)]
    poses2: PathBuf,
    /// Views to render; defaults to every camera of rig 2.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    /// Rayon thread count (0 = library default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Replace the k-d tree with exhaustive linear scans.
    #[arg(long, default_value_t = false)]
    exhaustive: bool,
}

#[derive(Copy, Clone, ValueEnum)]
enum ChangeKindArg {
    Remove,
    Add,
    Displace,
    Recolor,
}

impl From<ChangeKindArg> for ChangeKind {
    fn from(value: ChangeKindArg) -> Self {
        match value {
            ChangeKindArg::Remove => ChangeKind::Remove,
            ChangeKindArg::Add => ChangeKind::Add,
            ChangeKindArg::Displace => ChangeKind::Displace,
            ChangeKindArg::Recolor => ChangeKind::Recolor,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Generation spec JSON; overrides the preset flags.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Change kind for the built-in moderate preset.
    #[arg(long, value_enum)]
    change: Option<ChangeKindArg>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory with detect outputs.
    #[arg(long)]
    pred: PathBuf,
    /// Directory with gt_binary_view*.png / gt_labels_view*.png masks.
    #[arg(long)]
    gt: PathBuf,
    /// Output directory for metrics files (defaults to --pred).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Copy, Clone, ValueEnum)]
#[allow(clippy::enum_variant_names)]
enum SweepAxisArg {
    GeoQuantile,
    ColorQuantile,
    ConfQuantile,
}

impl From<SweepAxisArg> for SweepAxis {
    fn from(value: SweepAxisArg) -> Self {
        match value {
            SweepAxisArg::GeoQuantile => SweepAxis::GeoQuantile,
            SweepAxisArg::ColorQuantile => SweepAxis::ColorQuantile,
            SweepAxisArg::ConfQuantile => SweepAxis::ConfQuantile,
        }
    }
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    scene1: PathBuf,
    #[arg(long)]
    scene2: PathBuf,
    #[arg(long)]
    poses1: PathBuf,
    #[arg(long)]
    poses2: PathBuf,
    /// Ground-truth mask directory (gt_binary_view*.png).
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum)]
    axis: SweepAxisArg,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(args) => run_detect(args),
        Command::Synth(args) => run_synth(args),
        Command::Eval(args) => run_eval(args),
        Command::Sweep(args) => run_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::json!({ "error": format!("{err:#}") }));
            ExitCode::FAILURE
        }
    }
}

fn with_thread_pool<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if threads == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("building thread pool")?
        .install(f)
}

fn run_detect(args: DetectArgs) -> Result<()> {
    let config = args.config.to_config();
    let strategy = if args.exhaustive {
        NeighborStrategy::Exhaustive
    } else {
        NeighborStrategy::KdTree
    };
    let scene1 = pipeline::load_scene(&args.scene1, &args.poses1)
        .with_context(|| format!("loading scene 1 from {}", args.scene1.display()))?;
    let scene2 = pipeline::load_scene(&args.scene2, &args.poses2)
        .with_context(|| format!("loading scene 2 from {}", args.scene2.display()))?;
    let views = match &args.views {
        Some(path) => cameras::load_cameras(path)
            .with_context(|| format!("loading views from {}", path.display()))?,
        None => scene2.cameras.clone(),
    };

    let run = with_thread_pool(args.threads, || {
        pipeline::run_detect(&scene1, &scene2, &views, &config, strategy).map_err(Into::into)
    });
    match run {
        Ok(output) => {
            pipeline::write_detect_output(&args.out, &output, &config)?;
            println!(
                "detect: {} + {} primitives retained, {} views written to {}",
                output.stats.retained_primitives[0],
                output.stats.retained_primitives[1],
                output.views.len(),
                args.out.display()
            );
            Ok(())
        }
        Err(err) => {
            // Record the failure so partial runs are inspectable.
            let manifest = RunManifest {
                status: "failed".into(),
                config: config.clone(),
                stats: None,
                view_ids: vec![],
                timings: None,
                error: Some(format!("{err:#}")),
            };
            let _ = pipeline::write_manifest(&args.out, &manifest);
            Err(err)
        }
    }
}

fn run_synth(args: SynthArgs) -> Result<()> {
    let spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading spec {}", path.display()))?;
            serde_json::from_str(&text).context("parsing synth spec")?
        }
        None => {
            let changes = match args.change {
                Some(kind) => vec![synth::preset_change(kind.into())],
                None => vec![],
            };
            synth::moderate_preset(args.seed, changes)
        }
    };

    let (scene1, scene2, truth) = synth::generate_pair(&spec)?;
    std::fs::create_dir_all(&args.out)?;

    let raw1: Vec<_> = scene1.primitives.iter().map(to_raw_record).collect();
    let raw2: Vec<_> = scene2.primitives.iter().map(to_raw_record).collect();
    ply::save_splat_ply(&args.out.join("scene1.ply"), &raw1)?;
    ply::save_splat_ply(&args.out.join("scene2.ply"), &raw2)?;
    cameras::save_cameras_json(&args.out.join("cameras1.json"), &scene1.cameras)?;
    cameras::save_cameras_json(&args.out.join("cameras2.json"), &scene2.cameras)?;
    std::fs::write(
        args.out.join("spec.json"),
        serde_json::to_string_pretty(&spec)?,
    )?;

    #[derive(Serialize)]
    struct TruthFile<'a> {
        changed1: &'a [Option<ChangeKind>],
        changed2: &'a [Option<ChangeKind>],
    }
    std::fs::write(
        args.out.join("truth.json"),
        serde_json::to_string(&TruthFile {
            changed1: &truth.changed1,
            changed2: &truth.changed2,
        })?,
    )?;

    for mask in &truth.masks {
        let id = mask.camera_id;
        image::write_binary_map(
            &mask.binary,
            &args.out.join(format!("gt_binary_view{id:03}.png")),
        )?;
        image::write_label_map(
            &mask.labels,
            &args.out.join(format!("gt_labels_view{id:03}.png")),
        )?;
    }

    println!(
        "synth: {} + {} primitives, {} gt views written to {}",
        scene1.len(),
        scene2.len(),
        truth.masks.len(),
        args.out.display()
    );
    Ok(())
}

/// View ids found by scanning for `{prefix}view{NNN}.png`.
fn scan_view_ids(dir: &Path, prefix: &str) -> Result<Vec<u32>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let name = entry?.file_name();
        let name = name.to_string_lossy();
        if let Some(rest) = name.strip_prefix(prefix) {
            if let Some(num) = rest.strip_prefix("view").and_then(|r| r.strip_suffix(".png")) {
                if let Ok(id) = num.parse() {
                    ids.push(id);
                }
            }
        }
    }
    ids.sort_unstable();
    if ids.is_empty() {
        bail!("no {prefix}view*.png files in {}", dir.display());
    }
    Ok(ids)
}

#[derive(Serialize)]
struct EvalReport {
    fixed: eval::DetectionMetrics,
    oracle_threshold: f64,
    oracle: eval::DetectionMetrics,
    routing_intersection: Option<eval::RoutingMetrics>,
    routing_gt_changed: Option<eval::RoutingMetrics>,
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let out_dir = args.out.clone().unwrap_or_else(|| args.pred.clone());
    let ids = scan_view_ids(&args.gt, "gt_binary_")?;

    let mut gt_binary: Vec<BinaryImage> = Vec::new();
    let mut gt_labels: Vec<LabelImage> = Vec::new();
    let mut pred_binary: Vec<BinaryImage> = Vec::new();
    let mut pred_labels: Vec<LabelImage> = Vec::new();
    let mut fused: Vec<ScalarImage> = Vec::new();
    for id in &ids {
        gt_binary.push(image::read_binary_map(
            &args.gt.join(format!("gt_binary_view{id:03}.png")),
        )?);
        gt_labels.push(image::read_label_map(
            &args.gt.join(format!("gt_labels_view{id:03}.png")),
        )?);
        pred_binary.push(image::read_binary_map(
            &args.pred.join(format!("binary_view{id:03}.png")),
        )?);
        pred_labels.push(image::read_label_map(
            &args.pred.join(format!("labels_view{id:03}.png")),
        )?);
        fused.push(image::read_change_map(
            &args.pred.join(format!("map_fused_view{id:03}.png")),
        )?);
    }

    let fixed = eval::detection_metrics(&pred_binary, &gt_binary, 0.5)?;
    let (oracle_threshold, oracle) =
        eval::oracle_threshold(&fused, &gt_binary, &eval::default_threshold_grid())?;
    let routing_intersection =
        eval::routing_metrics(&pred_labels, &gt_labels, RoutingConditioning::Intersection).ok();
    let routing_gt_changed =
        eval::routing_metrics(&pred_labels, &gt_labels, RoutingConditioning::GtChanged).ok();

    let report = EvalReport {
        fixed,
        oracle_threshold,
        oracle,
        routing_intersection,
        routing_gt_changed,
    };
    std::fs::create_dir_all(&out_dir)?;
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&report)?,
    )?;

    // Flat CSV companion.
    let mut rows: BTreeMap<&str, f64> = BTreeMap::new();
    rows.insert("fixed_miou", report.fixed.miou);
    rows.insert("fixed_f1", report.fixed.f1);
    rows.insert("oracle_miou", report.oracle.miou);
    rows.insert("oracle_f1", report.oracle.f1);
    rows.insert("oracle_threshold", report.oracle_threshold);
    if let Some(r) = &report.routing_intersection {
        rows.insert("routing_balanced_accuracy_intersection", r.balanced_accuracy);
    }
    if let Some(r) = &report.routing_gt_changed {
        rows.insert("routing_balanced_accuracy_gt_changed", r.balanced_accuracy);
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        csv.push_str(&format!("{k},{v}\n"));
    }
    std::fs::write(out_dir.join("metrics.csv"), csv)?;

    println!(
        "eval: fixed mIoU {:.4}, oracle mIoU {:.4} over {} views",
        report.fixed.miou,
        report.oracle.miou,
        ids.len()
    );
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let config = args.config.to_config();
    let axis: SweepAxis = args.axis.into();
    let scene1 = pipeline::load_scene(&args.scene1, &args.poses1)?;
    let scene2 = pipeline::load_scene(&args.scene2, &args.poses2)?;

    let ids = scan_view_ids(&args.gt, "gt_binary_")?;
    let mut gt_binary = Vec::new();
    let mut views = Vec::new();
    for id in &ids {
        gt_binary.push(image::read_binary_map(
            &args.gt.join(format!("gt_binary_view{id:03}.png")),
        )?);
        let cam = scene2
            .cameras
            .iter()
            .find(|c| c.id == *id)
            .with_context(|| format!("rig 2 has no camera id {id} for gt mask"))?;
        views.push(cam.clone());
    }

    let rows = with_thread_pool(args.threads, || {
        pipeline::quantile_sweep(
            &scene1,
            &scene2,
            &views,
            &gt_binary,
            &config,
            axis,
            &pipeline::sweep_grid(),
            NeighborStrategy::KdTree,
        )
        .map_err(Into::into)
    })?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    pipeline::write_sweep_csv(&args.out, axis, &rows)?;
    println!("sweep: {} grid points written to {}", rows.len(), args.out.display());
    Ok(())
}
