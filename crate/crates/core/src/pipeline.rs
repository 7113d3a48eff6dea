//! End-to-end orchestration: drift modeling, kernel scoring, aggregation and
//! rendering for a scene pair, plus the quantile sweep harness and artifact
//! writing.
//!
//! Stage order: (1) bidirectional ambiguity scales, per-primitive Fisher
//! information and per-scene injection scale into effective covariances;
//! (2) color bandwidth, cross-scene neighbor sets and kernel scores;
//! (3) confidence weighting and saturated combination; (4) per-view rendering
//! of both scenes' score channels, pixel-max fusion, binarization and
//! routing labels.
//!
//! All parallel maps collect in index order and every reduction sorts its
//! inputs, so outputs are bit-identical across thread counts.

use std::path::Path;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::{self, PrimitiveScores};
use crate::drift::{self, EffectiveCovariance, ObservabilityState};
use crate::eval;
use crate::io::cameras::CameraRecord;
use crate::io::image::MapBitDepth;
use crate::io::{self, IoError};
use crate::kernels::{self, BandwidthEstimator, SceneKernelData};
use crate::maps::{BinaryImage, LabelImage, ScalarImage};
use crate::render;
use crate::scene::{self, GaussianScene};
use crate::spatial::{LinearScan, PointQuery, SpatialIndex};
use crate::stats;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Scene(#[from] scene::SceneError),

    #[error(transparent)]
    Drift(#[from] drift::DriftError),

    #[error(transparent)]
    Kernel(#[from] kernels::KernelError),

    #[error(transparent)]
    Aggregate(#[from] aggregate::AggregateError),

    #[error(transparent)]
    Render(#[from] render::RenderError),

    #[error(transparent)]
    Eval(#[from] eval::EvalError),

    #[error(transparent)]
    Io(#[from] IoError),

    #[error("duplicate view camera id {0}")]
    DuplicateViewId(u32),
}

/// Pipeline parameters. Defaults follow the method's reference settings:
/// unit-free radius multiplier 3, upper-quartile drift scales, median color
/// bandwidth, lower-quartile confidence reference, midpoint threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub eta: f64,
    pub geo_quantile: f64,
    pub color_quantile: f64,
    pub conf_quantile: f64,
    pub threshold: f64,
    pub z_near: f64,
    pub z_far: f64,
    pub min_opacity: f64,
    pub bandwidth_floor: f64,
    /// Aggregation rule for the color bandwidth.
    #[serde(default)]
    pub bandwidth_estimator: BandwidthEstimator,
    /// Optional render resolution override (width, height); intrinsics are
    /// rescaled proportionally.
    pub render_size: Option<(u32, u32)>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            eta: kernels::DEFAULT_ETA,
            geo_quantile: 0.75,
            color_quantile: 0.50,
            conf_quantile: 0.25,
            threshold: 0.5,
            z_near: scene::DEFAULT_Z_NEAR,
            z_far: scene::DEFAULT_Z_FAR,
            min_opacity: 0.0,
            bandwidth_floor: kernels::DEFAULT_BANDWIDTH_FLOOR,
            bandwidth_estimator: BandwidthEstimator::default(),
            render_size: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let quantile_ok = |q: f64| q > 0.0 && q < 1.0;
        if !quantile_ok(self.geo_quantile)
            || !quantile_ok(self.color_quantile)
            || !quantile_ok(self.conf_quantile)
        {
            return Err(PipelineError::InvalidConfig(
                "quantiles must lie in (0, 1)".into(),
            ));
        }
        if !self.eta.is_finite() || self.eta <= 0.0 {
            return Err(PipelineError::InvalidConfig("eta must be > 0".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(PipelineError::InvalidConfig(
                "threshold must lie in (0, 1)".into(),
            ));
        }
        if !(self.z_near > 0.0 && self.z_far > self.z_near) {
            return Err(PipelineError::InvalidConfig(
                "need 0 < z_near < z_far".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_opacity) {
            return Err(PipelineError::InvalidConfig(
                "min_opacity must lie in [0, 1]".into(),
            ));
        }
        if self.bandwidth_floor < 0.0 {
            return Err(PipelineError::InvalidConfig(
                "bandwidth floor must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Neighbor retrieval backend. `Exhaustive` replaces the k-d tree with linear
/// scans of identical semantics; it exists for the index-free pipeline
/// variant used to pin oracle fixtures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NeighborStrategy {
    #[default]
    KdTree,
    Exhaustive,
}

enum IndexBackend {
    Tree(SpatialIndex),
    Scan(Vec<Vector3<f64>>),
}

impl IndexBackend {
    fn build(positions: &[Vector3<f64>], strategy: NeighborStrategy) -> Self {
        match strategy {
            NeighborStrategy::KdTree => IndexBackend::Tree(SpatialIndex::build(positions)),
            NeighborStrategy::Exhaustive => IndexBackend::Scan(positions.to_vec()),
        }
    }
}

impl PointQuery for IndexBackend {
    fn nearest(&self, query: &Vector3<f64>) -> Option<(usize, f64)> {
        match self {
            IndexBackend::Tree(t) => t.nearest(query),
            IndexBackend::Scan(p) => LinearScan::new(p).nearest(query),
        }
    }

    fn within_radius(&self, query: &Vector3<f64>, radius: f64) -> Vec<usize> {
        match self {
            IndexBackend::Tree(t) => t.within_radius(query, radius),
            IndexBackend::Scan(p) => LinearScan::new(p).within_radius(query, radius),
        }
    }
}

/// Scene-pair statistics estimated during a run; enough, together with the
/// inputs and config, to re-derive every effective covariance.
#[derive(Debug, Clone, Serialize)]
pub struct PairStats {
    pub ambiguity_normal_sq: f64,
    pub ambiguity_tangential_sq: f64,
    pub color_bandwidth_sq: f64,
    pub injection_scale: [f64; 2],
    pub input_primitives: [usize; 2],
    pub retained_primitives: [usize; 2],
}

/// Rendered outputs for one view.
#[derive(Debug, Clone)]
pub struct ViewMaps {
    pub camera_id: u32,
    pub scene1: ScalarImage,
    pub scene2: ScalarImage,
    pub fused: ScalarImage,
    pub structural: ScalarImage,
    pub surface: ScalarImage,
    pub binary: BinaryImage,
    pub labels: LabelImage,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StageTimings {
    pub drift_ms: f64,
    pub scoring_ms: f64,
    pub render_ms: f64,
    pub total_ms: f64,
}

/// Full result of a detection run.
#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub scores1: Vec<PrimitiveScores>,
    pub scores2: Vec<PrimitiveScores>,
    /// Original primitive indices retained by the opacity and co-visibility
    /// filters, per scene.
    pub retained1: Vec<usize>,
    pub retained2: Vec<usize>,
    pub stats: PairStats,
    pub views: Vec<ViewMaps>,
    pub timings: StageTimings,
}

fn apply_min_opacity(scene: &GaussianScene, min_opacity: f64) -> (GaussianScene, Vec<usize>) {
    if min_opacity <= 0.0 {
        return (scene.clone(), (0..scene.len()).collect());
    }
    let mut primitives = Vec::new();
    let mut retained = Vec::new();
    for (i, prim) in scene.primitives.iter().enumerate() {
        if prim.opacity >= min_opacity {
            primitives.push(prim.clone());
            retained.push(i);
        }
    }
    (
        GaussianScene {
            primitives,
            cameras: scene.cameras.clone(),
        },
        retained,
    )
}

struct SceneState {
    scene: GaussianScene,
    retained: Vec<usize>,
    positions: Vec<Vector3<f64>>,
    colors: Vec<Vector3<f64>>,
    index: IndexBackend,
    observability: Vec<ObservabilityState>,
    effective: Vec<EffectiveCovariance>,
    injection_scale: f64,
}

fn stage1_scene(
    scene: GaussianScene,
    retained: Vec<usize>,
    scales: &drift::AmbiguityScales,
    config: &PipelineConfig,
    strategy: NeighborStrategy,
) -> Result<SceneState, PipelineError> {
    let positions = scene.positions();
    let colors: Vec<Vector3<f64>> = scene.primitives.iter().map(|p| p.color_dc).collect();
    let index = IndexBackend::build(&positions, strategy);

    let inflated: Vec<Matrix3<f64>> = scene
        .primitives
        .par_iter()
        .map(|p| drift::inflate_representation(&p.covariance, &p.normal, scales))
        .collect();
    let observability: Vec<ObservabilityState> = scene
        .primitives
        .par_iter()
        .map(|p| drift::compute_fim(&p.position, &scene.cameras, config.z_near, config.z_far))
        .collect::<Result<_, _>>()?;
    let injection_scale = drift::fim_injection_scale(&inflated, &observability)?;
    let effective: Vec<EffectiveCovariance> = inflated
        .par_iter()
        .zip(&observability)
        .map(|(cov, obs)| drift::effective_covariance(cov, &obs.fim_pinv, injection_scale))
        .collect();

    Ok(SceneState {
        scene,
        retained,
        positions,
        colors,
        index,
        observability,
        effective,
        injection_scale,
    })
}

fn score_scene(
    source: &SceneState,
    target: &SceneState,
    color_bandwidth_sq: f64,
    config: &PipelineConfig,
) -> Result<Vec<PrimitiveScores>, PipelineError> {
    let target_data = SceneKernelData {
        positions: &target.positions,
        colors: &target.colors,
        effective: &target.effective,
    };
    let traces: Vec<f64> = source.effective.iter().map(|e| e.effective.trace()).collect();
    let median_trace = stats::median(&traces).expect("scene non-empty after filtering");

    let raw: Vec<(f64, f64)> = (0..source.positions.len())
        .into_par_iter()
        .map(|i| -> Result<(f64, f64), PipelineError> {
            let neighbors = kernels::retrieve_neighbors(
                &source.positions[i],
                source.effective[i].max_eigenvalue,
                &target.index,
                config.eta,
            );
            let geometric = kernels::score_geometric(
                &source.positions[i],
                &source.effective[i].effective,
                &target_data,
                &neighbors,
            );
            let bandwidth_sq =
                kernels::adaptive_bandwidth(color_bandwidth_sq, traces[i], median_trace)?;
            let appearance =
                kernels::score_appearance(&source.colors[i], bandwidth_sq, &target_data, &neighbors);
            Ok((geometric, appearance))
        })
        .collect::<Result<_, _>>()?;

    // Confidence reference: the conf_quantile of this scene's Fisher traces.
    let fim_traces: Vec<f64> = source.observability.iter().map(|o| o.trace).collect();
    let reference = stats::quantile(&fim_traces, config.conf_quantile).expect("non-empty");

    let scores = raw
        .into_iter()
        .zip(&source.observability)
        .map(|((geometric, appearance), obs)| -> Result<PrimitiveScores, PipelineError> {
            let confidence = aggregate::confidence_weight(obs.trace, reference)?;
            let combined = aggregate::combine_scores(geometric, appearance, confidence);
            let (_, surface_residual) = aggregate::disambiguation_channels(geometric, appearance);
            Ok(PrimitiveScores {
                geometric,
                appearance,
                confidence,
                combined,
                surface_residual,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(scores)
}

fn scaled_camera(camera: &CameraRecord, render_size: Option<(u32, u32)>) -> CameraRecord {
    match render_size {
        None => camera.clone(),
        Some((w, h)) => {
            let sx = w as f64 / camera.width as f64;
            let sy = h as f64 / camera.height as f64;
            CameraRecord {
                width: w,
                height: h,
                fx: camera.fx * sx,
                fy: camera.fy * sy,
                cx: camera.cx * sx,
                cy: camera.cy * sy,
                ..camera.clone()
            }
        }
    }
}

/// Run the full detection pipeline. `views` are the cameras to render change
/// maps at (typically the second rig); camera ids must be unique.
pub fn run_detect(
    scene1: &GaussianScene,
    scene2: &GaussianScene,
    views: &[CameraRecord],
    config: &PipelineConfig,
    strategy: NeighborStrategy,
) -> Result<DetectOutput, PipelineError> {
    config.validate()?;
    for (i, v) in views.iter().enumerate() {
        if views[..i].iter().any(|u| u.id == v.id) {
            return Err(PipelineError::DuplicateViewId(v.id));
        }
    }

    let started = Instant::now();
    let input_counts = [scene1.len(), scene2.len()];

    // Opacity pre-filter (default off) then co-visibility filtering.
    let (scene1, keep1) = apply_min_opacity(scene1, config.min_opacity);
    let (scene2, keep2) = apply_min_opacity(scene2, config.min_opacity);
    let covisible = scene::covisibility_filter(&scene1, &scene2, config.z_near, config.z_far)?;
    let retained1: Vec<usize> = covisible.retained1.iter().map(|&i| keep1[i]).collect();
    let retained2: Vec<usize> = covisible.retained2.iter().map(|&i| keep2[i]).collect();

    // Stage 1: drift modeling.
    let pre_index1 = IndexBackend::build(&covisible.scene1.positions(), strategy);
    let pre_index2 = IndexBackend::build(&covisible.scene2.positions(), strategy);
    let scales = drift::estimate_ambiguity_scales(
        &covisible.scene1,
        &pre_index1,
        &covisible.scene2,
        &pre_index2,
        config.geo_quantile,
    )?;
    let state1 = stage1_scene(covisible.scene1, retained1, &scales, config, strategy)?;
    let state2 = stage1_scene(covisible.scene2, retained2, &scales, config, strategy)?;
    let drift_ms = started.elapsed().as_secs_f64() * 1e3;

    // Stage 2: kernel scoring (bandwidth first, then per-primitive scores).
    let scoring_started = Instant::now();
    let data1 = SceneKernelData {
        positions: &state1.positions,
        colors: &state1.colors,
        effective: &state1.effective,
    };
    let data2 = SceneKernelData {
        positions: &state2.positions,
        colors: &state2.colors,
        effective: &state2.effective,
    };
    let color_bandwidth_sq = kernels::estimate_color_bandwidth(
        &data1,
        &state1.index,
        &data2,
        &state2.index,
        config.color_quantile,
        config.bandwidth_floor,
        config.bandwidth_estimator,
    )?;

    // Stages 2+3 per scene.
    let scores1 = score_scene(&state1, &state2, color_bandwidth_sq, config)?;
    let scores2 = score_scene(&state2, &state1, color_bandwidth_sq, config)?;
    let scoring_ms = scoring_started.elapsed().as_secs_f64() * 1e3;

    // Stage 4: render requested views.
    let render_started = Instant::now();
    let combined1: Vec<f64> = scores1.iter().map(|s| s.combined).collect();
    let combined2: Vec<f64> = scores2.iter().map(|s| s.combined).collect();
    let geo1: Vec<f64> = scores1.iter().map(|s| s.geometric).collect();
    let geo2: Vec<f64> = scores2.iter().map(|s| s.geometric).collect();
    let resid1: Vec<f64> = scores1.iter().map(|s| s.surface_residual).collect();
    let resid2: Vec<f64> = scores2.iter().map(|s| s.surface_residual).collect();

    let mut view_maps = Vec::with_capacity(views.len());
    for camera in views {
        let camera = scaled_camera(camera, config.render_size);
        let map1 = render::render_scalar(&state1.scene, &combined1, &camera)?;
        let map2 = render::render_scalar(&state2.scene, &combined2, &camera)?;
        let fused = render::fuse_maps(&map1, &map2)?;
        let structural = render::fuse_maps(
            &render::render_scalar(&state1.scene, &geo1, &camera)?,
            &render::render_scalar(&state2.scene, &geo2, &camera)?,
        )?;
        let surface = render::fuse_maps(
            &render::render_scalar(&state1.scene, &resid1, &camera)?,
            &render::render_scalar(&state2.scene, &resid2, &camera)?,
        )?;
        let (binary, labels) =
            render::binarize_and_label(&fused, &structural, &surface, config.threshold)?;
        view_maps.push(ViewMaps {
            camera_id: camera.id,
            scene1: map1,
            scene2: map2,
            fused,
            structural,
            surface,
            binary,
            labels,
        });
    }
    let render_ms = render_started.elapsed().as_secs_f64() * 1e3;

    let stats = PairStats {
        ambiguity_normal_sq: scales.normal_sq,
        ambiguity_tangential_sq: scales.tangential_sq,
        color_bandwidth_sq,
        injection_scale: [state1.injection_scale, state2.injection_scale],
        input_primitives: input_counts,
        retained_primitives: [state1.scene.len(), state2.scene.len()],
    };
    Ok(DetectOutput {
        scores1,
        scores2,
        retained1: state1.retained,
        retained2: state2.retained,
        stats,
        views: view_maps,
        timings: StageTimings {
            drift_ms,
            scoring_ms,
            render_ms,
            total_ms: started.elapsed().as_secs_f64() * 1e3,
        },
    })
}

/// Run manifest written next to the artifacts.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub status: String,
    pub config: PipelineConfig,
    pub stats: Option<PairStats>,
    pub view_ids: Vec<u32>,
    pub timings: Option<StageTimings>,
    pub error: Option<String>,
}

/// Write all artifacts of a run: per-scene score tables, per-view maps
/// (16-bit grayscale), binary and label maps, and the manifest.
pub fn write_detect_output(
    out_dir: &Path,
    output: &DetectOutput,
    config: &PipelineConfig,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(IoError::Io)?;
    io::table::save_score_table(
        &out_dir.join("scores_scene1.csv"),
        &output.retained1,
        &output.scores1,
    )?;
    io::table::save_score_table(
        &out_dir.join("scores_scene2.csv"),
        &output.retained2,
        &output.scores2,
    )?;

    for view in &output.views {
        let id = view.camera_id;
        let png = |stem: &str| out_dir.join(format!("{stem}_view{id:03}.png"));
        io::image::write_change_map(&view.scene1, &png("map_scene1"), MapBitDepth::Sixteen)?;
        io::image::write_change_map(&view.scene2, &png("map_scene2"), MapBitDepth::Sixteen)?;
        io::image::write_change_map(&view.fused, &png("map_fused"), MapBitDepth::Sixteen)?;
        io::image::write_change_map(&view.structural, &png("map_structural"), MapBitDepth::Sixteen)?;
        io::image::write_change_map(&view.surface, &png("map_surface"), MapBitDepth::Sixteen)?;
        io::image::write_binary_map(&view.binary, &png("binary"))?;
        io::image::write_label_map(&view.labels, &png("labels"))?;
    }

    let manifest = RunManifest {
        status: "ok".into(),
        config: config.clone(),
        stats: Some(output.stats.clone()),
        view_ids: output.views.iter().map(|v| v.camera_id).collect(),
        timings: Some(output.timings.clone()),
        error: None,
    };
    write_manifest(out_dir, &manifest)?;
    Ok(())
}

/// Write a manifest; used for both successful and failed runs.
pub fn write_manifest(out_dir: &Path, manifest: &RunManifest) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(IoError::Io)?;
    let json = serde_json::to_string_pretty(manifest).map_err(IoError::Json)?;
    std::fs::write(out_dir.join("manifest.json"), json).map_err(IoError::Io)?;
    Ok(())
}

/// Which data-driven quantile a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepAxis {
    GeoQuantile,
    ColorQuantile,
    ConfQuantile,
}

impl SweepAxis {
    pub fn default_value(self) -> f64 {
        match self {
            SweepAxis::GeoQuantile => 0.75,
            SweepAxis::ColorQuantile => 0.50,
            SweepAxis::ConfQuantile => 0.25,
        }
    }

    pub fn apply(self, config: &mut PipelineConfig, value: f64) {
        match self {
            SweepAxis::GeoQuantile => config.geo_quantile = value,
            SweepAxis::ColorQuantile => config.color_quantile = value,
            SweepAxis::ConfQuantile => config.conf_quantile = value,
        }
    }
}

/// One grid point of a quantile sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub quantile: f64,
    pub fixed_miou: f64,
    pub oracle_miou: f64,
    pub is_default: bool,
}

/// The standard 19-point grid: 0.05 to 0.95 in steps of 0.05.
pub fn sweep_grid() -> Vec<f64> {
    (1..=19).map(|k| k as f64 * 0.05).collect()
}

/// Run the pipeline once per grid point, varying only the swept quantile, and
/// score fixed-threshold and oracle mIoU against ground-truth masks.
#[allow(clippy::too_many_arguments)]
pub fn quantile_sweep(
    scene1: &GaussianScene,
    scene2: &GaussianScene,
    views: &[CameraRecord],
    gt_binary: &[BinaryImage],
    base: &PipelineConfig,
    axis: SweepAxis,
    grid: &[f64],
    strategy: NeighborStrategy,
) -> Result<Vec<SweepRow>, PipelineError> {
    let oracle_grid = eval::default_threshold_grid();
    let mut rows = Vec::with_capacity(grid.len());
    for &quantile in grid {
        let mut config = base.clone();
        axis.apply(&mut config, quantile);
        let output = run_detect(scene1, scene2, views, &config, strategy)?;
        let fused: Vec<ScalarImage> = output.views.iter().map(|v| v.fused.clone()).collect();
        let pred = eval::binarize_maps(&fused, config.threshold);
        let fixed = eval::detection_metrics(&pred, gt_binary, config.threshold)?;
        let (_, oracle) = eval::oracle_threshold(&fused, gt_binary, &oracle_grid)?;
        rows.push(SweepRow {
            quantile,
            fixed_miou: fixed.miou,
            oracle_miou: oracle.miou,
            is_default: (quantile - axis.default_value()).abs() < 1e-9,
        });
    }
    Ok(rows)
}

/// Write sweep rows as CSV.
pub fn write_sweep_csv(path: &Path, axis: SweepAxis, rows: &[SweepRow]) -> Result<(), PipelineError> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(IoError::Io)?);
    writeln!(w, "axis,quantile,fixed_miou,oracle_miou,is_default").map_err(IoError::Io)?;
    let axis_name = match axis {
        SweepAxis::GeoQuantile => "geo_quantile",
        SweepAxis::ColorQuantile => "color_quantile",
        SweepAxis::ConfQuantile => "conf_quantile",
    };
    for row in rows {
        writeln!(
            w,
            "{axis_name},{},{},{},{}",
            row.quantile, row.fixed_miou, row.oracle_miou, row.is_default
        )
        .map_err(IoError::Io)?;
    }
    Ok(())
}

/// Load a scene: activated primitives from a splat PLY plus its camera rig.
pub fn load_scene(ply_path: &Path, poses_path: &Path) -> Result<GaussianScene, PipelineError> {
    let records = io::ply::load_splat_ply(ply_path)?;
    let primitives = records
        .iter()
        .map(scene::activate)
        .collect::<Result<Vec<_>, _>>()?;
    let cameras = io::cameras::load_cameras(poses_path)?;
    Ok(GaussianScene {
        primitives,
        cameras,
    })
}
