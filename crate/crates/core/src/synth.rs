//! Seeded synthetic scene pairs for desk-scale verification: two copies of
//! the same surface set with independent reconstruction-style drift
//! (anisotropic position jitter, primitive resampling, color jitter plus a
//! global color offset) and controlled ground-truth changes applied to the
//! second copy.
//!
//! Generation is fully deterministic for a given spec: one ChaCha8 stream,
//! fixed draw order. Ground-truth masks are rendered from the changed-flag
//! channels with the reference renderer and thresholded at 0.5, which pins
//! the evaluation truth to the same visibility and occlusion rules the
//! pipeline itself faces.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::cameras::{look_at_pose, CameraRecord};
use crate::maps::{BinaryImage, LabelImage};
use crate::render;
use crate::scene::{frustum_visible, GaussianPrimitive, GaussianScene, DEFAULT_Z_FAR, DEFAULT_Z_NEAR};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("change {index} ({kind:?}) selects no primitive")]
    EmptyChangeRegion { index: usize, kind: ChangeKind },

    #[error("camera {0}: look-at point outside frustum")]
    LookAtNotVisible(u32),

    #[error(transparent)]
    Render(#[from] render::RenderError),
}

/// Parametric surface carrying primitives.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum SurfaceShape {
    /// Axis-aligned plane: `normal_axis` in 0..3, half extents along the two
    /// remaining axes in ascending axis order.
    Plane {
        center: [f64; 3],
        normal_axis: usize,
        half_extents: [f64; 2],
    },
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    /// Axis-aligned box; all six faces are sampled.
    Cuboid {
        center: [f64; 3],
        half_extents: [f64; 3],
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceSpec {
    pub shape: SurfaceShape,
    /// Primitives per unit surface area.
    pub density: f64,
    /// Base DC color.
    pub color: [f64; 3],
}

/// Reconstruction-drift emulation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftParams {
    pub tangential_jitter: f64,
    pub normal_jitter: f64,
    /// Fraction of samples represented by two half-size primitives in one
    /// scene and a single primitive in the other.
    pub resample_fraction: f64,
    pub color_jitter: f64,
    /// Global color offset applied to scene 2.
    pub color_offset: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChangeKind {
    Remove,
    Add,
    Displace,
    Recolor,
}

impl ChangeKind {
    /// Structural changes alter geometry; recoloring is surface-level.
    pub fn is_structural(self) -> bool {
        !matches!(self, ChangeKind::Recolor)
    }
}

/// Spherical region selecting primitives by center distance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Region {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Region {
    fn contains(&self, p: &Vector3<f64>) -> bool {
        (p - Vector3::from(self.center)).norm() <= self.radius
    }
}

/// One ground-truth change applied to scene 2.
///
/// `magnitude` is the displacement distance for `Displace`, the color-shift
/// norm for `Recolor`, and a primitive-count multiplier for `Add` (the
/// inserted cluster has `round(40 * magnitude)` primitives, at least 12);
/// `Remove` ignores it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChangeSpec {
    pub region: Region,
    pub kind: ChangeKind,
    pub magnitude: f64,
}

/// Ring of inward-looking cameras.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraRingSpec {
    pub center: [f64; 3],
    pub radius: f64,
    /// Ring plane offset above `center` along +z.
    pub height: f64,
    pub count: usize,
    pub look_at: [f64; 3],
    /// Angular offset of the first camera, radians.
    pub phase: f64,
    pub image_width: u32,
    pub image_height: u32,
    pub focal: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub seed: u64,
    pub surfaces: Vec<SurfaceSpec>,
    pub drift: DriftParams,
    pub changes: Vec<ChangeSpec>,
    pub rig1: CameraRingSpec,
    pub rig2: CameraRingSpec,
}

/// Per-camera ground-truth masks rendered from the change flags.
#[derive(Debug, Clone)]
pub struct TruthMasks {
    pub camera_id: u32,
    pub binary: BinaryImage,
    pub labels: LabelImage,
}

/// Ground truth for a generated pair: per-primitive change flags for both
/// scenes and per-view masks at the rig-2 cameras.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub changed1: Vec<Option<ChangeKind>>,
    pub changed2: Vec<Option<ChangeKind>>,
    pub masks: Vec<TruthMasks>,
}

/// Evenly spaced cameras on a circle, all looking at `look_at`.
pub fn generate_camera_ring(ring: &CameraRingSpec) -> Result<Vec<CameraRecord>, SynthError> {
    if ring.count == 0 || ring.radius <= 0.0 {
        return Err(SynthError::InvalidSpec(
            "camera ring needs count >= 1 and radius > 0".into(),
        ));
    }
    let center = Vector3::from(ring.center);
    let look_at = Vector3::from(ring.look_at);
    let mut cameras = Vec::with_capacity(ring.count);
    for k in 0..ring.count {
        let theta = ring.phase + 2.0 * std::f64::consts::PI * k as f64 / ring.count as f64;
        let position = center
            + Vector3::new(
                ring.radius * theta.cos(),
                ring.radius * theta.sin(),
                ring.height,
            );
        let (rotation, translation) = look_at_pose(&position, &look_at);
        let cam = CameraRecord {
            id: k as u32,
            width: ring.image_width,
            height: ring.image_height,
            fx: ring.focal,
            fy: ring.focal,
            cx: ring.image_width as f64 / 2.0,
            cy: ring.image_height as f64 / 2.0,
            rotation,
            translation,
        };
        if !frustum_visible(&look_at, &cam, DEFAULT_Z_NEAR, DEFAULT_Z_FAR) {
            return Err(SynthError::LookAtNotVisible(cam.id));
        }
        cameras.push(cam);
    }
    Ok(cameras)
}

struct BaseSample {
    position: Vector3<f64>,
    normal: Vector3<f64>,
    tangent: Vector3<f64>,
    scale_t: f64,
    scale_n: f64,
    color: Vector3<f64>,
    opacity: f64,
    /// Scene (1 or 2) that represents this sample as two half-size
    /// primitives; `None` for a matched single primitive.
    split_scene: Option<u8>,
    split_dir: Vector3<f64>,
}

fn tangent_frame(normal: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if normal.x.abs() < 0.9 {
        Vector3::new(1.0, 0.0, 0.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let t1 = normal.cross(&helper).normalize();
    let t2 = normal.cross(&t1);
    (t1, t2)
}

fn surface_area(shape: &SurfaceShape) -> f64 {
    match shape {
        SurfaceShape::Plane { half_extents, .. } => 4.0 * half_extents[0] * half_extents[1],
        SurfaceShape::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        SurfaceShape::Cuboid { half_extents: h, .. } => {
            8.0 * (h[0] * h[1] + h[1] * h[2] + h[0] * h[2])
        }
    }
}

fn sample_direction(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let gauss = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let v = Vector3::new(gauss.sample(rng), gauss.sample(rng), gauss.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Point plus outward normal, uniform over the surface.
fn sample_surface_point(
    shape: &SurfaceShape,
    rng: &mut ChaCha8Rng,
) -> (Vector3<f64>, Vector3<f64>) {
    match shape {
        SurfaceShape::Plane {
            center,
            normal_axis,
            half_extents,
        } => {
            let mut axes = [0usize, 1, 2];
            axes.swap(*normal_axis, 2);
            let (u_axis, v_axis) = (axes[0].min(axes[1]), axes[0].max(axes[1]));
            let mut p = Vector3::from(*center);
            p[u_axis] += rng.random_range(-half_extents[0]..=half_extents[0]);
            p[v_axis] += rng.random_range(-half_extents[1]..=half_extents[1]);
            let mut normal = Vector3::zeros();
            normal[*normal_axis] = 1.0;
            (p, normal)
        }
        SurfaceShape::Sphere { center, radius } => {
            let dir = sample_direction(rng);
            (Vector3::from(*center) + dir * *radius, dir)
        }
        SurfaceShape::Cuboid {
            center,
            half_extents,
        } => {
            // Face areas in +x,-x,+y,-y,+z,-z order.
            let h = half_extents;
            let areas = [
                h[1] * h[2],
                h[1] * h[2],
                h[0] * h[2],
                h[0] * h[2],
                h[0] * h[1],
                h[0] * h[1],
            ];
            let total: f64 = areas.iter().sum();
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            for (f, a) in areas.iter().enumerate() {
                if pick < *a {
                    face = f;
                    break;
                }
                pick -= a;
            }
            let axis = face / 2;
            let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
            let mut normal = Vector3::zeros();
            normal[axis] = sign;
            let mut p = Vector3::from(*center);
            p[axis] += sign * h[axis];
            let others: Vec<usize> = (0..3).filter(|&a| a != axis).collect();
            p[others[0]] += rng.random_range(-h[others[0]]..=h[others[0]]);
            p[others[1]] += rng.random_range(-h[others[1]]..=h[others[1]]);
            (p, normal)
        }
    }
}

fn validate(spec: &SynthSpec) -> Result<(), SynthError> {
    if spec.surfaces.is_empty() {
        return Err(SynthError::InvalidSpec("no surfaces".into()));
    }
    for s in &spec.surfaces {
        if s.density <= 0.0 {
            return Err(SynthError::InvalidSpec("surface density must be > 0".into()));
        }
    }
    let d = &spec.drift;
    if d.tangential_jitter < 0.0
        || d.normal_jitter < 0.0
        || d.color_jitter < 0.0
        || !(0.0..=1.0).contains(&d.resample_fraction)
    {
        return Err(SynthError::InvalidSpec("drift parameters out of range".into()));
    }
    Ok(())
}

fn base_samples(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<BaseSample> {
    let color_noise = Normal::new(0.0, 0.02).expect("valid normal");
    let mut samples = Vec::new();
    for surface in &spec.surfaces {
        let area = surface_area(&surface.shape);
        let count = ((area * surface.density).round() as usize).max(1);
        let spacing = (area / count as f64).sqrt();
        for _ in 0..count {
            let (position, normal) = sample_surface_point(&surface.shape, rng);
            let (t1, t2) = tangent_frame(&normal);
            let scale_t = spacing * rng.random_range(0.55..0.85);
            let scale_n = scale_t * 0.15;
            let base_color = Vector3::from(surface.color);
            let color = Vector3::new(
                (base_color.x + color_noise.sample(rng)).clamp(0.02, 0.98),
                (base_color.y + color_noise.sample(rng)).clamp(0.02, 0.98),
                (base_color.z + color_noise.sample(rng)).clamp(0.02, 0.98),
            );
            let opacity = rng.random_range(0.75..0.95);
            let split_scene = if rng.random_range(0.0..1.0) < spec.drift.resample_fraction {
                Some(if rng.random_range(0.0..1.0) < 0.5 { 1 } else { 2 })
            } else {
                None
            };
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let split_dir = t1 * phi.cos() + t2 * phi.sin();
            samples.push(BaseSample {
                position,
                normal,
                tangent: t1,
                scale_t,
                scale_n,
                color,
                opacity,
                split_scene,
                split_dir,
            });
        }
    }
    samples
}

fn build_scene_primitives(
    samples: &[BaseSample],
    drift: &DriftParams,
    scene_id: u8,
    rng: &mut ChaCha8Rng,
) -> Vec<GaussianPrimitive> {
    let tangential = Normal::new(0.0, drift.tangential_jitter).expect("valid normal");
    let normal_jit = Normal::new(0.0, drift.normal_jitter).expect("valid normal");
    let color_jit = Normal::new(0.0, drift.color_jitter).expect("valid normal");
    let offset = if scene_id == 2 {
        Vector3::from(drift.color_offset)
    } else {
        Vector3::zeros()
    };

    let mut primitives = Vec::with_capacity(samples.len());
    for sample in samples {
        let t1 = sample.tangent;
        let t2 = sample.normal.cross(&t1);
        let rotation = Matrix3::from_columns(&[t1, t2, sample.normal]);

        let instances: Vec<(Vector3<f64>, f64)> = if sample.split_scene == Some(scene_id) {
            // Two half-size primitives straddling the sample point.
            vec![
                (
                    sample.position - sample.split_dir * (0.5 * sample.scale_t),
                    0.5,
                ),
                (
                    sample.position + sample.split_dir * (0.5 * sample.scale_t),
                    0.5,
                ),
            ]
        } else {
            vec![(sample.position, 1.0)]
        };

        for (base_pos, scale_factor) in instances {
            let jitter = sample.normal * normal_jit.sample(rng)
                + t1 * tangential.sample(rng)
                + t2 * tangential.sample(rng);
            let color = Vector3::new(
                (sample.color.x + color_jit.sample(rng) + offset.x).clamp(0.0, 1.0),
                (sample.color.y + color_jit.sample(rng) + offset.y).clamp(0.0, 1.0),
                (sample.color.z + color_jit.sample(rng) + offset.z).clamp(0.0, 1.0),
            );
            primitives.push(GaussianPrimitive::from_parts(
                base_pos + jitter,
                rotation,
                Vector3::new(
                    sample.scale_t * scale_factor,
                    sample.scale_t * scale_factor,
                    sample.scale_n * scale_factor,
                ),
                sample.opacity,
                color,
            ));
        }
    }
    primitives
}

fn insert_cluster(
    change: &ChangeSpec,
    rng: &mut ChaCha8Rng,
    primitives: &mut Vec<GaussianPrimitive>,
    flags: &mut Vec<Option<ChangeKind>>,
) {
    let count = ((40.0 * change.magnitude).round() as usize).max(12);
    let center = Vector3::from(change.region.center);
    let radius = change.region.radius * 0.5;
    let color = Vector3::new(
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
        rng.random_range(0.1..0.9),
    );
    let spacing = (4.0 * std::f64::consts::PI * radius * radius / count as f64).sqrt();
    for _ in 0..count {
        let dir = sample_direction(rng);
        let (t1, _) = tangent_frame(&dir);
        let t2 = dir.cross(&t1);
        let rotation = Matrix3::from_columns(&[t1, t2, dir]);
        let scale_t = spacing * rng.random_range(0.6..0.8);
        primitives.push(GaussianPrimitive::from_parts(
            center + dir * radius,
            rotation,
            Vector3::new(scale_t, scale_t, scale_t * 0.15),
            0.9,
            color,
        ));
        flags.push(Some(ChangeKind::Add));
    }
}

/// Generate a drifted scene pair with ground truth. Deterministic for a
/// given spec: the same seed yields bit-identical scenes.
pub fn generate_pair(
    spec: &SynthSpec,
) -> Result<(GaussianScene, GaussianScene, SynthTruth), SynthError> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let samples = base_samples(spec, &mut rng);
    let prims1 = build_scene_primitives(&samples, &spec.drift, 1, &mut rng);
    let mut prims2 = build_scene_primitives(&samples, &spec.drift, 2, &mut rng);

    let mut changed1: Vec<Option<ChangeKind>> = vec![None; prims1.len()];
    let mut changed2: Vec<Option<ChangeKind>> = vec![None; prims2.len()];

    for (index, change) in spec.changes.iter().enumerate() {
        match change.kind {
            ChangeKind::Remove => {
                let selected: Vec<usize> = (0..prims2.len())
                    .filter(|&i| change.region.contains(&prims2[i].position))
                    .collect();
                if selected.is_empty() {
                    return Err(SynthError::EmptyChangeRegion {
                        index,
                        kind: change.kind,
                    });
                }
                let keep: Vec<bool> = (0..prims2.len())
                    .map(|i| !change.region.contains(&prims2[i].position))
                    .collect();
                let mut k = 0;
                prims2.retain(|_| {
                    k += 1;
                    keep[k - 1]
                });
                let mut k = 0;
                changed2.retain(|_| {
                    k += 1;
                    keep[k - 1]
                });
                for (i, prim) in prims1.iter().enumerate() {
                    if change.region.contains(&prim.position) {
                        changed1[i] = Some(ChangeKind::Remove);
                    }
                }
            }
            ChangeKind::Add => {
                insert_cluster(change, &mut rng, &mut prims2, &mut changed2);
            }
            ChangeKind::Displace => {
                let direction = sample_direction(&mut rng);
                let mut any = false;
                for (i, prim) in prims2.iter_mut().enumerate() {
                    if change.region.contains(&prim.position) {
                        prim.position += direction * change.magnitude;
                        changed2[i] = Some(ChangeKind::Displace);
                        any = true;
                    }
                }
                if !any {
                    return Err(SynthError::EmptyChangeRegion {
                        index,
                        kind: change.kind,
                    });
                }
                for (i, prim) in prims1.iter().enumerate() {
                    if change.region.contains(&prim.position) {
                        changed1[i] = Some(ChangeKind::Displace);
                    }
                }
            }
            ChangeKind::Recolor => {
                let shift = sample_direction(&mut rng) * change.magnitude;
                let mut any = false;
                for (i, prim) in prims2.iter_mut().enumerate() {
                    if change.region.contains(&prim.position) {
                        prim.color_dc = Vector3::new(
                            (prim.color_dc.x + shift.x).clamp(0.0, 1.0),
                            (prim.color_dc.y + shift.y).clamp(0.0, 1.0),
                            (prim.color_dc.z + shift.z).clamp(0.0, 1.0),
                        );
                        changed2[i] = Some(ChangeKind::Recolor);
                        any = true;
                    }
                }
                if !any {
                    return Err(SynthError::EmptyChangeRegion {
                        index,
                        kind: change.kind,
                    });
                }
                for (i, prim) in prims1.iter().enumerate() {
                    if change.region.contains(&prim.position) {
                        changed1[i] = Some(ChangeKind::Recolor);
                    }
                }
            }
        }
    }

    let scene1 = GaussianScene {
        primitives: prims1,
        cameras: generate_camera_ring(&spec.rig1)?,
    };
    let scene2 = GaussianScene {
        primitives: prims2,
        cameras: generate_camera_ring(&spec.rig2)?,
    };

    let masks = render_truth_masks(&scene1, &scene2, &changed1, &changed2)?;
    Ok((
        scene1,
        scene2,
        SynthTruth {
            changed1,
            changed2,
            masks,
        },
    ))
}

fn flag_channel(flags: &[Option<ChangeKind>], pick: impl Fn(ChangeKind) -> bool) -> Vec<f64> {
    flags
        .iter()
        .map(|f| match f {
            Some(kind) if pick(*kind) => 1.0,
            _ => 0.0,
        })
        .collect()
}

/// Render ground-truth masks at the rig-2 cameras from the change flags,
/// using the reference renderer at threshold 0.5.
pub fn render_truth_masks(
    scene1: &GaussianScene,
    scene2: &GaussianScene,
    changed1: &[Option<ChangeKind>],
    changed2: &[Option<ChangeKind>],
) -> Result<Vec<TruthMasks>, SynthError> {
    let any1 = flag_channel(changed1, |_| true);
    let any2 = flag_channel(changed2, |_| true);
    let struct1 = flag_channel(changed1, ChangeKind::is_structural);
    let struct2 = flag_channel(changed2, ChangeKind::is_structural);
    let surf1 = flag_channel(changed1, |k| !k.is_structural());
    let surf2 = flag_channel(changed2, |k| !k.is_structural());

    let mut masks = Vec::with_capacity(scene2.cameras.len());
    for cam in &scene2.cameras {
        let fused = render::fuse_maps(
            &render::render_scalar_reference(scene1, &any1, cam)?,
            &render::render_scalar_reference(scene2, &any2, cam)?,
        )?;
        let structural = render::fuse_maps(
            &render::render_scalar_reference(scene1, &struct1, cam)?,
            &render::render_scalar_reference(scene2, &struct2, cam)?,
        )?;
        let surface = render::fuse_maps(
            &render::render_scalar_reference(scene1, &surf1, cam)?,
            &render::render_scalar_reference(scene2, &surf2, cam)?,
        )?;
        let (binary, labels) = render::binarize_and_label(&fused, &structural, &surface, 0.5)?;
        masks.push(TruthMasks {
            camera_id: cam.id,
            binary,
            labels,
        });
    }
    Ok(masks)
}

/// Documented "moderate" drift preset: a tabletop-like surface set with
/// jitter well below primitive spacing, 15% resampling and a mild global
/// color shift, observed by two offset 8-camera rings.
pub fn moderate_preset(seed: u64, changes: Vec<ChangeSpec>) -> SynthSpec {
    let ring = |phase: f64| CameraRingSpec {
        center: [0.0, 0.0, 0.0],
        radius: 3.2,
        height: 2.4,
        count: 8,
        look_at: [0.0, 0.0, 0.1],
        phase,
        image_width: 56,
        image_height: 56,
        focal: 52.0,
    };
    SynthSpec {
        seed,
        surfaces: vec![
            SurfaceSpec {
                shape: SurfaceShape::Plane {
                    center: [0.0, 0.0, 0.0],
                    normal_axis: 2,
                    half_extents: [1.6, 1.6],
                },
                density: 80.0,
                color: [0.55, 0.5, 0.45],
            },
            SurfaceSpec {
                shape: SurfaceShape::Cuboid {
                    center: [0.0, 0.0, 0.3],
                    half_extents: [0.3, 0.3, 0.3],
                },
                density: 80.0,
                color: [0.25, 0.45, 0.65],
            },
            // Floats above the plane so object-level change regions can
            // select it without touching plane primitives.
            SurfaceSpec {
                shape: SurfaceShape::Sphere {
                    center: [0.9, -0.6, 0.4],
                    radius: 0.25,
                },
                density: 80.0,
                color: [0.7, 0.3, 0.25],
            },
        ],
        drift: DriftParams {
            tangential_jitter: 0.010,
            normal_jitter: 0.004,
            resample_fraction: 0.15,
            color_jitter: 0.015,
            color_offset: [0.03, 0.02, -0.02],
        },
        changes,
        rig1: ring(0.0),
        rig2: ring(std::f64::consts::PI / 8.0),
    }
}

/// The standard change used with [`moderate_preset`] for each kind.
pub fn preset_change(kind: ChangeKind) -> ChangeSpec {
    match kind {
        ChangeKind::Remove => ChangeSpec {
            region: Region {
                center: [0.9, -0.6, 0.4],
                radius: 0.32,
            },
            kind,
            magnitude: 0.0,
        },
        ChangeKind::Add => ChangeSpec {
            region: Region {
                center: [-0.8, 0.7, 0.3],
                radius: 0.5,
            },
            kind,
            magnitude: 1.5,
        },
        ChangeKind::Displace => ChangeSpec {
            region: Region {
                center: [0.9, -0.6, 0.4],
                radius: 0.32,
            },
            kind,
            magnitude: 0.5,
        },
        ChangeKind::Recolor => ChangeSpec {
            region: Region {
                center: [0.0, 0.0, 0.3],
                radius: 0.55,
            },
            kind,
            magnitude: 0.45,
        },
    }
}
