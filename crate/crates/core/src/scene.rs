//! Geometric scene model: activation of raw splat records into Gaussian
//! primitives, frustum visibility, and co-visibility filtering between the
//! two capture rigs.
//!
//! Derived per-primitive state (effective covariances, Fisher information,
//! change scores) is computed by the `drift`, `kernels` and `aggregate`
//! modules and carried alongside the scene by the pipeline.

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};
use thiserror::Error;

use crate::io::cameras::CameraRecord;
use crate::io::ply::RawSplatRecord;

/// DC spherical-harmonic basis constant: `1 / (2 * sqrt(pi))`.
pub const SH_C0: f64 = 0.28209479177387814;

/// Default frustum depth bounds in scene units.
pub const DEFAULT_Z_NEAR: f64 = 0.01;
pub const DEFAULT_Z_FAR: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("zero-norm rotation quaternion")]
    ZeroQuaternion,

    #[error("no co-visible region: scene {0} has no primitive inside both camera rigs")]
    NoCovisibleRegion(usize),
}

/// An activated splat: covariance assembled from rotation and scales, opacity
/// and color mapped to `[0, 1]`, surface normal taken from the rotation
/// column of the smallest scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub position: Vector3<f64>,
    pub rotation: Matrix3<f64>,
    pub scales: Vector3<f64>,
    pub covariance: Matrix3<f64>,
    pub opacity: f64,
    pub color_dc: Vector3<f64>,
    pub normal: Vector3<f64>,
}

impl GaussianPrimitive {
    /// Assemble a primitive from activated parts, deriving covariance and
    /// normal. Scale ties resolve toward the highest index, so isotropic
    /// primitives deterministically use the third rotation column.
    pub fn from_parts(
        position: Vector3<f64>,
        rotation: Matrix3<f64>,
        scales: Vector3<f64>,
        opacity: f64,
        color_dc: Vector3<f64>,
    ) -> Self {
        let scale_sq = Matrix3::from_diagonal(&scales.map(|s| s * s));
        let covariance = rotation * scale_sq * rotation.transpose();
        let mut min_axis = 0;
        for k in 1..3 {
            if scales[k] <= scales[min_axis] {
                min_axis = k;
            }
        }
        let normal = rotation.column(min_axis).into_owned();
        Self {
            position,
            rotation,
            scales,
            covariance,
            opacity,
            color_dc,
            normal,
        }
    }
}

/// A set of primitives with the camera rig that reconstructed them.
#[derive(Debug, Clone, Default)]
pub struct GaussianScene {
    pub primitives: Vec<GaussianPrimitive>,
    pub cameras: Vec<CameraRecord>,
}

impl GaussianScene {
    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.primitives.iter().map(|p| p.position).collect()
    }
}

/// Activate a raw record: `exp` on scales, sigmoid on opacity, normalized
/// quaternion to rotation, DC coefficients to clamped RGB.
pub fn activate(raw: &RawSplatRecord) -> Result<GaussianPrimitive, SceneError> {
    let q = Quaternion::new(
        raw.rotation[0] as f64,
        raw.rotation[1] as f64,
        raw.rotation[2] as f64,
        raw.rotation[3] as f64,
    );
    let norm = q.norm();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(SceneError::ZeroQuaternion);
    }
    let rotation = UnitQuaternion::from_quaternion(q)
        .to_rotation_matrix()
        .into_inner();
    let scales = Vector3::new(
        (raw.log_scales[0] as f64).exp(),
        (raw.log_scales[1] as f64).exp(),
        (raw.log_scales[2] as f64).exp(),
    );
    let opacity = crate::linalg::sigmoid(raw.opacity_logit as f64);
    let color_dc = Vector3::new(
        (0.5 + SH_C0 * raw.sh_dc[0] as f64).clamp(0.0, 1.0),
        (0.5 + SH_C0 * raw.sh_dc[1] as f64).clamp(0.0, 1.0),
        (0.5 + SH_C0 * raw.sh_dc[2] as f64).clamp(0.0, 1.0),
    );
    let position = Vector3::new(
        raw.position[0] as f64,
        raw.position[1] as f64,
        raw.position[2] as f64,
    );
    Ok(GaussianPrimitive::from_parts(
        position, rotation, scales, opacity, color_dc,
    ))
}

/// Inverse of [`activate`] for PLY export. Opacity is clamped away from 0/1
/// before the logit; colors are assumed in `[0, 1]`.
pub fn to_raw_record(prim: &GaussianPrimitive) -> RawSplatRecord {
    let q = crate::io::cameras::wxyz_from_rotation(&prim.rotation);
    let o = prim.opacity.clamp(1e-7, 1.0 - 1e-7);
    RawSplatRecord {
        position: [
            prim.position.x as f32,
            prim.position.y as f32,
            prim.position.z as f32,
        ],
        rotation: [q[0] as f32, q[1] as f32, q[2] as f32, q[3] as f32],
        log_scales: [
            prim.scales.x.ln() as f32,
            prim.scales.y.ln() as f32,
            prim.scales.z.ln() as f32,
        ],
        opacity_logit: (o / (1.0 - o)).ln() as f32,
        sh_dc: [
            ((prim.color_dc.x - 0.5) / SH_C0) as f32,
            ((prim.color_dc.y - 0.5) / SH_C0) as f32,
            ((prim.color_dc.z - 0.5) / SH_C0) as f32,
        ],
        sh_rest: vec![],
    }
}

/// True when the point projects inside the image with camera-frame depth in
/// the open interval `(z_near, z_far)`.
pub fn frustum_visible(
    point: &Vector3<f64>,
    cam: &CameraRecord,
    z_near: f64,
    z_far: f64,
) -> bool {
    let p_cam = cam.to_camera(point);
    if !(p_cam.z > z_near && p_cam.z < z_far) {
        return false;
    }
    match cam.project(&p_cam) {
        Some(px) => {
            px.x >= 0.0 && px.x < cam.width as f64 && px.y >= 0.0 && px.y < cam.height as f64
        }
        None => false,
    }
}

fn visible_from_any(point: &Vector3<f64>, cameras: &[CameraRecord], z_near: f64, z_far: f64) -> bool {
    cameras
        .iter()
        .any(|c| frustum_visible(point, c, z_near, z_far))
}

/// Co-visibility filtering result with the original index of every retained
/// primitive for traceability.
#[derive(Debug, Clone)]
pub struct CovisibleScenes {
    pub scene1: GaussianScene,
    pub scene2: GaussianScene,
    pub retained1: Vec<usize>,
    pub retained2: Vec<usize>,
}

/// Keep only primitives visible from at least one camera of each rig. Errors
/// when either scene empties completely.
pub fn covisibility_filter(
    scene1: &GaussianScene,
    scene2: &GaussianScene,
    z_near: f64,
    z_far: f64,
) -> Result<CovisibleScenes, SceneError> {
    let keep = |scene: &GaussianScene| -> (GaussianScene, Vec<usize>) {
        let mut primitives = Vec::new();
        let mut retained = Vec::new();
        for (i, prim) in scene.primitives.iter().enumerate() {
            if visible_from_any(&prim.position, &scene1.cameras, z_near, z_far)
                && visible_from_any(&prim.position, &scene2.cameras, z_near, z_far)
            {
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
    };

    let (filtered1, retained1) = keep(scene1);
    let (filtered2, retained2) = keep(scene2);
    if filtered1.is_empty() {
        return Err(SceneError::NoCovisibleRegion(1));
    }
    if filtered2.is_empty() {
        return Err(SceneError::NoCovisibleRegion(2));
    }
    Ok(CovisibleScenes {
        scene1: filtered1,
        scene2: filtered2,
        retained1,
        retained2,
    })
}
