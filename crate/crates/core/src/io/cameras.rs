//! Camera intrinsics and world-to-camera poses.
//!
//! Two encodings are accepted: a JSON document
//! `{"cameras":[{"id","width","height","fx","fy","cx","cy","q_wxyz","t"}]}`
//! and COLMAP text exports (`cameras.txt` + `images.txt`, pinhole models
//! only). Both map the quaternion/translation pair world -> camera with the
//! COLMAP (w, x, y, z) component order.
//!
//! Conventions: the camera looks along +z in its own frame, +x is right and
//! +y is down. A point at camera-frame position `(x, y, z)` projects to the
//! continuous pixel coordinate `(fx*x/z + cx, fy*y/z + cy)`; pixel `(i, j)`
//! covers the unit square `[i, i+1) x [j, j+1)`.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::IoError;

/// Orthonormality tolerance for parsed poses.
const POSE_ORTHONORMALITY_TOL: f64 = 1e-4;

/// A pinhole camera: intrinsics in pixels plus a rigid world-to-camera
/// transform.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRecord {
    pub id: u32,
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World -> camera rotation.
    pub rotation: Matrix3<f64>,
    /// World -> camera translation.
    pub translation: Vector3<f64>,
}

impl CameraRecord {
    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    /// Transform a world point into the camera frame.
    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Project a camera-frame point to continuous pixel coordinates.
    /// `None` behind the image plane.
    pub fn project(&self, p_cam: &Vector3<f64>) -> Option<Vector2<f64>> {
        if p_cam.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * p_cam.x / p_cam.z + self.cx,
            self.fy * p_cam.y / p_cam.z + self.cy,
        ))
    }

    fn validate(&self) -> Result<(), IoError> {
        if self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(IoError::InvalidPose(format!(
                "camera {}: focal lengths must be positive",
                self.id
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(IoError::InvalidPose(format!(
                "camera {}: zero image size",
                self.id
            )));
        }
        let gram = self.rotation * self.rotation.transpose();
        let dev = (gram - Matrix3::identity()).norm();
        if !dev.is_finite() || dev > POSE_ORTHONORMALITY_TOL {
            return Err(IoError::InvalidPose(format!(
                "camera {}: rotation deviates from orthonormal by {dev:.3e}",
                self.id
            )));
        }
        Ok(())
    }
}

fn rotation_from_wxyz(q: [f64; 4]) -> Result<Matrix3<f64>, IoError> {
    let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
    let norm = quat.norm();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(IoError::InvalidPose("zero-norm quaternion".into()));
    }
    Ok(UnitQuaternion::from_quaternion(quat)
        .to_rotation_matrix()
        .into_inner())
}

/// Quaternion (w, x, y, z) of a world-to-camera rotation matrix, for writing
/// pose files. `w` is kept non-negative for a canonical sign.
pub fn wxyz_from_rotation(rotation: &Matrix3<f64>) -> [f64; 4] {
    let rot = nalgebra::Rotation3::from_matrix_unchecked(*rotation);
    let q = UnitQuaternion::from_rotation_matrix(&rot);
    let (w, x, y, z) = (q.w, q.i, q.j, q.k);
    if w < 0.0 {
        [-w, -x, -y, -z]
    } else {
        [w, x, y, z]
    }
}

/// World-to-camera rotation and translation for a camera at `center` looking
/// at `target`, with +z forward and +y roughly downward. The roll is fixed by
/// the world up direction (+z, falling back to +y when the view is vertical).
pub fn look_at_pose(center: &Vector3<f64>, target: &Vector3<f64>) -> (Matrix3<f64>, Vector3<f64>) {
    let forward = (target - center).normalize();
    let mut up = Vector3::new(0.0, 0.0, 1.0);
    if forward.cross(&up).norm() < 1e-6 {
        up = Vector3::new(0.0, 1.0, 0.0);
    }
    let x_axis = forward.cross(&up).normalize();
    let y_axis = forward.cross(&x_axis);
    let rotation = Matrix3::from_rows(&[
        x_axis.transpose(),
        y_axis.transpose(),
        forward.transpose(),
    ]);
    let translation = -(rotation * center);
    (rotation, translation)
}

#[derive(Serialize, Deserialize)]
struct PoseFile {
    cameras: Vec<PoseEntry>,
}

#[derive(Serialize, Deserialize)]
struct PoseEntry {
    id: u32,
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    q_wxyz: [f64; 4],
    t: [f64; 3],
}

/// Parse the JSON pose document.
pub fn parse_cameras_json(bytes: &[u8]) -> Result<Vec<CameraRecord>, IoError> {
    let file: PoseFile = serde_json::from_slice(bytes)?;
    let mut cameras = Vec::with_capacity(file.cameras.len());
    for entry in file.cameras {
        let cam = CameraRecord {
            id: entry.id,
            width: entry.width,
            height: entry.height,
            fx: entry.fx,
            fy: entry.fy,
            cx: entry.cx,
            cy: entry.cy,
            rotation: rotation_from_wxyz(entry.q_wxyz)?,
            translation: Vector3::new(entry.t[0], entry.t[1], entry.t[2]),
        };
        cam.validate()?;
        cameras.push(cam);
    }
    Ok(cameras)
}

/// Serialize cameras to the JSON pose document.
pub fn cameras_to_json(cameras: &[CameraRecord]) -> Result<String, IoError> {
    let file = PoseFile {
        cameras: cameras
            .iter()
            .map(|c| PoseEntry {
                id: c.id,
                width: c.width,
                height: c.height,
                fx: c.fx,
                fy: c.fy,
                cx: c.cx,
                cy: c.cy,
                q_wxyz: wxyz_from_rotation(&c.rotation),
                t: [c.translation.x, c.translation.y, c.translation.z],
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

#[derive(Debug)]
struct ColmapIntrinsics {
    width: u32,
    height: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

fn parse_colmap_cameras_txt(text: &str) -> Result<Vec<(u32, ColmapIntrinsics)>, IoError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 4 {
            return Err(IoError::Format(format!("bad cameras.txt line: {line}")));
        }
        let id: u32 = tokens[0]
            .parse()
            .map_err(|_| IoError::Format(format!("bad camera id {}", tokens[0])))?;
        let model = tokens[1];
        let width: u32 = tokens[2]
            .parse()
            .map_err(|_| IoError::Format("bad camera width".into()))?;
        let height: u32 = tokens[3]
            .parse()
            .map_err(|_| IoError::Format("bad camera height".into()))?;
        let params: Vec<f64> = tokens[4..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::Format("bad camera parameter".into()))?;
        let intr = match model {
            "PINHOLE" => {
                if params.len() != 4 {
                    return Err(IoError::Format("PINHOLE expects 4 parameters".into()));
                }
                ColmapIntrinsics {
                    width,
                    height,
                    fx: params[0],
                    fy: params[1],
                    cx: params[2],
                    cy: params[3],
                }
            }
            "SIMPLE_PINHOLE" => {
                if params.len() != 3 {
                    return Err(IoError::Format("SIMPLE_PINHOLE expects 3 parameters".into()));
                }
                ColmapIntrinsics {
                    width,
                    height,
                    fx: params[0],
                    fy: params[0],
                    cx: params[1],
                    cy: params[2],
                }
            }
            other => return Err(IoError::UnsupportedCameraModel(other.to_string())),
        };
        out.push((id, intr));
    }
    Ok(out)
}

/// Parse COLMAP text exports. `images.txt` carries two lines per image; the
/// second (2D point observations) is skipped.
pub fn parse_colmap_text(
    cameras_txt: &str,
    images_txt: &str,
) -> Result<Vec<CameraRecord>, IoError> {
    let intrinsics = parse_colmap_cameras_txt(cameras_txt)?;
    let lookup = |id: u32| intrinsics.iter().find(|(cid, _)| *cid == id).map(|(_, i)| i);

    let mut cameras = Vec::new();
    let mut lines = images_txt
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    while let Some(line) = lines.next() {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 9 {
            return Err(IoError::Format(format!("bad images.txt line: {line}")));
        }
        let image_id: u32 = tokens[0]
            .parse()
            .map_err(|_| IoError::Format(format!("bad image id {}", tokens[0])))?;
        let nums: Vec<f64> = tokens[1..8]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| IoError::Format("bad pose number in images.txt".into()))?;
        let camera_id: u32 = tokens[8]
            .parse()
            .map_err(|_| IoError::Format(format!("bad camera id {}", tokens[8])))?;
        let intr = lookup(camera_id).ok_or_else(|| {
            IoError::Format(format!("images.txt references unknown camera {camera_id}"))
        })?;

        let cam = CameraRecord {
            id: image_id,
            width: intr.width,
            height: intr.height,
            fx: intr.fx,
            fy: intr.fy,
            cx: intr.cx,
            cy: intr.cy,
            rotation: rotation_from_wxyz([nums[0], nums[1], nums[2], nums[3]])?,
            translation: Vector3::new(nums[4], nums[5], nums[6]),
        };
        cam.validate()?;
        cameras.push(cam);

        // Consume the 2D-points line when present.
        lines.next();
    }
    Ok(cameras)
}

/// Load cameras from a path: a `.json` pose file, or a directory containing
/// COLMAP `cameras.txt` and `images.txt`.
pub fn load_cameras(path: &Path) -> Result<Vec<CameraRecord>, IoError> {
    if path.is_dir() {
        let cameras_txt = fs::read_to_string(path.join("cameras.txt"))?;
        let images_txt = fs::read_to_string(path.join("images.txt"))?;
        parse_colmap_text(&cameras_txt, &images_txt)
    } else if path.extension().is_some_and(|e| e == "json") {
        parse_cameras_json(&fs::read(path)?)
    } else {
        Err(IoError::Unsupported(format!(
            "pose path {} is neither a .json file nor a COLMAP directory",
            path.display()
        )))
    }
}

/// Write cameras as the JSON pose document.
pub fn save_cameras_json(path: &Path, cameras: &[CameraRecord]) -> Result<(), IoError> {
    fs::write(path, cameras_to_json(cameras)?)?;
    Ok(())
}
