//! Perspective EWA splatting of per-primitive scalar channels to 2D maps with
//! front-to-back alpha compositing, plus map fusion and binarization.
//!
//! Two renderers share one projection and compositing definition. The
//! production path bins splats into 16x16 pixel tiles and walks only the
//! footprints overlapping each tile; the reference path evaluates every splat
//! at every pixel. Footprints are cut off at 3 sigma of the 2D Gaussian in
//! both paths, so the two agree to floating-point noise; neither path
//! terminates compositing early.
//!
//! Determinism: splats composite in (camera depth, primitive index) order and
//! tiles write disjoint output regions, so output is identical across thread
//! counts and primitive permutations (up to exact depth ties).

use nalgebra::{Matrix2, Matrix3, Vector2};
use rayon::prelude::*;
use thiserror::Error;

use crate::io::cameras::CameraRecord;
use crate::maps::{BinaryImage, LabelImage, PixelLabel, ScalarImage};
use crate::scene::GaussianScene;

/// Low-pass filter added to the 2D footprint diagonal, in squared pixels.
pub const LOW_PASS_BLUR: f64 = 0.3;

/// Per-splat opacity ceiling during compositing.
pub const ALPHA_CAP: f64 = 0.99;

/// Footprint cutoff: contributions beyond this many sigmas are zero.
pub const CUTOFF_SIGMA: f64 = 3.0;

/// Splats closer than this camera-frame depth are culled.
const NEAR_CLIP: f64 = 1e-4;

const TILE: usize = 16;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("camera {0} has zero image area")]
    ZeroImageArea(u32),

    #[error("channel length {channel} does not match primitive count {primitives}")]
    ChannelMismatch { channel: usize, primitives: usize },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("threshold {0} outside (0, 1)")]
    BadThreshold(f64),
}

struct ProjectedSplat {
    center: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    opacity: f64,
    value: f64,
    // Inclusive pixel bounds of the 3-sigma footprint, clipped to the image.
    min_x: usize,
    min_y: usize,
    max_x: usize,
    max_y: usize,
}

/// Project splats to the image plane, cut to their 3-sigma bounding boxes and
/// sorted front-to-back by (depth, primitive index).
fn project_splats(
    scene: &GaussianScene,
    channel: &[f64],
    camera: &CameraRecord,
) -> Result<Vec<ProjectedSplat>, RenderError> {
    if channel.len() != scene.primitives.len() {
        return Err(RenderError::ChannelMismatch {
            channel: channel.len(),
            primitives: scene.primitives.len(),
        });
    }
    let width = camera.width as usize;
    let height = camera.height as usize;
    if width == 0 || height == 0 {
        return Err(RenderError::ZeroImageArea(camera.id));
    }

    let mut keyed: Vec<(f64, usize, ProjectedSplat)> = Vec::new();
    for (index, prim) in scene.primitives.iter().enumerate() {
        let p_cam = camera.to_camera(&prim.position);
        if p_cam.z <= NEAR_CLIP {
            continue;
        }
        let inv_z = 1.0 / p_cam.z;
        let center = Vector2::new(
            camera.fx * p_cam.x * inv_z + camera.cx,
            camera.fy * p_cam.y * inv_z + camera.cy,
        );

        // Perspective Jacobian at the splat center.
        let jac = nalgebra::Matrix2x3::new(
            camera.fx * inv_z,
            0.0,
            -camera.fx * p_cam.x * inv_z * inv_z,
            0.0,
            camera.fy * inv_z,
            -camera.fy * p_cam.y * inv_z * inv_z,
        );
        let cov_cam: Matrix3<f64> = camera.rotation * prim.covariance * camera.rotation.transpose();
        let mut cov2d: Matrix2<f64> = jac * cov_cam * jac.transpose();
        cov2d[(0, 0)] += LOW_PASS_BLUR;
        cov2d[(1, 1)] += LOW_PASS_BLUR;
        // Symmetrize against accumulation noise.
        let b = 0.5 * (cov2d[(0, 1)] + cov2d[(1, 0)]);
        cov2d[(0, 1)] = b;
        cov2d[(1, 0)] = b;

        let det = cov2d[(0, 0)] * cov2d[(1, 1)] - b * b;
        if !det.is_finite() || det <= 0.0 {
            continue;
        }
        let inv_cov = Matrix2::new(cov2d[(1, 1)], -b, -b, cov2d[(0, 0)]) / det;

        // The ellipse's axis-aligned extents are exactly
        // CUTOFF_SIGMA * sqrt(diagonal); pad a hair against rounding.
        let rx = CUTOFF_SIGMA * cov2d[(0, 0)].sqrt() + 1e-9;
        let ry = CUTOFF_SIGMA * cov2d[(1, 1)].sqrt() + 1e-9;
        let min_x = (center.x - rx - 0.5).ceil().max(0.0);
        let max_x = (center.x + rx - 0.5).floor().min((width - 1) as f64);
        let min_y = (center.y - ry - 0.5).ceil().max(0.0);
        let max_y = (center.y + ry - 0.5).floor().min((height - 1) as f64);
        if min_x > max_x || min_y > max_y {
            continue;
        }

        keyed.push((
            p_cam.z,
            index,
            ProjectedSplat {
                center,
                inv_cov,
                opacity: prim.opacity,
                value: channel[index],
                min_x: min_x as usize,
                min_y: min_y as usize,
                max_x: max_x as usize,
                max_y: max_y as usize,
            },
        ));
    }

    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(keyed.into_iter().map(|(_, _, s)| s).collect())
}

#[inline]
fn splat_alpha(splat: &ProjectedSplat, px: f64, py: f64) -> f64 {
    let d = Vector2::new(px - splat.center.x, py - splat.center.y);
    let g = d.dot(&(splat.inv_cov * d));
    if g > CUTOFF_SIGMA * CUTOFF_SIGMA {
        return 0.0;
    }
    (splat.opacity * (-0.5 * g).exp()).min(ALPHA_CAP)
}

/// Render a per-primitive scalar channel at a camera view (tiled production
/// path). Values clamp to `[0, 1]`.
pub fn render_scalar(
    scene: &GaussianScene,
    channel: &[f64],
    camera: &CameraRecord,
) -> Result<ScalarImage, RenderError> {
    let splats = project_splats(scene, channel, camera)?;
    let width = camera.width as usize;
    let height = camera.height as usize;

    let tiles_x = width.div_ceil(TILE);
    let tiles_y = height.div_ceil(TILE);
    let mut tile_lists: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (s, splat) in splats.iter().enumerate() {
        let tx0 = splat.min_x / TILE;
        let tx1 = splat.max_x / TILE;
        let ty0 = splat.min_y / TILE;
        let ty1 = splat.max_y / TILE;
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tile_lists[ty * tiles_x + tx].push(s as u32);
            }
        }
    }

    let tile_buffers: Vec<Vec<f64>> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let tx = tile % tiles_x;
            let ty = tile / tiles_x;
            let x0 = tx * TILE;
            let y0 = ty * TILE;
            let x1 = (x0 + TILE).min(width);
            let y1 = (y0 + TILE).min(height);
            let mut buf = vec![0.0f64; (x1 - x0) * (y1 - y0)];
            let list = &tile_lists[tile];
            for y in y0..y1 {
                let py = y as f64 + 0.5;
                for x in x0..x1 {
                    let px = x as f64 + 0.5;
                    let mut value = 0.0;
                    let mut transmittance = 1.0;
                    for &s in list {
                        let splat = &splats[s as usize];
                        if x < splat.min_x || x > splat.max_x || y < splat.min_y || y > splat.max_y
                        {
                            continue;
                        }
                        let alpha = splat_alpha(splat, px, py);
                        if alpha > 0.0 {
                            value += splat.value * alpha * transmittance;
                            transmittance *= 1.0 - alpha;
                        }
                    }
                    buf[(y - y0) * (x1 - x0) + (x - x0)] = value.clamp(0.0, 1.0);
                }
            }
            buf
        })
        .collect();

    let mut image = ScalarImage::zeros(width, height);
    for (tile, buf) in tile_buffers.iter().enumerate() {
        let tx = tile % tiles_x;
        let ty = tile / tiles_x;
        let x0 = tx * TILE;
        let y0 = ty * TILE;
        let x1 = (x0 + TILE).min(width);
        let tile_w = x1 - x0;
        for (row, chunk) in buf.chunks_exact(tile_w).enumerate() {
            let offset = (y0 + row) * width + x0;
            image.data[offset..offset + tile_w].copy_from_slice(chunk);
        }
    }
    Ok(image)
}

/// Brute-force per-pixel reference renderer: identical projection,
/// compositing and cutoff, no tiling and no bounding boxes.
pub fn render_scalar_reference(
    scene: &GaussianScene,
    channel: &[f64],
    camera: &CameraRecord,
) -> Result<ScalarImage, RenderError> {
    let splats = project_splats(scene, channel, camera)?;
    let width = camera.width as usize;
    let height = camera.height as usize;

    let mut image = ScalarImage::zeros(width, height);
    image
        .data
        .par_chunks_mut(width)
        .enumerate()
        .for_each(|(y, row)| {
            let py = y as f64 + 0.5;
            for (x, out) in row.iter_mut().enumerate() {
                let px = x as f64 + 0.5;
                let mut value = 0.0;
                let mut transmittance = 1.0;
                for splat in &splats {
                    let alpha = splat_alpha(splat, px, py);
                    if alpha > 0.0 {
                        value += splat.value * alpha * transmittance;
                        transmittance *= 1.0 - alpha;
                    }
                }
                *out = value.clamp(0.0, 1.0);
            }
        });
    Ok(image)
}

/// Pixel-wise maximum of two maps.
pub fn fuse_maps(a: &ScalarImage, b: &ScalarImage) -> Result<ScalarImage, RenderError> {
    if !a.same_size(b) {
        return Err(RenderError::DimensionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    Ok(ScalarImage {
        width: a.width,
        height: a.height,
        data: a
            .data
            .iter()
            .zip(&b.data)
            .map(|(&x, &y)| x.max(y))
            .collect(),
    })
}

/// Threshold the fused map and route each changed pixel by the larger of the
/// structural/surface channels (ties go structural).
pub fn binarize_and_label(
    fused: &ScalarImage,
    structural: &ScalarImage,
    surface: &ScalarImage,
    threshold: f64,
) -> Result<(BinaryImage, LabelImage), RenderError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(RenderError::BadThreshold(threshold));
    }
    if !fused.same_size(structural) {
        return Err(RenderError::DimensionMismatch(
            fused.width,
            fused.height,
            structural.width,
            structural.height,
        ));
    }
    if !fused.same_size(surface) {
        return Err(RenderError::DimensionMismatch(
            fused.width,
            fused.height,
            surface.width,
            surface.height,
        ));
    }
    let mut binary = BinaryImage::new(fused.width, fused.height);
    let mut labels = LabelImage::new(fused.width, fused.height);
    for i in 0..fused.data.len() {
        if fused.data[i] > threshold {
            binary.data[i] = true;
            labels.data[i] = if structural.data[i] >= surface.data[i] {
                PixelLabel::Structural
            } else {
                PixelLabel::Surface
            };
        }
    }
    Ok((binary, labels))
}
