//! Geometric drift modeling between two reconstructions.
//!
//! Drift has two sources, modeled as additive covariance inflation. The
//! representation-ambiguity component is a scene-pair statistic: upper-quartile
//! normal/tangential nearest-neighbor displacement scales, estimated
//! bidirectionally. The observation-uncertainty component is per primitive: a
//! Fisher information matrix accumulated over the primitive's frustum-visible
//! cameras, whose pseudo-inverse is injected at a data-driven scale so neither
//! component dominates.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::io::cameras::CameraRecord;
use crate::linalg;
use crate::scene::{frustum_visible, GaussianScene};
use crate::spatial::PointQuery;
use crate::stats;

/// Relative eigenvalue cutoff for the Fisher-information pseudo-inverse.
pub const FIM_RANK_CUTOFF: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DriftError {
    #[error("ambiguity scales need non-empty scenes")]
    EmptyScene,

    #[error("primitive {0} is not observed by any camera")]
    Unobserved(usize),

    #[error("injection scale needs at least one primitive")]
    NoPrimitives,
}

/// Squared drift scales along and across the surface, in scene units squared.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityScales {
    pub normal_sq: f64,
    pub tangential_sq: f64,
}

/// Per-primitive observability: Fisher information over the visible cameras,
/// its pseudo-inverse, and the trace used for confidence weighting.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityState {
    pub fim: Matrix3<f64>,
    pub fim_pinv: Matrix3<f64>,
    pub trace: f64,
}

/// Covariance after both inflation steps, with the largest eigenvalue cached
/// for neighbor-radius computation.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveCovariance {
    /// Covariance plus representation-ambiguity inflation.
    pub inflated: Matrix3<f64>,
    /// Inflated covariance plus scaled Fisher pseudo-inverse.
    pub effective: Matrix3<f64>,
    pub max_eigenvalue: f64,
}

/// Split a displacement into magnitudes normal and tangential to the surface.
/// The squares always sum to the squared displacement norm.
pub fn decompose_displacement(delta: &Vector3<f64>, normal: &Vector3<f64>) -> (f64, f64) {
    let along = normal.dot(delta);
    let tangential = delta - along * normal;
    (along.abs(), tangential.norm())
}

/// Estimate the squared drift scales from nearest-neighbor displacements,
/// bidirectionally: each direction contributes the squared `quantile_level`
/// quantile of its normal/tangential magnitudes, and the two squares are
/// averaged.
pub fn estimate_ambiguity_scales<Q1: PointQuery + Sync, Q2: PointQuery + Sync>(
    scene1: &GaussianScene,
    index1: &Q1,
    scene2: &GaussianScene,
    index2: &Q2,
    quantile_level: f64,
) -> Result<AmbiguityScales, DriftError> {
    if scene1.is_empty() || scene2.is_empty() {
        return Err(DriftError::EmptyScene);
    }
    let positions1 = scene1.positions();
    let positions2 = scene2.positions();

    let direction = |source: &GaussianScene,
                     target_positions: &[Vector3<f64>],
                     target_index: &dyn ErasedQuery|
     -> (f64, f64) {
        let pairs: Vec<(f64, f64)> = source
            .primitives
            .par_iter()
            .map(|prim| {
                let (j, _) = target_index
                    .nearest(&prim.position)
                    .expect("target scene is non-empty");
                let delta = target_positions[j] - prim.position;
                decompose_displacement(&delta, &prim.normal)
            })
            .collect();
        let (normals, tangentials): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let qn = stats::quantile(&normals, quantile_level).expect("non-empty");
        let qt = stats::quantile(&tangentials, quantile_level).expect("non-empty");
        (qn * qn, qt * qt)
    };

    let (n12, t12) = direction(scene1, &positions2, &ErasedQueryImpl(index2));
    let (n21, t21) = direction(scene2, &positions1, &ErasedQueryImpl(index1));
    Ok(AmbiguityScales {
        normal_sq: (n12 + n21) / 2.0,
        tangential_sq: (t12 + t21) / 2.0,
    })
}

/// Object-safe adapter so both index implementations can flow through the
/// same closure.
trait ErasedQuery: Sync {
    fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)>;
}

struct ErasedQueryImpl<'a, Q: PointQuery + Sync>(&'a Q);

impl<Q: PointQuery + Sync> ErasedQuery for ErasedQueryImpl<'_, Q> {
    fn nearest(&self, q: &Vector3<f64>) -> Option<(usize, f64)> {
        self.0.nearest(q)
    }
}

/// Add the anisotropic ambiguity inflation to a covariance:
/// `tangential_sq` isotropically plus the normal/tangential difference along
/// the surface normal.
pub fn inflate_representation(
    covariance: &Matrix3<f64>,
    normal: &Vector3<f64>,
    scales: &AmbiguityScales,
) -> Matrix3<f64> {
    let outer = normal * normal.transpose();
    covariance
        + Matrix3::identity() * scales.tangential_sq
        + outer * (scales.normal_sq - scales.tangential_sq)
}

/// Fisher information of a primitive position over its frustum-visible
/// cameras: each camera contributes the image-plane projector scaled by
/// inverse squared distance. Errors when no camera sees the position.
pub fn compute_fim(
    position: &Vector3<f64>,
    cameras: &[CameraRecord],
    z_near: f64,
    z_far: f64,
) -> Result<ObservabilityState, DriftError> {
    let mut fim = Matrix3::zeros();
    let mut seen = false;
    for cam in cameras {
        if !frustum_visible(position, cam, z_near, z_far) {
            continue;
        }
        seen = true;
        let to_point = position - cam.center();
        let dist_sq = to_point.norm_squared();
        let ray = to_point / dist_sq.sqrt();
        fim += (Matrix3::identity() - ray * ray.transpose()) / dist_sq;
    }
    if !seen {
        return Err(DriftError::Unobserved(0));
    }
    let fim = linalg::symmetrize(&fim);
    let fim_pinv = linalg::pseudo_inverse_psd(&fim, FIM_RANK_CUTOFF);
    Ok(ObservabilityState {
        fim,
        fim_pinv,
        trace: fim.trace(),
    })
}

/// Per-scene injection scale: median inflated-covariance trace over median
/// Fisher pseudo-inverse trace. Zero when every primitive is so well observed
/// that the pseudo-inverse traces vanish.
pub fn fim_injection_scale(
    inflated: &[Matrix3<f64>],
    observability: &[ObservabilityState],
) -> Result<f64, DriftError> {
    if inflated.is_empty() || inflated.len() != observability.len() {
        return Err(DriftError::NoPrimitives);
    }
    let cov_traces: Vec<f64> = inflated.iter().map(Matrix3::trace).collect();
    let pinv_traces: Vec<f64> = observability.iter().map(|o| o.fim_pinv.trace()).collect();
    let num = stats::median(&cov_traces).expect("non-empty");
    let den = stats::median(&pinv_traces).expect("non-empty");
    if den <= 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

/// Fold the scaled Fisher pseudo-inverse into the inflated covariance.
pub fn effective_covariance(
    inflated: &Matrix3<f64>,
    fim_pinv: &Matrix3<f64>,
    scale: f64,
) -> EffectiveCovariance {
    let effective = linalg::symmetrize(&(inflated + fim_pinv * scale));
    let max_eigenvalue = linalg::max_eigenvalue(&effective);
    EffectiveCovariance {
        inflated: *inflated,
        effective,
        max_eigenvalue,
    }
}
