//! Drift-aware cross-scene scoring: neighbor retrieval inside an effective-
//! covariance ball, an unnormalized anisotropic Mahalanobis kernel for
//! geometry, and an isotropic RBF over DC color with a data-driven,
//! footprint-adaptive bandwidth.
//!
//! The geometric kernel deliberately omits the Gaussian normalization
//! prefactor: a determinant factor would penalize co-located primitives whose
//! covariance magnitudes differ, which is routine between independent
//! reconstructions. The unnormalized form returns exactly 1 at zero
//! displacement regardless of covariance scale.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drift::EffectiveCovariance;
use crate::linalg;
use crate::spatial::PointQuery;
use crate::stats;

/// Default neighbor-ball radius multiplier.
pub const DEFAULT_ETA: f64 = 3.0;

/// Default floor for the squared color bandwidth; identical captures would
/// otherwise estimate zero.
pub const DEFAULT_BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("color bandwidth needs non-empty scenes")]
    EmptyScene,

    #[error("degenerate scene: median effective-covariance trace is zero")]
    DegenerateFootprint,
}

/// Cross-scene neighbor indices retrieved within `radius` of a query
/// primitive.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub indices: Vec<usize>,
    pub radius: f64,
}

/// Borrowed per-scene views used by the scoring functions: positions, DC
/// colors and effective covariances, index-aligned.
#[derive(Clone, Copy)]
pub struct SceneKernelData<'a> {
    pub positions: &'a [Vector3<f64>],
    pub colors: &'a [Vector3<f64>],
    pub effective: &'a [EffectiveCovariance],
}

/// All target primitives within the Euclidean ball of radius
/// `eta * sqrt(lambda_max)` around the query position. The ball is a
/// conservative superset of the Mahalanobis eta-ellipsoid of the query's
/// effective covariance.
pub fn retrieve_neighbors<Q: PointQuery>(
    position: &Vector3<f64>,
    max_eigenvalue: f64,
    target_index: &Q,
    eta: f64,
) -> NeighborSet {
    let radius = eta * max_eigenvalue.max(0.0).sqrt();
    NeighborSet {
        indices: target_index.within_radius(position, radius),
        radius,
    }
}

/// Unnormalized Mahalanobis RBF between two primitives under the sum of
/// their effective covariances. Exactly 1 at zero displacement.
pub fn geometric_kernel(
    position_i: &Vector3<f64>,
    effective_i: &Matrix3<f64>,
    position_j: &Vector3<f64>,
    effective_j: &Matrix3<f64>,
) -> f64 {
    let delta = position_i - position_j;
    if delta == Vector3::zeros() {
        return 1.0;
    }
    let m = effective_i + effective_j;
    let q = match linalg::spd_quadratic_form(&m, &delta) {
        Some(q) => q,
        None => {
            // Near-singular sum (possible when the tangential scale is zero);
            // regularize relative to the trace and retry.
            let reg = 1e-9 * m.trace() / 3.0;
            let m_reg = m + Matrix3::identity() * reg;
            linalg::spd_quadratic_form(&m_reg, &delta)
                .expect("kernel covariance singular after regularization")
        }
    };
    (-0.5 * q).exp()
}

/// Geometric change score: one minus the best kernel response over the
/// neighbor set; 1 when the set is empty.
pub fn score_geometric(
    position: &Vector3<f64>,
    effective: &Matrix3<f64>,
    target: &SceneKernelData,
    neighbors: &NeighborSet,
) -> f64 {
    let best = neighbors
        .indices
        .iter()
        .map(|&j| {
            geometric_kernel(
                position,
                effective,
                &target.positions[j],
                &target.effective[j].effective,
            )
        })
        .fold(0.0f64, f64::max);
    1.0 - best
}

/// How the global color bandwidth aggregates the kernel-weighted color
/// differences of each direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum BandwidthEstimator {
    /// Quantile of the products `w * |dc|^2` (the literal reading).
    #[default]
    ProductQuantile,
    /// `w`-weighted quantile of the squared color differences `|dc|^2`.
    WeightedQuantile,
}

/// Global squared color bandwidth: per direction, aggregate
/// `k_geo(i, nn) * |c_i - c_nn|^2` at the `quantile_level` quantile over all
/// primitives; the two directional values are averaged and floored at
/// `floor`.
pub fn estimate_color_bandwidth<Q1, Q2>(
    data1: &SceneKernelData,
    index1: &Q1,
    data2: &SceneKernelData,
    index2: &Q2,
    quantile_level: f64,
    floor: f64,
    estimator: BandwidthEstimator,
) -> Result<f64, KernelError>
where
    Q1: PointQuery + Sync,
    Q2: PointQuery + Sync,
{
    if data1.positions.is_empty() || data2.positions.is_empty() {
        return Err(KernelError::EmptyScene);
    }

    let direction = |source: &SceneKernelData, target: &SceneKernelData, nearest: &(dyn Fn(&Vector3<f64>) -> usize + Sync)| -> f64 {
        let pairs: Vec<(f64, f64)> = (0..source.positions.len())
            .into_par_iter()
            .map(|i| {
                let j = nearest(&source.positions[i]);
                let w = geometric_kernel(
                    &source.positions[i],
                    &source.effective[i].effective,
                    &target.positions[j],
                    &target.effective[j].effective,
                );
                ((source.colors[i] - target.colors[j]).norm_squared(), w)
            })
            .collect();
        match estimator {
            BandwidthEstimator::ProductQuantile => {
                let products: Vec<f64> = pairs.iter().map(|(d, w)| w * d).collect();
                stats::quantile(&products, quantile_level).expect("non-empty")
            }
            BandwidthEstimator::WeightedQuantile => {
                // Kernel weights are strictly positive, so the total is too.
                stats::weighted_quantile(&pairs, quantile_level).expect("positive total weight")
            }
        }
    };

    let q12 = direction(data1, data2, &|p| index2.nearest(p).expect("non-empty").0);
    let q21 = direction(data2, data1, &|p| index1.nearest(p).expect("non-empty").0);
    Ok(((q12 + q21) / 2.0).max(floor))
}

/// Footprint-adaptive squared bandwidth for one primitive: widened in
/// proportion to its effective-covariance trace relative to the scene
/// median, floored at the global bandwidth.
pub fn adaptive_bandwidth(
    global_sq: f64,
    trace_effective: f64,
    median_trace: f64,
) -> Result<f64, KernelError> {
    if median_trace <= 0.0 {
        return Err(KernelError::DegenerateFootprint);
    }
    Ok(global_sq * (trace_effective / median_trace).max(1.0))
}

/// Isotropic RBF over DC colors.
pub fn appearance_kernel(color_i: &Vector3<f64>, color_j: &Vector3<f64>, bandwidth_sq: f64) -> f64 {
    (-(color_i - color_j).norm_squared() / (2.0 * bandwidth_sq)).exp()
}

/// Appearance change score over the same neighbor set used for geometry;
/// 1 when the set is empty.
pub fn score_appearance(
    color: &Vector3<f64>,
    bandwidth_sq: f64,
    target: &SceneKernelData,
    neighbors: &NeighborSet,
) -> f64 {
    let best = neighbors
        .indices
        .iter()
        .map(|&j| appearance_kernel(color, &target.colors[j], bandwidth_sq))
        .fold(0.0f64, f64::max);
    1.0 - best
}
