//! Detection and routing metrics: changed-class IoU/F1 pooled over views,
//! per-instance oracle thresholding, balanced-accuracy routing evaluation and
//! a rank-based AUROC helper.

use serde::Serialize;
use thiserror::Error;

use crate::maps::{BinaryImage, LabelImage, PixelLabel, ScalarImage};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("view count mismatch: {0} predictions vs {1} ground truths")]
    ViewCountMismatch(usize, usize),

    #[error("view {view}: dimensions differ ({pw}x{ph} vs {gw}x{gh})")]
    DimensionMismatch {
        view: usize,
        pw: usize,
        ph: usize,
        gw: usize,
        gh: usize,
    },

    #[error("no ground-truth pixels of any routable class")]
    NoRoutableClass,

    #[error("empty threshold grid")]
    EmptyGrid,
}

/// Changed-class detection quality for one view.
#[derive(Debug, Clone, Serialize)]
pub struct ViewDetection {
    pub view: usize,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub iou: f64,
    pub f1: f64,
}

/// Changed-class detection quality pooled over views, with the per-view
/// breakdown retained.
#[derive(Debug, Clone, Serialize)]
pub struct DetectionMetrics {
    pub miou: f64,
    pub f1: f64,
    pub threshold_used: f64,
    pub per_view: Vec<ViewDetection>,
}

fn iou_f1(tp: u64, fp: u64, fn_: u64) -> (f64, f64) {
    let union = tp + fp + fn_;
    if union == 0 {
        // Empty ground truth and empty prediction: perfect by convention.
        return (1.0, 1.0);
    }
    let iou = tp as f64 / union as f64;
    let denom = 2 * tp + fp + fn_;
    let f1 = if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    };
    (iou, f1)
}

/// IoU and F1 on the changed class. Counts pool over views (pixel-count
/// pooling); the per-view breakdown is also reported.
pub fn detection_metrics(
    pred: &[BinaryImage],
    gt: &[BinaryImage],
    threshold_used: f64,
) -> Result<DetectionMetrics, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::ViewCountMismatch(pred.len(), gt.len()));
    }
    let mut pooled = (0u64, 0u64, 0u64);
    let mut per_view = Vec::with_capacity(pred.len());
    for (view, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_size(g) {
            return Err(EvalError::DimensionMismatch {
                view,
                pw: p.width,
                ph: p.height,
                gw: g.width,
                gh: g.height,
            });
        }
        let mut tp = 0u64;
        let mut fp = 0u64;
        let mut fn_ = 0u64;
        for (a, b) in p.data.iter().zip(&g.data) {
            match (a, b) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        pooled.0 += tp;
        pooled.1 += fp;
        pooled.2 += fn_;
        let (iou, f1) = iou_f1(tp, fp, fn_);
        per_view.push(ViewDetection {
            view,
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            iou,
            f1,
        });
    }
    let (miou, f1) = iou_f1(pooled.0, pooled.1, pooled.2);
    Ok(DetectionMetrics {
        miou,
        f1,
        threshold_used,
        per_view,
    })
}

/// Binarize score maps at a threshold (`value > threshold`).
pub fn binarize_maps(maps: &[ScalarImage], threshold: f64) -> Vec<BinaryImage> {
    maps.iter()
        .map(|m| BinaryImage {
            width: m.width,
            height: m.height,
            data: m.data.iter().map(|&v| v > threshold).collect(),
        })
        .collect()
}

/// Default oracle grid: 255 evenly spaced levels strictly inside (0, 1).
pub fn default_threshold_grid() -> Vec<f64> {
    (1..=255).map(|k| k as f64 / 256.0).collect()
}

/// Exhaustive grid search for the pooled-mIoU-maximizing threshold. Ties
/// return the smallest maximizer.
pub fn oracle_threshold(
    score_maps: &[ScalarImage],
    gt: &[BinaryImage],
    grid: &[f64],
) -> Result<(f64, DetectionMetrics), EvalError> {
    if grid.is_empty() {
        return Err(EvalError::EmptyGrid);
    }
    let mut best: Option<(f64, DetectionMetrics)> = None;
    for &threshold in grid {
        let pred = binarize_maps(score_maps, threshold);
        let metrics = detection_metrics(&pred, gt, threshold)?;
        let replace = match &best {
            None => true,
            Some((_, b)) => metrics.miou > b.miou,
        };
        if replace {
            best = Some((threshold, metrics));
        }
    }
    Ok(best.expect("grid checked non-empty"))
}

/// Which pixels enter the routing evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RoutingConditioning {
    /// Pixels changed in both the prediction and the ground truth.
    Intersection,
    /// All ground-truth-changed pixels; predictions labeled `Unchanged`
    /// count against the ground-truth class's recall.
    GtChanged,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ClassMetrics {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

/// Routing quality over the structural/surface classes. Balanced accuracy is
/// the mean recall over classes present in the ground truth.
#[derive(Debug, Clone, Serialize)]
pub struct RoutingMetrics {
    pub conditioning: RoutingConditioning,
    pub balanced_accuracy: f64,
    pub structural: ClassMetrics,
    pub surface: ClassMetrics,
    pub evaluated_pixels: u64,
}

/// Compare predicted routing labels against ground truth under the chosen
/// conditioning.
pub fn routing_metrics(
    pred: &[LabelImage],
    gt: &[LabelImage],
    conditioning: RoutingConditioning,
) -> Result<RoutingMetrics, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::ViewCountMismatch(pred.len(), gt.len()));
    }
    // counts[gt][pred] over {structural, surface, unchanged-pred}
    let mut counts = [[0u64; 3]; 2];
    let mut evaluated = 0u64;
    for (view, (p, g)) in pred.iter().zip(gt).enumerate() {
        if !p.same_size(g) {
            return Err(EvalError::DimensionMismatch {
                view,
                pw: p.width,
                ph: p.height,
                gw: g.width,
                gh: g.height,
            });
        }
        for (a, b) in p.data.iter().zip(&g.data) {
            let gt_class = match b {
                PixelLabel::Structural => 0usize,
                PixelLabel::Surface => 1,
                PixelLabel::Unchanged => continue,
            };
            let pred_class = match a {
                PixelLabel::Structural => 0usize,
                PixelLabel::Surface => 1,
                PixelLabel::Unchanged => {
                    if conditioning == RoutingConditioning::Intersection {
                        continue;
                    }
                    2
                }
            };
            counts[gt_class][pred_class] += 1;
            evaluated += 1;
        }
    }

    let support = [
        counts[0][0] + counts[0][1] + counts[0][2],
        counts[1][0] + counts[1][1] + counts[1][2],
    ];
    let predicted = [
        counts[0][0] + counts[1][0],
        counts[0][1] + counts[1][1],
    ];
    let class = |c: usize| ClassMetrics {
        precision: (predicted[c] > 0).then(|| counts[c][c] as f64 / predicted[c] as f64),
        recall: (support[c] > 0).then(|| counts[c][c] as f64 / support[c] as f64),
        support: support[c],
    };
    let structural = class(0);
    let surface = class(1);

    let recalls: Vec<f64> = [structural.recall, surface.recall]
        .into_iter()
        .flatten()
        .collect();
    if recalls.is_empty() {
        return Err(EvalError::NoRoutableClass);
    }
    Ok(RoutingMetrics {
        conditioning,
        balanced_accuracy: recalls.iter().sum::<f64>() / recalls.len() as f64,
        structural,
        surface,
        evaluated_pixels: evaluated,
    })
}

/// Route every pixel by the larger of the structural/surface channels (ties
/// structural), ignoring any detection threshold. Used to evaluate routing
/// quality decoupled from detection, e.g. over all ground-truth-changed
/// pixels.
pub fn argmax_labels(
    structural: &ScalarImage,
    surface: &ScalarImage,
) -> Result<LabelImage, EvalError> {
    if !structural.same_size(surface) {
        return Err(EvalError::DimensionMismatch {
            view: 0,
            pw: structural.width,
            ph: structural.height,
            gw: surface.width,
            gh: surface.height,
        });
    }
    Ok(LabelImage {
        width: structural.width,
        height: structural.height,
        data: structural
            .data
            .iter()
            .zip(&surface.data)
            .map(|(&s, &r)| {
                if s >= r {
                    PixelLabel::Structural
                } else {
                    PixelLabel::Surface
                }
            })
            .collect(),
    })
}

/// Area under the ROC curve by the rank statistic, with average ranks on
/// ties. `None` when either class is empty.
pub fn auroc(positive: &[f64], negative: &[f64]) -> Option<f64> {
    if positive.is_empty() || negative.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_positive = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // Ranks are 1-based; tied scores share the average rank.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for item in &all[i..j] {
            if item.1 {
                rank_sum_positive += avg_rank;
            }
        }
        i = j;
    }
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Some((rank_sum_positive - np * (np + 1.0) / 2.0) / (np * nn))
}
