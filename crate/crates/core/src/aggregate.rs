//! Score aggregation: observability-based confidence weighting, saturated
//! combination of the two kernel scores, and the structural/surface channel
//! split used for routing.

use thiserror::Error;

use crate::linalg::sigmoid;

#[derive(Debug, Error)]
pub enum AggregateError {
    #[error("confidence weight needs positive traces (got trace {trace}, reference {reference})")]
    NonPositiveTrace { trace: f64, reference: f64 },
}

/// Final per-primitive scores carried into rendering and the score tables.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimitiveScores {
    pub geometric: f64,
    pub appearance: f64,
    /// Observability confidence in (0, 1).
    pub confidence: f64,
    /// `confidence * min(geometric + appearance, 1)`.
    pub combined: f64,
    /// `max(appearance - geometric, 0)`; the surface-only evidence.
    pub surface_residual: f64,
}

/// Confidence from the Fisher-trace log-ratio against the scene's reference
/// quantile: primitives below the reference fall under 0.5. Depends only on
/// the ratio, so a global rescale of every trace leaves it unchanged.
pub fn confidence_weight(trace_fim: f64, reference_trace: f64) -> Result<f64, AggregateError> {
    if trace_fim <= 0.0 || reference_trace <= 0.0 {
        return Err(AggregateError::NonPositiveTrace {
            trace: trace_fim,
            reference: reference_trace,
        });
    }
    Ok(sigmoid(trace_fim.ln() - reference_trace.ln()))
}

/// Saturated, confidence-weighted combination of the kernel scores.
pub fn combine_scores(geometric: f64, appearance: f64, confidence: f64) -> f64 {
    confidence * (geometric + appearance).min(1.0)
}

/// Split scores into the structural channel (geometric evidence) and the
/// surface channel (appearance evidence not explained by geometry).
pub fn disambiguation_channels(geometric: f64, appearance: f64) -> (f64, f64) {
    (geometric, (appearance - geometric).max(0.0))
}
