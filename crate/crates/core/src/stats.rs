//! Order statistics used by the drift estimators: linear-interpolation
//! quantiles and medians over `f64` samples.

/// Quantile of a sorted sample by linear interpolation between order
/// statistics: at level `q` the value is read at fractional position
/// `q * (n - 1)`.
///
/// Returns `None` on an empty slice. `q` is clamped to `[0, 1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let q = q.clamp(0.0, 1.0);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return Some(sorted[lo]);
    }
    let frac = pos - lo as f64;
    Some(sorted[lo] * (1.0 - frac) + sorted[hi] * frac)
}

/// Quantile of an unsorted sample; sorts a copy with total ordering.
pub fn quantile(samples: &[f64], q: f64) -> Option<f64> {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, q)
}

/// Median (0.5 quantile) of an unsorted sample.
pub fn median(samples: &[f64]) -> Option<f64> {
    quantile(samples, 0.5)
}

/// Weighted quantile: the smallest value whose cumulative weight reaches
/// `q * total_weight`. Weights must be non-negative with a positive total.
pub fn weighted_quantile(pairs: &[(f64, f64)], q: f64) -> Option<f64> {
    let total: f64 = pairs.iter().map(|(_, w)| w).sum();
    if pairs.is_empty() || !total.is_finite() || total <= 0.0 {
        return None;
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let target = q.clamp(0.0, 1.0) * total;
    let mut cumulative = 0.0;
    for (value, weight) in &sorted {
        cumulative += weight;
        if cumulative >= target {
            return Some(*value);
        }
    }
    Some(sorted[sorted.len() - 1].0)
}
