//! Heatmap-versus-mask agreement.

use crate::engine::EngineError;

/// Fraction of pixels kept when binarising a heatmap.
pub const TOP_FRACTION: f64 = 0.1;

/// Nearest-rank 90th percentile of `values`.
pub fn percentile_90(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((1.0 - TOP_FRACTION) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Pixels strictly above the 90th percentile. A constant map selects nothing.
pub fn binarise(values: &[f64]) -> Vec<bool> {
    let t = percentile_90(values);
    values.iter().map(|&v| v > t).collect()
}

/// Intersection-over-union between the binarised heatmap and the mask.
/// A heatmap that selects nothing scores 0.
pub fn localization_score(heatmap: &[f64], mask: &[bool]) -> Result<f64, EngineError> {
    if heatmap.len() != mask.len() || heatmap.is_empty() {
        return Err(EngineError::ShapeMismatch(format!(
            "heatmap has {} pixels, mask {}",
            heatmap.len(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(EngineError::EmptyMask);
    }
    let hot = binarise(heatmap);
    let (mut inter, mut union) = (0usize, 0usize);
    for (&h, &m) in hot.iter().zip(mask) {
        inter += usize::from(h && m);
        union += usize::from(h || m);
    }
    Ok(inter as f64 / union as f64)
}
