//! Quantile-scale ensembling of thresholds across methods or sites.
//!
//! Thresholds are mapped to their reference-sample quantiles, averaged
//! on the quantile scale, and inverted on the target sample. Strictly
//! increasing score transforms preserve ranks, so the induced decisions
//! are invariant.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileMappedThreshold {
    pub source_id: String,
    pub threshold: f64,
    /// Left-limit quantile of the threshold under the source's
    /// reference score sample.
    pub quantile_u: f64,
    /// Precision weight (inverse variance); 1.0 for uniform use.
    pub weight: f64,
}

/// u = #{s < threshold}/n, consistent with the decision rule S >= t.
pub fn to_quantile(threshold: f64, ref_scores: &[f64]) -> Result<f64> {
    if ref_scores.is_empty() {
        return Err(Error::EmptyInput("quantile mapping reference sample".into()));
    }
    let below = ref_scores.iter().filter(|&&s| s < threshold).count();
    Ok(below as f64 / ref_scores.len() as f64)
}

pub fn map_threshold(
    source_id: &str,
    threshold: f64,
    ref_scores: &[f64],
    weight: f64,
) -> Result<QuantileMappedThreshold> {
    Ok(QuantileMappedThreshold {
        source_id: source_id.to_string(),
        threshold,
        quantile_u: to_quantile(threshold, ref_scores)?,
        weight,
    })
}

/// Invert a quantile on the target sample: lower-interpolation order
/// statistic at index ceil(u*n). u = 0 maps to a sentinel just below
/// the minimum so every patient is decided positive.
pub fn quantile_to_threshold(u: f64, target_scores: &[f64]) -> Result<f64> {
    if target_scores.is_empty() {
        return Err(Error::EmptyInput("quantile inversion target sample".into()));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::InvalidParameter(format!(
            "quantile must be in [0,1], got {u}"
        )));
    }
    let mut sorted = target_scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if u == 0.0 {
        let min = sorted[0];
        let range = sorted[n - 1] - min;
        let pad = if range > 0.0 { 1e-9 * range } else { 1e-9 };
        return Ok(min - pad);
    }
    let idx = ((u * n as f64).ceil() as usize).clamp(1, n);
    Ok(sorted[idx - 1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Uniform,
    /// Inverse-variance weighting using each item's `weight` field.
    Precision,
}

/// Weighted quantile-scale average inverted on the target sample.
pub fn ensemble_thresholds(
    items: &[QuantileMappedThreshold],
    target_scores: &[f64],
    weighting: Weighting,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyInput("ensemble items".into()));
    }
    let (num, den) = match weighting {
        Weighting::Uniform => (
            items.iter().map(|i| i.quantile_u).sum::<f64>(),
            items.len() as f64,
        ),
        Weighting::Precision => (
            items.iter().map(|i| i.weight * i.quantile_u).sum::<f64>(),
            items.iter().map(|i| i.weight).sum::<f64>(),
        ),
    };
    if den <= 0.0 {
        return Err(Error::InvalidParameter(
            "ensemble weights sum to zero".into(),
        ));
    }
    let u_bar = num / den;
    quantile_to_threshold(u_bar, target_scores)
}
