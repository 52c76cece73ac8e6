//! Patient-block bootstrap of refit thresholds: bias, quantile radius,
//! flip-rate, and the per-threshold instability map.

use rand::Rng;
use rayon::prelude::*;

use crate::data_model::{CostSpec, PatientScore};
use crate::empirical::{empirical_risk_curve, RiskCurve, ThresholdGrid};
use crate::error::{Error, Result};
use crate::modulus::ModulusBand;
use crate::seeding;

/// A threshold selection rule applied identically to the original and
/// every bootstrap-refit risk curve.
pub trait ThresholdRule: Sync {
    fn select(&self, curve: &RiskCurve) -> Result<f64>;
}

impl<F> ThresholdRule for F
where
    F: Fn(&RiskCurve) -> Result<f64> + Sync,
{
    fn select(&self, curve: &RiskCurve) -> Result<f64> {
        self(curve)
    }
}

/// Lowest-threshold empirical risk minimizer on the grid.
pub fn erm_rule(curve: &RiskCurve) -> Result<f64> {
    Ok(curve.grid.thresholds()[curve.argmin_index()])
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    /// Number of replicates B.
    pub replicates: usize,
    pub delta_boot: f64,
    pub seed: u64,
    /// When set, the quantile radius is taken over bias-centered
    /// absolute deviations instead of raw ones.
    pub centered_quantile: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            delta_boot: 0.10,
            seed: 0,
            centered_quantile: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidParameter("bootstrap needs B >= 1".into()));
        }
        if !(self.delta_boot > 0.0 && self.delta_boot < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_boot must be in (0,1), got {}",
                self.delta_boot
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BootstrapSummary {
    pub t_hat: f64,
    pub t_star: Vec<f64>,
    /// mean(t_star) - t_hat.
    pub bias: f64,
    /// Empirical (1 - delta_boot) quantile of the absolute deviations.
    pub q_radius: f64,
    /// |bias| + q_radius.
    pub radius: f64,
}

impl BootstrapSummary {
    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "b,t_star")?;
        for (b, t) in self.t_star.iter().enumerate() {
            writeln!(w, "{},{}", b + 1, t)?;
        }
        Ok(())
    }
}

/// Instability surrogate: the modulus band evaluated at the bootstrap
/// radius.
pub fn g_boot(summary: &BootstrapSummary, band: &ModulusBand) -> f64 {
    band.eval(summary.radius)
}

const MAX_REDRAWS: usize = 100;

/// Draw one patient-block resample that keeps both classes, refit the
/// risk curve on the shared grid, and apply the selection rule.
fn replicate_threshold(
    scores: &[PatientScore],
    costs: &CostSpec,
    grid: &ThresholdGrid,
    rule: &dyn ThresholdRule,
    seed: u64,
    b: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut rng = seeding::rng_for(seed, b);
    let n = scores.len();
    for _ in 0..MAX_REDRAWS {
        let resample: Vec<PatientScore> = (0..n)
            .map(|_| scores[rng.random_range(0..n)].clone())
            .collect();
        let has_pos = resample.iter().any(|p| p.label == 1);
        let has_neg = resample.iter().any(|p| p.label == 0);
        if !(has_pos && has_neg) {
            continue;
        }
        let curve = empirical_risk_curve(&resample, costs, grid)?;
        let t = rule.select(&curve)?;
        return Ok((t, curve.risks));
    }
    Err(Error::DegenerateBootstrap {
        attempts: MAX_REDRAWS,
    })
}

/// Bootstrap quantile convention: order statistic at index
/// ceil((1-delta)*B).
fn upper_quantile(deviations: &mut [f64], delta: f64) -> f64 {
    deviations.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let b = deviations.len();
    let idx = (((1.0 - delta) * b as f64).ceil() as usize).clamp(1, b);
    deviations[idx - 1]
}

/// Patient-block bootstrap of the selection rule. `rule` must be the
/// same rule that produced the reference threshold.
pub fn bootstrap_thresholds(
    scores: &[PatientScore],
    costs: &CostSpec,
    grid: &ThresholdGrid,
    cfg: &BootstrapConfig,
    rule: &dyn ThresholdRule,
) -> Result<BootstrapSummary> {
    cfg.validate()?;
    if scores.is_empty() {
        return Err(Error::EmptyInput("bootstrap of empty score set".into()));
    }
    let curve = empirical_risk_curve(scores, costs, grid)?;
    let t_hat = rule.select(&curve)?;

    let results: Vec<Result<f64>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|b| replicate_threshold(scores, costs, grid, rule, cfg.seed, b).map(|(t, _)| t))
        .collect();
    let t_star: Vec<f64> = results.into_iter().collect::<Result<_>>()?;

    let bias = t_star.iter().sum::<f64>() / t_star.len() as f64 - t_hat;
    let mut deviations: Vec<f64> = if cfg.centered_quantile {
        t_star.iter().map(|t| ((t - t_hat) - bias).abs()).collect()
    } else {
        t_star.iter().map(|t| (t - t_hat).abs()).collect()
    };
    let q_radius = upper_quantile(&mut deviations, cfg.delta_boot);
    Ok(BootstrapSummary {
        t_hat,
        t_star,
        bias,
        q_radius,
        radius: bias.abs() + q_radius,
    })
}

/// Fraction of test decisions that flip between the realized threshold
/// and the bootstrap-refit thresholds.
pub fn flip_rate(test_scores: &[PatientScore], t_hat: f64, t_star: &[f64]) -> f64 {
    if test_scores.is_empty() || t_star.is_empty() {
        return 0.0;
    }
    let mut total = 0usize;
    for p in test_scores {
        let base = p.s >= t_hat;
        total += t_star.iter().filter(|&&t| (p.s >= t) != base).count();
    }
    total as f64 / (test_scores.len() * t_star.len()) as f64
}

/// Per-threshold instability display: bootstrap risk-curve standard
/// deviation times a curvature proxy, smoothed and scaled to [0,1].
#[derive(Debug, Clone)]
pub struct InstabilityMap {
    pub grid: ThresholdGrid,
    pub values: Vec<f64>,
}

impl InstabilityMap {
    pub fn export_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "threshold,instability")?;
        for (t, v) in self.grid.thresholds().iter().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }
}

pub fn instability_map(
    scores: &[PatientScore],
    costs: &CostSpec,
    grid: &ThresholdGrid,
    cfg: &BootstrapConfig,
    smoothing_window: usize,
) -> Result<InstabilityMap> {
    cfg.validate()?;
    let m = grid.len();
    if m < 3 {
        return Err(Error::InvalidParameter(
            "instability map needs a grid with >= 3 points".into(),
        ));
    }

    let rule = erm_rule;
    let curves: Vec<Result<Vec<f64>>> = (0..cfg.replicates as u64)
        .into_par_iter()
        .map(|b| replicate_threshold(scores, costs, grid, &rule, cfg.seed, b).map(|(_, r)| r))
        .collect();
    let curves: Vec<Vec<f64>> = curves.into_iter().collect::<Result<_>>()?;
    let b = curves.len() as f64;

    let mut mean = vec![0.0f64; m];
    for c in &curves {
        for (i, &r) in c.iter().enumerate() {
            mean[i] += r;
        }
    }
    for v in &mut mean {
        *v /= b;
    }
    let mut sd = vec![0.0f64; m];
    for c in &curves {
        for (i, &r) in c.iter().enumerate() {
            sd[i] += (r - mean[i]).powi(2);
        }
    }
    for v in &mut sd {
        *v = (*v / b).sqrt();
    }

    // curvature proxy: |second finite difference| of the mean curve,
    // normalized by its max (left as zero when the mean is affine)
    let mut curvature = vec![0.0f64; m];
    for i in 1..m - 1 {
        curvature[i] = (mean[i - 1] - 2.0 * mean[i] + mean[i + 1]).abs();
    }
    let max_curv = curvature.iter().cloned().fold(0.0f64, f64::max);
    if max_curv > 0.0 {
        for v in &mut curvature {
            *v /= max_curv;
        }
    }

    let raw: Vec<f64> = sd.iter().zip(&curvature).map(|(s, k)| s * k).collect();

    // centered moving average, truncated at the edges
    let half = smoothing_window.max(1) / 2;
    let mut smoothed = vec![0.0f64; m];
    for i in 0..m {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(m - 1);
        smoothed[i] = raw[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
    }

    let min = smoothed.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = smoothed.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let values = if max > min {
        smoothed.iter().map(|v| (v - min) / (max - min)).collect()
    } else {
        vec![0.0; m]
    };

    Ok(InstabilityMap {
        grid: grid.clone(),
        values,
    })
}
