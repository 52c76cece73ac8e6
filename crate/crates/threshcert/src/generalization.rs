//! Patient-level uniform generalization term and the design-effect
//! diagnostic for intra-patient correlation.

use crate::data_model::{Cohort, CostSpec};
use crate::error::{Error, Result};

/// Form of the generalization term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaForm {
    /// C * sqrt(log(2/delta) / n_val). The constant is a reporting
    /// convention; the explicit form is used for quantitative output.
    Headline { c: f64 },
    /// Three-term DKW + Hoeffding bound with the delta/3 union split:
    /// per-class uniform CDF deviations weighted by cost and empirical
    /// prevalence, plus a prevalence estimation term.
    Explicit,
}

#[derive(Debug, Clone, Copy)]
pub struct GammaSpec {
    pub delta_val: f64,
    pub form: GammaForm,
}

impl GammaSpec {
    pub fn new(delta_val: f64, form: GammaForm) -> Result<Self> {
        if !(delta_val > 0.0 && delta_val < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "delta_val must be in (0,1), got {delta_val}"
            )));
        }
        if let GammaForm::Headline { c } = form {
            if !(c > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "headline constant must be positive, got {c}"
                )));
            }
        }
        Ok(GammaSpec { delta_val, form })
    }
}

/// Uniform deviation budget for the validation risk curve.
pub fn gamma_val(
    spec: &GammaSpec,
    n_val: usize,
    n1: usize,
    n0: usize,
    prev_hat: f64,
    costs: &CostSpec,
) -> Result<f64> {
    if n_val < 2 || n1 + n0 != n_val {
        return Err(Error::InvalidParameter(format!(
            "need n_val = n1 + n0 >= 2, got n_val={n_val}, n1={n1}, n0={n0}"
        )));
    }
    let delta = spec.delta_val;
    match spec.form {
        GammaForm::Headline { c } => Ok(c * ((2.0 / delta).ln() / n_val as f64).sqrt()),
        GammaForm::Explicit => {
            if n1 == 0 {
                return Err(Error::SingleClass { label: 1 });
            }
            if n0 == 0 {
                return Err(Error::SingleClass { label: 0 });
            }
            let log_term = (6.0 / delta).ln();
            let term1 = costs.c10 * prev_hat * (log_term / (2.0 * n1 as f64)).sqrt();
            let term0 = costs.c01 * (1.0 - prev_hat) * (log_term / (2.0 * n0 as f64)).sqrt();
            let term_pi = (costs.c10 + costs.c01) * (log_term / (2.0 * n_val as f64)).sqrt();
            Ok(term1 + term0 + term_pi)
        }
    }
}

/// Design-effect diagnostic: effective independent sample size after
/// accounting for intra-patient correlation of instance scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DesignEffect {
    pub n_raw: usize,
    pub mean_cluster_size: f64,
    pub icc: f64,
    pub n_eff: f64,
}

/// One-way ANOVA ICC on instance scores grouped by patient, then
/// n_eff = N / (1 + (m_bar - 1) * max(icc, 0)).
pub fn design_effect(cohort: &Cohort) -> Result<DesignEffect> {
    let k = cohort.patients.len();
    if k < 2 {
        return Err(Error::InvalidParameter(
            "design effect needs >= 2 patients".into(),
        ));
    }
    let n_raw: usize = cohort.patients.iter().map(|p| p.instances.len()).sum();
    let n = n_raw as f64;
    let mean_cluster_size = n / k as f64;

    let grand_mean = cohort
        .patients
        .iter()
        .flat_map(|p| p.instances.iter())
        .sum::<f64>()
        / n;

    let mut ssb = 0.0;
    let mut ssw = 0.0;
    let mut sum_m_sq = 0.0;
    for p in &cohort.patients {
        let m = p.instances.len() as f64;
        let mean_p = p.instances.iter().sum::<f64>() / m;
        ssb += m * (mean_p - grand_mean).powi(2);
        ssw += p.instances.iter().map(|&x| (x - mean_p).powi(2)).sum::<f64>();
        sum_m_sq += m * m;
    }

    let icc = if n_raw == k {
        // singleton clusters carry no within-patient information
        0.0
    } else {
        let msb = ssb / (k as f64 - 1.0);
        let msw = ssw / (n - k as f64);
        // ANOVA cluster-size constant
        let m0 = (n - sum_m_sq / n) / (k as f64 - 1.0);
        let denom = msb + (m0 - 1.0) * msw;
        if denom <= 0.0 {
            0.0
        } else {
            (msb - msw) / denom
        }
    };

    let n_eff = n / (1.0 + (mean_cluster_size - 1.0) * icc.max(0.0));
    Ok(DesignEffect {
        n_raw,
        mean_cluster_size,
        icc,
        n_eff,
    })
}
